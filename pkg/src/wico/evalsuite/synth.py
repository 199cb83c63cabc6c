"""Seeded synthetic token grids in a few structural regimes."""
from __future__ import annotations

import enum

import numpy as np

from ..errors import ConfigError, RangeError
from ..projector import TokenGrid
from ..tensor import Tensor


class FeatureKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    PIECEWISE_CONSTANT = "piecewise-constant"
    GRADIENT_RAMP = "gradient-ramp"
    CHECKERBOARD = "checkerboard"

    @classmethod
    def parse(cls, name) -> FeatureKind:
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).replace("_", "-").lower())
        except ValueError:
            raise ConfigError(f"unknown feature kind {name!r}; expected one of "
                              f"{[k.value for k in cls]}") from None


def _cuts(rng: np.random.Generator, size: int, mean_block: int) -> np.ndarray:
    """Block id per position for a random partition of ``range(size)``."""
    blocks = max(1, round(size / mean_block))
    cuts = np.sort(rng.choice(np.arange(1, size), size=min(blocks - 1, size - 1), replace=False)) \
        if size > 1 else np.array([], dtype=int)
    return np.searchsorted(cuts, np.arange(size), side="right")


def _ramp(size: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, size) if size > 1 else np.zeros(1)


def synth_array(h: int, w: int, d_v: int, kind, seed, amplitude: float = 1.0,
                mean_block: int = 4) -> np.ndarray:
    if h < 1 or w < 1 or d_v < 1:
        raise RangeError(f"grid extents must be >= 1, got {h} x {w} x {d_v}")
    kind = FeatureKind.parse(kind)
    rng = np.random.default_rng(seed)
    if kind is FeatureKind.GAUSSIAN:
        out = rng.standard_normal((h, w, d_v))
    elif kind is FeatureKind.PIECEWISE_CONSTANT:
        rows, cols = _cuts(rng, h, mean_block), _cuts(rng, w, mean_block)
        values = rng.standard_normal((rows.max() + 1, cols.max() + 1, d_v))
        out = values[rows[:, None], cols[None, :]]
    elif kind is FeatureKind.GRADIENT_RAMP:
        slopes = rng.standard_normal((2, d_v))
        out = _ramp(h)[:, None, None] * slopes[0] + _ramp(w)[None, :, None] * slopes[1]
    else:
        sign = 1.0 - 2.0 * ((np.arange(h)[:, None] + np.arange(w)[None, :]) % 2)
        out = np.repeat(sign[:, :, None], d_v, axis=2)
    return amplitude * out


def synth_features(h: int, w: int, d_v: int, kind, seed, amplitude: float = 1.0,
                   dtype=np.float32) -> TokenGrid:
    """Deterministic grid per (kind, seed).

    ``piecewise-constant`` fills random rectangular blocks with one value per
    channel (smooth inside windows); ``gaussian`` is i.i.d. noise;
    ``gradient-ramp`` is a random planar ramp per channel; ``checkerboard``
    alternates +1/-1 starting with +1 at the origin.
    """
    return TokenGrid(Tensor(synth_array(h, w, d_v, kind, seed, amplitude), dtype=dtype))


def synth_batch(h: int, w: int, d_v: int, kind, count: int, seed: int,
                amplitude: float = 1.0) -> np.ndarray:
    """``count`` independent float64 grids, shape count x h x w x d_v."""
    return np.stack([synth_array(h, w, d_v, kind, [seed, i], amplitude) for i in range(count)])
