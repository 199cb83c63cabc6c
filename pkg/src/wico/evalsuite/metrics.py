"""Feature smoothness and the linear information-preservation probe."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ..errors import InputError
from ..projector import TokenGrid, WindowSpec, window_indices

DEFAULT_LAMBDA = 1e-6


def _array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def channel_mean_map(grid) -> np.ndarray:
    x = _array(grid.data if isinstance(grid, TokenGrid) else grid)
    return x.mean(axis=2) if x.ndim == 3 else x


def total_variation(mean_map: np.ndarray) -> float:
    """Mean |difference| over all horizontally and vertically adjacent cell pairs.

    Summation is exact (``math.fsum``) so the value does not depend on pair order.
    """
    m = np.asarray(mean_map, dtype=np.float64)
    diffs = np.concatenate([np.abs(np.diff(m, axis=1)).ravel(), np.abs(np.diff(m, axis=0)).ravel()])
    if diffs.size == 0:
        return 0.0
    return math.fsum(diffs) / diffs.size


def window_variance(grid, spec: WindowSpec) -> float:
    """Per-channel variance among each window's tokens, averaged over windows and channels."""
    x = _array(grid.data if isinstance(grid, TokenGrid) else grid)
    h, w, d = x.shape
    if (h, w) != (spec.h, spec.w):
        raise InputError(f"window spec is for {spec.h} x {spec.w}, grid is {h} x {w}")
    win = x.reshape(h * w, d)[window_indices(spec)]
    return float(win.var(axis=1).mean())


@dataclass(frozen=True)
class SmoothnessReport:
    total_variation: float
    window_variance: float


def smoothness(grid, spec: WindowSpec) -> SmoothnessReport:
    return SmoothnessReport(total_variation(channel_mean_map(grid)), window_variance(grid, spec))


def box_blur(grid, radius: int = 1) -> np.ndarray:
    """Mean over a (2r+1)^2 neighbourhood with edge replication, per channel."""
    x = _array(grid.data if isinstance(grid, TokenGrid) else grid)
    h, w = x.shape[:2]
    padded = np.pad(x, ((radius, radius), (radius, radius)) + ((0, 0),) * (x.ndim - 2), mode="edge")
    out = np.zeros_like(x)
    for di in range(2 * radius + 1):
        for dj in range(2 * radius + 1):
            out += padded[di:di + h, dj:dj + w]
    return out / (2 * radius + 1) ** 2


# ---------------------------------------------------------------- probe

@dataclass(frozen=True)
class ProbeResult:
    mse: float
    lam: float


@dataclass
class ProbeReport:
    mse: dict[str, float] = field(default_factory=dict)
    lam: float = DEFAULT_LAMBDA
    seed: int | None = None


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """argmin_W |y - x W|^2 + lam |W|^2 via Cholesky, in whichever of the primal/dual forms is smaller."""
    n, p = x.shape
    if p <= n:
        factor = linalg.cho_factor(x.T @ x + lam * np.eye(p))
        return linalg.cho_solve(factor, x.T @ y)
    factor = linalg.cho_factor(x @ x.T + lam * np.eye(n))
    return x.T @ linalg.cho_solve(factor, y)


def probe(original, compressed, lam: float = DEFAULT_LAMBDA) -> ProbeResult:
    """In-sample MSE of a ridge regression from compressed features to the originals.

    The leading axis of both inputs indexes samples; the remaining axes are
    flattened. An unpenalized intercept is fitted by centring both sides.
    """
    if not lam > 0:
        raise InputError(f"ridge coefficient must be positive, got {lam}")
    o, c = _array(original), _array(compressed)
    if o.ndim < 1 or c.ndim < 1 or o.shape[0] != c.shape[0]:
        raise InputError(f"sample axes differ: original {o.shape}, compressed {c.shape}")
    if not (np.all(np.isfinite(o)) and np.all(np.isfinite(c))):
        raise InputError("probe inputs must be finite")
    y = o.reshape(o.shape[0], -1)
    x = c.reshape(c.shape[0], -1)
    y = y - y.mean(axis=0)
    x = x - x.mean(axis=0)
    resid = y - x @ ridge_fit(x, y, lam)
    return ProbeResult(float(np.mean(resid ** 2)), lam)
