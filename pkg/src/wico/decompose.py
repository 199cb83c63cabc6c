"""Upsampling compressed visual tokens inside the last decoder layers.

Two strategies grow k tokens back toward n:

* token interpolation resamples along the token axis to exactly n rows;
* channel interpolation resamples each token's channels to ``floor(n/k) * D_l``
  and reshapes, giving ``k * floor(n/k)`` rows, which can fall short of n.

The decoder itself is not simulated: :func:`decompose_at` is a hook keyed by
layer index that fires once, at layer ``L_l - K_l``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from . import tensor as T
from .errors import DimensionError, RangeError
from .tensor import Tensor


class Strategy(str, enum.Enum):
    TOKEN = "token"
    CHANNEL = "channel"


@dataclass(frozen=True)
class DecompositionConfig:
    strategy: Strategy
    num_layers: int  # L_l
    late_layers: int  # K_l
    n: int
    k: int

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not 0 <= self.late_layers <= self.num_layers:
            raise RangeError(f"K_l={self.late_layers} must lie in 0..L_l={self.num_layers}")
        if not 1 <= self.k <= self.n:
            raise RangeError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")

    @property
    def insertion_layer(self) -> int:
        return self.num_layers - self.late_layers

    @property
    def output_count(self) -> int:
        if self.strategy is Strategy.TOKEN:
            return self.n
        return channel_output_count(self.k, self.n)


def _check(v_l: Tensor, n: int):
    if v_l.ndim != 2 or v_l.shape[0] < 1:
        raise DimensionError(f"expected k x D_l tokens with k >= 1, got shape {v_l.shape}")
    if n < v_l.shape[0]:
        raise RangeError(f"target count n={n} is below the source count k={v_l.shape[0]}; "
                         "only upsampling is supported")


def channel_output_count(k: int, n: int) -> int:
    return k * (n // k)


def token_interpolate(v_l: Tensor, n: int) -> Tensor:
    _check(v_l, n)
    return T.interp_axis0(v_l, n)


def channel_interpolate(v_l: Tensor, n: int) -> Tensor:
    _check(v_l, n)
    k, d_l = v_l.shape
    m = n // k
    stretched = T.interp_axis0(T.transpose2d(v_l), m * d_l)  # (m*D_l) x k
    return T.reshape(T.transpose2d(stretched), (k * m, d_l))


def upsample(v_l: Tensor, n: int, strategy: Strategy | str) -> Tensor:
    if Strategy(strategy) is Strategy.TOKEN:
        return token_interpolate(v_l, n)
    return channel_interpolate(v_l, n)


def decompose_at(config: DecompositionConfig, layer_index: int, v_l: Tensor) -> Tensor:
    if not 0 <= layer_index < config.num_layers:
        raise RangeError(f"layer index {layer_index} outside 0..{config.num_layers - 1}")
    if layer_index == config.insertion_layer:
        return upsample(v_l, config.n, config.strategy)
    return v_l


def token_schedule(config: DecompositionConfig) -> list[int]:
    """Visual-token count seen by each decoder layer."""
    return [config.k if i < config.insertion_layer else config.output_count
            for i in range(config.num_layers)]
