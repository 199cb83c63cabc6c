"""Analytical prefill FLOPs for a decoder whose last layers see upsampled visual tokens.

Per layer with T tokens and model width D the dense estimate is
``8*T*D^2`` (Q, K, V and output projections, 2 flops per MAC) plus
``4*T^2*D`` (score matrix and value mixing). Computed in exact integers.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import RangeError


def projection_flops(tokens: int, d_model: int) -> int:
    return 8 * tokens * d_model * d_model


def attention_flops(tokens: int, d_model: int) -> int:
    return 4 * tokens * tokens * d_model


@dataclass(frozen=True)
class CostReport:
    schedule: tuple[int, ...]
    attention_flops: int
    projection_flops: int
    total: int
    baseline_total: int
    ratio: float


def cost_model(num_layers: int, late_layers: int, k: int, n: int, t_text: int,
               d_model: int) -> CostReport:
    if min(num_layers, late_layers, k, n, t_text) < 0:
        raise RangeError("token and layer counts must be non-negative")
    if d_model < 1:
        raise RangeError(f"d_model must be >= 1, got {d_model}")
    if late_layers > num_layers:
        raise RangeError(f"K_l={late_layers} exceeds L_l={num_layers}")
    schedule = tuple(t_text + (k if i < num_layers - late_layers else n) for i in range(num_layers))
    attn = sum(attention_flops(t, d_model) for t in schedule)
    proj = sum(projection_flops(t, d_model) for t in schedule)
    total = attn + proj
    full = num_layers * (attention_flops(t_text + n, d_model) + projection_flops(t_text + n, d_model))
    ratio = total / full if full else 1.0
    return CostReport(schedule, attn, proj, total, full, ratio)
