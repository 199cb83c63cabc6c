"""Pre-norm self-attention blocks that adjust visual tokens before concatenation.

At desk scale the blocks are randomly initialized and trained with plain
gradient descent instead of being copied from a pretrained vision encoder.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Protocol, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, DivergenceError
from .tensor import Tensor

DEFAULT_K_V = 1
LN_EPS = 1e-5


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), dtype=dtype)


@dataclass(frozen=True)
class AttentionBlockParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    heads: int = field(default=1)

    def __post_init__(self):
        d = self.dim
        if self.heads < 1 or d % self.heads:
            raise DimensionError(f"token dim {d} is not divisible by {self.heads} heads")
        for f in self.tensor_fields():
            t = getattr(self, f)
            if not np.all(np.isfinite(t.data)):
                raise ValueError(f"parameter {f} has non-finite entries")
        expected = {
            "w_q": (d, d), "w_k": (d, d), "w_v": (d, d), "w_o": (d, d),
            "mlp_w1": (d, 4 * d), "mlp_b1": (4 * d,), "mlp_w2": (4 * d, d), "mlp_b2": (d,),
            "ln1_gain": (d,), "ln1_bias": (d,), "ln2_gain": (d,), "ln2_bias": (d,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def tensor_fields(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "heads"]

    def tensors(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in self.tensor_fields()}

    def with_tensors(self, updates: dict[str, Tensor]) -> AttentionBlockParams:
        return replace(self, **updates)

    @classmethod
    def init(cls, dim: int, heads: int = 1, seed: int = 0, dtype=np.float32) -> AttentionBlockParams:
        rng = np.random.default_rng(seed)
        zeros = lambda *s: Tensor(np.zeros(s), dtype=dtype)
        ones = lambda *s: Tensor(np.ones(s), dtype=dtype)
        return cls(
            w_q=glorot(rng, dim, dim, dtype), w_k=glorot(rng, dim, dim, dtype),
            w_v=glorot(rng, dim, dim, dtype), w_o=glorot(rng, dim, dim, dtype),
            mlp_w1=glorot(rng, dim, 4 * dim, dtype), mlp_b1=zeros(4 * dim),
            mlp_w2=glorot(rng, 4 * dim, dim, dtype), mlp_b2=zeros(dim),
            ln1_gain=ones(dim), ln1_bias=zeros(dim), ln2_gain=ones(dim), ln2_bias=zeros(dim),
            heads=heads,
        )


def init_blocks(k_v: int, dim: int, heads: int = 1, seed: int = 0,
                dtype=np.float32) -> list[AttentionBlockParams]:
    return [AttentionBlockParams.init(dim, heads, seed=seed + i, dtype=dtype) for i in range(k_v)]


def multi_head_attention(x: Tensor, p: AttentionBlockParams,
                         return_weights: bool = False):
    """Self-attention over the rows of ``x``; optionally also returns per-head weight matrices."""
    q, k, v = x @ p.w_q, x @ p.w_k, x @ p.w_v
    dh = p.dim // p.heads
    outs, weights = [], []
    for h in range(p.heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = T.scale(q[:, cols] @ k[:, cols].T, 1.0 / math.sqrt(dh))
        attn = T.softmax_rows(scores)
        weights.append(attn)
        outs.append(attn @ v[:, cols])
    merged = outs[0] if p.heads == 1 else T.concat(outs, axis=1)
    out = merged @ p.w_o
    return (out, weights) if return_weights else out


def block_forward(x: Tensor, p: AttentionBlockParams) -> Tensor:
    h = x + multi_head_attention(T.layer_norm(x, p.ln1_gain, p.ln1_bias, LN_EPS), p)
    z = T.layer_norm(h, p.ln2_gain, p.ln2_bias, LN_EPS)
    z = T.gelu(z @ p.mlp_w1 + p.mlp_b1) @ p.mlp_w2 + p.mlp_b2
    return h + z


def adjust_tokens(v0: Tensor, blocks: Sequence[AttentionBlockParams]) -> Tensor:
    """Run ``v0`` (n x D_v) through the adjuster blocks; an empty list is the identity."""
    if v0.ndim != 2 or v0.shape[0] < 1:
        raise DimensionError(f"adjust_tokens expects an n x D_v tensor with n >= 1, got {v0.shape}")
    x = v0
    for p in blocks:
        if p.dim != v0.shape[1]:
            raise DimensionError(f"block dim {p.dim} does not match token dim {v0.shape[1]}")
        x = block_forward(x, p)
    return x


# ---------------------------------------------------------------- training

class Objective(Protocol):
    """Loss on adjusted tokens. ``params`` are trained alongside the blocks."""

    params: dict[str, Tensor]

    def loss(self, v: Tensor, v0: Tensor, params: dict[str, Tensor]) -> Tensor: ...


class MatchInput:
    """Mean squared distance between adjusted and raw tokens."""

    params: dict[str, Tensor] = {}

    def loss(self, v, v0, params):
        return T.mean(T.square(v - v0))


@dataclass
class FitResult:
    blocks: list[AttentionBlockParams]
    trace: list[float]
    objective_params: dict[str, Tensor] = field(default_factory=dict)
    warning: str | None = None


def moving_average_is_monotone(trace: Sequence[float], window: int = 50, rtol: float = 1e-9) -> bool:
    if len(trace) < window + 1:
        return True
    avg = np.convolve(np.asarray(trace, dtype=np.float64), np.ones(window) / window, mode="valid")
    return bool(np.all(np.diff(avg) <= rtol * np.abs(avg[:-1])))


def fit_adjuster(v0_batch, objective: Objective, steps: int, lr: float, seed: int = 0,
                 blocks: Sequence[AttentionBlockParams] | None = None,
                 k_v: int = DEFAULT_K_V, heads: int = 1) -> FitResult:
    """Plain gradient descent on every block parameter and on ``objective.params``.

    ``v0_batch`` is a single n x D_v tensor or a sequence of them; the loss is
    averaged over the batch. Without explicit ``blocks``, ``k_v`` fresh blocks
    are initialized from ``seed`` in the batch's dtype.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if lr <= 0:
        raise ValueError("lr must be > 0")
    batch = [v0_batch] if isinstance(v0_batch, Tensor) else list(v0_batch)
    if not batch:
        raise ValueError("empty training batch")
    if blocks is None:
        blocks = init_blocks(k_v, batch[0].shape[1], heads, seed=seed, dtype=batch[0].dtype)
    blocks = list(blocks)
    extra = dict(objective.params)
    trace: list[float] = []

    for step in range(steps):
        flat = [t for b in blocks for t in b.tensors().values()] + list(extra.values())
        total = None
        for v0 in batch:
            term = objective.loss(adjust_tokens(v0, blocks), v0, extra)
            total = term if total is None else total + term
        loss = T.scale(total, 1.0 / len(batch))
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        trace.append(value)
        grads = iter(T.gradients(loss, flat))
        new_blocks = []
        for b in blocks:
            upd = {name: Tensor(t.data - lr * next(grads), dtype=t.dtype)
                   for name, t in b.tensors().items()}
            new_blocks.append(b.with_tensors(upd))
        blocks = new_blocks
        extra = {name: Tensor(t.data - lr * next(grads), dtype=t.dtype) for name, t in extra.items()}

    warning = None
    if not moving_average_is_monotone(trace):
        warning = "50-step moving average of the loss increased during training"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return FitResult(blocks=blocks, trace=trace, objective_params=extra, warning=warning)
