"""Dynamic 2-D window token concatenation followed by an MLP projection.

A flat n x D_v token sequence is viewed as an h x w grid; a sliding window
with step ``S = floor(h / h_out)`` and extent ``W = h - (h_out - 1) * S`` (per
axis) groups neighbouring tokens, whose channels are concatenated in
row-major order (window row, window column, channel). The resulting
h_out * w_out tokens of width ``W_h * W_w * D_v`` are projected by a 2-layer
MLP into the language-token width D_l.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoder import AttentionBlockParams, adjust_tokens, glorot
from .errors import DimensionError, RangeError
from .tensor import Tensor


@dataclass(frozen=True)
class TokenGrid:
    data: Tensor  # h x w x D_v

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise DimensionError(f"token grid must be h x w x D_v with h, w >= 1, got {self.data.shape}")

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def d_v(self) -> int:
        return self.data.shape[2]

    @property
    def n(self) -> int:
        return self.h * self.w

    @classmethod
    def from_tokens(cls, v: Tensor, h: int, w: int) -> TokenGrid:
        if v.ndim != 2 or v.shape[0] != h * w:
            raise DimensionError(f"cannot view tokens {v.shape} as a {h} x {w} grid")
        return cls(T.reshape(v, (h, w, v.shape[1])))

    def tokens(self) -> Tensor:
        return T.reshape(self.data, (self.n, self.d_v))


@dataclass(frozen=True)
class WindowSpec:
    h: int
    w: int
    h_out: int
    w_out: int
    s_h: int
    s_w: int
    w_h: int
    w_w: int

    def __post_init__(self):
        if not (1 <= self.h_out <= self.h and 1 <= self.w_out <= self.w):
            raise RangeError(
                f"output grid {self.h_out} x {self.w_out} must be within 1..{self.h} x 1..{self.w}")
        ok = (self.s_h == self.h // self.h_out and self.s_w == self.w // self.w_out
              and self.w_h == self.h - (self.h_out - 1) * self.s_h
              and self.w_w == self.w - (self.w_out - 1) * self.s_w)
        if not ok:
            raise ValueError(f"inconsistent window geometry {self}")

    @property
    def k(self) -> int:
        return self.h_out * self.w_out

    @property
    def overlapping(self) -> bool:
        return self.w_h > self.s_h or self.w_w > self.s_w

    def d_t(self, d_v: int) -> int:
        return self.w_h * self.w_w * d_v


def compute_window_spec(h: int, w: int, h_out: int, w_out: int) -> WindowSpec:
    if h < 1 or w < 1:
        raise RangeError(f"grid extents must be >= 1, got {h} x {w}")
    if not (1 <= h_out <= h and 1 <= w_out <= w):
        raise RangeError(f"output grid {h_out} x {w_out} must be within 1..{h} x 1..{w}")
    s_h, s_w = h // h_out, w // w_out
    return WindowSpec(h, w, h_out, w_out, s_h, s_w,
                      h - (h_out - 1) * s_h, w - (w_out - 1) * s_w)


def window_indices(spec: WindowSpec) -> np.ndarray:
    """Flat source-token index for each (output cell, window slot); shape k x (W_h * W_w)."""
    oi = np.arange(spec.h_out)[:, None, None, None] * spec.s_h
    oj = np.arange(spec.w_out)[None, :, None, None] * spec.s_w
    di = np.arange(spec.w_h)[None, None, :, None]
    dj = np.arange(spec.w_w)[None, None, None, :]
    flat = (oi + di) * spec.w + (oj + dj)
    return flat.reshape(spec.k, spec.w_h * spec.w_w)


def _check_grid(grid: TokenGrid, spec: WindowSpec):
    if (grid.h, grid.w) != (spec.h, spec.w):
        raise DimensionError(f"window spec is for a {spec.h} x {spec.w} grid, got {grid.h} x {grid.w}")


def window_concat(grid: TokenGrid, spec: WindowSpec) -> Tensor:
    """Concatenate each window's tokens channel-wise; returns h_out x w_out x D_t."""
    _check_grid(grid, spec)
    gathered = T.take_rows(grid.tokens(), window_indices(spec))  # k x W_h*W_w x D_v
    return T.reshape(gathered, (spec.h_out, spec.w_out, spec.d_t(grid.d_v)))


def flatten_windows(v2: Tensor) -> Tensor:
    return T.reshape(v2, (v2.shape[0] * v2.shape[1], v2.shape[2]))


def inverse_scatter(concat: Tensor, spec: WindowSpec, d_v: int) -> TokenGrid:
    """Undo :func:`window_concat` for a non-overlapping spec that tiles the grid."""
    if spec.overlapping:
        raise ValueError("inverse_scatter needs a non-overlapping window spec")
    data = np.asarray(concat.data).reshape(spec.k * spec.w_h * spec.w_w, d_v)
    out = np.empty((spec.h * spec.w, d_v), dtype=concat.dtype)
    out[window_indices(spec).reshape(-1)] = data
    return TokenGrid(Tensor(out.reshape(spec.h, spec.w, d_v)))


def window_multiplicity(spec: WindowSpec) -> np.ndarray:
    """How many output cells each source token lands in (h x w integer map)."""
    counts = np.bincount(window_indices(spec).reshape(-1), minlength=spec.h * spec.w)
    return counts.reshape(spec.h, spec.w)


# ---------------------------------------------------------------- MLP head

@dataclass(frozen=True)
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    linear_mode: bool = False  # skip the activation; only for building exact identities

    def __post_init__(self):
        d_in, d_hidden = self.w1.shape
        if d_hidden < 1 or self.b1.shape != (d_hidden,) or self.w2.shape[0] != d_hidden \
                or self.b2.shape != (self.w2.shape[1],):
            raise DimensionError(
                f"inconsistent MLP shapes w1={self.w1.shape} b1={self.b1.shape} "
                f"w2={self.w2.shape} b2={self.b2.shape}")
        for t in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(t.data)):
                raise ValueError("MLP parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_mlp(d_in: int, d_out: int, d_hidden: int | None = None, seed: int = 0,
             dtype=np.float32) -> MlpParams:
    d_hidden = d_out if d_hidden is None else d_hidden
    rng = np.random.default_rng(seed)
    return MlpParams(glorot(rng, d_in, d_hidden, dtype), Tensor(np.zeros(d_hidden), dtype=dtype),
                     glorot(rng, d_hidden, d_out, dtype), Tensor(np.zeros(d_out), dtype=dtype))


def identity_mlp(d_in: int, d_out: int | None = None, dtype=np.float32) -> MlpParams:
    """Linear-mode head that copies (and zero-pads or truncates) its input to ``d_out`` columns."""
    d_out = d_in if d_out is None else d_out
    return MlpParams(Tensor(np.eye(d_in), dtype=dtype), Tensor(np.zeros(d_in), dtype=dtype),
                     Tensor(np.eye(d_in, d_out), dtype=dtype), Tensor(np.zeros(d_out), dtype=dtype),
                     linear_mode=True)


def project(v2: Tensor, mlp: MlpParams) -> Tensor:
    """Row-wise linear -> gelu -> linear."""
    if v2.ndim != 2 or v2.shape[1] != mlp.d_in:
        raise DimensionError(f"project: tokens {v2.shape} do not match MLP input width {mlp.d_in}")
    z = v2 @ mlp.w1 + mlp.b1
    if not mlp.linear_mode:
        z = T.gelu(z)
    return z @ mlp.w2 + mlp.b2


def wico_compress(v0: Tensor, blocks: Sequence[AttentionBlockParams], spec: WindowSpec) -> Tensor:
    """Adjuster followed by window concatenation; returns the k x D_t tokens fed to the MLP."""
    if v0.ndim != 2 or v0.shape[0] != spec.h * spec.w:
        raise DimensionError(f"expected {spec.h * spec.w} tokens for a {spec.h} x {spec.w} grid, "
                             f"got shape {v0.shape}")
    v = adjust_tokens(v0, blocks)
    return flatten_windows(window_concat(TokenGrid.from_tokens(v, spec.h, spec.w), spec))


def wico_forward(v0: Tensor, blocks: Sequence[AttentionBlockParams], spec: WindowSpec,
                 mlp: MlpParams) -> Tensor:
    return project(wico_compress(v0, blocks, spec), mlp)


class ProjectorReconstruction:
    """Auto-encoding objective through the projector.

    The adjusted tokens are window-concatenated and projected by a trainable
    MLP; a trainable linear decoder maps them back to the concatenated
    window space, where they are compared with the concatenation of the raw
    tokens. ``smoothness_weight`` adds the mean within-window variance of the
    adjusted tokens as a regularizer.
    """

    def __init__(self, spec: WindowSpec, d_v: int, d_l: int, seed: int = 0,
                 smoothness_weight: float = 0.0, dtype=np.float32):
        self.spec = spec
        self.d_v = d_v
        self.smoothness_weight = float(smoothness_weight)
        d_t = spec.d_t(d_v)
        mlp = init_mlp(d_t, d_l, seed=seed, dtype=dtype)
        rng = np.random.default_rng(seed + 1)
        self.params = {**{f"mlp_{k}": t for k, t in mlp.tensors().items()},
                       "dec_w": glorot(rng, d_l, d_t, dtype),
                       "dec_b": Tensor(np.zeros(d_t), dtype=dtype)}

    def head(self, params) -> MlpParams:
        return MlpParams(params["mlp_w1"], params["mlp_b1"], params["mlp_w2"], params["mlp_b2"])

    def loss(self, v: Tensor, v0: Tensor, params) -> Tensor:
        spec = self.spec
        z = project(wico_compress(v, [], spec), self.head(params))
        recon = z @ params["dec_w"] + params["dec_b"]
        target = wico_compress(v0, [], spec).detach()
        loss = T.mean(T.square(recon - target))
        if self.smoothness_weight:
            win = T.take_rows(v, window_indices(spec))  # k x slots x D_v
            centred = win - T.reshape(T.mean(win, axis=1), (spec.k, 1, self.d_v))
            loss = loss + T.scale(T.mean(T.square(centred)), self.smoothness_weight)
        return loss
