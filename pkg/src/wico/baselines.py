"""Reference token-reduction projectors that WiCo is compared against.

Each one is a deliberately small, single-layer version of its family:

* ``Concat1D``: raster-order concatenation of r consecutive tokens.
* ``TokenFilter``: keep the k least redundant tokens (lowest max cosine
  similarity to any other token; ties go to the lower index).
* ``Perceiver``: k learned queries, one cross-attention layer.
* ``TokenMixer``: learned n x k linear mixing across the token axis.
* ``CAbstractor``: pointwise linear, adaptive average pooling, pointwise linear.

All of them, and WiCo itself, map n x D_v tokens to k x D_l through
``compress`` (k x D features) followed by an MLP head.
"""
from __future__ import annotations

import enum
import math
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoder import AttentionBlockParams, glorot, init_blocks
from .errors import ConfigError, DimensionError, DivisibilityError, RangeError
from .projector import (MlpParams, TokenGrid, WindowSpec, compute_window_spec, identity_mlp,
                        init_mlp, project, wico_compress)
from .tensor import Tensor


class ProjectorTag(str, enum.Enum):
    WICO = "Wico"
    CONCAT1D = "Concat1D"
    TOKEN_FILTER = "TokenFilter"
    PERCEIVER = "Perceiver"
    TOKEN_MIXER = "TokenMixer"
    C_ABSTRACTOR = "CAbstractor"

    @classmethod
    def parse(cls, name: str | ProjectorTag) -> ProjectorTag:
        if isinstance(name, cls):
            return name
        key = str(name).replace("_", "").replace("-", "").lower()
        for tag in cls:
            if tag.value.lower() == key:
                return tag
        raise ConfigError(f"unknown projector {name!r}; expected one of {[t.value for t in cls]}")


# ---------------------------------------------------------------- concat 1D

def concat_1d(v: Tensor, r: int) -> Tensor:
    n, d_v = v.shape
    if r < 1 or n % r:
        raise DivisibilityError(f"group size {r} does not divide {n} tokens")
    return T.reshape(v, (n // r, r * d_v))


# ---------------------------------------------------------------- token filter

def redundancy_scores(v: np.ndarray) -> np.ndarray:
    """Max cosine similarity of each token to any other; zero-norm tokens score 0 against everything."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    unit = np.divide(v, norms[:, None], out=np.zeros_like(v), where=norms[:, None] > 0)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    if len(v) == 1:
        return np.zeros(1)
    return sim.max(axis=1)


def token_filter_indices(v: np.ndarray, k: int) -> np.ndarray:
    n = len(v)
    if not 1 <= k <= n:
        raise RangeError(f"token filter needs 1 <= k <= n, got k={k}, n={n}")
    order = np.lexsort((np.arange(n), redundancy_scores(v)))
    return np.sort(order[:k])


def token_filter(v: Tensor, k: int) -> Tensor:
    return T.take_rows(v, token_filter_indices(v.data, k))


# ---------------------------------------------------------------- perceiver

def cross_attention(v: Tensor, queries: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor,
                    w_o: Tensor, return_weights: bool = False):
    if queries.shape[1] != v.shape[1]:
        raise DimensionError(f"queries {queries.shape} and tokens {v.shape} differ in width")
    scores = T.scale((queries @ w_q) @ (v @ w_k).T, 1.0 / math.sqrt(w_k.shape[1]))
    attn = T.softmax_rows(scores)
    out = (attn @ (v @ w_v)) @ w_o
    return (out, attn) if return_weights else out


def perceiver_resample(v: Tensor, queries: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor,
                       w_o: Tensor, head: MlpParams) -> Tensor:
    return project(cross_attention(v, queries, w_q, w_k, w_v, w_o), head)


# ---------------------------------------------------------------- token mixer

def token_mixer(v: Tensor, mix: Tensor) -> Tensor:
    if mix.ndim != 2 or mix.shape[0] != v.shape[0]:
        raise DimensionError(f"mixing matrix {mix.shape} does not match {v.shape[0]} tokens")
    return mix.T @ v


# ---------------------------------------------------------------- C-Abstractor

def adaptive_bins(size: int, out: int) -> list[tuple[int, int]]:
    """Half-open source ranges [floor(i*size/out), ceil((i+1)*size/out))."""
    return [(i * size // out, -((-(i + 1) * size) // out)) for i in range(out)]


def adaptive_avg_pool(grid: Tensor, h_out: int, w_out: int) -> Tensor:
    """Average each adaptive bin of an h x w x D grid; returns h_out x w_out x D."""
    h, w, d = grid.shape
    if not (1 <= h_out <= h and 1 <= w_out <= w):
        raise RangeError(f"pool size {h_out} x {w_out} must be within 1..{h} x 1..{w}")
    rows, cols = adaptive_bins(h, h_out), adaptive_bins(w, w_out)
    x = grid.data
    out = np.empty((h_out, w_out, d), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[i, j] = x[r0:r1, c0:c1].sum(axis=(0, 1)) / ((r1 - r0) * (c1 - c0))

    def backward(g):
        full = np.zeros_like(x)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                full[r0:r1, c0:c1] += g[i, j] / ((r1 - r0) * (c1 - c0))
        return (full,)

    return T.apply_op("adaptive_avg_pool", out, (grid,), backward)


def c_abstractor(grid: TokenGrid, h_out: int, w_out: int, pre_w: Tensor, pre_b: Tensor,
                 post_w: Tensor, post_b: Tensor) -> Tensor:
    """Pointwise linear, adaptive pool, pointwise linear; returns (h_out*w_out) x D."""
    x = grid.tokens() @ pre_w + pre_b
    pooled = adaptive_avg_pool(T.reshape(x, (grid.h, grid.w, x.shape[1])), h_out, w_out)
    flat = T.reshape(pooled, (h_out * w_out, pooled.shape[2]))
    return flat @ post_w + post_b


# ---------------------------------------------------------------- unified contract

def grid_factor(k: int, h: int, w: int) -> tuple[int, int]:
    """Most nearly square (h_out, w_out) with h_out * w_out == k that fits an h x w grid."""
    best = None
    for a in range(1, k + 1):
        if k % a:
            continue
        b = k // a
        if a <= h and b <= w:
            key = (abs(a - b), a)
            if best is None or key < best[0]:
                best = (key, (a, b))
    if best is None:
        raise RangeError(f"k={k} cannot be arranged as a sub-grid of {h} x {w}")
    return best[1]


class Projector:
    """n x D_v tokens -> k x D_l through ``compress`` and an MLP head."""

    tag: ProjectorTag

    def __init__(self, h: int, w: int, d_v: int, k: int, head: MlpParams):
        self.h, self.w, self.d_v, self.k = h, w, d_v, k
        self.head = head

    @property
    def n(self) -> int:
        return self.h * self.w

    @property
    def feature_dim(self) -> int:
        return self.head.d_in

    @property
    def overlapping(self) -> bool:
        return False

    def _check(self, v: Tensor):
        if v.shape != (self.n, self.d_v):
            raise DimensionError(f"{self.tag.value} expects tokens of shape {(self.n, self.d_v)}, "
                                 f"got {v.shape}")

    def compress(self, v: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, v: Tensor) -> Tensor:
        return project(self.compress(v), self.head)


class WicoProjector(Projector):
    tag = ProjectorTag.WICO

    def __init__(self, h, w, d_v, k, head, spec: WindowSpec,
                 blocks: Sequence[AttentionBlockParams]):
        super().__init__(h, w, d_v, k, head)
        self.spec = spec
        self.blocks = list(blocks)

    @property
    def overlapping(self) -> bool:
        return self.spec.overlapping

    def compress(self, v):
        self._check(v)
        return wico_compress(v, self.blocks, self.spec)


class Concat1DProjector(Projector):
    tag = ProjectorTag.CONCAT1D

    def compress(self, v):
        self._check(v)
        return concat_1d(v, self.n // self.k)


class TokenFilterProjector(Projector):
    tag = ProjectorTag.TOKEN_FILTER

    def compress(self, v):
        self._check(v)
        return token_filter(v, self.k)


class PerceiverProjector(Projector):
    tag = ProjectorTag.PERCEIVER

    def __init__(self, h, w, d_v, k, head, params: dict[str, Tensor]):
        super().__init__(h, w, d_v, k, head)
        self.params = params

    def compress(self, v):
        self._check(v)
        p = self.params
        return cross_attention(v, p["queries"], p["w_q"], p["w_k"], p["w_v"], p["w_o"])


class TokenMixerProjector(Projector):
    tag = ProjectorTag.TOKEN_MIXER

    def __init__(self, h, w, d_v, k, head, mix: Tensor):
        super().__init__(h, w, d_v, k, head)
        self.mix = mix

    def compress(self, v):
        self._check(v)
        return token_mixer(v, self.mix)


class CAbstractorProjector(Projector):
    tag = ProjectorTag.C_ABSTRACTOR

    def __init__(self, h, w, d_v, k, head, h_out: int, w_out: int, params: dict[str, Tensor]):
        super().__init__(h, w, d_v, k, head)
        self.h_out, self.w_out = h_out, w_out
        self.params = params

    def compress(self, v):
        self._check(v)
        p = self.params
        return c_abstractor(TokenGrid.from_tokens(v, self.h, self.w), self.h_out, self.w_out,
                            p["pre_w"], p["pre_b"], p["post_w"], p["post_b"])


def build_projector(tag, h: int, w: int, d_v: int, k: int, d_l: int, seed: int = 0,
                    k_v: int = 1, heads: int = 1, head: str = "mlp",
                    h_out: int | None = None, w_out: int | None = None,
                    dtype=np.float32) -> Projector:
    """Construct any projector kind with seeded random parameters.

    ``head="identity"`` uses a linear-mode MLP that copies features into the
    first D_l columns (zero-padding or truncating).
    """
    tag = ProjectorTag.parse(tag)
    n = h * w
    if not 1 <= k <= n:
        raise RangeError(f"k={k} must lie in 1..{n}")
    if tag in (ProjectorTag.WICO, ProjectorTag.C_ABSTRACTOR):
        if h_out is None or w_out is None:
            h_out, w_out = grid_factor(k, h, w)
        if h_out * w_out != k:
            raise ConfigError(f"h_out * w_out = {h_out * w_out} does not equal k = {k}")
    rng = np.random.default_rng(seed)

    if tag is ProjectorTag.WICO:
        spec = compute_window_spec(h, w, h_out, w_out)
        feature_dim = spec.d_t(d_v)
    elif tag is ProjectorTag.CONCAT1D:
        if n % k:
            raise DivisibilityError(f"Concat1D needs k to divide n, got n={n}, k={k}")
        feature_dim = (n // k) * d_v
    else:
        feature_dim = d_v

    if head == "identity":
        mlp = identity_mlp(feature_dim, d_l, dtype=dtype)
    elif head == "mlp":
        mlp = init_mlp(feature_dim, d_l, seed=seed + 1000, dtype=dtype)
    else:
        raise ConfigError(f"unknown head {head!r}; expected 'mlp' or 'identity'")

    if tag is ProjectorTag.WICO:
        return WicoProjector(h, w, d_v, k, mlp, spec,
                             init_blocks(k_v, d_v, heads, seed=seed, dtype=dtype))
    if tag is ProjectorTag.CONCAT1D:
        return Concat1DProjector(h, w, d_v, k, mlp)
    if tag is ProjectorTag.TOKEN_FILTER:
        return TokenFilterProjector(h, w, d_v, k, mlp)
    if tag is ProjectorTag.PERCEIVER:
        params = {"queries": Tensor(rng.standard_normal((k, d_v)), dtype=dtype)}
        for name in ("w_q", "w_k", "w_v", "w_o"):
            params[name] = glorot(rng, d_v, d_v, dtype)
        return PerceiverProjector(h, w, d_v, k, mlp, params)
    if tag is ProjectorTag.TOKEN_MIXER:
        return TokenMixerProjector(h, w, d_v, k, mlp, glorot(rng, n, k, dtype))
    params = {"pre_w": glorot(rng, d_v, d_v, dtype), "pre_b": Tensor(np.zeros(d_v), dtype=dtype),
              "post_w": glorot(rng, d_v, d_v, dtype), "post_b": Tensor(np.zeros(d_v), dtype=dtype)}
    return CAbstractorProjector(h, w, d_v, k, mlp, h_out, w_out, params)
