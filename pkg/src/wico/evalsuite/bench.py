"""Sweep every projector kind over synthetic datasets and token budgets."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..baselines import ProjectorTag, build_projector, grid_factor
from ..errors import ConfigError
from ..projector import compute_window_spec
from ..tensor import Tensor
from .cost import cost_model
from .metrics import DEFAULT_LAMBDA, probe, total_variation, window_variance
from .synth import FeatureKind, synth_batch

COLUMNS = ("projector", "dataset", "k", "probe_mse", "total_variation", "window_variance",
           "cost_ratio")


@dataclass
class BenchConfig:
    projectors: Sequence[str] = tuple(t.value for t in ProjectorTag)
    ks: Sequence[int] = (16, 36)
    datasets: Sequence[str] = ("gaussian",)
    h: int = 12
    w: int = 12
    d_v: int = 8
    d_l: int = 16
    k_v: int = 1
    samples: int | None = None  # default: just over the widest flattened feature size
    lam: float = DEFAULT_LAMBDA
    seeds: Sequence[int] = (0,)
    probe_stage: str = "features"  # "features" (before the MLP head) or "output"
    num_layers: int = 32
    late_layers: int = 0
    t_text: int = 50
    d_model: int = 4096

    def __post_init__(self):
        self.projectors = [ProjectorTag.parse(p) for p in self.projectors]
        self.datasets = [FeatureKind.parse(d) for d in self.datasets]
        if self.probe_stage not in ("features", "output"):
            raise ConfigError(f"probe_stage must be 'features' or 'output', got {self.probe_stage!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def sample_count(self) -> int:
        if self.samples is not None:
            return self.samples
        return 2 * self.h * self.w * self.d_v + 1


@dataclass(frozen=True)
class BenchRow:
    projector: str
    dataset: str
    k: int
    probe_mse: float
    total_variation: float
    window_variance: float
    cost_ratio: float

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in COLUMNS)


def _evaluate(cfg: BenchConfig, tag: ProjectorTag, k: int, kind: FeatureKind,
              batches: dict) -> BenchRow:
    h_out, w_out = grid_factor(k, cfg.h, cfg.w)
    spec = compute_window_spec(cfg.h, cfg.w, h_out, w_out)
    mses, tvs, wvs = [], [], []
    for seed in cfg.seeds:
        grids = batches[kind, seed]
        proj = build_projector(tag, cfg.h, cfg.w, cfg.d_v, k, cfg.d_l, seed=seed, k_v=cfg.k_v,
                               dtype=np.float64)
        feats = []
        for g in grids:
            v = Tensor(g.reshape(cfg.h * cfg.w, cfg.d_v))
            feats.append((proj.compress(v) if cfg.probe_stage == "features" else proj(v)).data)
        mses.append(probe(grids, np.stack(feats), cfg.lam).mse)
        tvs.extend(total_variation(g.mean(axis=2)) for g in grids)
        wvs.extend(window_variance(g, spec) for g in grids)
    ratio = cost_model(cfg.num_layers, cfg.late_layers, k, cfg.h * cfg.w, cfg.t_text,
                       cfg.d_model).ratio
    return BenchRow(tag.value, kind.value, k, float(np.mean(mses)), float(np.mean(tvs)),
                    float(np.mean(wvs)), ratio)


def run_benchmark(cfg: BenchConfig, threads: int = 0) -> list[BenchRow]:
    """One row per (projector, k, dataset), averaged over seeds.

    Rows come back sorted by projector tag, then k, then dataset, however
    many worker threads were used.
    """
    combos = [(p, k, d) for p in cfg.projectors for k in cfg.ks for d in cfg.datasets]
    if not combos:
        return []
    count = cfg.sample_count()
    batches = {(d, s): synth_batch(cfg.h, cfg.w, cfg.d_v, d, count, s)
               for d in cfg.datasets for s in cfg.seeds}
    if threads and threads > 0:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: _evaluate(cfg, *c, batches), combos))
    else:
        rows = [_evaluate(cfg, *c, batches) for c in combos]
    return sorted(rows, key=lambda r: (r.projector, r.k, r.dataset))
