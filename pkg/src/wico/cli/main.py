"""``wico`` command line: gen, project, decompose, bench, cost, viz.

Every failure is reported as one stderr line ``wico: error[<kind>]: <message>``
with a nonzero exit status (2 for invalid input or configuration, 1 for I/O).
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import time

import numpy as np

from ..baselines import build_projector
from ..decompose import DecompositionConfig, channel_output_count, upsample
from ..errors import ConfigError, InputError, WicoError
from ..evalsuite import COLUMNS, BenchConfig, cost_model, run_benchmark, synth_array
from ..evalsuite.metrics import channel_mean_map
from ..tensor import Tensor
from .config import RunConfig, load_config
from .heatmap import encode_pgm, to_gray
from .tensorfile import read_tensor, write_tensor

DTYPES = {"f32": np.float32, "f64": np.float64}
COST_COLUMNS = ("num_layers", "late_layers", "k", "n", "t_text", "d_model", "attention_flops",
                "projection_flops", "total", "baseline_total", "ratio")


def _output_path(args, cfg: RunConfig, command: str):
    path = args.output or getattr(cfg.output, command)
    if path is None:
        raise ConfigError(f"{command}: no output path (use --output or output.{command})")
    return path


def _input_path(args, command: str):
    if not args.input:
        raise ConfigError(f"{command}: --input is required")
    return args.input


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _emit(data: bytes, path, out) -> None:
    if path is None:
        out.write(data.decode("utf-8"))
        return
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


# ---------------------------------------------------------------- commands

def cmd_gen(cfg: RunConfig, args, out) -> None:
    g = cfg.grid
    seed = g.seed if args.seed is None else args.seed
    kind = args.kind or g.kind
    arr = synth_array(g.h, g.w, g.d_v, kind, seed).astype(DTYPES[args.dtype])
    path = _output_path(args, cfg, "gen")
    write_tensor(path, arr)
    out.write(f"wrote {path} dims={list(arr.shape)} kind={kind} seed={seed}\n")


def _load_tokens(path, cfg: RunConfig, dtype) -> np.ndarray:
    arr = read_tensor(path)
    g = cfg.grid
    if arr.shape == (g.h, g.w, g.d_v):
        arr = arr.reshape(g.h * g.w, g.d_v)
    elif arr.shape != (g.h * g.w, g.d_v):
        raise ConfigError(f"input dims {list(arr.shape)} do not match grid "
                          f"{g.h} x {g.w} x {g.d_v}")
    return arr.astype(dtype)


def _projector_grid(cfg: RunConfig):
    """(k, h_out, w_out); without k or h_out/w_out, each grid axis is halved (1/4 of the tokens)."""
    g, p = cfg.grid, cfg.projector
    if p.token_count() is not None:
        return p.token_count(), p.h_out, p.w_out
    h_out, w_out = max(1, g.h // 2), max(1, g.w // 2)
    return h_out * w_out, h_out, w_out


def cmd_project(cfg: RunConfig, args, out) -> None:
    dtype = DTYPES[args.dtype]
    tokens = _load_tokens(_input_path(args, "project"), cfg, dtype)
    g, p = cfg.grid, cfg.projector
    k, h_out, w_out = _projector_grid(cfg)
    seed = p.seed if args.seed is None else args.seed
    t0 = time.perf_counter()
    proj = build_projector(p.kind, g.h, g.w, g.d_v, k, p.d_l, seed=seed, k_v=p.k_v,
                           heads=p.heads, head=p.head, h_out=h_out, w_out=w_out, dtype=dtype)
    result = proj(Tensor(tokens, dtype=dtype)).data
    wall = time.perf_counter() - t0
    write_tensor(_output_path(args, cfg, "project"), result)
    out.write(f"k={k} d_t={proj.feature_dim} overlapping={str(proj.overlapping).lower()} "
              f"wall_ms={wall * 1e3:.3f}\n")


def cmd_decompose(cfg: RunConfig, args, out) -> None:
    dtype = DTYPES[args.dtype]
    arr = read_tensor(_input_path(args, "decompose"))
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise InputError(f"decompose expects a k x D_l tensor, got dims {list(arr.shape)}")
    d = cfg.decompose
    k = arr.shape[0]
    config = DecompositionConfig(d.strategy, d.l_l, d.k_l, d.n, k)
    result = upsample(Tensor(arr, dtype=dtype), d.n, config.strategy).data
    write_tensor(_output_path(args, cfg, "decompose"), result)
    count = result.shape[0]
    out.write(f"strategy={d.strategy} k={k} n={d.n} count={count} "
              f"insertion_layer={config.insertion_layer}\n")
    if count < d.n:
        out.write(f"shortfall: channel interpolation yields {channel_output_count(k, d.n)} tokens, "
                  f"{d.n - count} fewer than n={d.n}\n")


def bench_config(cfg: RunConfig) -> BenchConfig:
    e, g, p, d = cfg.eval, cfg.grid, cfg.projector, cfg.decompose
    return BenchConfig(projectors=e.projectors, ks=e.ks, datasets=e.datasets, h=g.h, w=g.w,
                       d_v=g.d_v, d_l=p.d_l, k_v=p.k_v, samples=e.samples, lam=e.lam,
                       seeds=e.seeds, probe_stage=e.probe_stage, num_layers=d.l_l,
                       late_layers=d.k_l, t_text=e.t_text, d_model=e.d_model)


def cmd_bench(cfg: RunConfig, args, out) -> None:
    bc = bench_config(cfg)
    if args.seed is not None:
        bc.seeds = [args.seed]
    threads = int(os.environ.get("WICO_THREADS", "0") or 0)
    rows = run_benchmark(bc, threads=threads)
    _emit(_csv_bytes(COLUMNS, [r.as_tuple() for r in rows]),
          args.output or cfg.output.bench, out)


def cmd_cost(cfg: RunConfig, args, out) -> None:
    d, e = cfg.decompose, cfg.eval
    pick = lambda flag, default: default if flag is None else flag
    num_layers = pick(args.layers, d.l_l)
    late = pick(args.late_layers, d.k_l)
    k = pick(args.k, _projector_grid(cfg)[0])
    n = pick(args.n, d.n)
    t_text = pick(args.t_text, e.t_text)
    d_model = pick(args.d_model, e.d_model)
    rep = cost_model(num_layers, late, k, n, t_text, d_model)
    row = (num_layers, late, k, n, t_text, d_model, rep.attention_flops, rep.projection_flops,
           rep.total, rep.baseline_total, rep.ratio)
    _emit(_csv_bytes(COST_COLUMNS, [row]), args.output or cfg.output.cost, out)


def cmd_viz(cfg: RunConfig, args, out) -> None:
    arr = read_tensor(_input_path(args, "viz"))
    if arr.size == 0:
        raise InputError("viz: input tensor is empty")
    g = cfg.grid
    if arr.shape == (g.h * g.w, g.d_v):
        arr = arr.reshape(g.h, g.w, g.d_v)
    if arr.ndim not in (2, 3):
        raise InputError(f"viz expects an h x w or h x w x D tensor, got dims {list(arr.shape)}")
    gray = to_gray(channel_mean_map(arr))
    path = _output_path(args, cfg, "viz")
    _emit(encode_pgm(gray), path, out)
    out.write(f"wrote {path} size={gray.shape[1]}x{gray.shape[0]}\n")


COMMANDS = {"gen": cmd_gen, "project": cmd_project, "decompose": cmd_decompose,
            "bench": cmd_bench, "cost": cmd_cost, "viz": cmd_viz}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wico", description="Window token concatenation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--input")
        sp.add_argument("--output")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dtype", choices=sorted(DTYPES), default="f32")
        if name == "gen":
            sp.add_argument("--kind")
        if name == "cost":
            sp.add_argument("--layers", type=int)
            sp.add_argument("--late-layers", type=int)
            sp.add_argument("--k", type=int)
            sp.add_argument("--n", type=int)
            sp.add_argument("--t-text", type=int)
            sp.add_argument("--d-model", type=int)
    return parser


def _one_line(msg) -> str:
    return " ".join(str(msg).split())


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = build_parser().parse_args(argv)
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config)
        COMMANDS[args.command](cfg, args, out)
    except WicoError as exc:
        err.write(f"wico: error[{exc.kind}]: {_one_line(exc)}\n")
        return 2
    except OSError as exc:
        err.write(f"wico: error[io]: {_one_line(exc)}\n")
        return 1
    except ValueError as exc:
        err.write(f"wico: error[value]: {_one_line(exc)}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
