"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line with its runtime."""
import io
import math
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest
import yaml

from wico import tensor as T
from wico.baselines import adaptive_avg_pool
from wico.cli import main
from wico.cli.tensorfile import decode, encode
from wico.decompose import channel_interpolate, token_interpolate
from wico.encoder import init_blocks, fit_adjuster
from wico.evalsuite import (cost_model, probe, synth_array, synth_batch, total_variation,
                            window_variance)
from wico.projector import (MlpParams, ProjectorReconstruction, TokenGrid, compute_window_spec,
                            init_mlp, inverse_scatter, window_concat, window_indices, wico_forward)
from wico.tensor import Tensor, grad_check


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(label, limit_s):
        t0 = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - t0
            within = elapsed < limit_s
            status = "PASS" if ok and within else "FAIL"
            with capsys.disabled():
                print(f"\n[{status}] {label} ({elapsed:.2f}s, limit {limit_s:g}s)")
        assert within, f"{label}: {elapsed:.2f}s exceeds the {limit_s:g}s budget"
    return run


# ---------------------------------------------------------------- 1 window geometry

def placement_oracle(size, out):
    """Largest stride whose `out` windows fit, then the width that makes the last one flush."""
    stride = 1
    while out * (stride + 1) <= size:
        stride += 1
    width = size - (out - 1) * stride
    starts = [i * stride for i in range(out)]
    assert starts[-1] + width == size
    return stride, width, starts


def test_ac1_window_geometry(criterion):
    with criterion("AC1 window geometry sweep h, w <= 32", 5):
        axis = {(s, o): placement_oracle(s, o) for s in range(1, 33) for o in range(1, s + 1)}
        for h in range(1, 33):
            for w in range(1, 33):
                for h_out in range(1, h + 1):
                    sh, wh, _ = axis[h, h_out]
                    for w_out in range(1, w + 1):
                        spec = compute_window_spec(h, w, h_out, w_out)
                        assert (spec.s_h, spec.w_h) == (sh, wh) == (h // h_out,
                                                                    h - (h_out - 1) * (h // h_out))
                        assert (spec.s_w, spec.w_w) == axis[w, w_out][:2]
        # explicit placement on a slice of the sweep
        for h in range(1, 11):
            for h_out in range(1, h + 1):
                for w, w_out in ((h, h_out), (7, 3)):
                    spec = compute_window_spec(h, w, h_out, w_out)
                    sh, wh, rows = axis[h, h_out]
                    sw, ww, cols = axis[w, w_out]
                    expected = [[(r + a) * w + (c + b) for a in range(wh) for b in range(ww)]
                                for r in rows for c in cols]
                    assert window_indices(spec).tolist() == expected
        spec = compute_window_spec(24, 24, 12, 12)
        assert (spec.s_h, spec.s_w, spec.w_h, spec.w_w, spec.k) == (2, 2, 2, 2, 144)


# ---------------------------------------------------------------- 2 lossless concatenation

def test_ac2_lossless_concatenation(criterion):
    with criterion("AC2 lossless concatenation and probe separation", 30):
        rng = np.random.default_rng(0)
        for h, w in ((8, 8), (12, 6), (6, 9)):
            for h_out in (d for d in range(1, h + 1) if h % d == 0):
                for w_out in (d for d in range(1, w + 1) if w % d == 0):
                    spec = compute_window_spec(h, w, h_out, w_out)
                    x = rng.standard_normal((h, w, 3))
                    back = inverse_scatter(window_concat(TokenGrid(Tensor(x)), spec), spec, 3)
                    assert np.array_equal(back.data.data, x)

        spec = compute_window_spec(8, 8, 4, 4)
        for seed in range(10):
            grids = synth_batch(8, 8, 8, "gaussian", 800, seed=seed)
            concat = np.stack([window_concat(TokenGrid(Tensor(g)), spec).data.reshape(16, 32)
                               for g in grids])
            pooled = grids.reshape(800, 4, 2, 4, 2, 8).mean(axis=(2, 4))
            assert probe(grids, concat, 1e-6).mse < 1e-6
            assert probe(grids, pooled, 1e-6).mse > 1e-3


# ---------------------------------------------------------------- 3 gradients

def _op_cases(rng):
    r = lambda *s: Tensor(rng.standard_normal(s))
    m, p, q = (int(x) for x in rng.integers(2, 6, size=3))
    idx = rng.integers(0, m, size=5)
    return [
        (T.add, [r(m, p), r(p)]),
        (T.sub, [r(m, p), r(m, p)]),
        (T.mul, [r(m, p), r(1, p)]),
        (lambda a: T.scale(a, -0.3), [r(m, p)]),
        (T.square, [r(m, p)]),
        (T.absolute, [Tensor(rng.uniform(0.5, 2, (m, p)) * rng.choice([-1, 1], (m, p)))]),
        (T.gelu, [r(m, p)]),
        (T.matmul, [r(m, p), r(p, q)]),
        (T.transpose2d, [r(m, p)]),
        (lambda a: T.reshape(a, (p * m,)), [r(m, p)]),
        (lambda a: T.sum_(a, axis=1), [r(m, p)]),
        (lambda a: T.mean(a, axis=0), [r(m, p)]),
        (lambda a: a[1:, ::2], [r(m, p)]),
        (lambda a: T.take_rows(a, idx), [r(m, p)]),
        (lambda a, b: T.concat([a, b], axis=0), [r(m, p), r(q, p)]),
        (T.softmax_rows, [r(m, p)]),
        (T.layer_norm, [r(m, p), r(p), r(p)]),
        (lambda a: T.interp_axis0(a, m + q), [r(m, p)]),
        (lambda a: adaptive_avg_pool(a, 2, 2), [r(m + 1, p + 1, 2)]),
        (lambda a: channel_interpolate(a, 3 * m + 1), [r(m, p)]),
        (lambda a: token_interpolate(a, 2 * m), [r(m, p)]),
    ]


def test_ac3_gradient_correctness(criterion):
    with criterion("AC3 finite-difference gradients, 20 seeds", 60):
        worst = 0.0
        spec = compute_window_spec(4, 4, 2, 2)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            for fn, inputs in _op_cases(rng):
                worst = max(worst, grad_check(fn, inputs, seed=seed))

            block = init_blocks(1, 4, seed=seed, dtype=np.float64)[0]
            mlp = init_mlp(16, 5, seed=seed, dtype=np.float64)
            names = block.tensor_fields()

            def forward(v0, w1, b1, w2, b2, *ts):
                return wico_forward(v0, [block.with_tensors(dict(zip(names, ts)))], spec,
                                    MlpParams(w1, b1, w2, b2))

            inputs = [Tensor(rng.standard_normal((16, 4))), mlp.w1,
                      Tensor(rng.standard_normal(5)), mlp.w2, mlp.b2]
            inputs += [block.tensors()[n] for n in names]
            worst = max(worst, grad_check(forward, inputs, seed=seed))
        assert worst < 1e-4, worst


# ---------------------------------------------------------------- 4 decomposition

def lerp(values, t):
    """Endpoint-aligned linear resampling of a 1-D sequence to length t, exact integer positions."""
    s = len(values)
    if s == 1 or t == 1:
        return [values[0]] * t
    out = []
    for i in range(t):
        q, r = divmod(i * (s - 1), t - 1)
        if q == s - 1:
            q, r = s - 2, t - 1
        f = r / (t - 1)
        out.append((1 - f) * values[q] + f * values[q + 1])
    return out


def channel_reference(x, n):
    k, d = x.shape
    m = n // k
    xt = x.T  # d x k
    # interpolate along the channel axis of the transposed matrix: d rows -> m*d rows
    stretched = np.array([lerp(list(xt[:, j]), m * d) for j in range(k)]).T  # (m*d) x k
    back = stretched.T  # k x (m*d)
    return np.array([back[tok, r * d:(r + 1) * d] for tok in range(k) for r in range(m)])


def test_ac4_decomposition_contracts(criterion):
    with criterion("AC4 token and channel decomposition", 5):
        v = np.random.default_rng(1).standard_normal((12, 5))
        assert np.array_equal(token_interpolate(Tensor(v), 12).data, v)
        mid = token_interpolate(Tensor(np.array([[0.0, 2.0], [4.0, -6.0]])), 3).data
        assert mid[1].tolist() == [2.0, -2.0]

        for k, n in ((144, 576), (100, 576), (3, 7), (5, 5), (1, 9)):
            x = np.random.default_rng(k + n).standard_normal((k, 4))
            out = channel_interpolate(Tensor(x), n).data
            assert out.shape == (k * (n // k), 4)
            np.testing.assert_allclose(out, channel_reference(x, n), rtol=0, atol=1e-12)
        assert channel_interpolate(Tensor(np.ones((144, 2))), 576).shape == (576, 2)


# ---------------------------------------------------------------- 5 cost model

def test_ac5_cost_model(criterion):
    with criterion("AC5 prefill cost ratio fixture", 1):
        L, K, k, n, t_text, D = 32, 2, 144, 576, 50, 4096
        flops = lambda tokens: 8 * tokens * D * D + 4 * tokens * tokens * D
        hand = Fraction((L - K) * flops(t_text + k) + K * flops(t_text + n), L * flops(t_text + n))
        plus = cost_model(L, K, k, n, t_text, D).ratio
        base = cost_model(L, 0, k, n, t_text, D).ratio
        assert plus == float(hand)
        assert plus < 0.5
        # extra cost of decomposing in the last K layers, as a share of what compression saved
        assert (plus - base) / (1 - base) < 0.1


# ---------------------------------------------------------------- 6 smoothness

def test_ac6_smoothness(criterion):
    with criterion("AC6 total variation oracle and smooth-vs-noise windows", 10):
        for seed in range(5):
            m = np.random.default_rng(seed).standard_normal((9, 11))
            pairs = [abs(m[i, j] - m[i, j + 1]) for i in range(9) for j in range(10)]
            pairs += [abs(m[i, j] - m[i + 1, j]) for i in range(8) for j in range(11)]
            assert total_variation(m) == math.fsum(pairs) / len(pairs)
        spec = compute_window_spec(12, 12, 6, 6)
        for seed in range(20):
            smooth = window_variance(synth_array(12, 12, 4, "piecewise-constant", seed), spec)
            noise = window_variance(synth_array(12, 12, 4, "gaussian", seed), spec)
            assert smooth < noise


# ---------------------------------------------------------------- 7 toy tuning

def test_ac7_toy_tuning(criterion):
    with criterion("AC7 adjuster fit halves reconstruction loss within 500 steps", 120):
        v0 = Tensor(np.random.default_rng(2024).standard_normal((64, 8)))
        objective = ProjectorReconstruction(compute_window_spec(8, 8, 4, 4), 8, 32, seed=3,
                                            dtype=np.float64)
        result = fit_adjuster(v0, objective, steps=500, lr=0.05, seed=3, k_v=1)
        assert len(result.blocks) == 1
        assert min(result.trace) < 0.5 * result.trace[0]


# ---------------------------------------------------------------- 8 determinism and format

def _pipeline(root):
    cfg = {
        "grid": {"h": 8, "w": 8, "d_v": 4, "kind": "gaussian", "seed": 7},
        "projector": {"kind": "Wico", "k": 16, "d_l": 12, "seed": 1},
        "decompose": {"strategy": "channel", "n": 64},
        "eval": {"projectors": ["Wico", "Concat1D", "TokenMixer"], "ks": [4, 16],
                 "samples": 80, "seeds": [0, 1]},
        "output": {name: str(root / f"{name}.out") for name in ("gen", "project", "decompose",
                                                                "bench")},
    }
    path = root / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    outputs = {}
    for command, extra in (("gen", []), ("project", ["--input", cfg["output"]["gen"]]),
                           ("decompose", ["--input", cfg["output"]["project"]]), ("bench", [])):
        out, err = io.StringIO(), io.StringIO()
        assert main([command, "--config", str(path)] + extra, out=out, err=err) == 0, err.getvalue()
        outputs[command] = (root / f"{command}.out").read_bytes()
    return outputs


def test_ac8_determinism_and_format(criterion, tmp_path):
    with criterion("AC8 CLI pipeline determinism and tensor file round trip", 30):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        first, second = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
        assert first == second
        assert decode(first["decompose"]).shape == (64, 12)

        rng = np.random.default_rng(8)
        for dtype in (np.float32, np.float64):
            info = np.finfo(dtype)
            specials = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, info.smallest_subnormal,
                                 info.max], dtype=dtype)
            for rank in range(1, 5):
                shape = tuple(int(s) for s in rng.integers(1, 5, size=rank))
                arr = rng.standard_normal(shape).astype(dtype)
                flat = arr.reshape(-1)
                flat[: min(flat.size, specials.size)] = specials[: flat.size]
                back = decode(encode(arr))
                assert back.dtype == arr.dtype and back.shape == arr.shape
                assert back.tobytes() == arr.tobytes()
