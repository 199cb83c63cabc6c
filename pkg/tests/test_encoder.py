import numpy as np
import pytest

from wico import tensor as T
from wico.encoder import (DEFAULT_K_V, AttentionBlockParams, MatchInput, adjust_tokens,
                          fit_adjuster, init_blocks, moving_average_is_monotone,
                          multi_head_attention)
from wico.errors import DimensionError, DivergenceError
from wico.projector import ProjectorReconstruction, compute_window_spec
from wico.tensor import Tensor, grad_check


def tokens(n, d, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((n, d)))


def test_default_depth_is_one():
    assert DEFAULT_K_V == 1


def test_empty_block_list_is_identity():
    v0 = tokens(5, 4)
    assert adjust_tokens(v0, []) is v0


def test_shape_contract_and_finiteness():
    blocks = init_blocks(1, 8, heads=2, seed=3, dtype=np.float64)
    out = adjust_tokens(tokens(4, 8), blocks)
    assert out.shape == (4, 8)
    assert np.all(np.isfinite(out.data))


def test_attention_rows_sum_to_one():
    block = AttentionBlockParams.init(8, heads=2, seed=1, dtype=np.float64)
    _, weights = multi_head_attention(tokens(6, 8), block, return_weights=True)
    assert len(weights) == 2
    for w in weights:
        assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-6)


def test_heads_must_divide_dim():
    with pytest.raises(DimensionError):
        AttentionBlockParams.init(6, heads=4)


def test_block_dim_mismatch():
    with pytest.raises(DimensionError):
        adjust_tokens(tokens(4, 6), init_blocks(1, 8))


def test_glorot_bound():
    block = AttentionBlockParams.init(8, seed=0, dtype=np.float64)
    assert np.abs(block.w_q.data).max() <= np.sqrt(6 / 16)
    assert np.abs(block.mlp_w1.data).max() <= np.sqrt(6 / 40)


def test_permutation_equivariance():
    blocks = init_blocks(2, 8, heads=2, seed=5, dtype=np.float64)
    v0 = tokens(10, 8, seed=9)
    perm = np.random.default_rng(1).permutation(10)
    out = adjust_tokens(v0, blocks).data
    out_perm = adjust_tokens(Tensor(v0.data[perm]), blocks).data
    # softmax sums over permuted keys, so only rounding-level differences remain
    np.testing.assert_allclose(out_perm, out[perm], rtol=0, atol=1e-12)


@pytest.mark.parametrize("heads", [1, 2])
def test_block_gradient(heads):
    block = AttentionBlockParams.init(4, heads=heads, seed=2, dtype=np.float64)
    names = block.tensor_fields()

    def fn(v0, *ts):
        return adjust_tokens(v0, [block.with_tensors(dict(zip(names, ts)))])

    err = grad_check(fn, [tokens(5, 4, seed=3)] + [block.tensors()[n] for n in names])
    assert err < 1e-4


# ---------------------------------------------------------------- fitting

def test_zero_steps_is_a_no_op():
    blocks = init_blocks(1, 4, seed=0, dtype=np.float64)
    result = fit_adjuster(tokens(6, 4), MatchInput(), steps=0, lr=0.1, blocks=blocks)
    assert result.trace == []
    assert result.blocks[0] is blocks[0]


def test_invalid_arguments():
    with pytest.raises(ValueError):
        fit_adjuster(tokens(4, 4), MatchInput(), steps=-1, lr=0.1)
    with pytest.raises(ValueError):
        fit_adjuster(tokens(4, 4), MatchInput(), steps=1, lr=0.0)


def test_reconstruction_fixture():
    # pinned: seed 2024 data, seed 7 init, 200 steps at lr 0.03
    v0 = tokens(64, 8, seed=2024)
    objective = ProjectorReconstruction(compute_window_spec(8, 8, 4, 4), 8, 32, seed=7,
                                        dtype=np.float64)
    result = fit_adjuster(v0, objective, steps=200, lr=0.03, seed=7)
    assert len(result.trace) == 200
    assert result.trace[0] == pytest.approx(1.686116074398788, rel=1e-9)
    assert result.trace[-1] == pytest.approx(0.2798279422204002, rel=1e-6)
    assert result.trace[-1] < result.trace[0]
    assert result.warning is None
    for b in result.blocks:
        for name, t in b.tensors().items():
            assert t.shape == init_blocks(1, 8)[0].tensors()[name].shape


def test_match_input_fixture():
    v0 = tokens(64, 8, seed=2024)
    result = fit_adjuster(v0, MatchInput(), steps=500, lr=0.05, seed=11)
    assert result.trace[0] == pytest.approx(0.44939880323472337, rel=1e-9)
    assert result.trace[-1] == pytest.approx(0.0049332000734471255, rel=1e-6)
    assert min(result.trace) < 0.5 * result.trace[0]


def test_batch_of_grids_is_averaged():
    batch = [tokens(4, 4, seed=s).astype(np.float64) for s in range(3)]
    blocks = init_blocks(1, 4, seed=0, dtype=np.float64)
    result = fit_adjuster(batch, MatchInput(), steps=1, lr=0.01, blocks=blocks)
    expected = np.mean([np.mean((adjust_tokens(v, blocks).data - v.data) ** 2) for v in batch])
    assert result.trace[0] == pytest.approx(expected, rel=1e-12)


def test_smoothness_regularizer_adds_window_variance():
    spec = compute_window_spec(4, 4, 2, 2)
    v0 = tokens(16, 3, seed=1)
    plain = ProjectorReconstruction(spec, 3, 12, seed=0, dtype=np.float64)
    reg = ProjectorReconstruction(spec, 3, 12, seed=0, smoothness_weight=2.0, dtype=np.float64)
    base = plain.loss(v0, v0, plain.params).item()
    win = v0.data[np.array([[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]])]
    assert reg.loss(v0, v0, reg.params).item() == pytest.approx(base + 2.0 * win.var(axis=1).mean())


class _Exploding:
    params: dict = {}

    def loss(self, v, v0, params):
        return T.scale(T.mean(v), float("nan"))


def test_nan_loss_raises_divergence_with_step():
    with pytest.raises(DivergenceError) as info:
        fit_adjuster(tokens(4, 4), _Exploding(), steps=3, lr=0.1)
    assert info.value.step == 0


def test_moving_average_monitor():
    assert moving_average_is_monotone(list(np.linspace(2, 1, 200)))
    rising = list(np.linspace(1, 2, 200))
    assert not moving_average_is_monotone(rising)


def test_convergence_warning_attached():
    class Rising:
        params: dict = {}
        calls = 0

        def loss(self, v, v0, params):
            Rising.calls += 1
            return T.scale(T.mean(T.square(v)), 0.0) + float(Rising.calls)

    with pytest.warns(RuntimeWarning):
        result = fit_adjuster(tokens(4, 4), Rising(), steps=60, lr=0.01)
    assert result.warning is not None
