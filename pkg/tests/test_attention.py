import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msqm.autodiff import DimensionError, Tensor, finite_difference_check, ops, parameter
from msqm.attention import (
    AttentionBlock,
    FeedForward,
    MultiHeadAttention,
    drop_rng,
    kept_count,
    sample_drop_mask,
    self_attend_with_drop,
)


def _identity_mha(d, heads, rng):
    mha = MultiHeadAttention(d, heads, rng)
    for lin in (mha.q_proj, mha.k_proj, mha.v_proj, mha.out_proj):
        lin.weight.data[:] = np.eye(d)
        lin.bias.data[:] = 0.0
    return mha


def _reference_mha(mha, q, k, v):
    """Per-head loop in float64."""
    d, heads = mha.d, mha.heads
    hd = d // heads

    def proj(lin, x):
        return x @ lin.weight.data.astype(np.float64) + lin.bias.data

    qp, kp, vp = proj(mha.q_proj, q), proj(mha.k_proj, k), proj(mha.v_proj, v)
    outs = []
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        s = qp[:, sl] @ kp[:, sl].T / np.sqrt(hd)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        s /= s.sum(axis=1, keepdims=True)
        outs.append(s @ vp[:, sl])
    return proj(mha.out_proj, np.concatenate(outs, axis=1))


def test_mha_matches_per_head_reference(rng):
    mha = MultiHeadAttention(12, 3, rng)
    q, k = rng.standard_normal((4, 12)), rng.standard_normal((6, 12))
    out = mha(Tensor(q), Tensor(k), Tensor(k)).data
    np.testing.assert_allclose(out, _reference_mha(mha, q, k, k), rtol=1e-4, atol=1e-5)


def test_single_key_returns_value_row(rng):
    mha = _identity_mha(8, 2, rng)
    v = rng.standard_normal((1, 8)).astype(np.float32)
    out, w = mha(Tensor(rng.standard_normal((3, 8))), Tensor(v), Tensor(v), return_weights=True)
    np.testing.assert_array_equal(w.data, 1.0)
    np.testing.assert_allclose(out.data, np.repeat(v, 3, axis=0), rtol=1e-6)


def test_identical_keys_average_values(rng):
    mha = _identity_mha(8, 2, rng)
    k = np.repeat(rng.standard_normal((1, 8)), 5, axis=0)
    v = rng.standard_normal((5, 8))
    out = mha(Tensor(rng.standard_normal((2, 8))), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(out, np.repeat(v.mean(0, keepdims=True), 2, axis=0), rtol=1e-5, atol=1e-6)


def test_key_permutation_equivariance_and_weights_sum(rng):
    mha = MultiHeadAttention(8, 4, rng)
    q, k, v = (rng.standard_normal(s) for s in ((3, 8), (7, 8), (7, 8)))
    perm = rng.permutation(7)
    a, w = mha(Tensor(q), Tensor(k), Tensor(v), return_weights=True)
    b = mha(Tensor(q), Tensor(k[perm]), Tensor(v[perm]))
    np.testing.assert_allclose(a.data, b.data, atol=1e-5)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-5)
    assert a.shape == (3, 8)


def test_mha_dimension_errors(rng):
    mha = MultiHeadAttention(8, 2, rng)
    with pytest.raises(DimensionError):
        mha(Tensor(np.ones((2, 8))), Tensor(np.ones((3, 6))), Tensor(np.ones((3, 6))))
    with pytest.raises(DimensionError):
        mha(Tensor(np.ones((2, 8))), Tensor(np.ones((3, 8))), Tensor(np.ones((4, 8))))
    with pytest.raises(ValueError):
        MultiHeadAttention(10, 4, rng)


def test_block_is_post_norm(rng):
    block = AttentionBlock(8, 2, rng)
    q, k = Tensor(rng.standard_normal((3, 8))), Tensor(rng.standard_normal((5, 8)))
    ref = block.norm(ops.add(q, block.mha(q, k, k)))
    np.testing.assert_array_equal(block(q, k, k).data, ref.data)


def test_ffn_zero_weights_is_layer_norm(rng):
    ffn = FeedForward(6, rng)
    for p in (ffn.fc1.weight, ffn.fc1.bias, ffn.fc2.weight, ffn.fc2.bias):
        p.data[:] = 0.0
    x = Tensor(rng.standard_normal((4, 6)))
    np.testing.assert_array_equal(ffn(x).data, ffn.norm(x).data)
    assert ffn.fc1.weight.shape == (6, 24)


def test_ffn_gradcheck(rng):
    ffn = FeedForward(6, rng)
    x = parameter(rng.standard_normal((4, 6)))
    assert finite_difference_check(lambda: ffn(x), [x] + ffn.parameters()) <= 1e-3


# --------------------------------------------------------------------------- token drop


@pytest.mark.parametrize("n,r,k", [(10, 0.5, 5), (512, 0.5, 256), (10, 0.05, 1), (3, 0.5, 2), (7, 1.0, 7), (4, 0.1, 1)])
def test_kept_count(n, r, k):
    assert kept_count(n, r) == k


@pytest.mark.parametrize("r", [0.0, -0.1, 1.5])
def test_kept_count_rejects_bad_ratio(r):
    with pytest.raises(ValueError):
        kept_count(10, r)


@given(st.integers(1, 300), st.floats(0.01, 1.0), st.integers(0, 2**32 - 1))
def test_drop_mask_invariants(n, r, seed):
    mask = sample_drop_mask(n, r, np.random.default_rng(seed))
    idx = mask.kept_indices
    assert len(idx) == max(1, min(n, int(np.floor(r * n + 0.5))))
    assert np.all(np.diff(idx) > 0) and idx[0] >= 0 and idx[-1] < n


def test_r1_is_full_self_attention(rng):
    block = AttentionBlock(8, 2, rng)
    x = Tensor(rng.standard_normal((10, 8)))
    full = block(x, x, x).data
    for seed in range(3):
        out = self_attend_with_drop(block, x, 1.0, drop_rng(seed, 0, 3, 0)).data
        assert out.tobytes() == full.tobytes()


def test_r05_updates_half_and_passes_rest(rng):
    block = AttentionBlock(8, 2, rng)
    x = Tensor(rng.standard_normal((10, 8)))
    out, mask = self_attend_with_drop(block, x, 0.5, drop_rng(7, 0, 3, 0), return_mask=True)
    same = np.all(out.data == x.data, axis=1)
    assert same.sum() == 5
    assert set(np.flatnonzero(~same)) == set(mask.kept_indices)
    kept = Tensor(x.data[mask.kept_indices])
    np.testing.assert_array_equal(out.data[mask.kept_indices], block(kept, kept, kept).data)


def test_pinned_seed_is_repeatable(rng):
    block = AttentionBlock(8, 2, rng)
    x = Tensor(rng.standard_normal((20, 8)))
    a = self_attend_with_drop(block, x, 0.3, drop_rng(1, 2, 3, 4)).data
    b = self_attend_with_drop(block, x, 0.3, drop_rng(1, 2, 3, 4)).data
    assert a.tobytes() == b.tobytes()
    c = self_attend_with_drop(block, x, 0.3, drop_rng(1, 2, 3, 5)).data
    assert a.tobytes() != c.tobytes()


def test_drop_requires_rng_below_one(rng):
    block = AttentionBlock(8, 2, rng)
    with pytest.raises(ValueError):
        self_attend_with_drop(block, Tensor(np.ones((10, 8))), 0.5, None)


def test_drop_gradcheck_pinned(rng):
    block = AttentionBlock(8, 2, rng)
    x = parameter(rng.standard_normal((10, 8)))
    err = finite_difference_check(
        lambda: self_attend_with_drop(block, x, 0.5, drop_rng(3, 0, 2, 0)), [x] + block.parameters()
    )
    assert err <= 1e-3
