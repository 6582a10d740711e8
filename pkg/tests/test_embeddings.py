import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msqm.autodiff import ops
from msqm.embeddings import Embeddings, sinusoidal_st_embedding


def _scalar_entry(t, h, w, c, d):
    """One table entry from the closed form, no vectorisation."""
    per_axis = d // 3
    axis, local = divmod(c, per_axis)
    if axis >= 3 or local >= 2 * (per_axis // 2):
        return 0.0
    pos = (t, h, w)[axis]
    angle = pos * 10000.0 ** (-2.0 * (local // 2) / per_axis)
    return math.sin(angle) if local % 2 == 0 else math.cos(angle)


@pytest.mark.parametrize("dims,d", [((2, 3, 4), 48), ((3, 2, 2), 20), ((1, 5, 3), 7)])
def test_table_matches_closed_form(dims, d):
    table = sinusoidal_st_embedding(*dims, d)
    assert table.shape == (math.prod(dims), d) and table.dtype == np.float32
    for row, (t, h, w) in enumerate(itertools.product(*(range(n) for n in dims))):
        ref = [_scalar_entry(t, h, w, c, d) for c in range(d)]
        np.testing.assert_allclose(table[row], ref, atol=1e-6)


def test_origin_is_sin_zero_cos_one():
    row = sinusoidal_st_embedding(2, 2, 2, 48)[0]
    np.testing.assert_array_equal(row[0::2], 0.0)
    np.testing.assert_array_equal(row[1::2], 1.0)


def test_leftover_channels_are_zero():
    table = sinusoidal_st_embedding(3, 3, 3, 20)  # 6 per axis, 2 leftover
    np.testing.assert_array_equal(table[:, 18:], 0.0)


def test_small_d_rejected():
    with pytest.raises(ValueError):
        sinusoidal_st_embedding(2, 2, 2, 5)


@given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(6, 64))
def test_values_bounded_and_deterministic(t, h, w, d):
    a = sinusoidal_st_embedding(t, h, w, d)
    assert np.all(np.abs(a) <= 1.0)
    np.testing.assert_array_equal(a, sinusoidal_st_embedding(t, h, w, d))


def test_all_positions_distinct_d48_4x4x4():
    table = sinusoidal_st_embedding(4, 4, 4, 48).astype(np.float64)
    dist = np.linalg.norm(table[:, None, :] - table[None, :, :], axis=-1)
    off_diag = dist[~np.eye(64, dtype=bool)]
    assert off_diag.min() > 1e-3


def test_token_pos_equals_table_when_scale_zeroed(rng):
    emb = Embeddings(5, 4, 24, rng)
    for s in emb.scale:
        s.data[:] = 0.0
    for level, dims in enumerate([(2, 1, 1), (2, 2, 2), (2, 4, 4), (2, 8, 8)]):
        out = emb.token_pos(level, dims)
        assert out.shape == (math.prod(dims), 24)
        np.testing.assert_array_equal(out.data, sinusoidal_st_embedding(*dims, 24))


def test_token_pos_unknown_scale(rng):
    with pytest.raises(IndexError):
        Embeddings(5, 4, 24, rng).token_pos(4, (1, 2, 2))


def test_gradient_reaches_scale_table_only(rng):
    emb = Embeddings(3, 2, 12, rng)
    ops.sum(emb.token_pos(1, (2, 2, 3))).backward()
    np.testing.assert_allclose(emb.scale[1].grad, np.full(12, 12.0))
    assert emb.scale[0].grad is None
    assert len(emb.parameters()) == 3  # query table + two scale rows, no sinusoid


def test_checkpoint_names_and_init_scale(rng):
    emb = Embeddings(5, 4, 384, np.random.default_rng(0))
    assert list(emb.state_dict()) == ["query_pos", "scale.0", "scale.1", "scale.2", "scale.3"]
    assert emb.query_pos.shape == (5, 384)
    assert abs(float(emb.query_pos.data.std()) - 0.02) < 0.003
