import numpy as np
import pytest

from msqm.autodiff import Tensor, finite_difference_check, ops, parameter
from msqm.embeddings import Embeddings
from msqm.features import FPN, Backbone, ClipSample, Encoder, FeaturePyramid, Level, encode


@pytest.fixture(scope="module")
def parts():
    rng = np.random.default_rng(5)
    d = 24
    return dict(
        backbone=Backbone(d, rng),
        encoder=Encoder(d, 2, 2, rng),
        fpn=FPN(d, 4, rng),
        embed=Embeddings(3, 4, d, rng),
        d=d,
    )


def _frames(rng, t=3, h=64, w=64):
    return Tensor(rng.random((t, 3, h, w)))


def test_pyramid_dims_coarsest_first(parts, rng):
    maps = parts["backbone"].extract_pyramid(_frames(rng, t=5))
    assert len(maps) == 4
    assert [m.shape[2:] for m in maps] == [(2, 2), (4, 4), (8, 8), (16, 16)]
    assert all(m.shape[1] == 5 for m in maps)
    assert [m.shape[0] for m in maps] == [256, 128, 64, 32]


def test_indivisible_frame_size_rejected(parts, rng):
    with pytest.raises(ValueError, match="32"):
        parts["backbone"].extract_pyramid(_frames(rng, h=48, w=64))


def test_reduce_and_flatten_layout(parts, rng):
    bb = parts["backbone"]
    maps = bb.extract_pyramid(_frames(rng, t=2, h=32, w=64))
    pyr = bb.reduce_and_flatten(maps)
    for lvl, (m, proj) in enumerate(zip(maps, bb.reduce)):
        c, t, h, w = m.shape
        feats, dims = pyr[lvl]
        assert dims == (t, h, w) and feats.shape == (t * h * w, parts["d"])
        # token (t, h, w) is the projection of the channel vector at that site
        for tt, hh, ww in [(0, 0, 0), (t - 1, h - 1, w - 1), (1, 0, w - 1)]:
            row = (tt * h + hh) * w + ww
            ref = m.data[:, tt, hh, ww] @ proj.weight.data + proj.bias.data
            np.testing.assert_allclose(feats.data[row], ref, rtol=1e-4, atol=1e-5)


def test_reduce_projection_gradcheck(rng):
    bb = Backbone(12, rng, widths=(4, 4, 4, 4))
    x = parameter(rng.standard_normal((4, 2, 2, 3)))
    maps = [x, x, x, x]
    assert finite_difference_check(lambda: bb.reduce_and_flatten(maps)[1].features, [x] + bb.reduce[1].parameters()) <= 1e-3


def _pyramid(rng, d, t=2, sizes=((1, 1), (2, 2), (4, 4), (8, 8))):
    return FeaturePyramid(Level(Tensor(rng.standard_normal((t * h * w, d))), (t, h, w)) for h, w in sizes)


def test_encode_preserves_shapes(parts, rng):
    pyr = _pyramid(rng, parts["d"])
    out = encode(parts["encoder"], parts["fpn"], parts["embed"], pyr)
    assert out.shapes() == pyr.shapes()
    assert [lvl.dims for lvl in out] == [lvl.dims for lvl in pyr]


def test_zero_lateral_ablation_leaves_norm_path(rng):
    d = 12
    fpn = FPN(d, 4, rng)
    for lat, smooth in zip(fpn.lateral, fpn.smooth):
        lat.weight.data[:] = 0.0
        lat.bias.data[:] = 0.0
        smooth.weight.data[:] = 0.0
    enc = Encoder(d, 2, 1, rng)
    for p in enc.parameters():
        p.data[:] = 0.0
    pyr = _pyramid(rng, d)
    out = encode(enc, fpn, Embeddings(3, 4, d, rng), pyr)
    finest = pyr[-1].features
    np.testing.assert_allclose(out[-1].features.data, fpn.norm[-1](finest).data, atol=1e-6)


def test_coarsest_perturbation_reaches_every_level(parts, rng):
    pyr = _pyramid(rng, parts["d"])
    base = encode(parts["encoder"], parts["fpn"], parts["embed"], pyr)
    coarse = pyr[0].features.data.copy()
    coarse[0] += 1.0
    moved = FeaturePyramid([Level(Tensor(coarse), pyr[0].dims)] + list(pyr[1:]))
    out = encode(parts["encoder"], parts["fpn"], parts["embed"], moved)
    for a, b in zip(base, out):
        assert not np.array_equal(a.features.data, b.features.data)


def test_encode_is_deterministic(parts, rng):
    pyr = _pyramid(rng, parts["d"])
    a = encode(parts["encoder"], parts["fpn"], parts["embed"], pyr)
    b = encode(parts["encoder"], parts["fpn"], parts["embed"], pyr)
    for x, y in zip(a, b):
        assert x.features.data.tobytes() == y.features.data.tobytes()


def test_clip_sample_validation():
    frames = np.zeros((2, 3, 4, 4), np.float32)
    masks = np.zeros((2, 4, 4), np.uint8)
    assert ClipSample(frames, masks, "c").dims == (2, 4, 4)
    with pytest.raises(ValueError, match="3"):
        ClipSample(np.zeros((2, 1, 4, 4)), masks, "c")
    with pytest.raises(ValueError, match="2 frames"):
        ClipSample(frames[:1], masks[:1], "c")
    with pytest.raises(ValueError, match="do not match"):
        ClipSample(frames, masks[:, :2], "c")
    with pytest.raises(ValueError, match="0 or 1"):
        ClipSample(frames, masks + 2, "c")
