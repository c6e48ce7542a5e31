import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avseg import tensor as T
from avseg.encoder import (EncoderConfig, SiamEncoder, channel_weighted_fuse,
                           forward_pyramid)
from avseg.params import ParamStore
from avseg.pixel_decoder import PixelDecoder
from avseg.tensor import DimensionError, Tensor, fresh_tape, no_grad


def make_encoder(seed=0, shared=False, use_siam=True,
                 channels=(4, 6, 8, 10)):
    store = ParamStore(seed)
    cfg = EncoderConfig(stage_channels=channels, shared_weights=shared)
    return SiamEncoder(cfg, store, use_siam=use_siam), store


def test_stage_shapes_32():
    enc, _ = make_encoder()
    with no_grad():
        stages = enc.encode(Tensor(np.random.default_rng(0).uniform(
            size=(2, 3, 32, 32))), "image")
    assert [s.shape for s in stages] == [
        (2, 4, 8, 8), (2, 6, 4, 4), (2, 8, 2, 2), (2, 10, 1, 1)]


def test_stage_shapes_paper_scale_ratio():
    # 224 input must produce the 56/28/14/7 pyramid
    enc, _ = make_encoder(channels=(2, 2, 2, 2))
    with no_grad():
        stages = enc.encode(Tensor(np.zeros((1, 3, 224, 224))), "image")
    assert [s.shape[-1] for s in stages] == [56, 28, 14, 7]


def test_rejects_bad_rank_and_size():
    enc, _ = make_encoder()
    with pytest.raises(DimensionError):
        enc.encode(Tensor(np.zeros((3, 32, 32))), "image")
    with pytest.raises(DimensionError):
        enc.encode(Tensor(np.zeros((1, 3, 30, 32))), "image")


def test_shared_weights_branches_identical():
    enc, _ = make_encoder(shared=True)
    x = Tensor(np.random.default_rng(1).uniform(size=(1, 3, 32, 32)))
    with no_grad():
        a = enc.encode(x, "image")
        b = enc.encode(x, "maskige")
    for s1, s2 in zip(a, b):
        assert np.array_equal(s1.data, s2.data)


def test_unshared_branches_differ():
    enc, _ = make_encoder(shared=False)
    x = Tensor(np.random.default_rng(1).uniform(size=(1, 3, 32, 32)))
    with no_grad():
        a = enc.encode(x, "image")
        b = enc.encode(x, "maskige")
    assert not np.array_equal(a[0].data, b[0].data)


def test_fuse_zero_maskige_passthrough():
    # zero maskige features leave the visual features untouched
    rng = np.random.default_rng(2)
    f_v = Tensor(rng.uniform(size=(2, 4, 3, 3)))
    f_m = Tensor(np.zeros((2, 4, 3, 3)))
    w = Tensor(rng.uniform(size=(4, 4)))
    with no_grad():
        out = channel_weighted_fuse(f_v, f_m, w)
    assert np.array_equal(out.data, f_v.data)


def test_fuse_hand_value():
    # one channel, constant maskige plane m: gate = m*w, output = m*(m*w) + v
    f_v = Tensor(np.full((1, 1, 2, 2), 3.0))
    f_m = Tensor(np.full((1, 1, 2, 2), 2.0))
    w = Tensor(np.array([[5.0]]))
    with no_grad():
        out = channel_weighted_fuse(f_v, f_m, w)
    assert np.allclose(out.data, 2.0 * (2.0 * 5.0) + 3.0)


def test_fuse_shape_mismatch():
    with pytest.raises(DimensionError):
        channel_weighted_fuse(Tensor(np.zeros((1, 2, 2, 2))),
                              Tensor(np.zeros((1, 3, 2, 2))),
                              Tensor(np.zeros((3, 3))))
    with pytest.raises(DimensionError):
        channel_weighted_fuse(Tensor(np.zeros((1, 2, 2, 2))),
                              Tensor(np.zeros((1, 2, 2, 2))),
                              Tensor(np.zeros((3, 2))))


def test_no_siam_equals_visual_branch():
    enc_s, _ = make_encoder(seed=7, use_siam=True)
    enc_n, _ = make_encoder(seed=7, use_siam=False)
    x = Tensor(np.random.default_rng(3).uniform(size=(1, 3, 32, 32)))
    with no_grad():
        vis = enc_s.encode(x, "image")
        pyr = forward_pyramid(enc_n, x, None)
    for a, b in zip(vis, pyr):
        assert np.array_equal(a.data, b.data)


def test_gradient_reaches_both_branches():
    enc, store = make_encoder(seed=4)
    rng = np.random.default_rng(4)
    frames = Tensor(rng.uniform(size=(1, 3, 32, 32)), requires_grad=True)
    maskiges = Tensor(rng.uniform(size=(1, 3, 32, 32)), requires_grad=True)
    with fresh_tape():
        pyr = forward_pyramid(enc, frames, maskiges)
        loss = T.tsum(T.mul(pyr[-1], pyr[-1]))
        T.backward(loss)
    assert frames.grad is not None and np.abs(frames.grad).max() > 0
    assert maskiges.grad is not None and np.abs(maskiges.grad).max() > 0
    assert store.params["enc_m/stem"].grad is not None
    assert np.abs(store.params["enc_m/stem"].grad).max() > 0


def test_pixel_decoder_shapes_and_topdown():
    store = ParamStore(0)
    enc = SiamEncoder(EncoderConfig(stage_channels=(4, 6, 8, 10)), store)
    dec = PixelDecoder((4, 6, 8, 10), 5, store)
    x = Tensor(np.random.default_rng(5).uniform(size=(2, 3, 64, 64)))
    with no_grad():
        pyr = forward_pyramid(enc, x, Tensor(np.zeros((2, 3, 64, 64))))
        levels = dec.decode(pyr)
    assert [l.shape for l in levels] == [
        (2, 5, 16, 16), (2, 5, 8, 8), (2, 5, 4, 4), (2, 5, 2, 2)]
    # each finer level depends on the coarser one: P4 lateral + upsample chain
    with no_grad():
        p4_only = dec.decode([Tensor(np.zeros_like(p.data)) if i < 3 else p
                              for i, p in enumerate(pyr)])
    assert np.abs(p4_only[0].data).max() > 0  # coarse signal reaches P1


@settings(max_examples=8, deadline=None)
@given(mult=st.integers(min_value=1, max_value=4))
def test_stage_sizes_property(mult):
    h = 32 * mult
    enc, _ = make_encoder(channels=(2, 2, 2, 2))
    with no_grad():
        stages = enc.encode(Tensor(np.zeros((1, 3, h, h))), "image")
    assert [s.shape[-1] for s in stages] == [h // 4, h // 8, h // 16, h // 32]
