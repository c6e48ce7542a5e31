"""Seeded gradient-check harnesses for the CLI and the acceptance suite.

Each builder returns (max relative error, threshold).  The composed check
freezes the bipartite matching at its base-point value: matching is piecewise
constant in the parameters, so treating it as data keeps the loss
differentiable along the probed directions.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .bfm import BilateralFusion
from .config import RunConfig
from .gradcheck import finite_difference_check, random_tensor
from .losses import (LossWeights, adaptive_consistency_loss,
                     classification_loss, mask_loss, match_all_frames)
from .model import Model
from .params import ParamStore
from .query_decoder import QueryDecoder, upsample_masks
from .seeding import stream
from .tensor import Tensor


def gradcheck_tensor(seed: int) -> tuple[float, float]:
    """Elementary operations against central differences."""
    rng = stream(seed, "gradcheck", "tensor")
    worst = 0.0
    x = random_tensor(rng, (3, 4))
    y = random_tensor(rng, (4, 5))
    worst = max(worst, finite_difference_check(
        lambda a, b: T.tsum(T.matmul(a, b)), [x, y]))
    x = random_tensor(rng, (2, 7))
    worst = max(worst, finite_difference_check(
        lambda a: T.tsum(T.softmax(a, axis=1)[:, :2]), [x]))
    for op in (T.texp, T.sigmoid, T.relu, T.tsqrt):
        x = random_tensor(rng, (6,))
        if op is T.tsqrt:
            x = Tensor(np.abs(x.data) + 0.5, requires_grad=True)
        worst = max(worst, finite_difference_check(
            lambda a, f=op: T.tsum(T.mul(f(a), a)), [x]))
    x = random_tensor(rng, (1, 2, 6, 6))
    w = random_tensor(rng, (2, 2, 3, 3))
    worst = max(worst, finite_difference_check(
        lambda a, b: T.tsum(T.sigmoid(T.conv2d(a, b, stride=2))), [x, w]))
    x = random_tensor(rng, (2, 3, 4, 4))
    worst = max(worst, finite_difference_check(
        lambda a: T.tsum(T.mul(T.global_avg_pool(a), T.global_avg_pool(a))), [x]))
    a = random_tensor(rng, (8,))
    b = random_tensor(rng, (8,))
    worst = max(worst, finite_difference_check(
        lambda u, v: T.cosine_similarity(u, v), [a, b]))
    # softmax cross-entropy oracle
    logits = random_tensor(rng, (4, 5))
    labels = rng.integers(0, 5, size=4)
    worst = max(worst, finite_difference_check(
        lambda z: T.mul(T.tsum(T.log_softmax(z, axis=1)[np.arange(4), labels]),
                        -0.25), [logits]))
    return worst, 1e-6


def gradcheck_bfm(seed: int) -> tuple[float, float]:
    """Both attention directions of the bilateral fusion on a micro instance."""
    rng = stream(seed, "gradcheck", "bfm")
    store = ParamStore(seed)
    bfm = BilateralFusion(pixel_dim=4, audio_dim=4, embed_dim=4, frames=2,
                          store=store)
    p1 = random_tensor(rng, (1, 2, 4, 3, 3))
    fa = random_tensor(rng, (1, 2, 4))
    probe = [p1, fa, store.params["bfm/w_q"], store.params["bfm/w_k"],
             store.params["bfm/w_v_vis"], store.params["bfm/w_v_aud"],
             store.params["bfm/vis_proj"], store.params["bfm/audio_in"],
             store.params["bfm/audio_out"]]

    def loss(*_):
        pix, aud = bfm.forward(p1, fa, mode="bilateral")
        return T.add(T.tsum(T.sigmoid(pix)), T.tsum(T.sigmoid(aud)))

    return finite_difference_check(loss, probe), 1e-4


def gradcheck_decoder(seed: int) -> tuple[float, float]:
    """Query decoder (one round over the three levels) with masked attention."""
    rng = stream(seed, "gradcheck", "decoder")
    store = ParamStore(seed)
    dec = QueryDecoder(pixel_dim=4, embed_dim=4, num_queries=2, num_classes=2,
                       rounds=1, store=store)
    p1 = random_tensor(rng, (1, 2, 4, 4, 4))
    levels = [random_tensor(rng, (1, 2, 4, h, h)) for h in (1, 2, 4)]
    fa = random_tensor(rng, (1, 2, 4))
    probe = [p1, fa] + levels + [store.params["qdec/queries"],
                                 store.params["qdec/l0/cross_wq"],
                                 store.params["qdec/l2/ffn_w1"],
                                 store.params["qdec/cls_w"],
                                 store.params["qdec/mask_w0"]]

    def loss(*_):
        preds = dec.forward(levels, p1, fa, query_mode="add")
        out = Tensor(0.0)
        for pr in preds:
            out = T.add(out, T.add(T.tsum(T.sigmoid(pr.cls_logits)),
                                   T.tmean(T.sigmoid(pr.mask_logits))))
        return out

    return finite_difference_check(loss, probe), 1e-4


def gradcheck_loss(seed: int) -> tuple[float, float]:
    """Composed loss through the full model on a micro configuration.

    Matching is frozen at its base-point assignment; the finite-difference
    probe covers the clip inputs and one parameter from every component.
    """
    cfg = RunConfig(frames=2, height=32, width=32, num_classes=2,
                    audio_dim=4, embed_dim=8, pixel_dim=8,
                    stage_channels=(4, 4, 8, 8), num_queries=3,
                    decoder_rounds=1, seed=seed)
    model = Model(cfg)
    rng = stream(seed, "gradcheck", "loss")
    frames = rng.uniform(size=(1, 2, 3, 32, 32))
    maskiges = rng.uniform(size=(1, 2, 3, 32, 32))
    audio = rng.standard_normal((1, 2, 4))
    gt = np.zeros((1, 2, 32, 32), dtype=int)
    gt[0, :, 4:14, 6:20] = 1
    gt[0, 1, 20:28, 2:12] = 2
    from .data import frame_targets_from_semantic
    targets = [[frame_targets_from_semantic(gt[0, t]) for t in range(2)]]
    weights = LossWeights(lambda_ada=10.0)
    frame_mask = np.ones((1, 2))

    frames_t = Tensor(frames, requires_grad=True)
    mask_t = Tensor(maskiges, requires_grad=True)
    audio_t = Tensor(audio, requires_grad=True)

    def forward():
        b, t = 1, 2
        from .encoder import forward_pyramid
        flat_f = T.reshape(frames_t, (b * t, 3, 32, 32))
        flat_m = T.reshape(mask_t, (b * t, 3, 32, 32))
        pyramid = forward_pyramid(model.encoder, flat_f, flat_m)
        p_levels = model.pixel_decoder.decode(pyramid)
        p1 = T.reshape(p_levels[0], (b, t, *p_levels[0].shape[1:]))
        p1p, ap = model.bfm.add_positional(p1, audio_t)
        p1f, faf = model.bfm.forward(p1p, ap, mode=cfg.fusion_mode)
        coarse = [T.reshape(l, (b, t, *l.shape[1:]))
                  for l in (p_levels[3], p_levels[2], p_levels[1])]
        return model.query_decoder.forward(coarse, p1f, faf, cfg.query_mode)

    with T.no_grad():
        base_preds = forward()
        frozen = [match_all_frames(pr, upsample_masks(pr.mask_logits, 32, 32),
                                   targets, weights) for pr in base_preds]

    def loss(*_):
        preds = forward()
        out = Tensor(0.0)
        for pr, matches in zip(preds, frozen):
            up = upsample_masks(pr.mask_logits, 32, 32)
            l_cls = classification_loss(pr.cls_logits, matches, targets,
                                        weights, frame_mask)
            l_mask = mask_loss(up, matches, targets, frame_mask)
            out = T.add(out, T.add(T.mul(l_cls, weights.lambda_cls),
                                   T.mul(l_mask, weights.lambda_mask)))
        l_ada = adaptive_consistency_loss(
            preds[cfg.consistency_layer].mask_logits)
        return T.add(out, T.mul(l_ada, weights.lambda_ada))

    p = model.params
    probe = [audio_t,
             p["enc_v/stem"], p["enc_m/s2c1_b"], p["fuse/w1"],
             p["pixdec/lat1"], p["bfm/w_q"], p["bfm/w_v_aud"],
             p["qdec/queries"], p["qdec/l1/self_wq"], p["qdec/cls_w"],
             p["qdec/mask_w2"]]
    return finite_difference_check(loss, probe), 1e-4


CHECKS = {
    "tensor": gradcheck_tensor,
    "bfm": gradcheck_bfm,
    "decoder": gradcheck_decoder,
    "loss": gradcheck_loss,
}


def run_gradcheck(module: str, seed: int) -> list[tuple[str, float, float]]:
    names = list(CHECKS) if module == "all" else [module]
    return [(name, *CHECKS[name](seed)) for name in names]
