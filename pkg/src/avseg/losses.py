"""Set-prediction objectives: bipartite matching, matched classification and
mask losses with deep supervision, and the adaptive inter-frame consistency
penalty exp(S-1)*(1-S) over adjacent-frame mask similarities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import tensor as T
from .maskige import CapacityError
from .query_decoder import PredictionSet, upsample_masks
from .tensor import Tensor

DICE_EPS = 1.0
COS_EPS = 1e-8


@dataclass
class LossWeights:
    lambda_cls: float = 2.0
    lambda_mask: float = 5.0
    lambda_ada: float = 10.0
    no_object_weight: float = 0.1

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_mask", "lambda_ada"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class MatchResult:
    """Injective map from ground-truth instances to query indices."""
    query_for_gt: np.ndarray        # (G,) query index per GT instance
    total_cost: float


@dataclass
class FrameTargets:
    """Ground truth for one frame: instance masks (G,H,W) and classes (G,)."""
    masks: np.ndarray
    classes: np.ndarray


def hungarian_assign(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact minimal-cost assignment (rows to columns) of a square or wide
    rectangular cost matrix."""
    return linear_sum_assignment(cost)


def _pairwise_mask_cost(mask_logits: np.ndarray, gt_masks: np.ndarray) -> np.ndarray:
    """(Nq,H,W) logits x (G,H,W) binary masks -> (Nq,G) BCE-mean + dice cost."""
    x = mask_logits.reshape(mask_logits.shape[0], -1)
    y = gt_masks.reshape(gt_masks.shape[0], -1)
    npix = x.shape[1]
    base = (np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))).mean(axis=1)
    bce = base[:, None] - (x @ y.T) / npix
    p = 1.0 / (1.0 + np.exp(-x))
    inter = p @ y.T
    dice = 1.0 - (2.0 * inter + DICE_EPS) / (p.sum(axis=1)[:, None]
                                             + y.sum(axis=1)[None, :] + DICE_EPS)
    return bce + dice


def hungarian_match(cls_logits: np.ndarray, mask_logits: np.ndarray,
                    targets: FrameTargets, weights: LossWeights) -> MatchResult:
    """Match one frame's queries to its GT instances.

    Cost per (query, instance): lambda_cls * (-posterior of the GT class)
    + lambda_mask * (BCE + dice) between masks at a common resolution.
    """
    n_q = cls_logits.shape[0]
    g = targets.masks.shape[0]
    if g == 0:
        return MatchResult(np.zeros(0, dtype=int), 0.0)
    if n_q < g:
        raise CapacityError(g, n_q)
    z = cls_logits - cls_logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    cost = (weights.lambda_cls * (-probs[:, targets.classes - 1])
            + weights.lambda_mask * _pairwise_mask_cost(mask_logits, targets.masks))
    rows, cols = hungarian_assign(cost)
    query_for_gt = np.empty(g, dtype=int)
    query_for_gt[cols] = rows
    return MatchResult(query_for_gt, float(cost[rows, cols].sum()))


def classification_loss(cls_logits: Tensor, matches, targets,
                        weights: LossWeights, frame_mask: np.ndarray) -> Tensor:
    """Mean cross-entropy over all queries of annotated frames; unmatched
    queries carry the no-object label, down-weighted by no_object_weight."""
    b, t, n_q, _ = cls_logits.shape
    no_object = cls_logits.shape[-1] - 1
    labels = np.full((b, t, n_q), no_object, dtype=int)
    for bi in range(b):
        for ti in range(t):
            m = matches[bi][ti]
            if m.query_for_gt.size:
                # class id k (1-based) occupies logit column k - 1
                labels[bi, ti, m.query_for_gt] = targets[bi][ti].classes - 1
    w = np.where(labels == no_object, weights.no_object_weight, 1.0)
    w *= frame_mask[:, :, None]
    denom = float(frame_mask.sum() * n_q)
    if denom == 0.0:
        return Tensor(0.0)
    logp = T.log_softmax(cls_logits, axis=-1)
    bi, ti, qi = np.meshgrid(np.arange(b), np.arange(t), np.arange(n_q),
                             indexing="ij")
    picked = logp[bi, ti, qi, labels]
    return T.mul(T.tsum(T.mul(picked, -w)), 1.0 / denom)


def mask_loss(mask_logits_up: Tensor, matches, targets,
              frame_mask: np.ndarray) -> Tensor:
    """BCE + dice over matched (query, instance) pairs, averaged over pairs."""
    sel_b, sel_t, sel_q, gt_list = [], [], [], []
    b, t = len(targets), len(targets[0])
    for bi in range(b):
        for ti in range(t):
            if not frame_mask[bi, ti]:
                continue
            m = matches[bi][ti]
            for gi, qi in enumerate(m.query_for_gt):
                sel_b.append(bi)
                sel_t.append(ti)
                sel_q.append(qi)
                gt_list.append(targets[bi][ti].masks[gi])
    if not gt_list:
        return Tensor(0.0)
    n = len(gt_list)
    logits = mask_logits_up[np.array(sel_b), np.array(sel_t), np.array(sel_q)]
    logits = T.reshape(logits, (n, -1))
    gt = np.stack(gt_list).reshape(n, -1)
    bce = T.tmean(T.bce_with_logits(logits, gt))
    p = T.sigmoid(logits)
    inter = T.tsum(T.mul(p, gt), axis=1)
    denom = T.add(T.tsum(p, axis=1), gt.sum(axis=1) + DICE_EPS)
    dice = T.add(T.mul(T.div(T.add(T.mul(inter, 2.0), DICE_EPS), denom), -1.0), 1.0)
    return T.add(bce, T.tmean(dice))


def adjacent_frame_similarity(mask_logits: Tensor, source: str = "probs") -> Tensor:
    """(B,T,Nq,H,W) -> (B,T-1) cosine similarity of adjacent flattened frames."""
    b, t = mask_logits.shape[:2]
    flat = T.reshape(mask_logits, (b, t, -1))
    if source == "probs":
        flat = T.sigmoid(flat)
    a = flat[:, :-1]
    c = flat[:, 1:]
    num = T.tsum(T.mul(a, c), axis=-1)
    na = T.tsqrt(T.tsum(T.mul(a, a), axis=-1))
    nc = T.tsqrt(T.tsum(T.mul(c, c), axis=-1))
    denom = T.mul(na, nc)
    # guard only degenerate (near-zero-norm) pairs so that identical frames
    # score exactly 1; the bump is a constant w.r.t. the graph
    bump = np.where(denom.data < COS_EPS, COS_EPS, 0.0)
    if bump.any():
        denom = T.add(denom, bump)
    return T.div(num, denom)


def adaptive_consistency_loss(mask_logits: Tensor, source: str = "probs") -> Tensor:
    """Sum over adjacent pairs of exp(S-1)*(1-S), averaged over the batch.

    Zero exactly when every adjacent pair is identical; a single frame
    contributes nothing.
    """
    if mask_logits.shape[1] < 2:
        return Tensor(0.0)
    s = adjacent_frame_similarity(mask_logits, source)
    term = T.mul(T.texp(T.add(s, -1.0)), T.add(T.mul(s, -1.0), 1.0))
    return T.tmean(T.tsum(term, axis=1))


def total_loss(layer_preds: list[PredictionSet], targets, weights: LossWeights,
               frame_mask: np.ndarray, out_hw: tuple[int, int],
               consistency_layer: int, consistency_source: str = "probs"):
    """Deep-supervised total: sum over layers of matched cls+mask losses, plus
    the consistency penalty on the designated intermediate layer's masks.

    Returns (total Tensor, components dict of floats).
    """
    total = Tensor(0.0)
    cls_sum = mask_sum = 0.0
    for pred in layer_preds:
        up = upsample_masks(pred.mask_logits, *out_hw)
        matches = match_all_frames(pred, up, targets, weights)
        l_cls = classification_loss(pred.cls_logits, matches, targets,
                                    weights, frame_mask)
        l_mask = mask_loss(up, matches, targets, frame_mask)
        total = T.add(total, T.add(T.mul(l_cls, weights.lambda_cls),
                                   T.mul(l_mask, weights.lambda_mask)))
        cls_sum += l_cls.item()
        mask_sum += l_mask.item()
    l_ada = adaptive_consistency_loss(layer_preds[consistency_layer].mask_logits,
                                      consistency_source)
    total = T.add(total, T.mul(l_ada, weights.lambda_ada))
    return total, {"cls": cls_sum, "mask": mask_sum, "ada": l_ada.item(),
                   "total": total.item()}


def match_all_frames(pred: PredictionSet, mask_up: Tensor, targets,
                     weights: LossWeights) -> list:
    """Per-frame Hungarian matching on detached prediction data."""
    cls_np = pred.cls_logits.data
    mask_np = mask_up.data
    out = []
    for bi in range(cls_np.shape[0]):
        row = []
        for ti in range(cls_np.shape[1]):
            row.append(hungarian_match(cls_np[bi, ti], mask_np[bi, ti],
                                       targets[bi][ti], weights))
        out.append(row)
    return out
