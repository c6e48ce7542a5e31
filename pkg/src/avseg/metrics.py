"""Semantic inference post-processing and Jaccard / F-score evaluation.

Inference combines class posteriors with mask probabilities per pixel,
O[t,k,h,w] = sum_q cls[t,q,k] * mask[t,q,h,w], drops the no-object class and
takes the per-pixel argmax; pixels whose best real-class score falls below a
small floor become background.  Metrics aggregate per class, then per clip,
then over the dataset; an empty prediction against empty ground truth scores
1 so correctly-silent clips are rewarded.
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError

F_BETA_SQ = 0.3


def semantic_inference(cls_logits: np.ndarray, mask_logits_up: np.ndarray,
                       bg_threshold: float) -> np.ndarray:
    """(T,Nq,Kc+1) logits + (T,Nq,H,W) upsampled mask logits -> (T,H,W) labels.

    Labels are 0 for background, 1..Kc for real classes; ties resolve to the
    lowest class index.
    """
    z = cls_logits - cls_logits.max(axis=-1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=-1, keepdims=True)
    mask_p = 1.0 / (1.0 + np.exp(-mask_logits_up))
    scores = np.einsum("tqk,tqhw->tkhw", probs[..., :-1], mask_p)
    best = scores.argmax(axis=1)
    confident = scores.max(axis=1) >= bg_threshold
    return np.where(confident, best + 1, 0)


def binary_inference(cls_logits: np.ndarray, mask_logits_up: np.ndarray,
                     bg_threshold: float) -> np.ndarray:
    """Single-sounding-object specialization: identical pipeline at K_c = 1."""
    if cls_logits.shape[-1] != 2:
        raise DimensionError(
            f"binary inference expects 2 class logits, got {cls_logits.shape[-1]}")
    return semantic_inference(cls_logits, mask_logits_up, bg_threshold)


def _check_same_shape(pred, gt):
    if pred.shape != gt.shape:
        raise DimensionError(f"metric shapes disagree: {pred.shape} vs {gt.shape}")


def _per_class_counts(pred: np.ndarray, gt: np.ndarray, k: int):
    p = pred == k
    g = gt == k
    return float(np.logical_and(p, g).sum()), float(p.sum()), float(g.sum())


def jaccard_clip(pred: np.ndarray, gt: np.ndarray) -> tuple[float, dict]:
    """Mean IoU over classes present in pred or gt of one clip (background
    excluded); a clip with no foreground on either side scores 1."""
    _check_same_shape(pred, gt)
    classes = sorted(set(np.unique(pred)) | set(np.unique(gt)) - {0})
    classes = [int(k) for k in classes if k != 0]
    if not classes:
        return 1.0, {}
    per_class = {}
    for k in classes:
        inter, p, g = _per_class_counts(pred, gt, k)
        union = p + g - inter
        per_class[k] = 1.0 if union == 0 else inter / union
    return float(np.mean(list(per_class.values()))), per_class


def fscore_clip(pred: np.ndarray, gt: np.ndarray,
                beta_sq: float = F_BETA_SQ) -> tuple[float, dict]:
    """Mean F-score (beta^2 = 0.3) over classes present in pred or gt."""
    _check_same_shape(pred, gt)
    classes = sorted(set(np.unique(pred)) | set(np.unique(gt)) - {0})
    classes = [int(k) for k in classes if k != 0]
    if not classes:
        return 1.0, {}
    per_class = {}
    for k in classes:
        inter, p, g = _per_class_counts(pred, gt, k)
        if p == 0 and g == 0:
            per_class[k] = 1.0
            continue
        precision = inter / p if p > 0 else 0.0
        recall = inter / g if g > 0 else 0.0
        denom = beta_sq * precision + recall
        per_class[k] = 0.0 if denom == 0 else \
            (1 + beta_sq) * precision * recall / denom
    return float(np.mean(list(per_class.values()))), per_class


def interframe_similarity(pred: np.ndarray) -> float | None:
    """Mean cosine similarity of adjacent predicted foreground maps (0/1
    vectors); identical-empty adjacent frames count as 1.  None for T < 2."""
    if pred.shape[0] < 2:
        return None
    sims = []
    for t in range(pred.shape[0] - 1):
        a = (pred[t] > 0).astype(float).ravel()
        b = (pred[t + 1] > 0).astype(float).ravel()
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 and nb == 0:
            sims.append(1.0)
        elif na == 0 or nb == 0:
            sims.append(0.0)
        else:
            sims.append(float(a @ b / (na * nb)))
    return float(np.mean(sims))


def evaluate_clips(preds: list[np.ndarray], gts: list[np.ndarray]) -> dict:
    """Aggregate per-class -> per-clip -> dataset means into a report dict."""
    clip_j, clip_f, clip_sim = [], [], []
    class_j: dict[int, list] = {}
    class_f: dict[int, list] = {}
    for pred, gt in zip(preds, gts):
        j, j_cls = jaccard_clip(pred, gt)
        f, f_cls = fscore_clip(pred, gt)
        clip_j.append(j)
        clip_f.append(f)
        for k, v in j_cls.items():
            class_j.setdefault(k, []).append(v)
        for k, v in f_cls.items():
            class_f.setdefault(k, []).append(v)
        sim = interframe_similarity(pred)
        if sim is not None:
            clip_sim.append(sim)
    per_class = {str(k): {"miou": float(np.mean(class_j[k])),
                          "fscore": float(np.mean(class_f.get(k, [0.0])))}
                 for k in sorted(class_j)}
    return {
        "miou": float(np.mean(clip_j)) if clip_j else 1.0,
        "fscore": float(np.mean(clip_f)) if clip_f else 1.0,
        "per_class": per_class,
        "interframe_similarity":
            float(np.mean(clip_sim)) if clip_sim else None,
        "per_clip": [{"miou": float(j), "fscore": float(f)}
                     for j, f in zip(clip_j, clip_f)],
    }
