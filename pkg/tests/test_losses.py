import itertools

import numpy as np
import pytest

from avseg import tensor as T
from avseg.gradcheck import finite_difference_check
from avseg.losses import (FrameTargets, LossWeights,
                          adaptive_consistency_loss, adjacent_frame_similarity,
                          classification_loss, hungarian_assign,
                          hungarian_match, mask_loss, total_loss)
from avseg.maskige import CapacityError
from avseg.query_decoder import PredictionSet
from avseg.seeding import stream
from avseg.tensor import Tensor, fresh_tape, no_grad


def brute_force_cost(cost: np.ndarray) -> float:
    """Exact minimal assignment cost by enumerating permutations (oracle)."""
    n, m = cost.shape
    best = np.inf
    for perm in itertools.permutations(range(m), n):
        best = min(best, sum(cost[i, j] for i, j in enumerate(perm)))
    return best


# -- assignment ---------------------------------------------------------------

def test_hungarian_diagonal_cost():
    cost = np.array([[0.0, 9.0], [9.0, 0.0]])
    rows, cols = hungarian_assign(cost)
    assert cost[rows, cols].sum() == 0.0


def test_hungarian_forced_off_diagonal():
    cost = np.array([[1.0, 0.0], [0.0, 1.0]])
    rows, cols = hungarian_assign(cost)
    assert cost[rows, cols].sum() == 0.0
    assert set(zip(rows.tolist(), cols.tolist())) == {(0, 1), (1, 0)}


def test_hungarian_matches_brute_force_500():
    rng = stream(0, "hungarian_oracle")
    for trial in range(500):
        n = int(rng.integers(2, 7))
        cost = rng.uniform(-5, 5, size=(n, n))
        rows, cols = hungarian_assign(cost)
        assert abs(cost[rows, cols].sum() - brute_force_cost(cost)) < 1e-9, \
            f"trial {trial}"


def test_match_empty_frame():
    m = hungarian_match(np.zeros((3, 4)), np.zeros((3, 2, 2)),
                        FrameTargets(np.zeros((0, 2, 2)), np.zeros(0, int)),
                        LossWeights())
    assert m.query_for_gt.size == 0 and m.total_cost == 0.0


def test_match_capacity_error():
    with pytest.raises(CapacityError):
        hungarian_match(np.zeros((1, 4)), np.zeros((1, 2, 2)),
                        FrameTargets(np.ones((2, 2, 2)),
                                     np.array([1, 2])), LossWeights())


def test_match_prefers_overlapping_query():
    # query 0 predicts the GT mask strongly, query 1 its complement
    gt = np.zeros((1, 4, 4))
    gt[0, :2] = 1.0
    logits = np.stack([np.where(gt[0] > 0, 8.0, -8.0),
                       np.where(gt[0] > 0, -8.0, 8.0)])
    m = hungarian_match(np.zeros((2, 3)), logits,
                        FrameTargets(gt, np.array([1])), LossWeights())
    assert m.query_for_gt.tolist() == [0]


def test_match_uses_class_posterior():
    # identical masks; only the class posterior separates the two queries
    gt = np.ones((1, 2, 2))
    masks = np.zeros((2, 2, 2))
    cls = np.array([[5.0, 0.0], [0.0, 5.0]])   # q0 confident class 1
    m = hungarian_match(cls, masks, FrameTargets(gt, np.array([1])),
                        LossWeights())
    assert m.query_for_gt.tolist() == [0]


# -- classification loss ------------------------------------------------------

def test_classification_loss_hand_value():
    # zero logits, 1 query, 1 frame, matched to class 1:
    # CE = -log softmax = log(Kc + 1) with weight 1
    k_c = 3
    cls = Tensor(np.zeros((1, 1, 1, k_c + 1)))
    targets = [[FrameTargets(np.ones((1, 2, 2)), np.array([1]))]]
    matches = [[type("M", (), {"query_for_gt": np.array([0])})()]]
    with fresh_tape():
        loss = classification_loss(cls, matches, targets, LossWeights(),
                                   np.ones((1, 1)))
    assert abs(loss.item() - np.log(k_c + 1)) < 1e-12


def test_classification_loss_no_object_weight():
    # one unmatched query: loss = 0.1 * log(Kc+1)
    k_c = 2
    cls = Tensor(np.zeros((1, 1, 1, k_c + 1)))
    targets = [[FrameTargets(np.zeros((0, 2, 2)), np.zeros(0, int))]]
    matches = [[type("M", (), {"query_for_gt": np.zeros(0, int)})()]]
    with fresh_tape():
        loss = classification_loss(cls, matches, targets, LossWeights(),
                                   np.ones((1, 1)))
    assert abs(loss.item() - 0.1 * np.log(k_c + 1)) < 1e-12


def test_classification_loss_masked_frame_ignored():
    k_c = 2
    cls = Tensor(np.zeros((1, 2, 1, k_c + 1)))
    targets = [[FrameTargets(np.ones((1, 2, 2)), np.array([1])),
                FrameTargets(np.ones((1, 2, 2)), np.array([2]))]]
    matches = [[type("M", (), {"query_for_gt": np.array([0])})(),
                type("M", (), {"query_for_gt": np.array([0])})()]]
    with fresh_tape():
        both = classification_loss(cls, matches, targets, LossWeights(),
                                   np.ones((1, 2)))
        first = classification_loss(cls, matches, targets, LossWeights(),
                                    np.array([[1.0, 0.0]]))
    assert abs(both.item() - np.log(k_c + 1)) < 1e-12
    assert abs(first.item() - np.log(k_c + 1)) < 1e-12  # mean over live frames


# -- mask loss ------------------------------------------------------------------

def test_mask_loss_hand_values():
    # logits 0 against an all-ones GT: BCE = ln 2;
    # dice = 1 - (2*0.5*N + 1)/(0.5*N + N + 1) with N = 4 pixels
    logits = Tensor(np.zeros((1, 1, 1, 2, 2)))
    targets = [[FrameTargets(np.ones((1, 2, 2)), np.array([1]))]]
    matches = [[type("M", (), {"query_for_gt": np.array([0])})()]]
    with fresh_tape():
        loss = mask_loss(logits, matches, targets, np.ones((1, 1)))
    n = 4.0
    dice = 1.0 - (2 * 0.5 * n + 1.0) / (0.5 * n + n + 1.0)
    assert abs(loss.item() - (np.log(2.0) + dice)) < 1e-12


def test_mask_loss_perfect_prediction_small():
    logits = Tensor(np.where(np.ones((1, 1, 1, 2, 2)) > 0, 50.0, -50.0))
    targets = [[FrameTargets(np.ones((1, 2, 2)), np.array([1]))]]
    matches = [[type("M", (), {"query_for_gt": np.array([0])})()]]
    with fresh_tape():
        loss = mask_loss(logits, matches, targets, np.ones((1, 1)))
    assert loss.item() < 1e-9


def test_mask_loss_no_matches_zero():
    logits = Tensor(np.zeros((1, 1, 1, 2, 2)))
    targets = [[FrameTargets(np.zeros((0, 2, 2)), np.zeros(0, int))]]
    matches = [[type("M", (), {"query_for_gt": np.zeros(0, int)})()]]
    with fresh_tape():
        loss = mask_loss(logits, matches, targets, np.ones((1, 1)))
    assert loss.item() == 0.0


# -- adaptive consistency -----------------------------------------------------

def test_consistency_zero_for_identical_frames():
    logits = np.broadcast_to(
        stream(1, "ada").uniform(-3, 3, size=(1, 1, 2, 4, 4)),
        (1, 3, 2, 4, 4)).copy()
    with fresh_tape():
        loss = adaptive_consistency_loss(Tensor(logits))
    assert abs(loss.item()) < 1e-12


def test_consistency_closed_form_orthogonal():
    # S = 0 for each adjacent pair -> each term is exp(-1) * 1
    logits = np.full((1, 2, 1, 1, 2), -50.0)
    logits[0, 0, 0, 0, 0] = 50.0
    logits[0, 1, 0, 0, 1] = 50.0   # disjoint unit masks -> cosine 0
    with fresh_tape():
        loss = adaptive_consistency_loss(Tensor(logits))
    assert abs(loss.item() - np.exp(-1.0)) < 1e-9


def test_consistency_three_frames_sums_pairs():
    logits = np.full((1, 3, 1, 1, 2), -50.0)
    logits[0, 0, 0, 0, 0] = 50.0
    logits[0, 1, 0, 0, 1] = 50.0
    logits[0, 2, 0, 0, 0] = 50.0
    with fresh_tape():
        loss = adaptive_consistency_loss(Tensor(logits))
    assert abs(loss.item() - 2.0 * np.exp(-1.0)) < 1e-9


def test_consistency_single_frame_zero():
    with fresh_tape():
        loss = adaptive_consistency_loss(Tensor(np.zeros((2, 1, 3, 4, 4))))
    assert loss.item() == 0.0


def test_consistency_term_monotone_decreasing_in_s():
    # similarities of strictly positive probability vectors lie in (0, 1]
    s = np.linspace(0.0, 1.0, 101)
    term = np.exp(s - 1.0) * (1.0 - s)
    assert (np.diff(term) < 0).all()
    assert term[-1] == 0.0


def test_adjacent_similarity_range_and_value():
    logits = np.full((1, 2, 1, 2, 2), 50.0)
    with fresh_tape():
        s = adjacent_frame_similarity(Tensor(logits))
    assert s.shape == (1, 1)
    assert abs(s.item() - 1.0) < 1e-6


# -- total loss -----------------------------------------------------------------

def _micro_preds(rng, layers=3, b=1, t=2, n_q=2, k_c=2, h1=4):
    preds = []
    for _ in range(layers):
        preds.append(PredictionSet(
            cls_logits=Tensor(rng.uniform(-1, 1, size=(b, t, n_q, k_c + 1)),
                              requires_grad=True),
            mask_logits=Tensor(rng.uniform(-1, 1, size=(b, t, n_q, h1, h1)),
                               requires_grad=True)))
    return preds


def _micro_targets(b=1, t=2, hw=8):
    gt = np.zeros((hw, hw))
    gt[:4, :4] = 1.0
    return [[FrameTargets(gt[None], np.array([1])) for _ in range(t)]
            for _ in range(b)]


def test_total_loss_is_weighted_sum_of_components():
    rng = stream(2, "total")
    preds = _micro_preds(rng)
    targets = _micro_targets()
    weights = LossWeights(lambda_cls=2.0, lambda_mask=5.0, lambda_ada=10.0)
    with fresh_tape():
        total, comp = total_loss(preds, targets, weights, np.ones((1, 2)),
                                 (8, 8), consistency_layer=1)
    # components are unweighted sums; the total applies the lambdas
    want = 2.0 * comp["cls"] + 5.0 * comp["mask"] + 10.0 * comp["ada"]
    assert abs(total.item() - want) < 1e-9
    assert comp["total"] == total.item()


def test_total_loss_layer_count_scales_supervision():
    rng = stream(3, "total")
    preds6 = _micro_preds(rng, layers=6)
    targets = _micro_targets()
    weights = LossWeights(lambda_ada=0.0)
    with fresh_tape():
        t3, _ = total_loss(preds6[:3], targets, weights, np.ones((1, 2)),
                           (8, 8), consistency_layer=1)
    with fresh_tape():
        t6, _ = total_loss(preds6[:3] + preds6[:3], targets, weights,
                           np.ones((1, 2)), (8, 8), consistency_layer=1)
    assert abs(t6.item() - 2.0 * t3.item()) < 1e-9


def test_total_loss_gradients_flow():
    rng = stream(4, "total")
    preds = _micro_preds(rng)
    targets = _micro_targets()
    with fresh_tape():
        total, _ = total_loss(preds, targets, LossWeights(), np.ones((1, 2)),
                              (8, 8), consistency_layer=1)
        T.backward(total)
    for pr in preds:
        assert pr.cls_logits.grad is not None
        assert np.abs(pr.cls_logits.grad).max() > 0
        assert pr.mask_logits.grad is not None
        assert np.abs(pr.mask_logits.grad).max() > 0


def test_loss_gradients_finite_difference():
    rng = stream(5, "total")
    preds = _micro_preds(rng, layers=2)
    targets = _micro_targets()
    weights = LossWeights()
    with no_grad():
        from avseg.losses import match_all_frames
        from avseg.query_decoder import upsample_masks
        frozen = [match_all_frames(pr, upsample_masks(pr.mask_logits, 8, 8),
                                   targets, weights) for pr in preds]

    def loss(*_):
        out = Tensor(0.0)
        for pr, matches in zip(preds, frozen):
            up = upsample_masks(pr.mask_logits, 8, 8)
            l_cls = classification_loss(pr.cls_logits, matches, targets,
                                        weights, np.ones((1, 2)))
            l_mask = mask_loss(up, matches, targets, np.ones((1, 2)))
            out = T.add(out, T.add(T.mul(l_cls, weights.lambda_cls),
                                   T.mul(l_mask, weights.lambda_mask)))
        return T.add(out, T.mul(
            adaptive_consistency_loss(preds[1].mask_logits),
            weights.lambda_ada))

    probe = [preds[0].cls_logits, preds[0].mask_logits,
             preds[1].cls_logits, preds[1].mask_logits]
    assert finite_difference_check(loss, probe) < 1e-4
