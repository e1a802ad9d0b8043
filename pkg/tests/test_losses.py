import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from starkit import losses, probes
from starkit.core import Mask
from starkit.losses import (
    ContrastiveConfig,
    DetectionLossConfig,
    LossValue,
    SegLossConfig,
    action_loss,
    detection_loss,
    dice_loss,
    dissimilarity_loss,
    focal_loss,
    focal_pixelwise,
    grad_check,
    similarity_loss,
    stc_loss,
)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# -- similarity / dissimilarity / stc ---------------------------------------------------


def test_similarity_examples():
    assert similarity_loss([[1.0, 0.0], [0.0, 1.0]]).value == 0.0
    assert similarity_loss([[0.6, 0.8], [0.6, 0.8]]).value == pytest.approx(1.0, abs=1e-15)


def test_similarity_matches_double_loop():
    rng = np.random.default_rng(0)
    e = rng.normal(size=(4, 16))
    assert rel(similarity_loss(e).value, oracles.similarity(e.tolist())) < 1e-12


def test_similarity_errors():
    with pytest.raises(ValueError):
        similarity_loss([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        similarity_loss([[1.0, 0.0]])


def test_dissimilarity_examples():
    rng = np.random.default_rng(1)
    const = np.repeat(rng.normal(size=(3, 1, 8)), 4, axis=1)
    assert abs(dissimilarity_loss(const).value) < 1e-12
    assert dissimilarity_loss([[[1.0, 0.0], [-1.0, 0.0]]]).value == 2.0


def test_dissimilarity_matches_triple_loop():
    rng = np.random.default_rng(2)
    t = rng.normal(size=(3, 4, 8))
    assert rel(dissimilarity_loss(t).value, oracles.dissimilarity(t.tolist())) < 1e-12


def test_dissimilarity_errors():
    with pytest.raises(ValueError, match="missing"):
        dissimilarity_loss([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0]]])
    with pytest.raises(ValueError):
        dissimilarity_loss([[[1.0, 0.0], [0.0, 0.0]]])


@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 4), st.integers(1, 4)),
              elements=st.floats(-10, 10)))
def test_dissimilarity_non_negative(t):
    if np.any(np.linalg.norm(t, axis=2) < 1e-3):
        return
    assert dissimilarity_loss(t).value >= -1e-12


def test_stc_zero_on_ideal_embeddings():
    eye = np.eye(4)
    frames = np.stack([eye, eye, eye])
    assert stc_loss(frames, ContrastiveConfig(tau=3)).value == pytest.approx(0.0, abs=1e-15)


def test_stc_weight_degeneracies_are_exact():
    rng = np.random.default_rng(3)
    frames = rng.normal(size=(3, 4, 6))
    ds = dissimilarity_loss(np.swapaxes(frames, 0, 1)).value
    sims = [similarity_loss(f).value for f in frames]
    only_ds = stc_loss(frames, ContrastiveConfig(lambda_s=0.0, lambda_ds=2.5))
    assert only_ds.value == 2.5 * ds
    only_s = stc_loss(frames, ContrastiveConfig(lambda_s=0.7, lambda_ds=0.0))
    assert only_s.value == 0.7 * sum(sims)


@pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
def test_stc_batch_pair_count(k):
    rng = np.random.default_rng(k)
    lv = stc_loss(rng.normal(size=(k, 3, 5)), ContrastiveConfig(batch_k=k), mode="batch")
    assert lv.info["frame_pairs_per_pig"] == math.comb(k, 2)


def test_stc_mode_checks():
    frames = np.random.default_rng(0).normal(size=(3, 2, 4))
    with pytest.raises(ValueError):
        stc_loss(frames, ContrastiveConfig(tau=2), mode="window")
    with pytest.raises(ValueError):
        stc_loss(frames, ContrastiveConfig(batch_k=4), mode="batch")
    with pytest.raises(ValueError):
        stc_loss(frames, mode="sliding")


# -- detection --------------------------------------------------------------------------


def test_detection_perfect_is_zero():
    gt = np.array([[0.1, 0.2, 0.3, 0.2], [0.5, 0.5, 0.2, 0.3]])
    lv = detection_loss(gt.copy(), [1.0, 1.0], gt)
    assert lv.value == 0.0
    extra = detection_loss(np.vstack([gt, [[0.7, 0.1, 0.1, 0.1]]]), [1.0, 1.0, 0.0], gt)
    assert extra.value == 0.0


def test_detection_l1_offset():
    delta = 0.01
    gt = np.array([[0.3, 0.3, 0.2, 0.2]])
    lv = detection_loss(gt + delta, [0.9], gt)
    cfg = DetectionLossConfig()
    assert lv.terms["l1"] == pytest.approx(4 * delta * cfg.w_l1, rel=1e-12)


def test_detection_permutation_invariant():
    rng = np.random.default_rng(4)
    for _ in range(20):
        boxes = np.column_stack([rng.random((5, 2)), rng.uniform(0.05, 0.4, (5, 2))])
        probs = rng.random(5)
        gt = np.column_stack([rng.random((3, 2)), rng.uniform(0.05, 0.4, (3, 2))])
        perm = rng.permutation(5)
        a = detection_loss(boxes, probs, gt).value
        b = detection_loss(boxes[perm], probs[perm], gt).value
        assert b == pytest.approx(a, rel=1e-12)


def test_detection_matches_brute_force_minimum():
    rng = np.random.default_rng(6)
    cfg = DetectionLossConfig()
    for _ in range(20):
        boxes = np.column_stack([rng.random((4, 2)), rng.uniform(0.05, 0.4, (4, 2))])
        probs = rng.random(4)
        gt = np.column_stack([rng.random((3, 2)), rng.uniform(0.05, 0.4, (3, 2))])
        cost = losses.detection_cost_matrix(boxes, probs, gt, cfg)
        best, pairs = oracles.brute_force_assignment(cost.T.tolist())
        got = detection_loss(boxes, probs, gt, cfg).info["matching"]
        assert sorted((p, g) for g, p in pairs) == got.pairs


def test_detection_shape_errors():
    with pytest.raises(ValueError):
        detection_loss(np.zeros((1, 4)), [0.5], np.zeros((2, 4)))
    with pytest.raises(ValueError):
        detection_loss(np.zeros((2, 3)), [0.5, 0.5], np.zeros((1, 4)))
    with pytest.raises(ValueError):
        detection_loss(np.zeros((2, 4)), [0.5], np.zeros((1, 4)))


def test_giou_with_grad_matches_core():
    from starkit.core import BBox, bbox_giou
    rng = np.random.default_rng(7)
    for _ in range(50):
        b = np.concatenate([rng.random(2), rng.uniform(0.05, 0.5, 2)])
        g = np.concatenate([rng.random(2), rng.uniform(0.05, 0.5, 2)])
        val, _ = losses.giou_with_grad(b, g)
        assert val == pytest.approx(bbox_giou(BBox(*b), BBox(*g)), abs=1e-12)


# -- segmentation -----------------------------------------------------------------------


def test_dice_examples():
    g = Mask(np.array([[1, 0], [1, 0]], dtype=bool))
    small = SegLossConfig(dice_eps=1e-9)
    assert dice_loss(g.bits.astype(float), g, small).value == pytest.approx(0.0, abs=1e-9)
    half = dice_loss(np.full((2, 2), 0.5), g, small).value
    assert half == pytest.approx(0.5, abs=1e-9)
    eps = 1.0
    assert dice_loss(np.full((2, 2), 0.5), g).value == pytest.approx(1 - (2 + eps) / (4 + eps))
    assert dice_loss(np.zeros((2, 2)), g, small).value == pytest.approx(1.0, abs=1e-9)


def test_seg_input_errors():
    g = Mask.zeros(2, 2)
    with pytest.raises(ValueError):
        dice_loss(np.full((2, 2), 1.5), g)
    with pytest.raises(ValueError):
        focal_loss(np.full((3, 2), 0.5), g)


def test_focal_degenerates_to_half_bce():
    rng = np.random.default_rng(8)
    p = rng.random((8, 8))
    g = rng.random((8, 8)) < 0.5
    loss, _ = focal_pixelwise(p, g.astype(float), alpha=0.5, gamma=0.0)
    bce = np.where(g, -np.log(p), -np.log(1.0 - p))
    assert np.array_equal(loss, 0.5 * bce)


def test_focal_zero_when_confident():
    g = np.array([[1, 0], [0, 1]], dtype=bool)
    assert focal_loss(g.astype(float), Mask(g)).value == 0.0


def test_focal_and_dice_match_naive_loops():
    rng = np.random.default_rng(9)
    cfg = SegLossConfig()
    p = rng.random((8, 8))
    g = rng.random((8, 8)) < 0.4
    assert rel(focal_loss(p, Mask(g), cfg).value,
               oracles.focal(p.tolist(), g.tolist(), cfg.focal_alpha, cfg.focal_gamma)) < 1e-12
    assert rel(dice_loss(p, Mask(g), cfg).value, oracles.dice(p.tolist(), g.tolist(), cfg.dice_eps)) < 1e-12


# -- action -----------------------------------------------------------------------------


def test_action_examples():
    assert action_loss([1.0], [1]).value == 0.0
    assert action_loss([0.5], [0]).value == pytest.approx(math.log(2))
    assert action_loss([0.5, 0.5], [1, 0]).value == pytest.approx(math.log(2))
    rng = np.random.default_rng(10)
    p, y = rng.random(12), rng.integers(0, 2, 12)
    assert rel(action_loss(p, y).value, oracles.action(p.tolist(), y.tolist())) < 1e-12


def test_action_errors():
    with pytest.raises(ValueError):
        action_loss([0.5, 0.5], [1])
    with pytest.raises(ValueError):
        action_loss([0.5], [2])


def test_log_clip_keeps_loss_finite():
    assert action_loss([0.0], [1]).value == pytest.approx(-math.log(1e-12))
    assert action_loss([0.0], [1]).grads["pred_probs"][0] == 0.0


# -- gradients --------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(probes.PROBES))
def test_gradients_match_central_differences(name):
    rng = np.random.default_rng(11)
    for _ in range(5):
        fn, inputs = probes.PROBES[name](rng)
        report = grad_check(fn, inputs)
        assert report.passed, (name, report)
        assert report.n_checked == sum(v.size for v in inputs.values())


def test_focal_gradients_for_other_gammas():
    rng = np.random.default_rng(12)
    for gamma in (0.0, 0.5, 1.0, 3.0):
        fn, inputs = probes.focal(rng, SegLossConfig(focal_alpha=0.7, focal_gamma=gamma))
        assert grad_check(fn, inputs).passed


def test_grad_check_flags_a_wrong_gradient():
    def bad(x):
        return LossValue(float(np.sum(x**2)), {}, {"x": 3.0 * x})

    report = grad_check(bad, {"x": np.array([0.3, -1.2])})
    assert not report.passed
    assert report.max_rel_error == pytest.approx(1 / 3, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stc_gradient_property(seed):
    fn, inputs = probes.stc(np.random.default_rng(seed))
    assert grad_check(fn, inputs).passed
