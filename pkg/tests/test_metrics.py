import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fesnet.metrics import (
    ConfusionCounts,
    RocAccumulator,
    aggregate,
    compute_metrics,
    confusion_counts,
    render_overlay,
)

counts_strategy = st.builds(
    ConfusionCounts,
    tp=st.integers(0, 10_000), tn=st.integers(0, 10_000),
    fp=st.integers(0, 10_000), fn=st.integers(0, 10_000),
)


# -- confusion counts -------------------------------------------------------------


def test_all_vessel_perfect_prediction():
    m = np.ones((4, 4), np.uint8)
    c = confusion_counts(m, m)
    assert (c.tp, c.tn, c.fp, c.fn) == (16, 0, 0, 0)


def test_complement_prediction_has_no_correct_pixels(rng):
    gt = (rng.random((6, 6)) > 0.5).astype(np.uint8)
    c = confusion_counts(1 - gt, gt)
    assert c.tp == 0 and c.tn == 0
    assert c.fp + c.fn == 36


def test_hand_enumerated_2x2_case():
    pred = np.array([[1, 0], [1, 1]], np.uint8)
    gt = np.array([[1, 1], [0, 1]], np.uint8)
    c = confusion_counts(pred, gt)
    assert (c.tp, c.fn, c.fp, c.tn) == (2, 1, 1, 0)


def test_roi_restricts_evaluation():
    pred = np.array([[1, 0], [1, 1]], np.uint8)
    gt = np.array([[1, 1], [0, 1]], np.uint8)
    roi = np.array([[1, 1], [0, 0]], np.uint8)
    c = confusion_counts(pred, gt, roi)
    assert c.total == 2
    assert (c.tp, c.fn) == (1, 1)


def test_non_binary_inputs_rejected():
    with pytest.raises(ValueError, match="binary"):
        confusion_counts(np.array([[2, 0]]), np.array([[1, 0]]))
    with pytest.raises(ValueError, match="shape"):
        confusion_counts(np.ones((2, 2), np.uint8), np.ones((2, 3), np.uint8))


# -- metric formulas --------------------------------------------------------------


def test_perfect_prediction_scores_one():
    r = compute_metrics(ConfusionCounts(tp=10, tn=90, fp=0, fn=0))
    assert r.se == r.sp == r.acc == r.auc_point == r.f1 == 1.0


def test_reference_counts_to_four_decimals():
    r = compute_metrics(ConfusionCounts(tp=8, tn=80, fp=2, fn=10))
    assert round(r.se, 4) == 0.4444
    assert round(r.sp, 4) == 0.9756
    assert round(r.acc, 4) == 0.8800
    assert round(r.auc_point, 4) == 0.7100
    assert round(r.f1, 4) == 0.5714


def test_empty_denominators_reported_as_none():
    r = compute_metrics(ConfusionCounts(tp=0, tn=5, fp=0, fn=0))
    assert r.se is None          # no positive ground truth
    assert r.auc_point is None
    assert r.sp == 1.0
    r = compute_metrics(ConfusionCounts(tp=5, tn=0, fp=0, fn=0))
    assert r.sp is None


@given(c=counts_strategy)
@settings(max_examples=200)
def test_auc_point_identity_and_f1_harmonic_mean(c):
    r = compute_metrics(c)
    if r.se is not None and r.sp is not None:
        assert abs(r.auc_point - (r.se + r.sp) / 2) < 1e-12
    precision = c.tp / (c.tp + c.fp) if (c.tp + c.fp) else None
    if precision and r.se:
        harmonic = 2 * precision * r.se / (precision + r.se)
        assert abs(r.f1 - harmonic) < 1e-12
    for v in (r.se, r.sp, r.acc, r.auc_point, r.f1):
        assert v is None or 0.0 <= v <= 1.0


@given(c=counts_strategy)
@settings(max_examples=100)
def test_swapping_pred_and_gt_swaps_fp_fn(c):
    swapped = ConfusionCounts(tp=c.tp, tn=c.tn, fp=c.fn, fn=c.fp)
    a, b = compute_metrics(c), compute_metrics(swapped)
    assert a.acc == b.acc
    assert a.f1 == b.f1  # denominator 2tp+fp+fn is symmetric under the swap


def test_negative_counts_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        ConfusionCounts(tp=-1, tn=0, fp=0, fn=0)


# -- aggregation ------------------------------------------------------------------


def test_single_image_aggregate_equals_compute_metrics():
    c = ConfusionCounts(tp=3, tn=5, fp=1, fn=2)
    assert aggregate([c]).as_dict() == compute_metrics(c).as_dict()


def test_two_identical_images_match_single_in_global_mode():
    c = ConfusionCounts(tp=3, tn=5, fp=1, fn=2)
    doubled = aggregate([c, c], mode="global")
    single = compute_metrics(c)
    for key in ("se", "sp", "acc", "auc_point", "f1"):
        assert getattr(doubled, key) == getattr(single, key)


def test_global_and_mean_modes_differ_and_match_hand_computation():
    # two 2x2 images: one perfect all-vessel, one with mixed outcomes
    c1 = ConfusionCounts(tp=4, tn=0, fp=0, fn=0)
    c2 = ConfusionCounts(tp=1, tn=1, fp=1, fn=1)
    g = aggregate([c1, c2], mode="global")
    m = aggregate([c1, c2], mode="mean")
    npt.assert_allclose(g.se, 5 / 6)         # (4+1)/(4+1+0+1)
    npt.assert_allclose(g.acc, 6 / 8)
    npt.assert_allclose(m.se, (1.0 + 0.5) / 2)
    npt.assert_allclose(m.acc, (1.0 + 0.5) / 2)
    assert g.se != m.se


def test_empty_aggregate_rejected():
    with pytest.raises(ValueError, match="at least one"):
        aggregate([])


# -- ROC-integral AUC -------------------------------------------------------------


def test_roc_auc_perfect_separation(rng):
    gt = (rng.random((20, 20)) > 0.7).astype(np.uint8)
    probs = np.where(gt, 0.9, 0.1)
    acc = RocAccumulator()
    acc.add(probs, gt)
    npt.assert_allclose(acc.auc(), 1.0, atol=1e-6)


def test_roc_auc_uninformative_predictor(rng):
    gt = (rng.random((50, 50)) > 0.5).astype(np.uint8)
    probs = np.full(gt.shape, 0.5)
    acc = RocAccumulator()
    acc.add(probs, gt)
    npt.assert_allclose(acc.auc(), 0.5, atol=1e-2)


def test_roc_auc_undefined_without_both_classes():
    acc = RocAccumulator()
    acc.add(np.array([[0.2, 0.8]]), np.array([[1, 1]], np.uint8))
    assert acc.auc() is None


def test_roc_auc_orders_reasonable_predictor(rng):
    gt = (rng.random((30, 30)) > 0.6).astype(np.uint8)
    noisy = np.clip(gt * 0.6 + rng.random(gt.shape) * 0.4, 0, 1)
    acc = RocAccumulator()
    acc.add(noisy, gt)
    assert 0.9 < acc.auc() <= 1.0


# -- overlays ---------------------------------------------------------------------


def test_perfect_prediction_overlay_contains_only_green_and_black(rng):
    gt = (rng.random((8, 8)) > 0.5).astype(np.uint8)
    img = render_overlay(gt, gt)
    colors = {tuple(c) for c in img.reshape(-1, 3)}
    assert colors <= {(0, 255, 0), (0, 0, 0)}


def test_all_vessel_prediction_on_background_is_red():
    img = render_overlay(np.ones((3, 3), np.uint8), np.zeros((3, 3), np.uint8))
    assert (img == (255, 0, 0)).all(axis=-1).all()


def test_hand_case_overlay_pixel_colors():
    pred = np.array([[1, 0], [1, 1]], np.uint8)
    gt = np.array([[1, 1], [0, 1]], np.uint8)
    img = render_overlay(pred, gt)
    flat = [tuple(c) for c in img.reshape(-1, 3)]
    assert flat.count((0, 255, 0)) == 2     # tp
    assert flat.count((255, 0, 0)) == 1     # fp
    assert flat.count((0, 0, 255)) == 1     # fn


@given(seed=st.integers(0, 5_000))
@settings(max_examples=50)
def test_overlay_histogram_equals_confusion_counts(seed):
    r = np.random.default_rng(seed)
    pred = (r.random((9, 7)) > 0.5).astype(np.uint8)
    gt = (r.random((9, 7)) > 0.5).astype(np.uint8)
    c = confusion_counts(pred, gt)
    img = render_overlay(pred, gt)
    flat = [tuple(px) for px in img.reshape(-1, 3)]
    assert flat.count((0, 255, 0)) == c.tp
    assert flat.count((255, 0, 0)) == c.fp
    assert flat.count((0, 0, 255)) == c.fn
    assert flat.count((0, 0, 0)) == c.tn
