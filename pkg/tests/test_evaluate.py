import numpy as np
import pytest

from flowcam import synth
from flowcam.errors import LengthMismatch, MissingDataset, SingleClass
from flowcam.evaluate import (
    ScenarioReport,
    compute_metrics,
    confusion_matrix,
    misclassification_table,
    render_scenario_report,
    roc_pr_curves,
    run_zero_day_scenario,
)


def auc_pair_oracle(truth, scores, positive="1"):
    """O(n^2) Mann-Whitney statistic with half credit for ties."""
    truth = [str(t) for t in truth]
    pos = [s for t, s in zip(truth, scores) if t == positive]
    neg = [s for t, s in zip(truth, scores) if t != positive]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


# --- metrics -----------------------------------------------------------------

def test_all_correct_metrics():
    m = compute_metrics(["a", "b", "a"], ["a", "b", "a"], positive_label="a")
    assert m.accuracy == 1.0
    assert m.tpr == 1.0 and m.fpr == 0.0
    assert m.zero_division_flags == []


def test_hand_counted_binary_metrics():
    truth = ["P", "P", "N", "N"]
    pred = ["P", "N", "N", "N"]
    m = compute_metrics(truth, pred, positive_label="P")
    assert m.tpr == 0.5
    assert m.fpr == 0.0
    assert m.per_class["P"]["precision"] == 1.0
    assert m.per_class["P"]["recall"] == 0.5
    assert m.accuracy == 0.75


def test_zero_division_flagged():
    m = compute_metrics(["a", "a"], ["b", "b"], positive_label="b")
    assert m.per_class["b"]["precision"] == 0.0
    assert any(flag.startswith("recall[b]") for flag in m.zero_division_flags)
    assert m.fpr == 1.0


def test_metrics_accuracy_equals_confusion_diagonal():
    rng = np.random.default_rng(0)
    truth = rng.choice(["x", "y", "z"], 200)
    pred = rng.choice(["x", "y", "z"], 200)
    m = compute_metrics(truth, pred)
    cm = confusion_matrix(truth, pred)
    assert m.accuracy == cm.correct / cm.total


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        compute_metrics(["a"], ["a", "b"])


# --- misclassification table ---------------------------------------------------

def test_diagonal_confusion_empty_table():
    cm = confusion_matrix(["a", "b"], ["a", "b"])
    assert misclassification_table(cm) == {}


def test_single_misroute_percentage():
    truth = ["Netatmo"] * 100
    pred = ["Netatmo"] * 99 + ["SpyBulb"]
    cm = confusion_matrix(truth, pred)
    table = misclassification_table(cm)
    assert table == {"Netatmo": {"SpyBulb": 1.0}}


def test_table_omits_zero_cells():
    truth = ["a"] * 10 + ["b"] * 10
    pred = ["a"] * 8 + ["b"] * 2 + ["b"] * 10
    table = misclassification_table(confusion_matrix(truth, pred))
    assert table == {"a": {"b": 20.0}}


# --- curves ----------------------------------------------------------------------

def test_perfect_separation_auc_one():
    curve = roc_pr_curves(["1", "1", "0", "0"], [0.9, 0.8, 0.2, 0.1], "1")
    assert curve.auc == pytest.approx(1.0)
    assert curve.auprc == pytest.approx(1.0)


def test_constant_scores_auc_half():
    curve = roc_pr_curves(["1", "1", "0", "0"], [0.5, 0.5, 0.5, 0.5], "1")
    assert curve.auc == pytest.approx(0.5)
    assert curve.roc_points == [(0.0, 0.0), (1.0, 1.0)]


def test_six_point_hand_case_auc_seven_ninths():
    # pair counting: positives {.9,.8,.4} vs negatives {.7,.5,.2}
    # wins: .9 beats all three, .8 beats all three, .4 beats only .2 -> 7/9
    truth = ["1", "1", "1", "0", "0", "0"]
    scores = [0.9, 0.8, 0.4, 0.7, 0.5, 0.2]
    assert auc_pair_oracle(truth, scores) == pytest.approx(7 / 9)
    curve = roc_pr_curves(truth, scores, "1")
    assert curve.auc == pytest.approx(7 / 9, abs=1e-12)


def test_six_point_variant_auc_eight_ninths():
    # with the negative at .3 instead of .5 only one pair inverts: 8/9
    truth = ["1", "1", "1", "0", "0", "0"]
    scores = [0.9, 0.8, 0.4, 0.7, 0.3, 0.2]
    assert auc_pair_oracle(truth, scores) == pytest.approx(8 / 9)
    curve = roc_pr_curves(truth, scores, "1")
    assert curve.auc == pytest.approx(8 / 9, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_auc_matches_pair_oracle_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 120))
    truth = rng.choice(["0", "1"], n)
    if len(set(truth)) < 2:
        truth[0] = "0" if truth[1] == "1" else "1"
    scores = np.round(rng.normal(size=n), 2)  # rounding forces ties
    curve = roc_pr_curves(truth, scores, "1")
    assert curve.auc == pytest.approx(auc_pair_oracle(truth, scores), abs=1e-9)


def test_roc_single_class_raises():
    with pytest.raises(SingleClass):
        roc_pr_curves(["1", "1"], [0.1, 0.2], "1")


# --- zero-day scenarios -------------------------------------------------------------

FAST_CONFIGS = {
    "iforest": {"contamination": 0.1, "n_trees": 30},
    "deepsvdd": {"epochs": 15, "hidden_dim": 32, "latent_dim": 4, "batch_size": 128},
}


def test_all_zero_day_counts_and_reproducibility():
    others, cameras = synth.zero_day_benchmark(n_others=400, n_per_camera=50,
                                               n_cameras=3, seed=0)
    reports1 = run_zero_day_scenario("all_zero_day", others, cameras,
                                     detector_configs=FAST_CONFIGS, seeds=[0, 1])
    reports2 = run_zero_day_scenario("all_zero_day", others, cameras,
                                     detector_configs=FAST_CONFIGS, seeds=[0, 1])
    assert len(reports1) == 1
    rep1, rep2 = reports1[0], reports2[0]
    for det in FAST_CONFIGS:
        for r1, r2 in zip(rep1.model_results[det], rep2.model_results[det]):
            assert r1.train_accuracy == r2.train_accuracy
            assert r1.test_accuracy == r2.test_accuracy
            assert r1.inliers == r2.inliers and r1.outliers == r2.outliers
    for det in FAST_CONFIGS:
        for r in rep1.model_results[det]:
            for name, data in (("others_test", 40),):
                assert r.inliers[name] + r.outliers[name] == data
            for cam, rows in cameras.items():
                assert r.inliers[cam] + r.outliers[cam] == len(rows)
    assert "deepsvdd" in rep1.curves
    assert 0.0 <= rep1.curves["deepsvdd"].auc <= 1.0


def test_all_but_one_shifted_clusters_deepsvdd_flags_rest():
    others, cameras = synth.zero_day_benchmark(n_others=100, n_per_camera=80,
                                               n_cameras=4, min_shift=6.0,
                                               max_shift=9.0, seed=1)
    reports = run_zero_day_scenario("all_but_one", None, cameras,
                                    detector_configs={"deepsvdd": FAST_CONFIGS["deepsvdd"]},
                                    seeds=[0])
    assert len(reports) == 4
    rates = []
    for rep in reports:
        r = rep.model_results["deepsvdd"][0]
        assert r.inliers["other_cameras"] + r.outliers["other_cameras"] == 240
        rates.append(r.test_accuracy["other_cameras"])
    assert np.mean(rates) >= 0.9


def test_only_one_duplicated_camera_looks_inlier():
    rng = np.random.default_rng(2)
    base = rng.normal(size=(300, 6))
    cameras = {
        "cam_a": base[:150],
        "cam_b": base[150:],
        # the "zero-day" camera is literally resampled training rows
        "cam_dup": base[rng.integers(0, 300, 120)],
    }
    reports = run_zero_day_scenario("only_one", None, cameras,
                                    detector_configs={"iforest": FAST_CONFIGS["iforest"]},
                                    seeds=[0])
    rep = next(r for r in reports if r.trained_on == "all-but-cam_dup")
    acc = rep.model_results["iforest"][0].test_accuracy["cam_dup"]
    assert acc <= 0.25  # duplicated rows are decided inliers


def test_scenario_kind_and_dataset_validation():
    with pytest.raises(ValueError):
        run_zero_day_scenario("bogus", None, {})
    with pytest.raises(MissingDataset):
        run_zero_day_scenario("all_zero_day", None, {"a": np.zeros((5, 2))})
    with pytest.raises(MissingDataset):
        run_zero_day_scenario("all_but_one", None, {"a": np.zeros((5, 2))})


def test_render_scenario_report_structure():
    others, cameras = synth.zero_day_benchmark(n_others=200, n_per_camera=30,
                                               n_cameras=2, seed=3)
    report = run_zero_day_scenario("all_zero_day", others, cameras,
                                   detector_configs={"iforest": FAST_CONFIGS["iforest"]},
                                   seeds=[0, 1])[0]
    text = render_scenario_report(report)
    assert "scenario: all_zero_day" in text
    assert "[iforest]" in text
    assert "train accuracy" in text and "timings" in text
