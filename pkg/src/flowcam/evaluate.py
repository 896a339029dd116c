"""Metrics, ROC/PR curves, misclassification tables, and the three
zero-day experiment protocols.

Zero-day "accuracy" follows the convention of the detection tables: on a
test set whose ground truth is entirely unseen-camera traffic it is the
fraction of rows decided outlier, and on a held-out slice of the training
distribution it is the fraction decided inlier.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .deepsvdd import DeepSvddConfig, train_deep_svdd
from .errors import LengthMismatch, MissingDataset, SingleClass
from .oneclass import train_isolation_forest, train_ocsvm, train_sgd_ocsvm

SCENARIO_KINDS = ("all_zero_day", "all_but_one", "only_one")


# ---------------------------------------------------------------------------
# confusion and scalar metrics
# ---------------------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    labels: list[str]
    counts: np.ndarray  # rows = truth, cols = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))


def confusion_matrix(truth: Sequence, predicted: Sequence) -> ConfusionMatrix:
    truth = [str(t) for t in truth]
    predicted = [str(p) for p in predicted]
    if len(truth) != len(predicted):
        raise LengthMismatch(f"{len(truth)} truths vs {len(predicted)} predictions")
    labels = sorted(set(truth) | set(predicted))
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(labels=labels, counts=counts)


@dataclass
class MetricsBundle:
    accuracy: float
    per_class: dict[str, dict[str, float]]  # label -> precision/recall/f1
    macro_precision: float
    macro_recall: float
    macro_f1: float
    tpr: float | None = None
    fpr: float | None = None
    positive_label: str | None = None
    zero_division_flags: list[str] = field(default_factory=list)


def compute_metrics(truth: Sequence, predicted: Sequence,
                    positive_label: str | None = None) -> MetricsBundle:
    """Accuracy plus per-class and macro precision/recall/F1.

    Divisions by zero produce 0 and are recorded in zero_division_flags.
    """
    if len(truth) == 0:
        raise LengthMismatch("cannot compute metrics on empty inputs")
    cm = confusion_matrix(truth, predicted)
    flags: list[str] = []

    def safe_div(num: float, den: float, what: str) -> float:
        if den == 0:
            flags.append(what)
            return 0.0
        return num / den

    per_class = {}
    for i, label in enumerate(cm.labels):
        tp = float(cm.counts[i, i])
        fp = float(cm.counts[:, i].sum() - tp)
        fn = float(cm.counts[i, :].sum() - tp)
        precision = safe_div(tp, tp + fp, f"precision[{label}]")
        recall = safe_div(tp, tp + fn, f"recall[{label}]")
        f1 = safe_div(2 * precision * recall, precision + recall, f"f1[{label}]")
        per_class[label] = {"precision": precision, "recall": recall, "f1": f1}

    bundle = MetricsBundle(
        accuracy=cm.correct / cm.total,
        per_class=per_class,
        macro_precision=float(np.mean([v["precision"] for v in per_class.values()])),
        macro_recall=float(np.mean([v["recall"] for v in per_class.values()])),
        macro_f1=float(np.mean([v["f1"] for v in per_class.values()])),
        zero_division_flags=flags,
    )
    if positive_label is not None:
        pos = str(positive_label)
        truth_arr = np.array([str(t) for t in truth])
        pred_arr = np.array([str(p) for p in predicted])
        is_pos = truth_arr == pos
        bundle.tpr = safe_div(float((pred_arr[is_pos] == pos).sum()),
                              float(is_pos.sum()), f"tpr[{pos}]")
        bundle.fpr = safe_div(float((pred_arr[~is_pos] == pos).sum()),
                              float((~is_pos).sum()), f"fpr[{pos}]")
        bundle.positive_label = pos
    return bundle


def misclassification_table(cm: ConfusionMatrix) -> dict[str, dict[str, float]]:
    """Per true class: wrong predicted class -> percentage of that class."""
    table: dict[str, dict[str, float]] = {}
    for i, true_label in enumerate(cm.labels):
        row_total = cm.counts[i].sum()
        if row_total == 0:
            continue
        wrong = {}
        for j, pred_label in enumerate(cm.labels):
            if i != j and cm.counts[i, j] > 0:
                wrong[pred_label] = 100.0 * cm.counts[i, j] / row_total
        if wrong:
            table[true_label] = wrong
    return table


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

@dataclass
class CurveReport:
    roc_points: list[tuple[float, float]]  # (fpr, tpr)
    auc: float
    pr_points: list[tuple[float, float]]  # (recall, precision)
    auprc: float


def roc_pr_curves(truth: Sequence, scores: Sequence[float],
                  positive_label) -> CurveReport:
    """Threshold sweep over unique scores; trapezoid AUC, step AUPRC.

    Equal scores are grouped into one threshold so ties move the operating
    point in a single jump.
    """
    truth_arr = np.array([str(t) for t in truth])
    scores_arr = np.asarray(scores, dtype=float)
    if len(truth_arr) != len(scores_arr):
        raise LengthMismatch(f"{len(truth_arr)} truths vs {len(scores_arr)} scores")
    if not np.isfinite(scores_arr).all():
        raise ValueError("scores must be finite")
    pos = truth_arr == str(positive_label)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes present")

    order = np.argsort(-scores_arr, kind="stable")
    sorted_pos = pos[order]
    sorted_scores = scores_arr[order]
    # group indices where the score changes (last element of each tie group)
    boundaries = np.nonzero(np.diff(sorted_scores))[0]
    cut_ends = np.append(boundaries, len(sorted_scores) - 1)
    tp_cum = np.cumsum(sorted_pos)
    fp_cum = np.cumsum(~sorted_pos)
    tpr = np.concatenate([[0.0], tp_cum[cut_ends] / n_pos])
    fpr = np.concatenate([[0.0], fp_cum[cut_ends] / n_neg])
    auc = float(np.trapezoid(tpr, fpr))

    recall = tpr[1:]
    with np.errstate(invalid="ignore"):
        precision = tp_cum[cut_ends] / (tp_cum[cut_ends] + fp_cum[cut_ends])
    auprc = float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))
    return CurveReport(
        roc_points=list(zip(fpr.tolist(), tpr.tolist())),
        auc=auc,
        pr_points=list(zip(recall.tolist(), precision.tolist())),
        auprc=auprc,
    )


def write_curve_csv(path: str | Path, points: list[tuple[float, float]],
                    columns: tuple[str, str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for a, b in points:
            writer.writerow([repr(float(a)), repr(float(b))])


# ---------------------------------------------------------------------------
# zero-day scenarios
# ---------------------------------------------------------------------------

DETECTOR_KINDS = ("ocsvm", "sgdocsvm", "iforest", "deepsvdd")


def default_detector_configs() -> dict[str, dict]:
    """The operating points used throughout the detection experiments."""
    return {
        "ocsvm": {"nu": 0.001, "gamma": 0.999},
        "sgdocsvm": {"nu": 0.03, "eta0": 0.0001, "epochs": 20},
        "iforest": {"contamination": 0.1, "n_trees": 100},
        "deepsvdd": {},
    }


def train_detector(kind: str, X: np.ndarray, config: dict, seed: int):
    if kind == "ocsvm":
        return train_ocsvm(X, **config)
    if kind == "sgdocsvm":
        return train_sgd_ocsvm(X, seed=seed, **config)
    if kind == "iforest":
        return train_isolation_forest(X, seed=seed, **config)
    if kind == "deepsvdd":
        cfg = DeepSvddConfig(seed=seed, input_dim=X.shape[1], **config)
        return train_deep_svdd(X, cfg)
    raise ValueError(f"unknown detector kind {kind!r}")


@dataclass
class SeedResult:
    seed: int
    train_accuracy: float  # inlier rate on the training rows
    test_accuracy: dict[str, float]  # per test-set accuracy (see module docstring)
    inliers: dict[str, int]
    outliers: dict[str, int]
    train_seconds: float = 0.0
    test_seconds: float = 0.0


@dataclass
class ScenarioReport:
    kind: str
    trained_on: str
    model_results: dict[str, list[SeedResult]]  # detector kind -> per-seed
    seeds: list[int]
    curves: dict[str, CurveReport] = field(default_factory=dict)

    def mean_std(self, detector: str, test_set: str | None = None) -> tuple[float, float]:
        results = self.model_results[detector]
        if test_set is None:
            vals = [r.train_accuracy for r in results]
        else:
            vals = [r.test_accuracy[test_set] for r in results]
        return float(np.mean(vals)), float(np.std(vals))


def _scale_with(train: np.ndarray, others: dict[str, np.ndarray]):
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (train - mean) / std, {k: (v - mean) / std for k, v in others.items()}


def _split_rows(X: np.ndarray, test_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    n = len(X)
    n_test = max(1, int(np.floor(test_fraction * n + 0.5)))
    perm = rng.permutation(n)
    return X[perm[n_test:]], X[perm[:n_test]]


def run_zero_day_scenario(kind: str, others: np.ndarray | None,
                          cameras: dict[str, np.ndarray],
                          detector_configs: dict[str, dict] | None = None,
                          seeds: Sequence[int] = (0, 1, 2, 3, 4),
                          test_fraction: float = 0.1,
                          progress: Callable[[str], None] | None = None
                          ) -> list[ScenarioReport]:
    """Run one of the three detection protocols.

    all_zero_day: train on a 90/10 split of the benign set, test on the
    held-out benign slice (inlier accuracy) and on every camera set
    (outlier accuracy). all_but_one: for each camera, train on that camera
    alone and test on the union of the rest. only_one: train on the union
    of all but one camera and test on the one held out.
    """
    if kind not in SCENARIO_KINDS:
        raise ValueError(f"kind must be one of {SCENARIO_KINDS}")
    configs = detector_configs or default_detector_configs()
    cameras = {k: np.asarray(v, dtype=float) for k, v in cameras.items()}
    if kind == "all_zero_day":
        if others is None:
            raise MissingDataset("all_zero_day needs the benign training set")
        if not cameras:
            raise MissingDataset("all_zero_day needs at least one camera set")
        experiments = [("others", None)]
    else:
        if len(cameras) < 2:
            raise MissingDataset(f"{kind} needs at least two camera sets")
        experiments = [(name, None) for name in cameras]

    reports = []
    for exp_name, _ in experiments:
        results: dict[str, list[SeedResult]] = {d: [] for d in configs}
        curves: dict[str, CurveReport] = {}
        for seed in seeds:
            if kind == "all_zero_day":
                train_raw, benign_test = _split_rows(np.asarray(others, float),
                                                     test_fraction, seed)
                test_sets = {"others_test": benign_test, **cameras}
                ground_truth_outlier = {"others_test": False,
                                        **{name: True for name in cameras}}
                trained_on = "others"
            elif kind == "all_but_one":
                train_raw = cameras[exp_name]
                rest = {n: c for n, c in cameras.items() if n != exp_name}
                test_sets = {"other_cameras": np.vstack(list(rest.values()))}
                ground_truth_outlier = {"other_cameras": True}
                trained_on = exp_name
            else:  # only_one
                rest = {n: c for n, c in cameras.items() if n != exp_name}
                train_raw = np.vstack(list(rest.values()))
                test_sets = {exp_name: cameras[exp_name]}
                ground_truth_outlier = {exp_name: True}
                trained_on = f"all-but-{exp_name}"

            train_scaled, tests_scaled = _scale_with(train_raw, test_sets)
            for det, config in configs.items():
                if progress:
                    progress(f"{kind}/{exp_name}: training {det} (seed {seed})")
                t0 = time.perf_counter()
                model = train_detector(det, train_scaled, config, seed)
                t1 = time.perf_counter()
                train_acc = float(1.0 - model.is_outlier(train_scaled).mean())
                accs, inliers, outliers = {}, {}, {}
                for name, data in tests_scaled.items():
                    flags = model.is_outlier(data)
                    n_out = int(flags.sum())
                    inliers[name] = len(data) - n_out
                    outliers[name] = n_out
                    if ground_truth_outlier[name]:
                        accs[name] = n_out / len(data)
                    else:
                        accs[name] = 1.0 - n_out / len(data)
                t2 = time.perf_counter()
                results[det].append(SeedResult(
                    seed=seed, train_accuracy=train_acc, test_accuracy=accs,
                    inliers=inliers, outliers=outliers,
                    train_seconds=t1 - t0, test_seconds=t2 - t1))
                if kind == "all_zero_day" and seed == seeds[0]:
                    truth = (["inlier"] * len(tests_scaled["others_test"])
                             + ["outlier"] * sum(len(cameras[c]) for c in cameras))
                    stacked = np.vstack([tests_scaled["others_test"]]
                                        + [tests_scaled[c] for c in cameras])
                    curves[det] = roc_pr_curves(truth, model.outlier_scores(stacked),
                                                positive_label="outlier")
        reports.append(ScenarioReport(
            kind=kind,
            trained_on=trained_on,
            model_results=results,
            seeds=list(seeds),
            curves=curves,
        ))
    return reports


def render_scenario_report(report: ScenarioReport) -> str:
    """One structured text document per scenario."""
    lines = [
        f"scenario: {report.kind}",
        f"trained on: {report.trained_on}",
        f"seeds: {', '.join(str(s) for s in report.seeds)}",
        "",
    ]
    for det, seed_results in report.model_results.items():
        lines.append(f"[{det}]")
        tr_mean = float(np.mean([r.train_accuracy for r in seed_results]))
        tr_std = float(np.std([r.train_accuracy for r in seed_results]))
        lines.append(f"  train accuracy: mean {tr_mean:.4f} std {tr_std:.4f}")
        test_names = seed_results[0].test_accuracy.keys()
        for name in test_names:
            vals = [r.test_accuracy[name] for r in seed_results]
            ins = [r.inliers[name] for r in seed_results]
            outs = [r.outliers[name] for r in seed_results]
            lines.append(
                f"  test[{name}]: mean {np.mean(vals):.4f} std {np.std(vals):.4f} "
                f"(inliers {ins[0]}, outliers {outs[0]} at seed {seed_results[0].seed})")
        if det in report.curves:
            curve = report.curves[det]
            lines.append(f"  roc auc {curve.auc:.4f}  pr auprc {curve.auprc:.4f}")
        per_seed = " ".join(
            f"{r.seed}:{r.train_seconds:.2f}s/{r.test_seconds:.2f}s" for r in seed_results)
        lines.append(f"  timings (train/test per seed): {per_seed}")
        lines.append("")
    return "\n".join(lines)
