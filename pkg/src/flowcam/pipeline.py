"""Stage orchestration: capture files in, reports out.

Each stage is callable on its own (the CLI maps one subcommand to one
stage) and ``run_pipeline`` chains extract -> prep -> train -> detect for
a single config. Reports embed the producing config; wall-clock timings
live under a dedicated ``timings`` key so deterministic output comparison
can ignore them.
"""

from __future__ import annotations

import csv
import json
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import PipelineConfig
from .deepsvdd import DeepSvddConfig, train_deep_svdd
from .errors import DataError, FlowcamError, MissingDataset
from .evaluate import (
    SCENARIO_KINDS,
    ScenarioReport,
    compute_metrics,
    confusion_matrix,
    misclassification_table,
    render_scenario_report,
    roc_pr_curves,
    run_zero_day_scenario,
    write_curve_csv,
)
from .flows import FlowMeter, meter_capture, write_flow_csv
from .oneclass import train_isolation_forest, train_ocsvm, train_sgd_ocsvm
from .pcap import DecodeStats
from .persist import deserialize_model, fingerprint, serialize_model
from .supervised import train_gnb, train_knn, train_linear_svm
from .trees import train_cart, train_forest, train_gbt

ONECLASS_KINDS = ("ocsvm", "sgdocsvm", "iforest", "deepsvdd")
SUPERVISED_KINDS = ("cart", "rf", "et", "gbt", "knn", "gnb", "lsvm")


@contextmanager
def _stage(name: str):
    """Re-raise pipeline errors with the failing stage attached."""
    try:
        yield
    except FlowcamError as exc:
        exc.args = (f"[stage {name}] {exc}",)
        raise


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_extract(inputs: list[str], out_csv: str | Path,
                  config: PipelineConfig) -> dict:
    """Meter capture files (independent flow tables) into one CSV."""
    with _stage("extract"):
        records = []
        totals = DecodeStats()
        t0 = time.perf_counter()
        for path in inputs:
            meter = FlowMeter(
                idle_timeout_us=int(config.idle_timeout_s * 1e6),
                activity_timeout_us=int(config.activity_timeout_s * 1e6),
                flow_cap_us=int(config.flow_cap_s * 1e6),
                label=config.label,
            )
            stats = DecodeStats()
            records.extend(meter_capture(path, meter=meter, stats=stats))
            totals.read += stats.read
            totals.emitted += stats.emitted
            totals.skipped += stats.skipped
            totals.malformed += stats.malformed
        write_flow_csv(out_csv, records)
        elapsed = time.perf_counter() - t0
        return {
            "flows": len(records),
            "packets_read": totals.read,
            "packets_decoded": totals.emitted,
            "packets_skipped": totals.skipped,
            "packets_malformed": totals.malformed,
            "timings": {"extract_seconds": elapsed},
        }


def _load(inputs: list[str], label_map: dict | None = None) -> ds.FeatureMatrix:
    return ds.load_records(inputs, label_map=label_map)


def stage_prep(inputs: list[str], out_csv: str | Path, config: PipelineConfig,
               ranking_path: str | None = None,
               label_map: dict | None = None) -> dict:
    """Prune/scale/select on loaded feature CSVs; writes a feature CSV."""
    with _stage("prep"):
        m = _load(inputs, label_map)
        removed: list[str] = []
        if config.prune:
            m, removed = ds.prune_constant(m)
        scaler = None
        if config.scale:
            m, _, scaler = ds.fit_apply_scaler(m)
        if ranking_path:
            ranking = ds.read_ranking_csv(ranking_path)
            m = ds.select_top_k(m, ranking, config.top_k)
        _write_feature_csv(out_csv, m)
        if scaler is not None:
            sidecar = Path(out_csv).with_suffix(".scaler.json")
            _write_json(sidecar, {
                "columns": list(scaler.column_names),
                "mean": scaler.mean.tolist(),
                "std": scaler.std.tolist(),
            })
        return {"rows": m.n_rows, "columns": m.column_names,
                "pruned": removed, "dropped_rows": m.dropped_rows}


def _write_feature_csv(path: str | Path, m: ds.FeatureMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(m.column_names + ["Label"])
        labels = m.labels or [""] * m.n_rows
        for row, label in zip(m.values, labels):
            writer.writerow([repr(float(v)) for v in row] + [label])


def stage_rank(inputs: list[str], out_csv: str | Path, config: PipelineConfig,
               label_map: dict | None = None) -> dict:
    with _stage("rank"):
        m = _load(inputs, label_map)
        if config.prune:
            m, _ = ds.prune_constant(m)
        ranking = ds.rank_features(m, n_trees=config.rank_trees, seed=config.seed)
        ds.write_ranking_csv(out_csv, ranking)
        return {"features_ranked": len(ranking.entries),
                "top": ranking.top(min(config.top_k, len(ranking.entries)))}


def _train_supervised(kind: str, X, y, config: PipelineConfig):
    if kind == "cart":
        return train_cart(X, y, seed=config.seed)
    if kind == "rf":
        return train_forest(X, y, kind="bagged", n_trees=config.rf_trees, seed=config.seed)
    if kind == "et":
        return train_forest(X, y, kind="extra", n_trees=config.et_trees, seed=config.seed)
    if kind == "gbt":
        return train_gbt(X, y, n_rounds=config.gbt_rounds, learning_rate=config.gbt_lr,
                         max_depth=config.gbt_depth, seed=config.seed)
    if kind == "knn":
        return train_knn(X, y, k=config.knn_k)
    if kind == "gnb":
        return train_gnb(X, y)
    if kind == "lsvm":
        return train_linear_svm(X, y, l2=config.svm_l2, epochs=config.svm_epochs,
                                learning_rate=config.svm_lr, seed=config.seed)
    raise DataError(f"unknown supervised model {kind!r}")


def _train_oneclass(kind: str, X, config: PipelineConfig):
    if kind == "ocsvm":
        return train_ocsvm(X, nu=config.ocsvm_nu, gamma=config.ocsvm_gamma)
    if kind == "sgdocsvm":
        return train_sgd_ocsvm(X, nu=config.sgd_nu, eta0=config.sgd_eta0,
                               epochs=config.sgd_epochs, gamma=config.ocsvm_gamma,
                               seed=config.seed)
    if kind == "iforest":
        return train_isolation_forest(X, n_trees=config.if_trees,
                                      contamination=config.if_contamination,
                                      seed=config.seed)
    if kind == "deepsvdd":
        cfg = DeepSvddConfig(
            input_dim=X.shape[1], hidden_dim=config.svdd_hidden,
            latent_dim=config.svdd_latent, learning_rate=config.svdd_lr,
            epochs=config.svdd_epochs, batch_size=config.svdd_batch,
            threshold_percentile=config.svdd_threshold_percentile, seed=config.seed)
        return train_deep_svdd(X, cfg)
    raise DataError(f"unknown one-class model {kind!r}")


def stage_train(inputs: list[str], model_path: str | Path, config: PipelineConfig,
                ranking_path: str | None = None, features: list[str] | None = None,
                label_map: dict | None = None) -> dict:
    """Train any of the eleven model kinds and persist it with its schema."""
    with _stage("train"):
        kind = config.model
        if kind not in ONECLASS_KINDS + SUPERVISED_KINDS:
            raise DataError(f"unknown model kind {kind!r}")
        m = _load(inputs, label_map)
        if config.prune:
            m, _ = ds.prune_constant(m)
        if features:
            missing = [f for f in features if f not in m.column_names]
            if missing:
                raise DataError(f"requested features not in data: {missing}")
            idx = [m.column_names.index(f) for f in features]
            m = m.with_values(m.values[:, idx], list(features))
        elif ranking_path:
            ranking = ds.read_ranking_csv(ranking_path)
            m = ds.select_top_k(m, ranking, config.top_k)
        scaler_mean = scaler_std = None
        X = m.values
        if config.scale:
            scaled, _, params = ds.fit_apply_scaler(m)
            X = scaled.values
            scaler_mean, scaler_std = params.mean, params.std
        y = np.asarray(m.labels) if m.labels is not None else None
        t0 = time.perf_counter()
        if kind in SUPERVISED_KINDS:
            if y is None or len(set(m.labels)) < 2:
                raise DataError("supervised training needs a labeled, multi-class dataset")
            model = _train_supervised(kind, X, y, config)
        else:
            model = _train_oneclass(kind, X, config)
        train_seconds = time.perf_counter() - t0
        serialize_model(
            model, kind, model_path, columns=m.column_names,
            scaler_mean=scaler_mean, scaler_std=scaler_std,
            data_sha256=fingerprint(m.values, m.labels), seed=config.seed,
            created_at=config.created_at or None)
        return {"model": kind, "rows": m.n_rows, "columns": m.column_names,
                "timings": {"train_seconds": train_seconds}}


def stage_detect(model_path: str | Path, inputs: list[str], out_dir: str | Path,
                 config: PipelineConfig, label_map: dict | None = None) -> dict:
    """Apply a one-class model: per-row inlier/outlier CSV plus summary."""
    with _stage("detect"):
        model, artifact = deserialize_model(model_path)
        if artifact.kind not in ONECLASS_KINDS:
            raise DataError(f"{artifact.kind!r} is not a one-class model; use classify")
        m = _load(inputs, label_map)
        X = artifact.prepare(m.values, m.column_names)
        t0 = time.perf_counter()
        scores = model.outlier_scores(X)
        flags = model.is_outlier(X)
        test_seconds = time.perf_counter() - t0
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        pred_path = out_dir / "detections.csv"
        with open(pred_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "decision", "score", "Label"])
            labels = m.labels or [""] * m.n_rows
            for i, (flag, score, label) in enumerate(zip(flags, scores, labels)):
                writer.writerow([i, "outlier" if flag else "inlier", repr(float(score)), label])
        summary = {
            "type": "detection",
            "model": artifact.kind,
            "rows": int(len(X)),
            "inliers": int((~flags).sum()),
            "outliers": int(flags.sum()),
            "config": asdict(config),
            "timings": {"test_seconds": test_seconds},
        }
        _write_json(out_dir / "report.json", summary)
        (out_dir / "report.txt").write_text(render_report_text(summary))
        return summary


def stage_classify(model_path: str | Path, inputs: list[str], out_dir: str | Path,
                   config: PipelineConfig, label_map: dict | None = None) -> dict:
    """Apply a supervised model; metrics are added when truth labels exist."""
    with _stage("classify"):
        model, artifact = deserialize_model(model_path)
        if artifact.kind not in SUPERVISED_KINDS:
            raise DataError(f"{artifact.kind!r} is not a supervised model; use detect")
        m = _load(inputs, label_map)
        X = artifact.prepare(m.values, m.column_names)
        t0 = time.perf_counter()
        predicted = model.predict(X)
        test_seconds = time.perf_counter() - t0
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "predictions.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "predicted", "truth"])
            labels = m.labels or [""] * m.n_rows
            for i, (p, t) in enumerate(zip(predicted, labels)):
                writer.writerow([i, p, t])
        summary: dict = {
            "type": "classification",
            "model": artifact.kind,
            "rows": int(len(X)),
            "config": asdict(config),
            "timings": {"test_seconds": test_seconds},
        }
        if m.labels is not None and any(lab != "" for lab in m.labels):
            metrics = compute_metrics(m.labels, predicted)
            cm = confusion_matrix(m.labels, predicted)
            summary["accuracy"] = metrics.accuracy
            summary["macro_f1"] = metrics.macro_f1
            summary["per_class"] = metrics.per_class
            summary["misclassification"] = misclassification_table(cm)
        _write_json(out_dir / "report.json", summary)
        (out_dir / "report.txt").write_text(render_report_text(summary))
        return summary


def _scenario_kind_key(kind: str) -> str:
    return kind.replace("-", "_")


def stage_scenario(others_csvs: list[str], camera_csvs: dict[str, str],
                   out_dir: str | Path, config: PipelineConfig,
                   ranking_path: str | None = None,
                   progress=None) -> list[ScenarioReport]:
    """Run one zero-day protocol over CSV datasets and write its reports."""
    with _stage("scenario"):
        kind = _scenario_kind_key(config.scenario_kind)
        if kind not in SCENARIO_KINDS:
            raise DataError(f"scenario kind must be one of {SCENARIO_KINDS}")
        others = None
        columns: list[str] | None = None

        def load_features(paths: list[str]) -> ds.FeatureMatrix:
            nonlocal columns
            m = _load(paths)
            if config.prune:
                m, _ = ds.prune_constant(m)
            if ranking_path:
                ranking = ds.read_ranking_csv(ranking_path)
                m = ds.select_top_k(m, ranking, config.top_k)
            if columns is None:
                columns = m.column_names
            elif columns != m.column_names:
                raise DataError("scenario datasets must share feature columns")
            return m

        if others_csvs:
            others = load_features(others_csvs).values
        cameras = {name: load_features([path]).values
                   for name, path in camera_csvs.items()}
        if kind == "all_zero_day" and others is None:
            raise MissingDataset("all-zero-day needs --others")

        detector_configs = {}
        for det in config.detector_list():
            if det == "ocsvm":
                detector_configs[det] = {"nu": config.ocsvm_nu, "gamma": config.ocsvm_gamma}
            elif det == "sgdocsvm":
                detector_configs[det] = {"nu": config.sgd_nu, "eta0": config.sgd_eta0,
                                         "epochs": config.sgd_epochs}
            elif det == "iforest":
                detector_configs[det] = {"contamination": config.if_contamination,
                                         "n_trees": config.if_trees}
            elif det == "deepsvdd":
                detector_configs[det] = {"hidden_dim": config.svdd_hidden,
                                         "latent_dim": config.svdd_latent,
                                         "learning_rate": config.svdd_lr,
                                         "epochs": config.svdd_epochs,
                                         "batch_size": config.svdd_batch,
                                         "threshold_percentile": config.svdd_threshold_percentile}
            else:
                raise DataError(f"unknown detector {det!r}")

        reports = run_zero_day_scenario(kind, others, cameras,
                                        detector_configs=detector_configs,
                                        seeds=config.seed_list(), progress=progress)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for report in reports:
            base = f"scenario_{report.kind}_{report.trained_on}".replace("/", "_")
            (out_dir / f"{base}.txt").write_text(render_scenario_report(report))
            _write_json(out_dir / f"{base}.json", scenario_report_dict(report, config))
            for det, curve in report.curves.items():
                write_curve_csv(out_dir / f"{base}_{det}_roc.csv",
                                curve.roc_points, ("fpr", "tpr"))
                write_curve_csv(out_dir / f"{base}_{det}_pr.csv",
                                curve.pr_points, ("recall", "precision"))
        return reports


def scenario_report_dict(report: ScenarioReport, config: PipelineConfig) -> dict:
    payload = {
        "type": "scenario",
        "kind": report.kind,
        "trained_on": report.trained_on,
        "seeds": report.seeds,
        "config": asdict(config),
        "models": {},
        "timings": {},
    }
    for det, seed_results in report.model_results.items():
        payload["models"][det] = {
            "train_accuracy": {
                "per_seed": [r.train_accuracy for r in seed_results],
                "mean": float(np.mean([r.train_accuracy for r in seed_results])),
                "std": float(np.std([r.train_accuracy for r in seed_results])),
            },
            "test_accuracy": {
                name: {
                    "per_seed": [r.test_accuracy[name] for r in seed_results],
                    "mean": float(np.mean([r.test_accuracy[name] for r in seed_results])),
                    "std": float(np.std([r.test_accuracy[name] for r in seed_results])),
                }
                for name in seed_results[0].test_accuracy
            },
            "inliers": {name: [r.inliers[name] for r in seed_results]
                        for name in seed_results[0].inliers},
            "outliers": {name: [r.outliers[name] for r in seed_results]
                         for name in seed_results[0].outliers},
        }
        if det in report.curves:
            payload["models"][det]["auc"] = report.curves[det].auc
            payload["models"][det]["auprc"] = report.curves[det].auprc
        payload["timings"][det] = {
            "train_seconds": [r.train_seconds for r in seed_results],
            "test_seconds": [r.test_seconds for r in seed_results],
        }
    return payload


def stage_evaluate(predictions_csv: str | Path, out_dir: str | Path,
                   config: PipelineConfig, positive_label: str | None = None) -> dict:
    """Metrics (and curves when scores are present) from a predictions CSV."""
    with _stage("evaluate"):
        truth, predicted, scores = [], [], []
        with open(predictions_csv, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "truth" not in reader.fieldnames \
                    or "predicted" not in reader.fieldnames:
                raise DataError(f"{predictions_csv}: need 'truth' and 'predicted' columns")
            has_score = "score" in reader.fieldnames
            for row in reader:
                truth.append(row["truth"])
                predicted.append(row["predicted"])
                if has_score:
                    scores.append(float(row["score"]))
        metrics = compute_metrics(truth, predicted, positive_label=positive_label)
        cm = confusion_matrix(truth, predicted)
        summary: dict = {
            "type": "evaluation",
            "rows": len(truth),
            "accuracy": metrics.accuracy,
            "macro_precision": metrics.macro_precision,
            "macro_recall": metrics.macro_recall,
            "macro_f1": metrics.macro_f1,
            "per_class": metrics.per_class,
            "misclassification": misclassification_table(cm),
            "zero_division_flags": metrics.zero_division_flags,
            "config": asdict(config),
            "timings": {},
        }
        if metrics.tpr is not None:
            summary["tpr"] = metrics.tpr
            summary["fpr"] = metrics.fpr
            summary["positive_label"] = metrics.positive_label
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if scores and positive_label is not None:
            curve = roc_pr_curves(truth, scores, positive_label)
            summary["auc"] = curve.auc
            summary["auprc"] = curve.auprc
            write_curve_csv(out_dir / "roc.csv", curve.roc_points, ("fpr", "tpr"))
            write_curve_csv(out_dir / "pr.csv", curve.pr_points, ("recall", "precision"))
        _write_json(out_dir / "report.json", summary)
        (out_dir / "report.txt").write_text(render_report_text(summary))
        return summary


def render_report_text(summary: dict) -> str:
    """Structured plain-text rendering of a report JSON payload."""
    kind = summary.get("type", "report")
    lines = [f"report type: {kind}"]
    for key in ("model", "kind", "trained_on", "rows", "inliers", "outliers",
                "accuracy", "macro_precision", "macro_recall", "macro_f1",
                "tpr", "fpr", "auc", "auprc"):
        if key in summary:
            value = summary[key]
            if isinstance(value, float):
                lines.append(f"{key}: {value:.6f}")
            else:
                lines.append(f"{key}: {value}")
    if "per_class" in summary:
        lines.append("per-class metrics:")
        for label, vals in summary["per_class"].items():
            lines.append(f"  {label}: precision {vals['precision']:.4f} "
                         f"recall {vals['recall']:.4f} f1 {vals['f1']:.4f}")
    if summary.get("misclassification"):
        lines.append("misclassification rates:")
        for true_label, wrongs in summary["misclassification"].items():
            cells = ", ".join(f"{dst} {pct:.2f}%" for dst, pct in wrongs.items())
            lines.append(f"  {true_label}: {cells}")
    if "models" in summary:
        for det, block in summary["models"].items():
            lines.append(f"[{det}]")
            tr = block["train_accuracy"]
            lines.append(f"  train accuracy mean {tr['mean']:.4f} std {tr['std']:.4f}")
            for name, acc in block["test_accuracy"].items():
                lines.append(f"  test[{name}] mean {acc['mean']:.4f} std {acc['std']:.4f}")
            if "auc" in block:
                lines.append(f"  auc {block['auc']:.4f} auprc {block['auprc']:.4f}")
    if "config" in summary:
        lines.append("config:")
        for key in sorted(summary["config"]):
            lines.append(f"  {key} = {summary['config'][key]}")
    return "\n".join(lines) + "\n"


def run_pipeline(config: PipelineConfig, pcaps: list[str], out_dir: str | Path,
                 camera_csvs: dict[str, str] | None = None) -> dict:
    """extract -> prep -> rank -> train -> detect against the training set.

    A compact end-to-end driver used by tests and demos; the CLI exposes
    the stages individually.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flows_csv = out_dir / "flows.csv"
    result: dict = {"config": asdict(config), "timings": {}}
    extract_info = stage_extract(pcaps, flows_csv, config)
    result["extract"] = {k: v for k, v in extract_info.items() if k != "timings"}
    result["timings"].update(extract_info["timings"])
    model_path = out_dir / f"{config.model}.fcm"
    train_info = stage_train([str(flows_csv)], model_path, config)
    result["train"] = {k: v for k, v in train_info.items() if k != "timings"}
    result["timings"].update(train_info["timings"])
    if config.model in ONECLASS_KINDS:
        detect_info = stage_detect(model_path, [str(flows_csv)], out_dir / "detect", config)
        result["detect"] = {k: v for k, v in detect_info.items()
                            if k not in ("timings", "config")}
        result["timings"].update(detect_info["timings"])
    else:
        classify_info = stage_classify(model_path, [str(flows_csv)],
                                       out_dir / "classify", config)
        result["classify"] = {k: v for k, v in classify_info.items()
                              if k not in ("timings", "config")}
        result["timings"].update(classify_info["timings"])
    _write_json(out_dir / "pipeline.json", result)
    return result
