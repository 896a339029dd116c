"""flowcam: flow-based IoT camera identification and zero-day detection.

Pipeline stages: packet captures -> flow feature vectors -> feature
pruning/scaling/selection -> supervised camera classifiers and one-class
zero-day detectors -> metrics and scenario reports.

The subpackages mirror those stages:

- pcap / flows: classic capture decoding and bidirectional flow metering
- dataset: feature matrices, scaling, splits, Extra-Trees ranking
- trees / supervised: the seven supervised classifiers, from scratch
- oneclass / deepsvdd: the four one-class zero-day detectors
- decompose: PCA reconstruction error and GMM/BIC outlier exploration
- evaluate: metrics, ROC/PR curves, and the three zero-day protocols
- persist / config / pipeline / cli: artifacts, configuration, orchestration
"""

from .config import PipelineConfig
from .dataset import (
    FeatureMatrix,
    FeatureRanking,
    fit_apply_scaler,
    load_records,
    prune_constant,
    rank_features,
    select_top_k,
    split,
)
from .deepsvdd import DeepSvddConfig, DeepSvddModel, train_deep_svdd
from .decompose import bic_sweep, fit_gmm, fit_pca, gmm_outliers, pca_outliers
from .evaluate import (
    compute_metrics,
    confusion_matrix,
    misclassification_table,
    roc_pr_curves,
    run_zero_day_scenario,
)
from .flows import FlowMeter, FlowRecord, meter_capture, write_flow_csv
from .oneclass import (
    calibrate_threshold,
    decide,
    isolation_score,
    train_isolation_forest,
    train_ocsvm,
    train_sgd_ocsvm,
)
from .pcap import decode_packet, iter_packets, read_capture
from .persist import deserialize_model, load_artifact, serialize_model
from .pipeline import run_pipeline
from .supervised import predict, predict_proba, train_gnb, train_knn, train_linear_svm
from .trees import train_cart, train_forest, train_gbt

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig",
    "FeatureMatrix",
    "FeatureRanking",
    "fit_apply_scaler",
    "load_records",
    "prune_constant",
    "rank_features",
    "select_top_k",
    "split",
    "DeepSvddConfig",
    "DeepSvddModel",
    "train_deep_svdd",
    "bic_sweep",
    "fit_gmm",
    "fit_pca",
    "gmm_outliers",
    "pca_outliers",
    "compute_metrics",
    "confusion_matrix",
    "misclassification_table",
    "roc_pr_curves",
    "run_zero_day_scenario",
    "FlowMeter",
    "FlowRecord",
    "meter_capture",
    "write_flow_csv",
    "calibrate_threshold",
    "decide",
    "isolation_score",
    "train_isolation_forest",
    "train_ocsvm",
    "train_sgd_ocsvm",
    "decode_packet",
    "iter_packets",
    "read_capture",
    "deserialize_model",
    "load_artifact",
    "serialize_model",
    "run_pipeline",
    "predict",
    "predict_proba",
    "train_gnb",
    "train_knn",
    "train_linear_svm",
    "train_cart",
    "train_forest",
    "train_gbt",
    "__version__",
]
