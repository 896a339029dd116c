"""Flat key-value pipeline configuration.

Every default is the operating point used in the detection experiments
(top-10 features, the one-class hyperparameter table, 600 s flow cap).
Config files are ``key = value`` lines with ``#`` comments; command-line
flags override file values; unknown keys are rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import DataError

OUTPUT_DIR_ENV = "FLOWCAM_OUT"


@dataclass
class PipelineConfig:
    # flow metering
    label: str = ""
    idle_timeout_s: float = 120.0
    activity_timeout_s: float = 5.0
    flow_cap_s: float = 600.0
    # preparation
    prune: bool = True
    scale: bool = True
    top_k: int = 10
    # experiment control
    seed: int = 0
    seeds: str = "0,1,2,3,4"
    model: str = "deepsvdd"
    detectors: str = "ocsvm,sgdocsvm,iforest,deepsvdd"
    scenario_kind: str = "all-zero-day"
    rank_trees: int = 100
    # one-class hyperparameters
    ocsvm_nu: float = 0.001
    ocsvm_gamma: float = 0.999
    sgd_nu: float = 0.03
    sgd_eta0: float = 0.0001
    sgd_epochs: int = 20
    if_contamination: float = 0.1
    if_trees: int = 100
    svdd_input_dim: int = 10
    svdd_hidden: int = 512
    svdd_latent: int = 8
    svdd_lr: float = 0.0001
    svdd_epochs: int = 150
    svdd_batch: int = 256
    svdd_threshold_percentile: float = 95.0
    # supervised hyperparameters
    rf_trees: int = 100
    et_trees: int = 100
    knn_k: int = 5
    gbt_rounds: int = 200
    gbt_lr: float = 0.1
    gbt_depth: int = 6
    svm_l2: float = 0.0001
    svm_epochs: int = 1000
    svm_lr: float = 0.01
    # bookkeeping
    out_dir: str = ""
    created_at: str = ""

    def seed_list(self) -> list[int]:
        return [int(s) for s in str(self.seeds).split(",") if s.strip() != ""]

    def detector_list(self) -> list[str]:
        return [d.strip() for d in self.detectors.split(",") if d.strip()]

    def resolve_out_dir(self) -> Path:
        if self.out_dir:
            return Path(self.out_dir)
        env = os.environ.get(OUTPUT_DIR_ENV)
        return Path(env) if env else Path(".")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise DataError(f"config key {name!r}: {raw!r} is not a boolean")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def read_config_file(path: str | Path) -> dict:
    """Parse a flat config file, rejecting keys the pipeline does not know."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _coerce(key, value)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> PipelineConfig:
    """File values first, explicit command-line overrides win."""
    config = PipelineConfig()
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in _FIELD_TYPES:
                raise DataError(f"unknown config key {key!r}")
            setattr(config, key, value)
    return config
