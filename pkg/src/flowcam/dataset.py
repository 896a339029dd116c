"""Feature-matrix handling: CSV loading, constant-column pruning, standard
scaling, stratified splitting, and Extra-Trees feature ranking.

The 6-tuple columns and the timestamp are carried as row metadata only and
never enter a feature matrix, which is what makes the downstream models
blind to addresses and ports.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AllConstant,
    EmptyDataset,
    KTooLarge,
    SchemaMismatch,
    SingleClass,
    TooFewRows,
    ZeroStd,
)
from .flows import FEATURE_COLUMNS, LABEL_COLUMN, META_COLUMNS
from .trees import train_forest

logger = logging.getLogger(__name__)

# header spellings used by other exporters of the same schema
HEADER_ALIASES = {
    "CWE Flag Count": "CWR Flag Cnt",
    "CWR Flag Count": "CWR Flag Cnt",
}


@dataclass
class FeatureMatrix:
    """Numeric flow features plus optional labels and row metadata."""

    column_names: list[str]
    values: np.ndarray  # (n_rows, n_cols) float64, always finite
    labels: list[str] | None = None
    source: str = ""
    meta: list[dict[str, str]] = field(default_factory=list)
    dropped_rows: int = 0

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise SchemaMismatch(
                f"matrix has {self.values.shape} values for {len(self.column_names)} columns")

    def with_values(self, values: np.ndarray, column_names: list[str] | None = None) -> "FeatureMatrix":
        return replace(self, values=values,
                       column_names=column_names if column_names is not None else self.column_names)

    def take_rows(self, idx: np.ndarray) -> "FeatureMatrix":
        return replace(
            self,
            values=self.values[idx],
            labels=[self.labels[i] for i in idx] if self.labels is not None else None,
            meta=[self.meta[i] for i in idx] if self.meta else [],
        )


def load_records(paths: Sequence[str | Path], label_map: dict[str, str] | None = None,
                 source: str = "") -> FeatureMatrix:
    """Load flow CSVs sharing the 84-column schema (or a subset with Label).

    Rows containing non-finite feature values are dropped and counted.
    Known header spellings from the compatible exporter are normalized.
    """
    rows: list[list[float]] = []
    labels: list[str] = []
    meta: list[dict[str, str]] = []
    dropped = 0
    feature_cols: list[str] | None = None
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise EmptyDataset(f"{path} has no header row")
            header = [HEADER_ALIASES.get(h.strip(), h.strip()) for h in header]
            if LABEL_COLUMN not in header:
                raise SchemaMismatch(f"{path}: missing required column {LABEL_COLUMN!r}")
            present = [c for c in FEATURE_COLUMNS if c in header]
            if not present:
                # generic numeric CSV: everything except metadata is a feature
                present = [c for c in header if c not in META_COLUMNS and c != LABEL_COLUMN]
            if not present:
                raise SchemaMismatch(f"{path}: no feature columns in header")
            if feature_cols is None:
                feature_cols = present
            elif feature_cols != present:
                raise SchemaMismatch(
                    f"{path}: feature columns {present[:3]}... do not match first file")
            col_idx = {c: header.index(c) for c in present}
            label_idx = header.index(LABEL_COLUMN)
            meta_idx = {c: header.index(c) for c in META_COLUMNS if c in header}
            for raw in reader:
                if not raw or all(not cell.strip() for cell in raw):
                    continue
                try:
                    vec = [float(raw[col_idx[c]]) for c in present]
                except (ValueError, IndexError):
                    dropped += 1
                    continue
                if not all(np.isfinite(v) for v in vec):
                    dropped += 1
                    continue
                label = raw[label_idx] if label_idx < len(raw) else ""
                if label_map:
                    label = label_map.get(label, label)
                rows.append(vec)
                labels.append(label)
                meta.append({c: raw[i] for c, i in meta_idx.items()})
    if not rows:
        raise EmptyDataset(f"no usable rows in {list(paths)}")
    if dropped:
        logger.info("dropped %d rows with non-finite or unparsable features", dropped)
    return FeatureMatrix(
        column_names=list(feature_cols or []),
        values=np.asarray(rows, dtype=float),
        labels=labels,
        source=source,
        meta=meta,
        dropped_rows=dropped,
    )


def matrix_from_arrays(X: np.ndarray, labels=None, column_names=None,
                       source: str = "synthetic") -> FeatureMatrix:
    X = np.asarray(X, dtype=float)
    names = list(column_names) if column_names is not None else [f"f{i:02d}" for i in range(X.shape[1])]
    lab = [str(v) for v in labels] if labels is not None else None
    return FeatureMatrix(column_names=names, values=X, labels=lab, source=source)


def prune_constant(m: FeatureMatrix) -> tuple[FeatureMatrix, list[str]]:
    """Drop every column with zero standard deviation; returns removed names.

    Constancy is decided by exact value equality: the computed std of a
    constant column can be a few ulp above zero.
    """
    if m.n_rows == 0:
        raise EmptyDataset("cannot prune an empty matrix")
    keep = (m.values != m.values[0]).any(axis=0)
    if not keep.any():
        raise AllConstant("every column is constant")
    removed = [c for c, k in zip(m.column_names, keep) if not k]
    kept_names = [c for c, k in zip(m.column_names, keep) if k]
    return m.with_values(m.values[:, keep], kept_names), removed


@dataclass(frozen=True)
class ScalerParams:
    column_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def inverse_transform(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) * self.std + self.mean


def fit_scaler(train: FeatureMatrix) -> ScalerParams:
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    constant = ~(train.values != train.values[0]).any(axis=0)
    if constant.any() or (std == 0.0).any():
        bad = [c for c, flag, s in zip(train.column_names, constant, std) if flag or s == 0.0]
        raise ZeroStd(f"constant columns must be pruned before scaling: {bad}")
    return ScalerParams(column_names=tuple(train.column_names), mean=mean, std=std)


def fit_apply_scaler(train: FeatureMatrix, others: Iterable[FeatureMatrix] = ()
                     ) -> tuple[FeatureMatrix, list[FeatureMatrix], ScalerParams]:
    """Fit on the training matrix only; apply unchanged everywhere else."""
    params = fit_scaler(train)
    scaled_train = train.with_values(params.transform(train.values))
    scaled_others = []
    for other in others:
        if list(other.column_names) != list(train.column_names):
            raise SchemaMismatch("matrices must share columns to share a scaler")
        scaled_others.append(other.with_values(params.transform(other.values)))
    return scaled_train, scaled_others, params


def split(m: FeatureMatrix, test_fraction: float, seed: int) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Deterministic train/test split, stratified by label when present."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    n = m.n_rows
    n_test = int(np.floor(test_fraction * n + 0.5))
    if n_test < 1 or n - n_test < 1:
        raise TooFewRows(f"{n} rows cannot support a {test_fraction} test fraction")
    rng = np.random.default_rng(seed)
    if m.labels is None:
        perm = rng.permutation(n)
        test_idx = np.sort(perm[:n_test])
    else:
        labels = np.asarray(m.labels)
        classes = sorted(set(m.labels))
        exact = {c: test_fraction * (labels == c).sum() for c in classes}
        counts = {c: int(np.floor(exact[c])) for c in classes}
        short = n_test - sum(counts.values())
        by_remainder = sorted(classes, key=lambda c: (-(exact[c] - counts[c]), c))
        for c in by_remainder[:max(short, 0)]:
            counts[c] += 1
        picks = []
        for c in classes:
            rows = np.nonzero(labels == c)[0]
            perm = rng.permutation(len(rows))
            picks.append(rows[perm[:counts[c]]])
        test_idx = np.sort(np.concatenate(picks)) if picks else np.array([], dtype=int)
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    train_idx = np.nonzero(~mask)[0]
    return m.take_rows(train_idx), m.take_rows(test_idx)


@dataclass
class FeatureRanking:
    """(feature, importance) pairs in descending importance order."""

    entries: list[tuple[str, float]]

    def top(self, k: int) -> list[str]:
        return [name for name, _ in self.entries[:k]]

    def importance_of(self, name: str) -> float:
        for n, v in self.entries:
            if n == name:
                return v
        raise KeyError(name)


def rank_features(m: FeatureMatrix, labels: Sequence[str] | None = None,
                  n_trees: int = 100, seed: int = 0) -> FeatureRanking:
    """Extra-Trees mean impurity-decrease importances, normalized to sum 1.

    Columns are canonicalized by name before training so the ranking does
    not depend on the order columns arrive in.
    """
    y = np.asarray(labels if labels is not None else m.labels)
    if y is None or y.ndim == 0:
        raise SingleClass("labels are required for ranking")
    if len(set(y.tolist())) < 2:
        raise SingleClass("feature ranking needs at least two classes")
    order = np.argsort(np.asarray(m.column_names, dtype=object))
    X = m.values[:, order]
    names = [m.column_names[i] for i in order]
    forest = train_forest(X, y, kind="extra", n_trees=n_trees, seed=seed)
    importances = forest.feature_importances
    ranked = sorted(zip(names, importances), key=lambda kv: (-kv[1], kv[0]))
    return FeatureRanking(entries=[(n, float(v)) for n, v in ranked])


def select_top_k(m: FeatureMatrix, ranking: FeatureRanking, k: int) -> FeatureMatrix:
    """Keep the k highest-importance columns, in ranking order."""
    if k > m.n_cols:
        raise KTooLarge(f"k={k} exceeds {m.n_cols} available columns")
    chosen = [name for name in ranking.top(len(ranking.entries)) if name in m.column_names][:k]
    if len(chosen) < k:
        raise KTooLarge(f"ranking only covers {len(chosen)} of the requested {k} columns")
    idx = [m.column_names.index(c) for c in chosen]
    return m.with_values(m.values[:, idx], chosen)


def write_ranking_csv(path: str | Path, ranking: FeatureRanking) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "importance"])
        for name, value in ranking.entries:
            writer.writerow([name, repr(value)])


def read_ranking_csv(path: str | Path) -> FeatureRanking:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["feature", "importance"]:
            raise SchemaMismatch(f"{path}: not a ranking file")
        for name, value in reader:
            entries.append((name, float(value)))
    return FeatureRanking(entries=entries)
