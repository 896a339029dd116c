"""Versioned, checksummed model artifacts.

Layout: a human-readable header block, a blank line, length-prefixed
binary sections (JSON metadata, feature schema, and one section per numpy
array), then a trailing SHA-256 of everything before it. Loading verifies
the checksum and format version; saving a loaded artifact reproduces the
original file byte for byte because all header fields round-trip verbatim.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .deepsvdd import DeepSvddConfig, DeepSvddModel
from .errors import CorruptPayload, SchemaMismatch, VersionMismatch
from .oneclass import FourierMap, IsolationForestModel, OcsvmModel, SgdOcsvmModel, _IsoTree
from .supervised import GnbModel, KnnModel, LinearSvmModel
from .trees import CartModel, ForestModel, GbtModel, Tree

FORMAT_VERSION = 1
MAGIC_LINE = "#flowcam-model"

ALL_MODEL_KINDS = ("cart", "rf", "et", "gbt", "knn", "gnb", "lsvm",
                   "ocsvm", "sgdocsvm", "iforest", "deepsvdd")


@dataclass
class ModelArtifact:
    kind: str
    created_at: str
    data_sha256: str
    seed: int
    columns: list[str]
    scaler_mean: np.ndarray | None
    scaler_std: np.ndarray | None
    meta: dict
    arrays: dict[str, np.ndarray]
    format_version: int = FORMAT_VERSION

    def check_schema(self, data_columns: list[str]) -> list[int]:
        """Indices of the artifact's columns inside ``data_columns``.

        Raises SchemaMismatch naming every column the data lacks.
        """
        missing = [c for c in self.columns if c not in data_columns]
        if missing:
            raise SchemaMismatch(
                f"input data is missing {len(missing)} columns required by the "
                f"model: {missing}")
        return [data_columns.index(c) for c in self.columns]

    def prepare(self, X: np.ndarray, data_columns: list[str]) -> np.ndarray:
        idx = self.check_schema(data_columns)
        X = np.asarray(X, dtype=float)[:, idx]
        if self.scaler_mean is not None:
            X = (X - self.scaler_mean) / self.scaler_std
        return X


def fingerprint(X: np.ndarray, labels=None) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(np.asarray(X, dtype=float)).tobytes())
    if labels is not None:
        h.update("\x1f".join(str(v) for v in labels).encode())
    return h.hexdigest()


def _write_section(out: bytearray, name: str, payload: bytes) -> None:
    encoded = name.encode()
    out += struct.pack("<H", len(encoded))
    out += encoded
    out += struct.pack("<Q", len(payload))
    out += payload


def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.str.encode()
    out = bytearray()
    out += struct.pack("<H", len(dtype))
    out += dtype
    out += struct.pack("<B", arr.ndim)
    for dim in arr.shape:
        out += struct.pack("<Q", dim)
    out += arr.tobytes()
    return bytes(out)


def _unpack_array(payload: bytes) -> np.ndarray:
    off = 0
    (dtype_len,) = struct.unpack_from("<H", payload, off)
    off += 2
    dtype = np.dtype(payload[off:off + dtype_len].decode())
    off += dtype_len
    (ndim,) = struct.unpack_from("<B", payload, off)
    off += 1
    shape = []
    for _ in range(ndim):
        (dim,) = struct.unpack_from("<Q", payload, off)
        off += 8
        shape.append(dim)
    return np.frombuffer(payload[off:], dtype=dtype).reshape(shape).copy()


def save_artifact(artifact: ModelArtifact, path: str | Path) -> None:
    header = (
        f"{MAGIC_LINE} v{artifact.format_version}\n"
        f"kind = {artifact.kind}\n"
        f"created_at = {artifact.created_at}\n"
        f"data_sha256 = {artifact.data_sha256}\n"
        f"seed = {artifact.seed}\n"
        "\n"
    )
    out = bytearray(header.encode())
    schema = {
        "columns": artifact.columns,
        "scaler_mean": artifact.scaler_mean.tolist() if artifact.scaler_mean is not None else None,
        "scaler_std": artifact.scaler_std.tolist() if artifact.scaler_std is not None else None,
    }
    _write_section(out, "schema", json.dumps(schema, sort_keys=True).encode())
    _write_section(out, "meta", json.dumps(artifact.meta, sort_keys=True).encode())
    for name in sorted(artifact.arrays):
        _write_section(out, f"arr:{name}", _pack_array(artifact.arrays[name]))
    out += hashlib.sha256(bytes(out)).digest()
    Path(path).write_bytes(bytes(out))


def load_artifact(path: str | Path) -> ModelArtifact:
    data = Path(path).read_bytes()
    if len(data) < 32:
        raise CorruptPayload(f"{path}: file too short to hold a checksum")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptPayload(f"{path}: checksum mismatch")
    try:
        header_end = body.index(b"\n\n")
    except ValueError:
        raise CorruptPayload(f"{path}: missing header terminator") from None
    header_lines = body[:header_end].decode().splitlines()
    if not header_lines or not header_lines[0].startswith(MAGIC_LINE):
        raise VersionMismatch(f"{path}: not a flowcam model artifact")
    version = header_lines[0].removeprefix(MAGIC_LINE).strip()
    if version != f"v{FORMAT_VERSION}":
        raise VersionMismatch(f"{path}: unsupported format {version!r}")
    fields = {}
    for line in header_lines[1:]:
        key, _, value = line.partition(" = ")
        fields[key] = value

    sections: dict[str, bytes] = {}
    off = header_end + 2
    while off < len(body):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode()
        off += name_len
        (payload_len,) = struct.unpack_from("<Q", body, off)
        off += 8
        sections[name] = body[off:off + payload_len]
        off += payload_len

    schema = json.loads(sections["schema"])
    meta = json.loads(sections["meta"])
    arrays = {name[4:]: _unpack_array(payload)
              for name, payload in sections.items() if name.startswith("arr:")}
    return ModelArtifact(
        kind=fields["kind"],
        created_at=fields["created_at"],
        data_sha256=fields["data_sha256"],
        seed=int(fields["seed"]),
        columns=list(schema["columns"]),
        scaler_mean=np.asarray(schema["scaler_mean"]) if schema["scaler_mean"] is not None else None,
        scaler_std=np.asarray(schema["scaler_std"]) if schema["scaler_std"] is not None else None,
        meta=meta,
        arrays=arrays,
    )


# ---------------------------------------------------------------------------
# model <-> payload bridges
# ---------------------------------------------------------------------------

def _tree_arrays(prefix: str, tree: Tree, arrays: dict) -> None:
    arrays[f"{prefix}.feature"] = tree.feature
    arrays[f"{prefix}.threshold"] = tree.threshold
    arrays[f"{prefix}.left"] = tree.left
    arrays[f"{prefix}.right"] = tree.right
    if tree.counts is not None:
        arrays[f"{prefix}.counts"] = tree.counts
    if tree.values is not None:
        arrays[f"{prefix}.values"] = tree.values


def _tree_from(prefix: str, arrays: dict) -> Tree:
    return Tree(
        feature=arrays[f"{prefix}.feature"],
        threshold=arrays[f"{prefix}.threshold"],
        left=arrays[f"{prefix}.left"],
        right=arrays[f"{prefix}.right"],
        counts=arrays.get(f"{prefix}.counts"),
        values=arrays.get(f"{prefix}.values"),
    )


def encode_model(kind: str, model) -> tuple[dict, dict[str, np.ndarray]]:
    arrays: dict[str, np.ndarray] = {}
    if kind == "cart":
        _tree_arrays("tree", model.tree, arrays)
        arrays["classes"] = model.classes
        return {"n_features": model.n_features}, arrays
    if kind in ("rf", "et"):
        for i, tree in enumerate(model.trees):
            _tree_arrays(f"t{i}", tree, arrays)
        arrays["classes"] = model.classes
        meta = {"forest_kind": model.kind, "n_features": model.n_features,
                "n_features_per_split": model.n_features_per_split,
                "seed": model.seed, "n_trees": len(model.trees)}
        return meta, arrays
    if kind == "gbt":
        for r, round_trees in enumerate(model.trees):
            for k, tree in enumerate(round_trees):
                _tree_arrays(f"r{r}c{k}", tree, arrays)
        arrays["classes"] = model.classes
        arrays["init_score"] = model.init_score
        meta = {"n_features": model.n_features, "learning_rate": model.learning_rate,
                "n_rounds": len(model.trees),
                "n_classes": len(model.classes),
                "train_deviance": model.train_deviance}
        return meta, arrays
    if kind == "knn":
        arrays["X"] = model.X
        arrays["codes"] = model.codes
        arrays["classes"] = model.classes
        return {"k": model.k}, arrays
    if kind == "gnb":
        arrays["log_priors"] = model.log_priors
        arrays["means"] = model.means
        arrays["variances"] = model.variances
        arrays["classes"] = model.classes
        return {}, arrays
    if kind == "lsvm":
        arrays["weights"] = model.weights
        arrays["biases"] = model.biases
        arrays["classes"] = model.classes
        return {}, arrays
    if kind == "ocsvm":
        arrays["support_vectors"] = model.support_vectors
        arrays["alpha"] = model.alpha
        meta = {"rho": model.rho, "gamma": model.gamma, "nu": model.nu,
                "n_train": model.n_train, "kkt_residual": model.kkt_residual,
                "objective": model.objective}
        return meta, arrays
    if kind == "sgdocsvm":
        arrays["fourier_weights"] = model.feature_map.weights
        arrays["fourier_offsets"] = model.feature_map.offsets
        arrays["w"] = model.w
        meta = {"rho": model.rho, "nu": model.nu, "eta0": model.eta0,
                "epoch_objective": model.epoch_objective}
        return meta, arrays
    if kind == "iforest":
        for i, tree in enumerate(model.trees):
            arrays[f"t{i}.feature"] = tree.feature
            arrays[f"t{i}.threshold"] = tree.threshold
            arrays[f"t{i}.left"] = tree.left
            arrays[f"t{i}.right"] = tree.right
            arrays[f"t{i}.depth"] = tree.depth
            arrays[f"t{i}.size"] = tree.size
        arrays["c_table"] = model.c_table
        meta = {"subsample": model.subsample, "n_train": model.n_train,
                "contamination": model.contamination, "threshold": model.threshold,
                "n_features": model.n_features, "c_norm": model.c_norm,
                "n_trees": len(model.trees)}
        return meta, arrays
    if kind == "deepsvdd":
        for i, W in enumerate(model.weights):
            arrays[f"W{i}"] = W
        arrays["center"] = model.center
        cfg = model.config
        meta = {"threshold": model.threshold, "radius2": model.radius2,
                "epoch_loss": model.epoch_loss,
                "config": {"input_dim": cfg.input_dim, "hidden_dim": cfg.hidden_dim,
                           "latent_dim": cfg.latent_dim, "learning_rate": cfg.learning_rate,
                           "epochs": cfg.epochs, "batch_size": cfg.batch_size,
                           "threshold_percentile": cfg.threshold_percentile,
                           "seed": cfg.seed, "mode": cfg.mode, "nu": cfg.nu,
                           "center_guard": cfg.center_guard}}
        return meta, arrays
    raise ValueError(f"unknown model kind {kind!r}")


def decode_model(kind: str, meta: dict, arrays: dict[str, np.ndarray]):
    if kind == "cart":
        return CartModel(tree=_tree_from("tree", arrays), classes=arrays["classes"],
                         n_features=meta["n_features"])
    if kind in ("rf", "et"):
        trees = [_tree_from(f"t{i}", arrays) for i in range(meta["n_trees"])]
        return ForestModel(kind=meta["forest_kind"], trees=trees,
                           classes=arrays["classes"], n_features=meta["n_features"],
                           n_features_per_split=meta["n_features_per_split"],
                           seed=meta["seed"])
    if kind == "gbt":
        trees = [[_tree_from(f"r{r}c{k}", arrays) for k in range(meta["n_classes"])]
                 for r in range(meta["n_rounds"])]
        return GbtModel(trees=trees, classes=arrays["classes"],
                        n_features=meta["n_features"],
                        learning_rate=meta["learning_rate"],
                        init_score=arrays["init_score"],
                        train_deviance=list(meta["train_deviance"]))
    if kind == "knn":
        return KnnModel(X=arrays["X"], codes=arrays["codes"],
                        classes=arrays["classes"], k=meta["k"])
    if kind == "gnb":
        return GnbModel(classes=arrays["classes"], log_priors=arrays["log_priors"],
                        means=arrays["means"], variances=arrays["variances"])
    if kind == "lsvm":
        return LinearSvmModel(classes=arrays["classes"], weights=arrays["weights"],
                              biases=arrays["biases"])
    if kind == "ocsvm":
        return OcsvmModel(support_vectors=arrays["support_vectors"],
                          alpha=arrays["alpha"], rho=meta["rho"], gamma=meta["gamma"],
                          nu=meta["nu"], n_train=meta["n_train"],
                          kkt_residual=meta["kkt_residual"], objective=meta["objective"])
    if kind == "sgdocsvm":
        fmap = FourierMap(weights=arrays["fourier_weights"],
                          offsets=arrays["fourier_offsets"])
        return SgdOcsvmModel(feature_map=fmap, w=arrays["w"], rho=meta["rho"],
                             nu=meta["nu"], eta0=meta["eta0"],
                             epoch_objective=list(meta["epoch_objective"]))
    if kind == "iforest":
        trees = [_IsoTree(feature=arrays[f"t{i}.feature"],
                          threshold=arrays[f"t{i}.threshold"],
                          left=arrays[f"t{i}.left"], right=arrays[f"t{i}.right"],
                          depth=arrays[f"t{i}.depth"], size=arrays[f"t{i}.size"])
                 for i in range(meta["n_trees"])]
        return IsolationForestModel(trees=trees, subsample=meta["subsample"],
                                    n_train=meta["n_train"],
                                    contamination=meta["contamination"],
                                    threshold=meta["threshold"],
                                    n_features=meta["n_features"],
                                    c_norm=meta["c_norm"], c_table=arrays["c_table"])
    if kind == "deepsvdd":
        cfg = DeepSvddConfig(**meta["config"])
        weights = [arrays[f"W{i}"] for i in range(3)]
        return DeepSvddModel(weights=weights, center=arrays["center"],
                             threshold=meta["threshold"], config=cfg,
                             radius2=meta["radius2"],
                             epoch_loss=list(meta["epoch_loss"]))
    raise ValueError(f"unknown model kind {kind!r}")


def serialize_model(model, kind: str, path: str | Path, *,
                    columns: list[str], scaler_mean=None, scaler_std=None,
                    data_sha256: str = "", seed: int = 0,
                    created_at: str | None = None) -> ModelArtifact:
    """Wrap a trained model in an artifact and write it to ``path``."""
    meta, arrays = encode_model(kind, model)
    artifact = ModelArtifact(
        kind=kind,
        created_at=created_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        data_sha256=data_sha256,
        seed=seed,
        columns=list(columns),
        scaler_mean=None if scaler_mean is None else np.asarray(scaler_mean, float),
        scaler_std=None if scaler_std is None else np.asarray(scaler_std, float),
        meta=meta,
        arrays=arrays,
    )
    save_artifact(artifact, path)
    return artifact


def deserialize_model(path: str | Path):
    """Load an artifact and rebuild its model; returns (model, artifact)."""
    artifact = load_artifact(path)
    return decode_model(artifact.kind, artifact.meta, artifact.arrays), artifact
