"""Datasets, file formats, splits, synthetic data, model files and config.

Two dataset formats are supported: CSV (one signal per column, plus a
separate labels file with one integer per line) and a little-endian binary
container holding signals and labels in one file. Model files are a
versioned binary container with a JSON header, raw matrices and a trailing
CRC32, so truncation or corruption is always detected before any model
object is built. Run configuration is a single strict JSON document;
unknown keys anywhere are an error.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classify import ClassifierModel, KernelClass, LinearClass
from .errors import InputError
from .kernels import KernelKind, KernelSpec
from .learning import TrainConfig, UpdateMode

__all__ = [
    "LabeledDataset",
    "SplitSpec",
    "DatasetRef",
    "RunSpec",
    "load_dataset",
    "save_dataset",
    "split",
    "synth_dataset",
    "save_model",
    "load_model",
    "parse_run_config",
    "load_run_config",
    "kernel_spec_to_dict",
    "kernel_spec_from_dict",
    "train_config_to_dict",
    "train_config_from_dict",
]

log = logging.getLogger("ikdl.data")

DATASET_MAGIC = b"IKDL"
DATASET_VERSION = 1
MODEL_MAGIC = b"IKDM"
MODEL_VERSION = 1


@dataclass
class LabeledDataset:
    """Signal matrix (one signal per column) plus per-column class labels.

    Labels are contiguous in [0, C) and every class occurs at least once;
    class_ids maps each contiguous index back to the id found in the source
    file. notes records non-fatal oddities seen while loading.
    """

    signals: np.ndarray
    labels: np.ndarray
    class_ids: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.signals.ndim != 2:
            raise InputError(f"signals must be 2-d, got shape {self.signals.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.signals.shape[1]:
            raise InputError(
                f"got {self.labels.shape} labels for {self.signals.shape[1]} signals"
            )
        if self.labels.size == 0:
            raise InputError("dataset is empty")
        if not np.all(np.isfinite(self.signals)):
            raise InputError("signals contain non-finite entries")
        uniq = np.unique(self.labels)
        if uniq[0] < 0 or not np.array_equal(uniq, np.arange(len(uniq))):
            raise InputError("labels must be contiguous class ids starting at 0")
        if not self.class_ids:
            self.class_ids = tuple(int(u) for u in uniq)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    @property
    def dim(self) -> int:
        return self.signals.shape[0]

    def by_class(self) -> list[np.ndarray]:
        return [self.signals[:, self.labels == i] for i in range(self.n_classes)]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


def _located_nonfinite(M: np.ndarray, what: str) -> None:
    bad = np.argwhere(~np.isfinite(M))
    if bad.size:
        r, c = bad[0]
        raise InputError(f"{what}: non-finite value at row {r}, column {c}")


def _remap_labels(raw: np.ndarray) -> tuple[np.ndarray, tuple[int, ...], tuple[str, ...]]:
    if raw.ndim != 1:
        raise InputError(f"labels must be one id per line, got shape {raw.shape}")
    if np.any(raw < 0):
        raise InputError("labels must be nonnegative integers")
    uniq, inverse = np.unique(raw, return_inverse=True)
    notes: tuple[str, ...] = ()
    if not np.array_equal(uniq, np.arange(len(uniq))):
        msg = f"labels {uniq.tolist()} remapped to contiguous ids 0..{len(uniq) - 1}"
        log.warning(msg)
        notes = (msg,)
    return inverse.astype(np.int64), tuple(int(u) for u in uniq), notes


def _read_file(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _load_csv(signals_path, labels_path) -> LabeledDataset:
    if labels_path is None:
        raise InputError("csv datasets need a labels file")
    try:
        signals = np.loadtxt(signals_path, delimiter=",", dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise InputError(f"cannot read {signals_path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{signals_path}: {exc}") from exc
    _located_nonfinite(signals, str(signals_path))
    try:
        raw = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
    except OSError as exc:
        raise InputError(f"cannot read {labels_path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{labels_path}: {exc}") from exc
    labels, class_ids, notes = _remap_labels(raw)
    if labels.shape[0] != signals.shape[1]:
        raise InputError(
            f"{labels_path}: {labels.shape[0]} labels for {signals.shape[1]} signals"
        )
    return LabeledDataset(signals, labels, class_ids, notes)


def _load_bin(path) -> LabeledDataset:
    blob = _read_file(path)
    head = struct.calcsize("<4sIQQ")
    if len(blob) < head:
        raise InputError(f"{path}: truncated dataset file")
    magic, version, m, N = struct.unpack_from("<4sIQQ", blob, 0)
    if magic != DATASET_MAGIC:
        raise InputError(f"{path}: not a dataset file (bad magic {magic!r})")
    if version != DATASET_VERSION:
        raise InputError(f"{path}: unsupported dataset format version {version}")
    need = head + 8 * m * N + 4 * N
    if len(blob) != need:
        raise InputError(f"{path}: expected {need} bytes, found {len(blob)}")
    signals = np.frombuffer(blob, dtype="<f8", count=m * N, offset=head)
    signals = signals.reshape((m, N), order="F").copy()
    _located_nonfinite(signals, str(path))
    raw = np.frombuffer(blob, dtype="<u4", count=N, offset=head + 8 * m * N)
    labels, class_ids, notes = _remap_labels(raw.astype(np.int64))
    return LabeledDataset(signals, labels, class_ids, notes)


def load_dataset(signals_path, labels_path=None, fmt: str = "csv") -> LabeledDataset:
    """Load a labelled dataset. fmt is "csv" (two files) or "bin" (one file
    holding both signals and labels; labels_path is ignored)."""
    if fmt == "csv":
        return _load_csv(signals_path, labels_path)
    if fmt == "bin":
        return _load_bin(signals_path)
    raise InputError(f"unknown dataset format: {fmt!r}")


def save_dataset(ds: LabeledDataset, signals_path, labels_path=None, fmt: str = "csv") -> None:
    """Write a dataset back out; round-trips are value-exact for CSV and
    bit-exact for the binary format. Stored labels are the original ids."""
    stored = np.asarray([ds.class_ids[l] for l in ds.labels], dtype=np.int64)
    if fmt == "csv":
        if labels_path is None:
            raise InputError("csv datasets need a labels path")
        np.savetxt(signals_path, ds.signals, delimiter=",", fmt="%.17g")
        np.savetxt(labels_path, stored, fmt="%d")
        return
    if fmt == "bin":
        m, N = ds.signals.shape
        if np.any(stored > np.iinfo(np.uint32).max):
            raise InputError("binary format stores labels as u32")
        parts = [
            struct.pack("<4sIQQ", DATASET_MAGIC, DATASET_VERSION, m, N),
            ds.signals.astype("<f8").tobytes(order="F"),
            stored.astype("<u4").tobytes(),
        ]
        Path(signals_path).write_bytes(b"".join(parts))
        return
    raise InputError(f"unknown dataset format: {fmt!r}")


@dataclass(frozen=True)
class SplitSpec:
    """Per-class train/test split: per_class_train is either an absolute
    count (integer >= 1) or a fraction in (0, 1); the shuffle is seeded."""

    per_class_train: float
    seed: int = 0

    def count_for(self, size: int) -> int:
        p = self.per_class_train
        if 0 < p < 1:
            return int(round(p * size))
        if p >= 1 and float(p).is_integer():
            return int(p)
        raise InputError(
            f"per_class_train must be a fraction in (0, 1) or an integer count, got {p!r}"
        )


def split(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded per-class split; the first per_class_train shuffled columns of
    every class go to train, the rest to test. Every class must keep at
    least one column on each side."""
    rng = np.random.default_rng(spec.seed)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for i in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == i)
        k = spec.count_for(idx.size)
        if not 1 <= k < idx.size:
            raise InputError(
                f"class {i}: cannot take {k} training signals from {idx.size}"
            )
        perm = rng.permutation(idx)
        train_idx.append(perm[:k])
        test_idx.append(perm[k:])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    return (
        LabeledDataset(ds.signals[:, tr], ds.labels[tr], ds.class_ids),
        LabeledDataset(ds.signals[:, te], ds.labels[te], ds.class_ids),
    )


def synth_dataset(n_classes: int, per_class: int, dim: int, subspace_dim: int,
                  noise_sigma: float, seed: int = 0) -> LabeledDataset:
    """Seeded synthetic dataset: each class draws signals from its own
    random subspace, adds Gaussian noise, and unit-normalizes the columns."""
    if n_classes < 1 or per_class < 1 or dim < 1:
        raise InputError("n_classes, per_class and dim must all be >= 1")
    if not 1 <= subspace_dim < dim:
        raise InputError(f"subspace_dim must satisfy 1 <= d < dim={dim}, got {subspace_dim}")
    if noise_sigma < 0:
        raise InputError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(n_classes):
        basis, _ = np.linalg.qr(rng.standard_normal((dim, subspace_dim)))
        S = basis @ rng.standard_normal((subspace_dim, per_class))
        if noise_sigma > 0:
            S = S + noise_sigma * rng.standard_normal((dim, per_class))
        norms = np.linalg.norm(S, axis=0)
        if np.any(norms < 1e-12):
            raise InputError("degenerate synthetic signal drawn; adjust parameters or seed")
        blocks.append(S / norms)
    signals = np.concatenate(blocks, axis=1)
    labels = np.repeat(np.arange(n_classes), per_class)
    return LabeledDataset(signals, labels)


# --- kernel / config (de)serialization -------------------------------------

def kernel_spec_to_dict(spec: KernelSpec | None):
    if spec is None:
        return None
    out = {"kind": spec.kind.value}
    if spec.kind is KernelKind.RBF:
        out["sigma"] = float(spec.sigma)
    elif spec.kind is KernelKind.POLYNOMIAL:
        out["alpha"] = float(spec.alpha)
        out["beta"] = int(spec.beta)
    return out


def kernel_spec_from_dict(d) -> KernelSpec | None:
    if d is None:
        return None
    if not isinstance(d, dict):
        raise InputError(f"kernel must be an object or null, got {type(d).__name__}")
    allowed = {"kind", "sigma", "alpha", "beta"}
    unknown = set(d) - allowed
    if unknown:
        raise InputError(f"unknown kernel config keys: {sorted(unknown)}")
    if "kind" not in d:
        raise InputError("kernel config needs a 'kind'")
    try:
        kind = KernelKind(d["kind"])
    except ValueError:
        raise InputError(f"unknown kernel kind: {d['kind']!r}") from None
    kwargs = {}
    if "sigma" in d:
        kwargs["sigma"] = float(d["sigma"])
    if "alpha" in d:
        kwargs["alpha"] = float(d["alpha"])
    if "beta" in d:
        kwargs["beta"] = d["beta"]
    return KernelSpec(kind=kind, **kwargs)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "n_atoms": cfg.n_atoms,
        "sparsity": cfg.sparsity,
        "iterations": cfg.iterations,
        "gamma": cfg.gamma,
        "mode": cfg.mode.value,
        "kernel": kernel_spec_to_dict(cfg.kernel),
        "seed": cfg.seed,
        "recode_every_iteration": cfg.recode_every_iteration,
    }


def train_config_from_dict(d: dict) -> TrainConfig:
    allowed = {
        "n_atoms", "sparsity", "iterations", "gamma", "mode", "kernel",
        "seed", "recode_every_iteration",
    }
    unknown = set(d) - allowed
    if unknown:
        raise InputError(f"unknown training config keys: {sorted(unknown)}")
    for key in ("n_atoms", "sparsity", "iterations"):
        if key not in d:
            raise InputError(f"training config needs '{key}'")
    try:
        mode = UpdateMode(d.get("mode", "aksvd"))
    except ValueError:
        raise InputError(f"unknown update mode: {d.get('mode')!r}") from None
    return TrainConfig(
        n_atoms=int(d["n_atoms"]),
        sparsity=int(d["sparsity"]),
        iterations=int(d["iterations"]),
        gamma=float(d.get("gamma", 0.0)),
        mode=mode,
        kernel=kernel_spec_from_dict(d.get("kernel")),
        seed=int(d.get("seed", 0)),
        recode_every_iteration=bool(d.get("recode_every_iteration", True)),
    )


@dataclass(frozen=True)
class DatasetRef:
    signals: str
    labels: str | None = None
    format: str = "csv"


@dataclass
class RunSpec:
    """Parsed run configuration: training parameters plus (optionally) the
    dataset location and a train/test split."""

    train: TrainConfig
    dataset: DatasetRef | None = None
    split: SplitSpec | None = None


def parse_run_config(doc: dict) -> RunSpec:
    if not isinstance(doc, dict):
        raise InputError("run config must be a JSON object")
    train_keys = {
        "n_atoms", "sparsity", "iterations", "gamma", "mode", "kernel",
        "seed", "recode_every_iteration",
    }
    allowed = train_keys | {"dataset", "split"}
    unknown = set(doc) - allowed
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    cfg = train_config_from_dict({k: v for k, v in doc.items() if k in train_keys})
    dataset = None
    if doc.get("dataset") is not None:
        d = doc["dataset"]
        if not isinstance(d, dict):
            raise InputError("dataset must be an object")
        unknown = set(d) - {"signals", "labels", "format"}
        if unknown:
            raise InputError(f"unknown dataset config keys: {sorted(unknown)}")
        if "signals" not in d:
            raise InputError("dataset config needs 'signals'")
        fmt = d.get("format", "csv")
        if fmt not in ("csv", "bin"):
            raise InputError(f"unknown dataset format: {fmt!r}")
        dataset = DatasetRef(str(d["signals"]), d.get("labels"), fmt)
    split_spec = None
    if doc.get("split") is not None:
        s = doc["split"]
        if not isinstance(s, dict):
            raise InputError("split must be an object")
        unknown = set(s) - {"per_class_train", "seed"}
        if unknown:
            raise InputError(f"unknown split config keys: {sorted(unknown)}")
        if "per_class_train" not in s:
            raise InputError("split config needs 'per_class_train'")
        p = s["per_class_train"]
        if not isinstance(p, (int, float)) or isinstance(p, bool) or p <= 0:
            raise InputError(f"per_class_train must be a positive number, got {p!r}")
        split_spec = SplitSpec(per_class_train=p, seed=int(s.get("seed", 0)))
    return RunSpec(cfg, dataset, split_spec)


def load_run_config(path) -> RunSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    return parse_run_config(doc)


# --- model container --------------------------------------------------------

def _pack_matrix(M: np.ndarray) -> bytes:
    M = np.asarray(M, dtype=np.float64)
    return struct.pack("<QQ", M.shape[0], M.shape[1]) + M.astype("<f8").tobytes(order="F")


def _unpack_matrix(blob: bytes, offset: int) -> tuple[np.ndarray, int]:
    if offset + 16 > len(blob):
        raise InputError("model file ended in the middle of a matrix header")
    r, c = struct.unpack_from("<QQ", blob, offset)
    offset += 16
    end = offset + 8 * r * c
    if end > len(blob):
        raise InputError("model file ended in the middle of matrix data")
    M = np.frombuffer(blob, dtype="<f8", count=r * c, offset=offset)
    return M.reshape((r, c), order="F").copy(), end


def save_model(model: ClassifierModel, path) -> None:
    """Serialize a model: magic, version, JSON header, matrices, CRC32.

    Training wall time is deliberately left out so that retraining with the
    same seed yields a byte-identical file.
    """
    header = {
        "kind": model.kind,
        "cfg": train_config_to_dict(model.cfg),
        "labels": [int(l) for l in model.labels],
        "objective": [float(v) for v in model.objective],
        "n_classes": model.n_classes,
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MODEL_MAGIC, struct.pack("<IQ", MODEL_VERSION, len(hjson)), hjson]
    for payload in model.classes:
        if model.kind == "linear":
            parts.append(_pack_matrix(payload.dictionary))
        else:
            parts.append(_pack_matrix(payload.coefs))
            parts.append(_pack_matrix(payload.signals))
            parts.append(_pack_matrix(payload.gram))
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_model(path) -> ClassifierModel:
    """Load a model file; any truncation or corruption fails the checksum
    before any part of the model is materialized."""
    blob = _read_file(path)
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise InputError(f"{path}: not a model file")
    if len(blob) < 20:
        raise InputError(f"{path}: checksum failure (file truncated)")
    stored = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    body = blob[:-4]
    if zlib.crc32(body) != stored:
        raise InputError(f"{path}: checksum mismatch (corrupt or truncated file)")
    version, hlen = struct.unpack_from("<IQ", body, 4)
    if version != MODEL_VERSION:
        raise InputError(f"{path}: unsupported model version {version}")
    off = 16
    if off + hlen > len(body):
        raise InputError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(body[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: bad model header: {exc}") from exc
    off += hlen
    kind = header.get("kind")
    if kind not in ("linear", "kernel"):
        raise InputError(f"{path}: unknown model kind {kind!r}")
    cfg = train_config_from_dict(header["cfg"])
    C = int(header["n_classes"])
    payloads = []
    for _ in range(C):
        if kind == "linear":
            D, off = _unpack_matrix(body, off)
            payloads.append(LinearClass(D))
        else:
            A, off = _unpack_matrix(body, off)
            Y, off = _unpack_matrix(body, off)
            K, off = _unpack_matrix(body, off)
            payloads.append(KernelClass(A, Y, K))
    if off != len(body):
        raise InputError(f"{path}: trailing bytes after model payload")
    return ClassifierModel(
        kind=kind,
        classes=payloads,
        kernel=cfg.kernel,
        cfg=cfg,
        labels=[int(l) for l in header["labels"]],
        objective=[float(v) for v in header["objective"]],
        train_time_s=None,
    )
