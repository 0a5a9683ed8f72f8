"""Class prototypes built from an ID calibration subset.

For every tapped layer and every class, the prototype is the unit-norm
mean of the normalized feature rows of that class. Sampling of the
calibration subset is stratified per class so small classes are never
dropped, and is fully determined by the seed.

A bank persists as a directory: one ``P_<layer>.npy`` float32 matrix per
layer plus a ``bank.json`` with weights, counts and provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BankFormatError,
    ConfigError,
    DegeneratePrototypeError,
    EmptyClassError,
    InsufficientCalibration,
    IoError,
    ManifestError,
)
from .features import ZERO_NORM_EPS, prepare_layer
from .tensor_store import DatasetManifest, load_tensor, save_tensor


@dataclass(frozen=True)
class CalibrationConfig:
    """Stratified calibration draw: fraction alpha per class, at least min_per_class."""

    alpha: float = 0.10
    seed: int = 0
    min_per_class: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.min_per_class < 1:
            raise ConfigError(f"min_per_class must be >= 1, got {self.min_per_class}")


@dataclass
class PrototypeBank:
    """Per-layer (K, C) unit-norm prototype matrices plus layer weights."""

    layer_names: list[str]
    prototypes: dict[str, np.ndarray]
    layer_weights: np.ndarray
    class_counts: dict[str, np.ndarray]
    num_classes: int
    provenance: dict = field(default_factory=dict)


def sample_calibration(
    labels: np.ndarray,
    cfg: CalibrationConfig,
    num_classes: int | None = None,
) -> np.ndarray:
    """Pick calibration indices: per class, max(min_per_class, round(alpha * n_c))
    drawn uniformly without replacement. Output is sorted ascending."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyClassError("labels are empty")
    k = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    rng = np.random.default_rng(cfg.seed)
    chosen: list[np.ndarray] = []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        n_c = members.size
        if n_c == 0:
            raise EmptyClassError(f"class {c} has no samples")
        take = max(cfg.min_per_class, int(np.floor(cfg.alpha * n_c + 0.5)))
        if take > n_c:
            raise InsufficientCalibration(
                f"class {c}: need {take} calibration samples but only {n_c} exist"
            )
        chosen.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(chosen))


def build_prototypes(
    manifest: DatasetManifest,
    indices: np.ndarray,
    layers: list[str] | None = None,
    cfg: CalibrationConfig | None = None,
) -> PrototypeBank:
    """Build the per-layer class-mean prototypes from the selected samples.

    Means accumulate in float64 over the normalized rows, are renormalized
    to unit length, and are stored float32. Every class 0..K-1 must appear
    among the selected indices.
    """
    if manifest.labels is None:
        raise ManifestError("prototype construction requires a labeled manifest")
    k = manifest.num_classes
    indices = np.asarray(indices)
    sel_labels = manifest.labels[indices]
    counts = np.bincount(sel_labels, minlength=k)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise EmptyClassError(f"classes {missing.tolist()} absent from calibration indices")

    layer_names = list(layers) if layers is not None else manifest.layer_names
    prototypes: dict[str, np.ndarray] = {}
    class_counts: dict[str, np.ndarray] = {}
    for name in layer_names:
        entry = manifest.layer(name)
        batch = prepare_layer(entry, manifest.load_layer(name)[indices])
        feats = batch.features.astype(np.float64)
        proto = np.empty((k, entry.channels), dtype=np.float32)
        for c in range(k):
            mean = feats[sel_labels == c].mean(axis=0)
            norm = np.sqrt(np.sum(mean * mean))
            if norm < ZERO_NORM_EPS:
                raise DegeneratePrototypeError(f"layer {name!r}, class {c}: mean has near-zero norm")
            proto[c] = (mean / norm).astype(np.float32)
        prototypes[name] = proto
        class_counts[name] = counts.astype(np.int64).copy()

    provenance = {"source_manifest_sha256": manifest.sha256}
    if cfg is not None:
        provenance["alpha"] = cfg.alpha
        provenance["seed"] = cfg.seed
    return PrototypeBank(
        layer_names=layer_names,
        prototypes=prototypes,
        layer_weights=np.ones(len(layer_names), dtype=np.float64),
        class_counts=class_counts,
        num_classes=k,
        provenance=provenance,
    )


def save_bank(bank: PrototypeBank, path: str | Path) -> None:
    """Persist a bank as a directory of NPY matrices plus bank.json."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create bank directory {path}: {exc}") from exc
    for name in bank.layer_names:
        save_tensor(bank.prototypes[name], path / f"P_{name}.npy")
    meta = {
        "layer_names": bank.layer_names,
        "layer_weights": bank.layer_weights.tolist(),
        "class_counts": {name: counts.tolist() for name, counts in bank.class_counts.items()},
        "num_classes": bank.num_classes,
        "source_manifest_sha256": bank.provenance.get("source_manifest_sha256", ""),
        "alpha": bank.provenance.get("alpha"),
        "seed": bank.provenance.get("seed"),
    }
    (path / "bank.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_bank(path: str | Path) -> PrototypeBank:
    """Load a bank directory; round trip with save_bank is bit-exact."""
    path = Path(path)
    meta_path = path / "bank.json"
    if not meta_path.is_file():
        raise BankFormatError(f"no bank.json under {path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise BankFormatError(f"corrupted bank.json: {exc}") from exc
    for key in ("layer_names", "layer_weights", "class_counts", "num_classes"):
        if key not in meta:
            raise BankFormatError(f"bank.json missing key {key!r}")
    layer_names = meta["layer_names"]
    weights = np.asarray(meta["layer_weights"], dtype=np.float64)
    if len(layer_names) != weights.shape[0] or not (weights > 0).all():
        raise BankFormatError("layer_weights must be positive and match layer_names")
    prototypes: dict[str, np.ndarray] = {}
    class_counts: dict[str, np.ndarray] = {}
    k = meta["num_classes"]
    for name in layer_names:
        proto_path = path / f"P_{name}.npy"
        if not proto_path.is_file():
            raise BankFormatError(f"missing prototype matrix {proto_path}")
        proto = load_tensor(proto_path)
        if proto.ndim != 2 or proto.shape[0] != k or proto.dtype != np.float32:
            raise BankFormatError(f"prototype matrix {proto_path} has wrong shape/dtype")
        prototypes[name] = proto
        if name not in meta["class_counts"]:
            raise BankFormatError(f"class_counts missing layer {name!r}")
        counts = np.asarray(meta["class_counts"][name], dtype=np.int64)
        if counts.shape != (k,) or (counts < 1).any():
            raise BankFormatError(f"class_counts for layer {name!r} must be K positive integers")
        class_counts[name] = counts
    provenance = {
        "source_manifest_sha256": meta.get("source_manifest_sha256", ""),
        "alpha": meta.get("alpha"),
        "seed": meta.get("seed"),
    }
    return PrototypeBank(
        layer_names=layer_names,
        prototypes=prototypes,
        layer_weights=weights,
        class_counts=class_counts,
        num_classes=k,
        provenance=provenance,
    )
