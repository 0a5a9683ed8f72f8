"""Multi-layer prototype scoring.

Per layer, a sample's normalized descriptor is compared to every class
prototype by inner product (both sides are unit norm, so this is cosine
similarity) and the best class match is kept. The per-layer maxima are
fused by a normalized weighted average into an ID affinity s, and the
final score is 1 - s: near 0 for samples that match some class at every
layer, larger for samples that match nothing.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, IoError, ProvenanceWarning, ShapeError
from .features import PooledBatch, prepare_layer
from .prototypes import PrototypeBank
from .tensor_store import DatasetManifest

NAMED_SCHEMES = ("uniform", "shallow_heavy", "middle_heavy", "top_heavy")
HEAVY_WEIGHT = 2.0
LIGHT_WEIGHT = 1.0


@dataclass(frozen=True)
class WeightScheme:
    """Layer weighting: one of the named schemes or explicit custom weights."""

    kind: str = "uniform"
    custom_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in NAMED_SCHEMES + ("custom",):
            raise ConfigError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "custom":
            if not self.custom_weights:
                raise ConfigError("custom scheme requires custom_weights")
            if any(w <= 0 for w in self.custom_weights):
                raise ConfigError("custom weights must all be strictly positive")
        elif self.custom_weights is not None:
            raise ConfigError(f"scheme {self.kind!r} does not take custom_weights")

    @classmethod
    def parse(cls, text: str) -> "WeightScheme":
        """Parse a CLI scheme value: a named scheme or a comma list of weights."""
        text = text.strip()
        if text in NAMED_SCHEMES:
            return cls(kind=text)
        if "," in text:
            try:
                weights = tuple(float(tok) for tok in text.split(","))
            except ValueError as exc:
                raise ConfigError(f"bad custom weights {text!r}: {exc}") from exc
            return cls(kind="custom", custom_weights=weights)
        raise ConfigError(f"unknown weight scheme {text!r} (named scheme or comma list)")


@dataclass(frozen=True)
class ScoreRecord:
    """Per-sample scoring result across all fused layers."""

    sample_index: int
    per_layer_max: tuple[float, ...]
    per_layer_argmax_class: tuple[int, ...]
    affinity: float
    ood_score: float


def layer_similarities(features: PooledBatch, prototypes: np.ndarray) -> np.ndarray:
    """Inner products of normalized rows against a (K, C) prototype matrix."""
    if not features.normalized:
        raise ConfigError(f"layer {features.layer_name!r}: features must be normalized before scoring")
    if features.features.shape[1] != prototypes.shape[1]:
        raise ShapeError(
            f"layer {features.layer_name!r}: feature width {features.features.shape[1]} "
            f"!= prototype width {prototypes.shape[1]}"
        )
    return features.features.astype(np.float64) @ prototypes.astype(np.float64).T


def layer_max(sims: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best class match per row; ties break to the lowest class index."""
    if sims.ndim != 2 or sims.shape[1] < 1:
        raise ShapeError(f"similarity matrix must be (N, K>=1), got {sims.shape}")
    return sims.max(axis=1), sims.argmax(axis=1)


def resolve_weights(scheme: WeightScheme, num_layers: int) -> np.ndarray:
    """Concrete weight vector for a scheme: heavy layer gets 2.0, others 1.0."""
    if num_layers < 1:
        raise ConfigError("need at least one layer")
    if scheme.kind == "custom":
        if len(scheme.custom_weights) != num_layers:
            raise ConfigError(
                f"custom weights have length {len(scheme.custom_weights)}, expected {num_layers}"
            )
        return np.asarray(scheme.custom_weights, dtype=np.float64)
    weights = np.full(num_layers, LIGHT_WEIGHT, dtype=np.float64)
    if scheme.kind == "shallow_heavy":
        weights[0] = HEAVY_WEIGHT
    elif scheme.kind == "middle_heavy":
        weights[num_layers // 2] = HEAVY_WEIGHT
    elif scheme.kind == "top_heavy":
        weights[num_layers - 1] = HEAVY_WEIGHT
    return weights


def fuse(per_layer_max: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized weighted average across layers; returns (affinity, ood_score)."""
    per_layer_max = np.asarray(per_layer_max, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if per_layer_max.ndim != 2 or weights.shape != (per_layer_max.shape[1],):
        raise ShapeError(
            f"per-layer maxima {per_layer_max.shape} incompatible with weights {weights.shape}"
        )
    if not (weights > 0).all():
        raise ConfigError("all layer weights must be strictly positive")
    affinity = (per_layer_max @ weights) / weights.sum()
    return affinity, 1.0 - affinity


def score_dataset(
    manifest: DatasetManifest,
    bank: PrototypeBank,
    scheme: WeightScheme = WeightScheme(),
) -> list[ScoreRecord]:
    """Run the full pipeline over a manifest: prepare each bank layer,
    take per-layer class maxima, fuse, and emit one record per sample."""
    src = bank.provenance.get("source_manifest_sha256") or ""
    if src and manifest.sha256 and src != manifest.sha256:
        warnings.warn(
            f"bank was built from a different manifest than {manifest.dataset_name}/{manifest.split}",
            ProvenanceWarning,
            stacklevel=2,
        )
    manifest_layers = set(manifest.layer_names)
    maxima = []
    argmaxes = []
    for name in bank.layer_names:
        if name not in manifest_layers:
            raise ShapeError(f"manifest is missing layer {name!r} required by the bank")
        entry = manifest.layer(name)
        proto = bank.prototypes[name]
        if entry.channels != proto.shape[1]:
            raise ShapeError(
                f"layer {name!r}: manifest channels {entry.channels} != bank width {proto.shape[1]}"
            )
        batch = prepare_layer(entry, manifest.load_layer(name))
        m, arg = layer_max(layer_similarities(batch, proto))
        maxima.append(m)
        argmaxes.append(arg)

    m_matrix = np.stack(maxima, axis=1)
    arg_matrix = np.stack(argmaxes, axis=1)
    weights = resolve_weights(scheme, len(bank.layer_names))
    affinity, ood = fuse(m_matrix, weights)
    return [
        ScoreRecord(
            sample_index=i,
            per_layer_max=tuple(m_matrix[i]),
            per_layer_argmax_class=tuple(int(a) for a in arg_matrix[i]),
            affinity=float(affinity[i]),
            ood_score=float(ood[i]),
        )
        for i in range(manifest.num_samples)
    ]


def _fmt(x: float) -> str:
    return format(x, ".9g")


def write_score_csv(records: list[ScoreRecord], layer_names: list[str], path: str | Path) -> None:
    """Score CSV: sample_index,affinity,ood_score,m_<layer>...,argmax_<layer>..."""
    header = (
        ["sample_index", "affinity", "ood_score"]
        + [f"m_{name}" for name in layer_names]
        + [f"argmax_{name}" for name in layer_names]
    )
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for rec in records:
                writer.writerow(
                    [rec.sample_index, _fmt(rec.affinity), _fmt(rec.ood_score)]
                    + [_fmt(m) for m in rec.per_layer_max]
                    + [str(a) for a in rec.per_layer_argmax_class]
                )
    except OSError as exc:
        raise IoError(f"cannot write scores to {path}: {exc}") from exc


def write_plain_score_csv(scores: np.ndarray, path: str | Path) -> None:
    """Baseline CSV: sample_index,score."""
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sample_index", "score"])
            for i, s in enumerate(scores):
                writer.writerow([i, _fmt(float(s))])
    except OSError as exc:
        raise IoError(f"cannot write scores to {path}: {exc}") from exc


def read_score_column(path: str | Path, column: str) -> np.ndarray:
    """Read one numeric column from a score CSV; empty input is a DataError."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such score file: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise DataError(f"{path}: no column {column!r} (have {reader.fieldnames})")
        try:
            values = [float(row[column]) for row in reader]
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: non-numeric value in column {column!r}: {exc}") from exc
    if not values:
        raise DataError(f"{path}: no score rows")
    return np.asarray(values, dtype=np.float64)
