"""Synthetic multi-layer feature datasets with known class geometry.

Each layer gets K random unit mean directions; an ID sample of class c is
the renormalized sum of its class direction and Gaussian noise of scale
sigma = 1/sqrt(kappa). kappa = 0 degenerates to pure noise (no class
signal at all), which makes the ID and random-direction OOD distributions
identical - the null case for metric sanity checks. Layers are sampled
independently. Everything is determined by the seed, byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoError
from .tensor_store import save_tensor

OOD_MODES = ("random_directions", "shifted_clusters")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 10
    dims_per_layer: tuple[int, ...] = (64, 64, 64)
    n_id_train: int = 2000
    n_id_test: int = 2000
    n_ood: int = 2000
    kappa: float = 50.0
    ood_mode: str = "random_directions"
    seed: int = 42

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if not self.dims_per_layer or any(c < 2 for c in self.dims_per_layer):
            raise ConfigError("every layer dimension must be >= 2")
        for name, n in (("n_id_train", self.n_id_train), ("n_id_test", self.n_id_test)):
            if n < self.num_classes:
                raise ConfigError(f"{name}={n} must be >= num_classes={self.num_classes}")
        if self.n_ood < 1:
            raise ConfigError(f"n_ood must be >= 1, got {self.n_ood}")
        if self.kappa < 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if self.ood_mode not in OOD_MODES:
            raise ConfigError(f"ood_mode must be one of {OOD_MODES}, got {self.ood_mode!r}")

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoError(f"cannot read synth config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid synth config JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("synth config must be a JSON object")
        known = {f.name for f in _config_fields()}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        if "dims_per_layer" in doc:
            doc["dims_per_layer"] = tuple(doc["dims_per_layer"])
        return cls(**doc)


def _config_fields():
    from dataclasses import fields

    return fields(SynthConfig)


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.sum(rows * rows, axis=1, keepdims=True))
    return rows / norms


def _draw_clustered(rng: np.random.Generator, means: np.ndarray, labels: np.ndarray, sigma: float) -> np.ndarray:
    noise = rng.standard_normal((labels.shape[0], means.shape[1]))
    if sigma is None:  # pure-noise regime: class signal fully drowned out
        return _unit_rows(noise)
    return _unit_rows(means[labels] + sigma * noise)


def _balanced_labels(n: int, k: int) -> np.ndarray:
    return (np.arange(n, dtype=np.int64) % k).astype(np.int64)


def _write_split(
    out_dir: Path,
    split: str,
    per_layer: list[np.ndarray],
    dims: tuple[int, ...],
    num_classes: int,
    labels: np.ndarray | None,
) -> Path:
    layers = []
    for idx, feats in enumerate(per_layer):
        fname = f"{split}_layer{idx}.npy"
        save_tensor(feats.astype(np.float32), out_dir / fname)
        layers.append({"name": f"layer{idx}", "file": fname, "kind": "pooled2d", "channels": dims[idx]})
    doc = {
        "dataset_name": "synth",
        "split": split,
        "num_samples": int(per_layer[0].shape[0]),
        "num_classes": num_classes,
        "layers": layers,
    }
    if labels is not None:
        fname = f"{split}_labels.npy"
        save_tensor(labels, out_dir / fname)
        doc["labels_file"] = fname
    manifest_path = out_dir / f"{split}.json"
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest_path


def generate(cfg: SynthConfig, out_dir: str | Path) -> tuple[Path, Path, Path]:
    """Write train / test-ID / OOD splits and return their manifest paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir}: {exc}") from exc

    rng = np.random.default_rng(cfg.seed)
    sigma = None if cfg.kappa == 0 else 1.0 / math.sqrt(cfg.kappa)
    k = cfg.num_classes

    train_labels = _balanced_labels(cfg.n_id_train, k)
    test_labels = _balanced_labels(cfg.n_id_test, k)
    ood_labels = _balanced_labels(cfg.n_ood, k)

    train_feats, test_feats, ood_feats = [], [], []
    for dim in cfg.dims_per_layer:
        means = _unit_rows(rng.standard_normal((k, dim)))
        train_feats.append(_draw_clustered(rng, means, train_labels, sigma))
        test_feats.append(_draw_clustered(rng, means, test_labels, sigma))
        if cfg.ood_mode == "random_directions":
            ood_feats.append(_unit_rows(rng.standard_normal((cfg.n_ood, dim))))
        else:
            shifted = _unit_rows(rng.standard_normal((k, dim)))
            ood_feats.append(_draw_clustered(rng, shifted, ood_labels, sigma))

    dims = cfg.dims_per_layer
    train = _write_split(out_dir, "train", train_feats, dims, k, train_labels)
    test = _write_split(out_dir, "test_id", test_feats, dims, k, test_labels)
    ood = _write_split(out_dir, "ood", ood_feats, dims, 0, None)
    return train, test, ood


def expected_separation(cfg: SynthConfig, draws: int = 10_000) -> float:
    """Monte Carlo estimate of the mean cosine between a noisy ID sample and
    its true class direction, averaged over layers. Anchors generate()."""
    if cfg.kappa <= 0:
        raise ConfigError("expected_separation requires kappa > 0")
    sigma = 1.0 / math.sqrt(cfg.kappa)
    if sigma == 0.0:
        return 1.0
    rng = np.random.default_rng(cfg.seed)
    per_layer = []
    for dim in cfg.dims_per_layer:
        mean = np.zeros(dim)
        mean[0] = 1.0
        samples = _unit_rows(mean + sigma * rng.standard_normal((draws, dim)))
        per_layer.append(samples[:, 0].mean())
    return float(np.mean(per_layer))
