"""Post-hoc baseline scorers: MSP, MaxLogit, Energy, Mahalanobis.

All scorers are oriented so that higher score = more ID. The logit-based
scorers subtract the row max before exponentiating, so arbitrarily large
logits stay finite. Mahalanobis uses penultimate pooled (unnormalized)
features with a single shared within-class covariance, shrunk by a
trace-scaled ridge so the precision always exists at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, EmptyClassError, ShapeError, SingularCovariance


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (N, K), got {logits.shape}")
    if not np.isfinite(logits).all():
        raise DataError("non-finite logits")
    return logits


def msp(logits: np.ndarray) -> np.ndarray:
    """Maximum softmax probability per row."""
    logits = _check_logits(logits)
    if logits.shape[1] < 2:
        raise ShapeError("MSP needs at least 2 classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp.max(axis=1) / exp.sum(axis=1)


def max_logit(logits: np.ndarray) -> np.ndarray:
    """Largest raw logit per row."""
    return _check_logits(logits).max(axis=1)


def energy(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature-scaled log-sum-exp of the logits (negative free energy)."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    logits = _check_logits(logits) / temperature
    m = logits.max(axis=1)
    return temperature * (m + np.log(np.exp(logits - m[:, None]).sum(axis=1)))


@dataclass(frozen=True)
class MahalanobisModel:
    """Class means plus shared shrunk-covariance precision, both float64."""

    class_means: np.ndarray
    shared_precision: np.ndarray
    shrinkage_lambda: float


def fit_mahalanobis(features: np.ndarray, labels: np.ndarray) -> MahalanobisModel:
    """Fit class means and a pooled within-class covariance with ridge shrinkage.

    Shrinkage: cov + lambda * I with lambda = 1e-3 * trace(cov) / C, then
    the precision is taken via Cholesky (failure raises SingularCovariance).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError(f"features {features.shape} inconsistent with labels {labels.shape}")
    n, c = features.shape
    k = int(labels.max()) + 1
    if n <= k:
        raise ShapeError(f"need more samples ({n}) than classes ({k})")

    means = np.empty((k, c), dtype=np.float64)
    centered = np.empty_like(features)
    for cls in range(k):
        mask = labels == cls
        if not mask.any():
            raise EmptyClassError(f"class {cls} has no samples")
        means[cls] = features[mask].mean(axis=0)
        centered[mask] = features[mask] - means[cls]

    cov = centered.T @ centered / (n - k)
    lam = 1e-3 * np.trace(cov) / c
    shrunk = cov + lam * np.eye(c)
    try:
        chol = np.linalg.cholesky(shrunk)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"covariance not positive definite after shrinkage: {exc}") from exc
    inv_chol = np.linalg.inv(chol)
    precision = inv_chol.T @ inv_chol
    precision = 0.5 * (precision + precision.T)
    return MahalanobisModel(class_means=means, shared_precision=precision, shrinkage_lambda=float(lam))


def mahalanobis_score(model: MahalanobisModel, features: np.ndarray) -> np.ndarray:
    """Negated squared Mahalanobis distance to the nearest class mean (<= 0)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.class_means.shape[1]:
        raise ShapeError(
            f"features width {features.shape} != model width {model.class_means.shape[1]}"
        )
    best = np.full(features.shape[0], np.inf)
    for mean in model.class_means:
        diff = features - mean
        quad = np.einsum("nc,cd,nd->n", diff, model.shared_precision, diff)
        np.minimum(best, quad, out=best)
    return -np.maximum(best, 0.0)
