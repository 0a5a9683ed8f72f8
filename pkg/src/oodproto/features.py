"""Per-layer feature preparation: spatial mean pooling and L2 normalization.

Raw activation maps (N, C, H, W) are reduced to channel descriptors by
averaging over the spatial grid, then scaled to unit L2 norm. Accumulation
runs in float64; results are stored float32.

All-zero rows (dead samples after ReLU) are kept as exact zeros rather
than raising: downstream cosine similarity treats them as matching no
class. Each normalization records how many rows degenerated this way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_store import LayerEntry

ZERO_NORM_EPS = 1e-12


@dataclass(frozen=True)
class PooledBatch:
    """(N, C) float32 feature rows for one layer, optionally unit-normalized."""

    layer_name: str
    features: np.ndarray
    normalized: bool = False
    degenerate_count: int = 0


def global_avg_pool(raw: np.ndarray, layer_name: str = "") -> PooledBatch:
    """Average a (N, C, H, W) activation tensor over its spatial grid."""
    if raw.ndim != 4:
        raise ShapeError(f"expected 4-D activations, got shape {raw.shape}")
    n, c, h, w = raw.shape
    if h < 1 or w < 1:
        raise ShapeError(f"zero spatial extent in shape {raw.shape}")
    pooled = raw.astype(np.float64, copy=False).mean(axis=(2, 3))
    return PooledBatch(layer_name=layer_name, features=pooled.astype(np.float32), normalized=False)


def l2_normalize(batch: PooledBatch) -> PooledBatch:
    """Scale each row to unit L2 norm; rows with norm < 1e-12 stay zero."""
    if batch.normalized:
        raise ConfigError(f"layer {batch.layer_name!r}: batch is already normalized")
    feats = batch.features.astype(np.float64, copy=False)
    norms = np.sqrt(np.sum(feats * feats, axis=1))
    degenerate = norms < ZERO_NORM_EPS
    safe = np.where(degenerate, 1.0, norms)
    out = (feats / safe[:, None]).astype(np.float32)
    out[degenerate] = 0.0
    return PooledBatch(
        layer_name=batch.layer_name,
        features=out,
        normalized=True,
        degenerate_count=int(degenerate.sum()),
    )


def prepare_layer(entry: LayerEntry, tensor: np.ndarray) -> PooledBatch:
    """Turn one layer's stored tensor into normalized descriptors.

    raw4d tensors are pooled first; pooled2d tensors are normalized as-is.
    """
    if entry.kind == "raw4d":
        want = (tensor.shape[0], entry.channels, *entry.spatial) if tensor.ndim == 4 else None
        if tensor.ndim != 4 or tensor.shape != want:
            raise ShapeError(f"layer {entry.name!r}: raw4d tensor has shape {tensor.shape}, "
                             f"expected (N, {entry.channels}, {entry.spatial[0]}, {entry.spatial[1]})")
        return l2_normalize(global_avg_pool(tensor, layer_name=entry.name))
    if tensor.ndim != 2 or tensor.shape[1] != entry.channels:
        raise ShapeError(f"layer {entry.name!r}: pooled2d tensor has shape {tensor.shape}, "
                         f"expected (N, {entry.channels})")
    return l2_normalize(PooledBatch(layer_name=entry.name, features=tensor.astype(np.float32, copy=False)))
