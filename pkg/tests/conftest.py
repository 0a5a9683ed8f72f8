import json
from pathlib import Path

import numpy as np
import pytest

from oodproto import save_tensor


def write_manifest(
    out_dir: Path,
    layers: dict[str, np.ndarray],
    labels: np.ndarray | None = None,
    logits: np.ndarray | None = None,
    num_classes: int | None = None,
    dataset_name: str = "toy",
    split: str = "test",
) -> Path:
    """Materialize arrays as NPY files plus a manifest JSON; returns its path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    n = None
    for name, arr in layers.items():
        n = arr.shape[0] if n is None else n
        fname = f"{split}_{name}.npy"
        save_tensor(arr, out_dir / fname)
        if arr.ndim == 4:
            entries.append(
                {"name": name, "file": fname, "kind": "raw4d",
                 "channels": arr.shape[1], "spatial": [arr.shape[2], arr.shape[3]]}
            )
        else:
            entries.append({"name": name, "file": fname, "kind": "pooled2d", "channels": arr.shape[1]})
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels is not None else 0
    doc = {
        "dataset_name": dataset_name,
        "split": split,
        "num_samples": int(n),
        "num_classes": num_classes,
        "layers": entries,
    }
    if labels is not None:
        save_tensor(labels.astype(np.int64), out_dir / f"{split}_labels.npy")
        doc["labels_file"] = f"{split}_labels.npy"
    if logits is not None:
        save_tensor(logits, out_dir / f"{split}_logits.npy")
        doc["logits_file"] = f"{split}_logits.npy"
    path = out_dir / f"{split}.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


@pytest.fixture
def manifest_builder(tmp_path):
    def build(layers, labels=None, logits=None, num_classes=None, split="test", subdir="data"):
        return write_manifest(
            tmp_path / subdir, layers, labels=labels, logits=logits,
            num_classes=num_classes, split=split,
        )

    return build
