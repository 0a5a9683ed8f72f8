"""Forward-hook activation export into the tensor/manifest interchange format.

The backbone runs in eval mode under no_grad, so exporting the same data
twice produces identical bytes. Each tap is captured at the stage output
(before global pooling); by default a spatial mean reduces it to a
pooled2d row per sample, and --raw keeps the full 4-D map instead.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbones import REGISTRY, BackboneInfo
from .npy import write_npy


class ExportError(Exception):
    """Tap resolution or activation-shape failure during export."""


@dataclass(frozen=True)
class ExportSpec:
    backbone_name: str = "resnet18"
    layer_taps: tuple[str, ...] = ()  # empty = backbone default (last three stages)
    dataset_path: str = "synthetic:10"
    split: str = "test"
    batch_size: int = 64
    device: str = "cpu"
    weights_id: str | None = None  # None = seeded random init
    num_classes: int | None = None
    raw: bool = False
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def backbone(self) -> BackboneInfo:
        if self.backbone_name not in REGISTRY:
            raise ExportError(
                f"unknown backbone {self.backbone_name!r}; known: {sorted(REGISTRY)}"
            )
        return REGISTRY[self.backbone_name]

    def taps(self) -> tuple[str, ...]:
        return self.layer_taps or self.backbone().default_taps


def _build_model(spec: ExportSpec, info: BackboneInfo) -> torch.nn.Module:
    kwargs = {}
    if spec.num_classes is not None:
        kwargs["num_classes"] = spec.num_classes
    if spec.weights_id:
        model = info.factory(weights=spec.weights_id, **kwargs)
    else:
        torch.manual_seed(spec.seed)
        model = info.factory(weights=None, **kwargs)
    model.eval()
    return model.to(spec.device)


def _load_dataset(spec: ExportSpec, info: BackboneInfo):
    """Yield (images, labels) batches plus the total sample count."""
    path = spec.dataset_path
    if path.startswith("synthetic:"):
        n = int(path.split(":", 1)[1])
        k = spec.num_classes or 10
        gen = torch.Generator().manual_seed(spec.seed)
        images = torch.rand((n, 3, info.input_size, info.input_size), generator=gen)
        labels = torch.arange(n, dtype=torch.int64) % k
        return _batched(images, labels, spec.batch_size), n

    from torchvision import transforms

    tfm = transforms.Compose(
        [
            transforms.Resize((info.input_size, info.input_size)),
            transforms.ToTensor(),
            transforms.Normalize(info.normalize_mean, info.normalize_std),
        ]
    )
    if path.startswith("cifar10:"):
        from torchvision.datasets import CIFAR10

        ds = CIFAR10(path.split(":", 1)[1], train=spec.split == "train",
                     transform=tfm, download=False)
    elif path.startswith("imagefolder:"):
        from torchvision.datasets import ImageFolder

        ds = ImageFolder(path.split(":", 1)[1], transform=tfm)
    else:
        raise ExportError(
            f"dataset spec {path!r} must start with synthetic:, cifar10: or imagefolder:"
        )
    loader = torch.utils.data.DataLoader(ds, batch_size=spec.batch_size, shuffle=False)
    return iter(loader), len(ds)


def _batched(images: torch.Tensor, labels: torch.Tensor, batch_size: int):
    for i in range(0, images.shape[0], batch_size):
        yield images[i : i + batch_size], labels[i : i + batch_size]


def export(spec: ExportSpec, out_dir: str | Path) -> Path:
    """Run the backbone over the dataset and write NPYs plus a manifest.

    Returns the manifest path. The manifest is written last, after all
    tensors, via temp-rename, so a readable manifest implies a complete dump.
    """
    info = spec.backbone()
    model = _build_model(spec, info)
    taps = spec.taps()

    captured: dict[str, torch.Tensor] = {}
    hooks = []
    try:
        for tap in taps:
            try:
                module = model.get_submodule(tap)
            except AttributeError as exc:
                raise ExportError(f"tap {tap!r} not resolvable on {spec.backbone_name}") from exc

            def make_hook(name):
                def hook(_mod, _inp, out):
                    captured[name] = out

                return hook

            hooks.append(module.register_forward_hook(make_hook(tap)))

        batches, total = _load_dataset(spec, info)
        feats: dict[str, list[np.ndarray]] = {tap: [] for tap in taps}
        logits_parts: list[np.ndarray] = []
        labels_parts: list[np.ndarray] = []
        shapes: dict[str, tuple] = {}
        with torch.no_grad():
            for images, labels in batches:
                captured.clear()
                out = model(images.to(spec.device))
                logits_parts.append(out.cpu().numpy().astype(np.float32))
                labels_parts.append(labels.cpu().numpy().astype(np.int64))
                for tap in taps:
                    act = captured.get(tap)
                    if act is None:
                        raise ExportError(f"tap {tap!r} produced no activation")
                    if act.ndim != 4:
                        raise ExportError(f"tap {tap!r} output is {act.ndim}-D, expected 4-D")
                    trailing = tuple(act.shape[1:])
                    if shapes.setdefault(tap, trailing) != trailing:
                        raise ExportError(
                            f"tap {tap!r}: activation shape drifted from "
                            f"{shapes[tap]} to {trailing} across batches"
                        )
                    if spec.raw:
                        feats[tap].append(act.cpu().numpy().astype(np.float32))
                    else:
                        pooled = act.mean(dim=(2, 3))
                        feats[tap].append(pooled.cpu().numpy().astype(np.float32))
    finally:
        for h in hooks:
            h.remove()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = spec.split
    layers = []
    for tap in taps:
        arr = np.concatenate(feats[tap], axis=0)
        safe = tap.replace(".", "_")
        fname = f"{prefix}_{safe}.npy"
        write_npy(arr, out_dir / fname)
        entry = {"name": safe, "file": fname, "channels": int(arr.shape[1])}
        if spec.raw:
            entry["kind"] = "raw4d"
            entry["spatial"] = [int(arr.shape[2]), int(arr.shape[3])]
        else:
            entry["kind"] = "pooled2d"
        layers.append(entry)

    logits = np.concatenate(logits_parts, axis=0)
    labels = np.concatenate(labels_parts, axis=0)
    write_npy(logits, out_dir / f"{prefix}_logits.npy")
    write_npy(labels, out_dir / f"{prefix}_labels.npy")

    manifest = {
        "dataset_name": spec.dataset_path.split(":", 1)[0],
        "split": spec.split,
        "num_samples": int(total),
        "num_classes": int(logits.shape[1]),
        "layers": layers,
        "labels_file": f"{prefix}_labels.npy",
        "logits_file": f"{prefix}_logits.npy",
        "provenance": {
            "backbone": spec.backbone_name,
            "weights_id": spec.weights_id or f"random-init(seed={spec.seed})",
            "preprocessing": {
                "input_size": info.input_size,
                "normalize_mean": list(info.normalize_mean),
                "normalize_std": list(info.normalize_std),
            },
        },
    }
    manifest_path = out_dir / f"{prefix}.json"
    tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2) + "\n")
    os.replace(tmp, manifest_path)
    return manifest_path
