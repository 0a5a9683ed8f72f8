"""Dense tensor and dataset-manifest I/O.

Tensors travel as NPY v1.0 files restricted to little-endian C-order
``<f4``/``<f8``/``<i8``. Fortran-order or big-endian files are rejected
outright rather than transposed or byte-swapped, so a loaded buffer is
always bit-exact with what was written.

A dataset split is described by a single JSON manifest listing the layer
files (raw 4-D activations or pooled 2-D features), optional labels and
logits. All paths are relative to the manifest's directory.
"""

from __future__ import annotations

import ast
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    FormatError,
    IoError,
    ManifestError,
    ShapeError,
    UnsupportedDtype,
)

_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCRS = {"<f4": np.float32, "<f8": np.float64, "<i8": np.int64}
_HEADER_ALIGN = 64


def _dtype_descr(dtype: np.dtype) -> str:
    for descr, np_type in _SUPPORTED_DESCRS.items():
        if dtype == np.dtype(np_type):
            return descr
    raise UnsupportedDtype(f"dtype {dtype} not in supported set {sorted(_SUPPORTED_DESCRS)}")


def _read_header(f) -> tuple[tuple[int, ...], np.dtype]:
    prefix = f.read(10)
    if len(prefix) < 10 or prefix[:6] != _MAGIC:
        raise FormatError("not an NPY file (bad magic)")
    major, minor = prefix[6], prefix[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"unsupported NPY version {major}.{minor}, expected 1.0")
    (header_len,) = struct.unpack("<H", prefix[8:10])
    header = f.read(header_len)
    if len(header) != header_len:
        raise FormatError("truncated NPY header")
    try:
        meta = ast.literal_eval(header.decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"unparseable NPY header: {exc}") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise FormatError("NPY header must declare exactly descr/fortran_order/shape")
    if meta["fortran_order"]:
        raise FormatError("Fortran-order NPY files are rejected, not transposed")
    descr = meta["descr"]
    if not isinstance(descr, str) or descr not in _SUPPORTED_DESCRS:
        raise UnsupportedDtype(f"dtype descr {descr!r} not in supported set {sorted(_SUPPORTED_DESCRS)}")
    shape = meta["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"invalid shape {shape!r} in NPY header")
    return shape, np.dtype(_SUPPORTED_DESCRS[descr])


def peek_tensor(path: str | Path) -> tuple[tuple[int, ...], np.dtype]:
    """Read only the header of an NPY file, returning (shape, dtype)."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such tensor file: {path}")
    with open(path, "rb") as f:
        return _read_header(f)


def load_tensor(path: str | Path, allow_nonfinite: bool = False) -> np.ndarray:
    """Load an NPY v1.0 file into a C-order array, bit-exact with the file.

    Non-finite values raise DataError unless ``allow_nonfinite`` is set.
    """
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such tensor file: {path}")
    with open(path, "rb") as f:
        shape, dtype = _read_header(f)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        buf = f.read()
    expected = count * dtype.itemsize
    if len(buf) != expected:
        raise FormatError(f"{path}: payload is {len(buf)} bytes, header implies {expected}")
    arr = np.frombuffer(buf, dtype=dtype, count=count).reshape(shape)
    if not allow_nonfinite and dtype.kind == "f" and not np.isfinite(arr).all():
        raise DataError(f"{path}: non-finite values present (pass allow_nonfinite to accept)")
    return arr.copy()  # writable, detached from the read buffer


def save_tensor(t: np.ndarray, path: str | Path) -> None:
    """Write an array as NPY v1.0, byte-identical to numpy's own writer."""
    t = np.asarray(t)
    descr = _dtype_descr(t.dtype)
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {t.shape!r}, }}"
    total = len(_MAGIC) + 4 + len(header) + 1
    pad = (-total) % _HEADER_ALIGN
    header_bytes = (header + " " * pad + "\n").encode("latin1")
    try:
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<BBH", 1, 0, len(header_bytes)))
            f.write(header_bytes)
            f.write(np.ascontiguousarray(t).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write tensor to {path}: {exc}") from exc


@dataclass(frozen=True)
class LayerEntry:
    """One tapped layer of a feature dump."""

    name: str
    file: str
    kind: str  # raw4d | pooled2d
    channels: int
    spatial: tuple[int, int] | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Validated description of a feature dump for one dataset split."""

    dataset_name: str
    split: str
    num_samples: int
    num_classes: int
    layers: tuple[LayerEntry, ...]
    base_dir: Path
    labels: np.ndarray | None = None
    logits_file: str | None = None
    sha256: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def layer_names(self) -> list[str]:
        return [e.name for e in self.layers]

    def layer(self, name: str) -> LayerEntry:
        for e in self.layers:
            if e.name == name:
                return e
        raise ManifestError(f"manifest has no layer named {name!r}")

    def load_layer(self, name: str) -> np.ndarray:
        return load_tensor(self.base_dir / self.layer(name).file)

    def load_logits(self) -> np.ndarray:
        if self.logits_file is None:
            raise ManifestError(f"manifest {self.dataset_name}/{self.split} declares no logits file")
        return load_tensor(self.base_dir / self.logits_file)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ManifestError(message)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and fully validate a manifest JSON file.

    Every declared file must exist and agree with the manifest on shapes;
    validation never yields a partially-loaded manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such manifest: {path}")
    raw = path.read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    _require(isinstance(doc, dict), f"{path}: manifest root must be an object")
    for key in ("dataset_name", "split", "num_samples", "num_classes", "layers"):
        _require(key in doc, f"{path}: missing required key {key!r}")

    n = doc["num_samples"]
    k = doc["num_classes"]
    _require(isinstance(n, int) and n >= 1, f"num_samples must be >= 1, got {n!r}")
    _require(isinstance(k, int) and k >= 0, f"num_classes must be >= 0, got {k!r}")
    _require(isinstance(doc["layers"], list) and doc["layers"], "layers must be a non-empty list")

    base = path.parent
    entries: list[LayerEntry] = []
    seen: set[str] = set()
    for item in doc["layers"]:
        _require(isinstance(item, dict), "each layer entry must be an object")
        for key in ("name", "file", "kind", "channels"):
            _require(key in item, f"layer entry missing key {key!r}")
        name, kind, channels = item["name"], item["kind"], item["channels"]
        _require(name not in seen, f"duplicate layer name {name!r}")
        seen.add(name)
        _require(kind in ("raw4d", "pooled2d"), f"layer {name!r}: unknown kind {kind!r}")
        _require(isinstance(channels, int) and channels >= 1, f"layer {name!r}: bad channels {channels!r}")
        spatial = item.get("spatial")
        if kind == "raw4d":
            _require(
                isinstance(spatial, list) and len(spatial) == 2
                and all(isinstance(d, int) and d >= 1 for d in spatial),
                f"layer {name!r}: raw4d requires spatial [H, W]",
            )
            spatial = (spatial[0], spatial[1])
        else:
            _require(spatial is None, f"layer {name!r}: pooled2d must not declare spatial")

        file_path = base / item["file"]
        _require(file_path.is_file(), f"layer {name!r}: missing file {file_path}")
        shape, _ = peek_tensor(file_path)
        want = (n, channels, *spatial) if kind == "raw4d" else (n, channels)
        if shape != want:
            raise ShapeError(f"layer {name!r}: file shape {shape} != expected {want}")
        entries.append(LayerEntry(name=name, file=item["file"], kind=kind, channels=channels, spatial=spatial))

    labels = None
    if doc.get("labels_file") is not None:
        labels_path = base / doc["labels_file"]
        _require(labels_path.is_file(), f"missing labels file {labels_path}")
        labels = load_tensor(labels_path)
        if labels.ndim != 1 or labels.shape[0] != n:
            raise ShapeError(f"labels shape {labels.shape} != ({n},)")
        _require(k >= 1, "labels present but num_classes is 0")
        if labels.size and (labels.min() < 0 or labels.max() > k - 1):
            raise DataError(f"labels must lie in [0, {k - 1}]")

    logits_file = doc.get("logits_file")
    if logits_file is not None:
        logits_path = base / logits_file
        _require(logits_path.is_file(), f"missing logits file {logits_path}")
        shape, _ = peek_tensor(logits_path)
        if len(shape) != 2 or shape[0] != n or (k >= 1 and shape[1] != k):
            raise ShapeError(f"logits shape {shape} inconsistent with N={n}, K={k}")

    known = {"dataset_name", "split", "num_samples", "num_classes", "layers", "labels_file", "logits_file"}
    extra = {key: val for key, val in doc.items() if key not in known}
    return DatasetManifest(
        dataset_name=doc["dataset_name"],
        split=doc["split"],
        num_samples=n,
        num_classes=k,
        layers=tuple(entries),
        base_dir=base,
        labels=labels,
        logits_file=logits_file,
        sha256=hashlib.sha256(raw).hexdigest(),
        extra=extra,
    )
