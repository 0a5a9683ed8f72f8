"""Dump per-layer CNN activations and logits into the oodproto interchange format."""

from .backbones import REGISTRY, BackboneInfo
from .export import ExportError, ExportSpec, export
from .npy import npy_bytes, write_npy

__version__ = "0.1.0"
