"""CLI for dumping backbone activations into the interchange format."""

from __future__ import annotations

import argparse
import sys

from .backbones import REGISTRY
from .export import ExportError, ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activation-exporter",
        description="Export per-layer pooled CNN activations and logits",
    )
    parser.add_argument("--backbone", default="resnet18", choices=sorted(REGISTRY))
    parser.add_argument("--taps", help="comma list of module paths (default: last three stages)")
    parser.add_argument("--dataset", default="synthetic:10",
                        help="synthetic:<n>, cifar10:<root>, or imagefolder:<root>")
    parser.add_argument("--split", default="test")
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--weights", help="torchvision weights id; omit for seeded random init")
    parser.add_argument("--num-classes", type=int)
    parser.add_argument("--raw", action="store_true", help="emit raw4d activation maps, not pooled2d")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        backbone_name=args.backbone,
        layer_taps=tuple(t.strip() for t in args.taps.split(",")) if args.taps else (),
        dataset_path=args.dataset,
        split=args.split,
        batch_size=args.batch_size,
        device=args.device,
        weights_id=args.weights,
        num_classes=args.num_classes,
        raw=args.raw,
        seed=args.seed,
    )
    try:
        manifest = export(spec, args.out_dir)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    print(f"manifest: {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
