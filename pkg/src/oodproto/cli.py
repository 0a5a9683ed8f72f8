"""Command-line front end.

Subcommands wire the library into reproducible experiment runs that only
ever read/write the documented file formats (NPY tensors, manifest JSON,
score/report CSVs). Seeds are always explicit flags; nothing is derived
from time, so reruns are byte-identical. --threads parallelizes across
independent dataset evaluations only, and never changes any output byte.

Exit codes: 0 success, 2 config, 3 shape/format, 4 data, 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import energy, fit_mahalanobis, mahalanobis_score, max_logit, msp
from .errors import ConfigError, ManifestError, OodProtoError
from .features import global_avg_pool
from .metrics import append_report_row, evaluate
from .prototypes import CalibrationConfig, build_prototypes, load_bank, sample_calibration, save_bank
from .scoring import (
    NAMED_SCHEMES,
    WeightScheme,
    read_score_column,
    score_dataset,
    write_plain_score_csv,
    write_score_csv,
)
from .synth import SynthConfig, generate
from .tensor_store import DatasetManifest, load_manifest


def _orient(scores: np.ndarray, column: str) -> np.ndarray:
    # ood_score is higher-is-OOD; metrics want higher-is-ID
    return -scores if column == "ood_score" else scores


def _select_layers(manifest: DatasetManifest, spec: str) -> list[str]:
    names = manifest.layer_names
    if spec == "all":
        return names
    if spec == "last3":
        return names[-3:]
    requested = [tok.strip() for tok in spec.split(",") if tok.strip()]
    if not requested:
        raise ConfigError(f"empty --layers value {spec!r}")
    for name in requested:
        if name not in names:
            raise ManifestError(f"--layers names unknown layer {name!r}")
    return requested


def _penultimate_features(manifest: DatasetManifest) -> np.ndarray:
    """Pooled, unnormalized features of the deepest tapped layer."""
    entry = manifest.layers[-1]
    tensor = manifest.load_layer(entry.name)
    if entry.kind == "raw4d":
        return global_avg_pool(tensor, layer_name=entry.name).features
    return tensor


def cmd_build(args: argparse.Namespace) -> None:
    manifest = load_manifest(args.manifest)
    if manifest.labels is None:
        raise ManifestError("bank construction requires a labeled manifest")
    cfg = CalibrationConfig(alpha=args.alpha, seed=args.seed, min_per_class=args.min_per_class)
    indices = sample_calibration(manifest.labels, cfg, num_classes=manifest.num_classes)
    layers = _select_layers(manifest, args.layers)
    bank = build_prototypes(manifest, indices, layers=layers, cfg=cfg)
    save_bank(bank, args.out)
    counts = bank.class_counts[bank.layer_names[0]]
    print(f"bank written to {args.out} ({len(bank.layer_names)} layers, K={bank.num_classes})")
    for c, n_c in enumerate(counts):
        print(f"  class {c}: {n_c} calibration samples")


def cmd_score(args: argparse.Namespace) -> None:
    bank = load_bank(args.bank)
    manifest = load_manifest(args.manifest)
    records = score_dataset(manifest, bank, WeightScheme.parse(args.scheme))
    write_score_csv(records, bank.layer_names, args.out)
    print(f"scored {len(records)} samples -> {args.out}")


def cmd_eval(args: argparse.Namespace) -> None:
    id_scores = _orient(read_score_column(args.id_scores, args.column), args.column)
    ood_scores = _orient(read_score_column(args.ood_scores, args.column), args.column)
    report = evaluate(id_scores, ood_scores, tpr_target=args.tpr)
    id_name = args.id_name or Path(args.id_scores).stem
    ood_name = args.ood_name or Path(args.ood_scores).stem
    append_report_row(args.out, args.method_name, id_name, ood_name, report)
    print(
        f"{args.method_name}: AUROC {100 * report.auroc:.2f} "
        f"FPR@{int(args.tpr * 100)} {100 * report.fpr_at_95tpr:.2f} (tau={report.tau:.9g})"
    )


def _affinities(manifest: DatasetManifest, bank, scheme: WeightScheme) -> np.ndarray:
    return np.array([r.affinity for r in score_dataset(manifest, bank, scheme)])


def _mean_metrics(
    id_scores: np.ndarray,
    ood_manifests: list[DatasetManifest],
    bank,
    scheme: WeightScheme,
    threads: int,
) -> tuple[float, float]:
    def one(manifest: DatasetManifest) -> tuple[float, float]:
        report = evaluate(id_scores, _affinities(manifest, bank, scheme))
        return report.auroc, report.fpr_at_95tpr

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(one, ood_manifests))
    aurocs = [a for a, _ in results]
    fprs = [f for _, f in results]
    return float(np.mean(aurocs)), float(np.mean(fprs))


def cmd_ablate_alpha(args: argparse.Namespace) -> None:
    train = load_manifest(args.train_manifest)
    test = load_manifest(args.test_manifest)
    oods = [load_manifest(p) for p in args.ood_manifests]
    alphas = [float(tok) for tok in args.alphas.split(",") if tok.strip()]
    if not alphas:
        raise ConfigError("--alphas must list at least one value")
    scheme = WeightScheme()
    rows = []
    for alpha in alphas:
        cfg = CalibrationConfig(alpha=alpha, seed=args.seed)
        indices = sample_calibration(train.labels, cfg, num_classes=train.num_classes)
        bank = build_prototypes(train, indices, cfg=cfg)
        id_scores = _affinities(test, bank, scheme)
        auroc_mean, fpr_mean = _mean_metrics(id_scores, oods, bank, scheme, args.threads)
        rows.append((alpha, auroc_mean, fpr_mean))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["alpha", "auroc_mean", "fpr_mean"])
        for alpha, auroc_mean, fpr_mean in rows:
            writer.writerow([format(alpha, "g"), f"{auroc_mean:.6f}", f"{fpr_mean:.6f}"])
    print(f"alpha sweep ({len(rows)} rows) -> {args.out}")


def cmd_ablate_weights(args: argparse.Namespace) -> None:
    bank = load_bank(args.bank)
    test = load_manifest(args.test_manifest)
    oods = [load_manifest(p) for p in args.ood_manifests]
    schemes = [tok.strip() for tok in args.schemes.split(",") if tok.strip()]
    for name in schemes:
        if name not in NAMED_SCHEMES:
            raise ConfigError(f"weight ablation only runs the named schemes, got {name!r}")
    rows = []
    for name in schemes:
        scheme = WeightScheme(kind=name)
        id_scores = _affinities(test, bank, scheme)
        auroc_mean, fpr_mean = _mean_metrics(id_scores, oods, bank, scheme, args.threads)
        rows.append((name, auroc_mean, fpr_mean))
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["scheme", "auroc_mean", "fpr_mean"])
        for name, auroc_mean, fpr_mean in rows:
            writer.writerow([name, f"{auroc_mean:.6f}", f"{fpr_mean:.6f}"])
    print(f"weight ablation ({len(rows)} rows) -> {args.out}")


def cmd_baseline(args: argparse.Namespace) -> None:
    manifest = load_manifest(args.manifest)
    if args.method == "mahalanobis":
        if not args.train_manifest:
            raise ConfigError("mahalanobis requires --train-manifest for fitting")
        train = load_manifest(args.train_manifest)
        if train.labels is None:
            raise ManifestError("mahalanobis fitting requires a labeled train manifest")
        model = fit_mahalanobis(_penultimate_features(train), train.labels)
        scores = mahalanobis_score(model, _penultimate_features(manifest))
    else:
        logits = manifest.load_logits()
        if args.method == "msp":
            scores = msp(logits)
        elif args.method == "maxlogit":
            scores = max_logit(logits)
        else:
            scores = energy(logits, temperature=args.temperature)
    write_plain_score_csv(scores, args.out)
    print(f"{args.method}: {scores.shape[0]} scores -> {args.out}")


def cmd_synth(args: argparse.Namespace) -> None:
    cfg = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    train, test, ood = generate(cfg, args.out_dir)
    print(f"train manifest: {train}")
    print(f"test manifest:  {test}")
    print(f"ood manifest:   {ood}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodproto",
        description="Training-free OOD detection via multi-layer class prototypes",
    )
    parser.add_argument("--threads", type=int, default=1,
                        help="max parallel dataset evaluations (outputs are identical at any value)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build a prototype bank from a labeled ID manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--alpha", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-per-class", type=int, default=1)
    p.add_argument("--layers", default="all", help="'all', 'last3', or comma list of layer names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("score", help="score a manifest against a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", default="uniform",
                   help="uniform|shallow_heavy|middle_heavy|top_heavy or comma list of weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUROC / FPR@TPR for an ID/OOD score CSV pair")
    p.add_argument("--id-scores", required=True)
    p.add_argument("--ood-scores", required=True)
    p.add_argument("--method-name", required=True)
    p.add_argument("--column", default="affinity", choices=["affinity", "ood_score", "score"],
                   help="score column to read; ood_score is negated to higher-is-ID")
    p.add_argument("--tpr", type=float, default=0.95)
    p.add_argument("--id-name")
    p.add_argument("--ood-name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-alpha", help="sweep calibration fraction alpha")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--ood-manifests", nargs="+", required=True)
    p.add_argument("--alphas", required=True, help="comma list, e.g. 0.05,0.10,0.25,1.0")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate_alpha)

    p = sub.add_parser("ablate-weights", help="compare the named layer-weighting schemes")
    p.add_argument("--bank", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--ood-manifests", nargs="+", required=True)
    p.add_argument("--schemes", default=",".join(NAMED_SCHEMES))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate_weights)

    p = sub.add_parser("baseline", help="run a post-hoc baseline scorer")
    p.add_argument("--method", required=True, choices=["msp", "maxlogit", "energy", "mahalanobis"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-manifest", help="labeled manifest for mahalanobis fitting")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--config", help="JSON file with generator settings (defaults if omitted)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except OodProtoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
