"""Acceptance gate: one test per release criterion, each printing a
PASS/FAIL line (visible with ``pytest tests/test_acceptance.py -v -s``)."""

import csv
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from oodproto import (
    CalibrationConfig,
    SynthConfig,
    WeightScheme,
    auroc,
    build_prototypes,
    energy,
    fit_mahalanobis,
    fpr_at_tpr,
    fuse,
    generate,
    load_manifest,
    mahalanobis_score,
    max_logit,
    msp,
    sample_calibration,
    score_dataset,
)
from oodproto.cli import main as cli_main

from conftest import write_manifest
import oracle


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def _random_instance(rng, builder_dir, tag):
    """One random desk-scale dataset: mixed raw4d/pooled2d layers on disk."""
    n_train = int(rng.integers(8, 21))
    n_test = int(rng.integers(4, 21))
    k = int(rng.integers(1, 5))
    num_layers = int(rng.integers(1, 4))
    train_layers, test_layers = {}, {}
    for l in range(num_layers):
        c = int(rng.integers(2, 9))
        if rng.random() < 0.5:
            h, w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            train_layers[f"l{l}"] = rng.standard_normal((n_train, c, h, w)).astype(np.float32)
            test_layers[f"l{l}"] = rng.standard_normal((n_test, c, h, w)).astype(np.float32)
        else:
            train_layers[f"l{l}"] = rng.standard_normal((n_train, c)).astype(np.float32)
            test_layers[f"l{l}"] = rng.standard_normal((n_test, c)).astype(np.float32)
    labels = np.concatenate([np.arange(k), rng.integers(0, k, size=n_train - k)]).astype(np.int64)
    train = load_manifest(
        write_manifest(builder_dir / f"{tag}_tr", train_layers, labels=labels,
                       num_classes=k, split="train")
    )
    test = load_manifest(
        write_manifest(builder_dir / f"{tag}_te", test_layers, num_classes=0, split="test")
    )
    return train, test


def test_algorithm_oracle_equivalence(tmp_path):
    with criterion("Algorithm-1 oracle equivalence (100 instances, <=1e-6, <5s)"):
        rng = np.random.default_rng(2024)
        start = time.monotonic()
        for trial in range(100):
            train, test, = _random_instance(rng, tmp_path, f"i{trial}")
            bank = build_prototypes(train, np.arange(train.num_samples))
            num_layers = len(bank.layer_names)
            if rng.random() < 0.5:
                weights = [1.0] * num_layers
                scheme = WeightScheme()
            else:
                weights = [float(w) for w in rng.uniform(0.5, 3.0, size=num_layers)]
                scheme = WeightScheme("custom", custom_weights=tuple(weights))
            records = score_dataset(test, bank, scheme)
            layers_nested = [test.load_layer(name).tolist() for name in bank.layer_names]
            protos = [bank.prototypes[name].tolist() for name in bank.layer_names]
            m_o, arg_o, aff_o, ood_o = oracle.score_pipeline(layers_nested, protos, weights)
            for i, rec in enumerate(records):
                assert abs(rec.affinity - aff_o[i]) <= 1e-6
                assert abs(rec.ood_score - ood_o[i]) <= 1e-6
                for l in range(num_layers):
                    assert abs(rec.per_layer_max[l] - m_o[i][l]) <= 1e-6
        elapsed = time.monotonic() - start
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


def test_auroc_oracle_exact():
    with criterion("AUROC equals O(n^2) pairwise oracle exactly (50 instances, <5s)"):
        rng = np.random.default_rng(77)
        start = time.monotonic()
        for _ in range(50):
            n_id = int(rng.integers(1, 201))
            n_ood = int(rng.integers(1, 201))
            id_scores = np.round(rng.standard_normal(n_id), 1)  # coarse grid forces ties
            ood_scores = np.round(rng.standard_normal(n_ood), 1)
            assert auroc(id_scores, ood_scores) == oracle.pairwise_auroc(
                id_scores.tolist(), ood_scores.tolist()
            )
        elapsed = time.monotonic() - start
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


def test_fpr_order_statistics_fixture():
    with criterion("FPR@95 order-statistics fixture reproduces hand-derived (tau, fpr)"):
        # 100 distinct ID scores 0.01..1.00: ceil(0.95*100)=95 kept, so tau is
        # the 6th smallest value, 0.06. OOD: 12 of 60 values sit >= 0.06.
        id_scores = np.arange(1, 101, dtype=np.float64) / 100.0
        ood_scores = np.concatenate([np.full(12, 0.5), np.full(48, 0.0 + 0.001)])
        fpr, tau = fpr_at_tpr(id_scores, ood_scores, 0.95)
        assert tau == 0.06
        assert fpr == 12 / 60
        assert np.count_nonzero(id_scores >= tau) / 100 == 0.95


def test_fusion_algebra():
    with criterion("Fusion algebra: scale invariance, uniform mean, L=1 reduction, monotone"):
        rng = np.random.default_rng(5)
        m = rng.uniform(0.0, 1.0, size=(200, 3))
        w = np.array([0.7, 1.3, 2.1])
        a1, _ = fuse(m, w)
        for scale in (1e-6, 3.0, 1e6):
            a2, _ = fuse(m, scale * w)
            assert np.max(np.abs(a1 - a2)) <= 1e-12
        a_uni, _ = fuse(m, np.full(3, 42.0))
        assert np.max(np.abs(a_uni - m.mean(axis=1))) <= 1e-12
        single = rng.uniform(0, 1, size=(50, 1))
        aff, ood = fuse(single, np.array([1.0]))
        assert np.array_equal(aff, single[:, 0])
        assert np.array_equal(ood, 1.0 - single[:, 0])
        base = np.array([[0.4, 0.5, 0.6]])
        _, ood0 = fuse(base, w)
        for l in range(3):
            bump = base.copy()
            bump[0, l] += 1e-3
            _, ood1 = fuse(bump, w)
            assert ood1[0] < ood0[0]


def test_prototype_invariants(tmp_path):
    with criterion("Prototype invariants: unit norm, permutation invariance, 1-sample identity"):
        rng = np.random.default_rng(6)
        n, k = 40, 4
        labels = (np.arange(n) % k).astype(np.int64)
        layers = {
            "a": rng.standard_normal((n, 16)).astype(np.float32),
            "b": rng.standard_normal((n, 8, 2, 2)).astype(np.float32),
        }
        manifest = load_manifest(
            write_manifest(tmp_path / "m", layers, labels=labels, num_classes=k, split="train")
        )
        idx = np.arange(n)
        bank = build_prototypes(manifest, idx)
        for name in bank.layer_names:
            norms = np.linalg.norm(bank.prototypes[name].astype(np.float64), axis=1)
            assert np.all(np.abs(norms - 1.0) <= 1e-5)
        bank_p = build_prototypes(manifest, rng.permutation(idx))
        for name in bank.layer_names:
            assert np.max(np.abs(bank.prototypes[name] - bank_p.prototypes[name])) <= 1e-6

        # one sample per class: prototype is that sample's normalized feature
        one = load_manifest(
            write_manifest(
                tmp_path / "one",
                {"a": rng.standard_normal((k, 16)).astype(np.float32)},
                labels=np.arange(k, dtype=np.int64), num_classes=k, split="train",
            )
        )
        single_bank = build_prototypes(one, np.arange(k))
        from oodproto import prepare_layer

        feats = prepare_layer(one.layers[0], one.load_layer("a")).features
        for c in range(k):
            p = single_bank.prototypes["a"][c].astype(np.float64)
            z = feats[c].astype(np.float64)
            assert np.max(np.abs(p - z)) <= 1e-7
            assert np.dot(p, z) / (np.linalg.norm(p) * np.linalg.norm(z)) >= 1.0 - 1e-12


def _fused_auroc(out_dir, kappa, seed=42, dims=(64, 64, 64), alpha=1.0):
    cfg = SynthConfig(num_classes=10, dims_per_layer=dims, n_id_train=2000,
                      n_id_test=2000, n_ood=2000, kappa=kappa, seed=seed)
    train_p, test_p, ood_p = generate(cfg, out_dir)
    train, test, ood = map(load_manifest, (train_p, test_p, ood_p))
    cal = CalibrationConfig(alpha=alpha, seed=0)
    idx = sample_calibration(train.labels, cal, num_classes=train.num_classes)
    bank = build_prototypes(train, idx, cfg=cal)
    id_aff = np.array([r.affinity for r in score_dataset(test, bank)])
    ood_aff = np.array([r.affinity for r in score_dataset(ood, bank)])
    return auroc(id_aff, ood_aff), train, test, ood


def test_synthetic_separation_benchmark(tmp_path):
    with criterion("Synthetic benchmark: AUROC>=0.99 at kappa=50, null in [0.45,0.55], "
                   "kappa ladder monotone (<30s)"):
        start = time.monotonic()
        sep_auroc, *_ = _fused_auroc(tmp_path / "sep", kappa=50.0)
        assert sep_auroc >= 0.99, f"separated AUROC {sep_auroc:.4f}"
        null_auroc, *_ = _fused_auroc(tmp_path / "null", kappa=0.0)
        assert 0.45 <= null_auroc <= 0.55, f"null AUROC {null_auroc:.4f}"
        ladder = [null_auroc]
        for kappa in (5.0, 500.0):
            val, *_ = _fused_auroc(tmp_path / f"k{int(kappa)}", kappa=kappa)
            ladder.append(val)
        ladder.insert(2, sep_auroc)  # order: 0, 5, 50, 500
        for lo, hi in zip(ladder, ladder[1:]):
            assert hi >= lo - 0.01, f"ladder not monotone: {ladder}"
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"took {elapsed:.2f}s"


def test_multilayer_beats_single_layer(tmp_path):
    with criterion("Multi-layer fusion >= best single layer - 0.01 at kappa=10"):
        _, train, test, ood = _fused_auroc(tmp_path / "mid", kappa=10.0)
        cal = CalibrationConfig(alpha=1.0, seed=0)
        idx = sample_calibration(train.labels, cal, num_classes=train.num_classes)
        fused_bank = build_prototypes(train, idx, cfg=cal)
        id_aff = np.array([r.affinity for r in score_dataset(test, fused_bank)])
        ood_aff = np.array([r.affinity for r in score_dataset(ood, fused_bank)])
        fused = auroc(id_aff, ood_aff)
        singles = []
        for name in train.layer_names:
            bank = build_prototypes(train, idx, layers=[name], cfg=cal)
            one_id = np.array([r.affinity for r in score_dataset(test, bank)])
            one_ood = np.array([r.affinity for r in score_dataset(ood, bank)])
            singles.append(auroc(one_id, one_ood))
        assert fused >= max(singles) - 0.01, f"fused {fused:.4f} vs singles {singles}"


def test_baseline_sanity():
    with criterion("Baselines: MSP shift-invariant, energy>=maxlogit, "
                   "Mahalanobis oracle<=1e-8 and AUROC>=0.95"):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((300, 10)) * 4
        assert np.max(np.abs(msp(logits + 100.0) - msp(logits))) <= 1e-9
        assert np.all(energy(logits) >= max_logit(logits))

        k, c, n_per = 4, 8, 150
        means = 4.0 * rng.standard_normal((k, c))
        feats = np.concatenate([means[i] + rng.standard_normal((n_per, c)) for i in range(k)])
        labels = np.repeat(np.arange(k), n_per).astype(np.int64)
        model = fit_mahalanobis(feats, labels)
        queries = rng.standard_normal((8, c))
        got = mahalanobis_score(model, queries)
        expected = oracle.mahalanobis_quads(
            queries.tolist(), model.class_means.tolist(), model.shared_precision.tolist()
        )
        assert np.max(np.abs(got - np.asarray(expected))) <= 1e-8

        id_test = np.concatenate([means[i] + rng.standard_normal((80, c)) for i in range(k)])
        ood_test = 6.0 * rng.standard_normal((320, c))
        maha_auroc = auroc(mahalanobis_score(model, id_test), mahalanobis_score(model, ood_test))
        assert maha_auroc >= 0.95, f"Mahalanobis AUROC {maha_auroc:.4f}"


SUITE_CFG = (
    '{"num_classes": 4, "dims_per_layer": [16, 16, 16], "n_id_train": 200, '
    '"n_id_test": 120, "n_ood": 120, "kappa": 30.0, "seed": 21}'
)


def _run_cli_suite(work: Path, threads: int) -> None:
    def run(*argv):
        assert cli_main([str(a) for a in argv]) == 0

    work.mkdir(parents=True, exist_ok=True)
    cfg = work / "cfg.json"
    cfg.write_text(SUITE_CFG)
    run("synth", "--config", cfg, "--out-dir", work / "d")
    run("build", "--manifest", work / "d" / "train.json", "--alpha", "0.5",
        "--seed", "3", "--out", work / "bank")
    run("--threads", threads, "score", "--bank", work / "bank",
        "--manifest", work / "d" / "test_id.json", "--out", work / "id.csv")
    run("--threads", threads, "score", "--bank", work / "bank",
        "--manifest", work / "d" / "ood.json", "--out", work / "ood.csv")
    run("eval", "--id-scores", work / "id.csv", "--ood-scores", work / "ood.csv",
        "--method-name", "fusion", "--id-name", "synth", "--ood-name", "noise",
        "--out", work / "report.csv")
    run("--threads", threads, "ablate-alpha",
        "--train-manifest", work / "d" / "train.json",
        "--test-manifest", work / "d" / "test_id.json",
        "--ood-manifests", work / "d" / "ood.json",
        "--alphas", "0.25,1.0", "--seed", "5", "--out", work / "alpha.csv")
    run("--threads", threads, "ablate-weights", "--bank", work / "bank",
        "--test-manifest", work / "d" / "test_id.json",
        "--ood-manifests", work / "d" / "ood.json", "--out", work / "weights.csv")
    run("baseline", "--method", "mahalanobis", "--manifest", work / "d" / "test_id.json",
        "--train-manifest", work / "d" / "train.json", "--out", work / "maha_id.csv")
    run("baseline", "--method", "mahalanobis", "--manifest", work / "d" / "ood.json",
        "--train-manifest", work / "d" / "train.json", "--out", work / "maha_ood.csv")
    run("eval", "--id-scores", work / "maha_id.csv", "--ood-scores", work / "maha_ood.csv",
        "--method-name", "mahalanobis", "--column", "score", "--id-name", "synth",
        "--ood-name", "noise", "--out", work / "report.csv")

    # logit-based baselines on a deterministic logits manifest
    rng = np.random.default_rng(99)
    n, k = 50, 4
    write_manifest(
        work / "lg", {"feat": rng.standard_normal((n, 6)).astype(np.float32)},
        logits=rng.standard_normal((n, k)).astype(np.float32), num_classes=k, split="test",
    )
    for method in ("msp", "maxlogit", "energy"):
        run("baseline", "--method", method, "--manifest", work / "lg" / "test.json",
            "--out", work / f"{method}.csv")


def test_cli_determinism(tmp_path):
    with criterion("Every CLI command byte-identical across runs and --threads values"):
        _run_cli_suite(tmp_path / "a", threads=1)
        _run_cli_suite(tmp_path / "b", threads=4)
        compared = 0
        for f_a in sorted((tmp_path / "a").rglob("*")):
            if not f_a.is_file():
                continue
            f_b = tmp_path / "b" / f_a.relative_to(tmp_path / "a")
            assert f_b.is_file(), f"missing {f_b}"
            assert f_a.read_bytes() == f_b.read_bytes(), f"differs: {f_a.name}"
            compared += 1
        assert compared > 20
