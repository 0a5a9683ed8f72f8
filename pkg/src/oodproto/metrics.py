"""ROC metrics for ID/OOD score sets.

All inputs are oriented higher = more ID, with ID as the positive class.
AUROC uses the rank-sum (Mann-Whitney) form with midrank tie handling,
which equals the pairwise wins + half-ties definition. The FPR threshold
is always an observed ID score value, never interpolated, so the reported
operating point actually exists on the step-function ROC.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, IoError


def _check_scores(scores: np.ndarray, side: str) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ConfigError(f"{side} scores must be a non-empty 1-D array")
    if not np.isfinite(scores).all():
        raise DataError(f"non-finite {side} scores")
    return scores


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their rank run."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    new_run = np.r_[True, sorted_vals[1:] != sorted_vals[:-1]]
    run_ids = np.cumsum(new_run) - 1
    counts = np.bincount(run_ids)
    ends = np.cumsum(counts).astype(np.float64)
    mids = ends - (counts - 1) / 2.0
    ranks = np.empty(values.shape[0], dtype=np.float64)
    ranks[order] = mids[run_ids]
    return ranks


def auroc(id_scores: np.ndarray, ood_scores: np.ndarray) -> float:
    """P(random ID score > random OOD score) with half credit for ties."""
    id_scores = _check_scores(id_scores, "ID")
    ood_scores = _check_scores(ood_scores, "OOD")
    n_id, n_ood = id_scores.size, ood_scores.size
    ranks = _midranks(np.concatenate([id_scores, ood_scores]))
    rank_sum = ranks[:n_id].sum()
    return (rank_sum - n_id * (n_id + 1) / 2.0) / (n_id * n_ood)


def fpr_at_tpr(
    id_scores: np.ndarray,
    ood_scores: np.ndarray,
    tpr_target: float = 0.95,
) -> tuple[float, float]:
    """(FPR, tau) at the largest observed ID threshold keeping TPR >= target."""
    id_scores = _check_scores(id_scores, "ID")
    ood_scores = _check_scores(ood_scores, "OOD")
    if not 0.0 < tpr_target <= 1.0:
        raise ConfigError(f"tpr_target must be in (0, 1], got {tpr_target}")
    n = id_scores.size
    keep = min(n, max(1, math.ceil(tpr_target * n)))
    tau = float(np.sort(id_scores)[n - keep])
    fpr = float(np.count_nonzero(ood_scores >= tau)) / ood_scores.size
    return fpr, tau


def decide(scores: np.ndarray, tau: float) -> np.ndarray:
    """Threshold verdicts: 'ID' where score >= tau, else 'OOD'."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.where(scores >= tau, "ID", "OOD")


@dataclass(frozen=True)
class EvalReport:
    """AUROC / FPR@TPR summary for one ID-vs-OOD score pair."""

    id_count: int
    ood_count: int
    auroc: float
    fpr_at_95tpr: float
    tau: float
    direction: str = "higher_is_id"
    histogram: dict | None = None


def evaluate(
    id_scores: np.ndarray,
    ood_scores: np.ndarray,
    tpr_target: float = 0.95,
    histogram_bins: int | None = None,
) -> EvalReport:
    """Compute the full report for one dataset pair (higher = more ID)."""
    id_scores = _check_scores(id_scores, "ID")
    ood_scores = _check_scores(ood_scores, "OOD")
    fpr, tau = fpr_at_tpr(id_scores, ood_scores, tpr_target)
    histogram = None
    if histogram_bins is not None:
        lo = min(id_scores.min(), ood_scores.min())
        hi = max(id_scores.max(), ood_scores.max())
        edges = np.linspace(lo, hi, histogram_bins + 1)
        histogram = {
            "bin_edges": edges.tolist(),
            "id_counts": np.histogram(id_scores, bins=edges)[0].tolist(),
            "ood_counts": np.histogram(ood_scores, bins=edges)[0].tolist(),
        }
    return EvalReport(
        id_count=id_scores.size,
        ood_count=ood_scores.size,
        auroc=auroc(id_scores, ood_scores),
        fpr_at_95tpr=fpr,
        tau=tau,
        histogram=histogram,
    )


REPORT_HEADER = ["method", "id_dataset", "ood_dataset", "auroc", "fpr95", "tau", "n_id", "n_ood"]


def append_report_row(
    path: str | Path,
    method: str,
    id_dataset: str,
    ood_dataset: str,
    report: EvalReport,
) -> None:
    """Append one report row; AUROC/FPR as percentages with 2 decimals."""
    path = Path(path)
    write_header = not path.exists() or path.stat().st_size == 0
    try:
        with open(path, "a", newline="") as f:
            writer = csv.writer(f)
            if write_header:
                writer.writerow(REPORT_HEADER)
            writer.writerow(
                [
                    method,
                    id_dataset,
                    ood_dataset,
                    f"{100.0 * report.auroc:.2f}",
                    f"{100.0 * report.fpr_at_95tpr:.2f}",
                    format(report.tau, ".9g"),
                    report.id_count,
                    report.ood_count,
                ]
            )
    except OSError as exc:
        raise IoError(f"cannot append report to {path}: {exc}") from exc
