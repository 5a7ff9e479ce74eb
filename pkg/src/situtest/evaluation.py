"""Audit quality measurement against known ground truth.

Runs the naive and the collider-adjusted probe over the same records
and reports root-mean-square error of each against the true scores,
together with distribution summaries ready for plotting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .causal_graph import AuditRoles
from .dataset import Dataset
from .situation_test import AuditConfig, audit

__all__ = ["EvaluationError", "EvaluationResult", "ComparisonReport", "rmse", "compare"]

_QUANTILES = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)
_HISTOGRAM_BINS = 20


class EvaluationError(ValueError):
    """Mismatched or empty evaluation inputs."""


def rmse(estimates: Sequence[float], truths: Sequence[float]) -> float:
    """Root mean square error between aligned score lists."""
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truths, dtype=np.float64)
    if est.shape != tru.shape:
        raise EvaluationError(
            f"length mismatch: {est.shape[0]} estimates vs {tru.shape[0]} truths"
        )
    if est.size == 0:
        raise EvaluationError("cannot compute RMSE of empty inputs")
    return float(np.sqrt(np.mean((est - tru) ** 2)))


@dataclass(frozen=True)
class EvaluationResult:
    """RMSE and score-distribution summary for one method."""

    method: str
    rmse: float
    n: int
    score_quantiles: tuple[tuple[float, float], ...]
    histogram_edges: tuple[float, ...]
    histogram_counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rmse": self.rmse,
            "n": self.n,
            "score_quantiles": [list(q) for q in self.score_quantiles],
            "histogram": {
                "edges": list(self.histogram_edges),
                "counts": list(self.histogram_counts),
            },
        }


def _summarize(method: str, scores: np.ndarray, truths: np.ndarray) -> EvaluationResult:
    quantiles = tuple(
        (q, float(np.quantile(scores, q))) for q in _QUANTILES
    )
    top = max(1.0, float(scores.max()))
    counts, edges = np.histogram(scores, bins=_HISTOGRAM_BINS, range=(0.0, top))
    return EvaluationResult(
        method=method,
        rmse=rmse(scores, truths),
        n=len(scores),
        score_quantiles=quantiles,
        histogram_edges=tuple(float(e) for e in edges),
        histogram_counts=tuple(int(c) for c in counts),
    )


class ComparisonReport:
    """Paired naive / collider-adjusted evaluation over one test set."""

    def __init__(self, nst: EvaluationResult, ust: EvaluationResult,
                 per_record: Sequence[tuple[float, float, float]]):
        self.nst = nst
        self.ust = ust
        self.per_record = tuple(per_record)

    def to_json_text(self) -> str:
        return json.dumps(
            {
                "nst": self.nst.to_dict(),
                "ust": self.ust.to_dict(),
                "per_record": [list(t) for t in self.per_record],
            }
        )

    def summary_text(self) -> str:
        # The naive probe is scored by the magnitude of its signed value,
        # since the ground truth is unsigned.
        lines = [
            f"{'method':<8}{'rmse':>10}{'n':>10}",
            f"{'NST':<8}{self.nst.rmse:>10.4f}{self.nst.n:>10}",
            f"{'UST':<8}{self.ust.rmse:>10.4f}{self.ust.n:>10}",
        ]
        return "\n".join(lines)


def compare(model, test_data: Dataset, roles: AuditRoles, config: AuditConfig,
            truths: Sequence[float], threads: int = 1) -> ComparisonReport:
    """Run both probes on ``test_data`` and score each against ``truths``.

    The naive probe enters the RMSE as its absolute value, matching the
    unsigned ground truth; its signed value is kept in ``per_record``.
    """
    truths_arr = np.asarray(truths, dtype=np.float64)
    if len(truths_arr) != len(test_data):
        raise EvaluationError(
            f"{len(truths_arr)} truths for {len(test_data)} test records"
        )
    if len(test_data) == 0:
        raise EvaluationError("cannot evaluate on an empty test set")
    report = audit(model, test_data, roles, config, threads=threads)
    nds = np.array([s.nds for s in report.individuals])
    ds = np.array([s.ds for s in report.individuals])
    nst = _summarize("nst", np.abs(nds), truths_arr)
    ust = _summarize("ust", ds, truths_arr)
    per_record = [
        (float(t), float(n_), float(d_)) for t, n_, d_ in zip(truths_arr, nds, ds)
    ]
    return ComparisonReport(nst, ust, per_record)
