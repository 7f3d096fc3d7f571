"""nDCG@10 and the paired two-tailed t-test used to flag significant differences between runs."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc

from ltc_rerank.constants import NDCG_CUTOFF, SIGNIFICANCE_LEVEL
from ltc_rerank.exceptions import ArgumentError
from ltc_rerank.utils.trec import RunEntry


def _dcg(gains: Sequence[int], cutoff: int) -> float:
    return sum((2.0**g - 1.0) / math.log2(i + 2) for i, g in enumerate(gains[:cutoff]))


def ndcg_at_10(ranked_doc_ids: Sequence[str], judgments: Mapping[str, int], cutoff: int = NDCG_CUTOFF) -> float:
    """nDCG with exponential gain 2^g - 1 and log2(i + 1) discount. Unjudged documents have grade 0.

    An empty ranking, or a query without any positively graded document, scores 0.
    """
    ideal = _dcg(sorted((g for g in judgments.values() if g > 0), reverse=True), cutoff)
    if not ranked_doc_ids or ideal == 0.0:
        return 0.0
    gains = [max(judgments.get(doc_id, 0), 0) for doc_id in ranked_doc_ids]
    return _dcg(gains, cutoff) / ideal


@dataclass
class MetricReport:
    """Per-query nDCG@10 over the queries that have at least one relevant judgment."""

    per_query: dict[str, float] = field(default_factory=dict)

    @property
    def num_queries(self) -> int:
        return len(self.per_query)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_query.values()))) if self.per_query else 0.0


def _ranked_doc_ids(entries: Sequence[RunEntry]) -> list[str]:
    return [e.doc_id for e in sorted(entries, key=lambda e: e.rank)]


def evaluate_run(run: Mapping[str, Sequence[RunEntry]], qrels: Mapping[str, Mapping[str, int]]) -> MetricReport:
    """Score every query of `run` that has relevant judgments. Judged queries missing from the run score 0."""
    report = MetricReport()
    for query_id, judgments in qrels.items():
        if not any(g > 0 for g in judgments.values()):
            continue
        report.per_query[query_id] = ndcg_at_10(_ranked_doc_ids(run.get(query_id, [])), judgments)
    return report


def write_report(report: MetricReport, path: str | Path) -> None:
    """Write `query_id<TAB>ndcg@10` lines followed by an `all<TAB>mean` line."""
    lines = [f"{query_id}\t{value:.4f}\n" for query_id, value in report.per_query.items()]
    lines.append(f"all\t{report.mean:.4f}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    p_value: float
    num_pairs: int
    mean_delta: float

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


def paired_t_test(deltas: Sequence[float]) -> TTestResult:
    """Two-tailed paired t-test over per-query differences.

    The p-value comes from the Student-t tail expressed as a regularized incomplete beta function. A zero standard
    deviation gives p = 1 when the mean difference is zero and p = 0 otherwise.

    :raises ArgumentError: For fewer than two pairs.
    """
    values = np.asarray(deltas, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ArgumentError(f"A paired t-test needs at least two observations, got {n}.")

    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n, mean)
        return TTestResult(math.copysign(math.inf, mean), 0.0, n, mean)

    t = mean / (sd / math.sqrt(n))
    df = n - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(t, min(1.0, max(0.0, p)), n, mean)


def compare_runs(baseline: MetricReport, candidate: MetricReport) -> TTestResult:
    """Paired test of candidate minus baseline over the queries both reports evaluate."""
    shared = [q for q in baseline.per_query if q in candidate.per_query]
    return paired_t_test([candidate.per_query[q] - baseline.per_query[q] for q in shared])
