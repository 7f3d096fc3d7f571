from __future__ import annotations

import statistics
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import torch
from ultralytics.utils.ops import Profile

from ltc_rerank.bench.cost import attention_cost_model, total_cost_ratio
from ltc_rerank.engine.compression import LtcConfig
from ltc_rerank.engine.model import RerankerTransformer
from ltc_rerank.exceptions import ArgumentError
from ltc_rerank.utils.dataset import synth_task_gen


@dataclass(frozen=True)
class QpsResult:
    num_queries: int
    timings: tuple[float, ...]

    @property
    def median_seconds(self) -> float:
        return statistics.median(self.timings)

    @property
    def qps(self) -> float:
        # Clock resolution can report zero for trivial workloads
        return self.num_queries / max(self.median_seconds, 1e-9)


def measure_qps(
    rerank_query: Callable[[Any], Any],
    workload: Sequence[Any],
    warmup: int = 1,
    repeats: int = 3,
) -> QpsResult:
    """Time `rerank_query` over every item of `workload`, one query at a time.

    `warmup` full passes are discarded, then `repeats` passes are timed; QPS uses the median pass.

    :raises ArgumentError: For an empty workload, repeats < 1 or negative warmup.
    """
    if not workload:
        raise ArgumentError("Cannot measure throughput of an empty workload.")
    if repeats < 1 or warmup < 0:
        raise ArgumentError(f"Need repeats >= 1 and warmup >= 0, got repeats={repeats}, warmup={warmup}.")

    for _ in range(warmup):
        for item in workload:
            rerank_query(item)

    timings = []
    for _ in range(repeats):
        with Profile() as profile:
            for item in workload:
                rerank_query(item)
        timings.append(profile.dt)

    return QpsResult(len(workload), tuple(timings))


@dataclass(frozen=True)
class ThroughputComparison:
    """Measured and predicted speedup of one compression setting over the uncompressed model."""

    ltc: LtcConfig
    prompt_length: int
    baseline: QpsResult
    compressed: QpsResult
    predicted_attn_ratio: float
    predicted_total_ratio: float

    @property
    def measured_ratio(self) -> float:
        return self.compressed.qps / self.baseline.qps


def compare_throughput(
    model: RerankerTransformer,
    ltc: LtcConfig,
    doc_len: int = 500,
    num_queries: int = 4,
    num_candidates: int = 4,
    warmup: int = 1,
    repeats: int = 5,
    seed: int = 0,
) -> ThroughputComparison:
    """Time pointwise scoring of synthetic long documents with and without `ltc`.

    Each query scores `num_candidates` documents of `doc_len` words, single-threaded.
    """
    ltc.validate(model.config.num_layers)
    examples = synth_task_gen(
        seed,
        num_queries,
        doc_len,
        num_negatives=num_candidates - 1,
        vocab_size=model.config.vocab_size,
        num_identifiers=model.config.num_identifiers,
    )
    model = model.eval()

    def score_query(example, config: LtcConfig) -> None:
        with torch.no_grad():
            for doc in example.documents:
                model.pointwise_score(example.query, doc, config)

    baseline = measure_qps(lambda e: score_query(e, LtcConfig.disabled()), examples, warmup, repeats)
    compressed = measure_qps(lambda e: score_query(e, ltc), examples, warmup, repeats)

    n = len(model.assemble_pointwise(examples[0].query, examples[0].positive))
    target_layer = ltc.target_layer or 1
    cfg = model.config
    return ThroughputComparison(
        ltc=ltc,
        prompt_length=n,
        baseline=baseline,
        compressed=compressed,
        predicted_attn_ratio=attention_cost_model(cfg.num_layers, n, target_layer, ltc.rate).speedup_ratio,
        predicted_total_ratio=total_cost_ratio(cfg.num_layers, n, target_layer, ltc.rate, cfg.hidden, cfg.mlp_dim),
    )
