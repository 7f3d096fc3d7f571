from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import pandas as pd
from ultralytics.utils import LOGGER, TQDM

from ltc_rerank.bench.cost import attention_cost_model, total_cost_ratio
from ltc_rerank.bench.qps import measure_qps
from ltc_rerank.constants import (
    DEFAULT_DEPTH,
    DEFAULT_RATES,
    DEFAULT_SWEEP_RUN_DESCRIPTION,
    LTC_COLORSTR,
    SIGNIFICANCE_LEVEL,
    SWEEP_CSV_COLUMNS,
    TOTAL_COST_COLUMN,
)
from ltc_rerank.engine.compression import LtcConfig
from ltc_rerank.engine.reranker import BaseReranker
from ltc_rerank.exceptions import ArgumentError, LtcError, SweepCellError
from ltc_rerank.settings import Settings
from ltc_rerank.utils.metrics import MetricReport, compare_runs, evaluate_run
from ltc_rerank.utils.tracking import RunTracker
from ltc_rerank.utils.trec import Candidate


@dataclass
class SweepCell:
    """One (target layer, rate) cell of the sweep grid."""

    target_layer: int
    rate: float
    ndcg_at_10: float
    p_value: float
    qps: float
    predicted_attn_ratio: float
    predicted_total_ratio: float = math.nan
    qps_gain: float = 0.0

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


def default_layers(num_layers: int) -> list[int]:
    """Every second layer from 2 to L, plus layer 1 for single-layer models."""
    return list(range(2, num_layers + 1, 2)) or [1]


def _p_value(baseline: MetricReport, report: MetricReport) -> float:
    shared = [q for q in baseline.per_query if q in report.per_query]
    if len(shared) < 2:
        LOGGER.warning(f"{LTC_COLORSTR}Need two evaluated queries for a significance test, got {len(shared)}.")
        return math.nan
    return compare_runs(baseline, report).p_value


def sweep_grid(
    reranker: BaseReranker,
    queries: Mapping[str, str],
    run: Mapping[str, Sequence[Candidate]],
    qrels: Mapping[str, Mapping[str, int]],
    rates: Sequence[float] = DEFAULT_RATES,
    layers: Sequence[int] | None = None,
    depth: int = DEFAULT_DEPTH,
    output_path: str | Path | None = None,
    warmup: int = 1,
    repeats: int = 3,
    include_total_cost: bool = False,
    settings: Settings | None = None,
) -> list[SweepCell]:
    """Evaluate every (target layer, rate) cell: rerank, nDCG@10, paired test against rate 1.0, QPS and cost ratios.

    Cells come back, and are written, layer-major with rates in the given order. Reranking for quality uses
    `settings.num_threads` workers; QPS is always timed on a single thread with nothing else running.

    :raises ArgumentError: If the grid is empty or does not contain rate 1.0.
    :raises SweepCellError: If a cell fails, naming its coordinates.
    """
    settings = settings or Settings()
    settings.verify()
    config = reranker.model.config
    layers = list(layers) if layers is not None else default_layers(config.num_layers)
    rates = list(rates)
    if not rates or not layers:
        raise ArgumentError("The sweep grid needs at least one rate and one layer.")
    if 1.0 not in rates:
        raise ArgumentError(f"Rate 1.0 is the baseline and must be part of the grid, got {rates}.")
    for layer in layers:
        LtcConfig(layer, 1.0).validate(config.num_layers)

    query_ids = [q for q in run if q in queries]
    workload = [(q, queries[q], run[q]) for q in query_ids]
    # Cost models use the mean prompt, of which only the document tokens are pooled for listwise prompts
    num_prompts = max(1, len(workload))
    n = round(sum(reranker.prompt_length(text, cands[:depth]) for _, text, cands in workload) / num_prompts)
    fixed = round(sum(reranker.fixed_prompt_tokens(text, cands[:depth]) for _, text, cands in workload) / num_prompts)
    fixed = min(fixed, max(0, n - 1))

    tracker = RunTracker(settings, DEFAULT_SWEEP_RUN_DESCRIPTION)
    parameters = {"rates": rates, "layers": layers, "depth": depth, "repeats": repeats}
    tracker.set_parameters({**parameters, "prompt_length": n, "fixed_tokens": fixed})

    baseline_entries = reranker.with_ltc(LtcConfig.disabled()).rerank_run(
        queries, run, depth, settings.num_threads, settings.progress
    )
    baseline = evaluate_run(baseline_entries, qrels)
    LOGGER.info(f"{LTC_COLORSTR}Baseline nDCG@10={baseline.mean:.4f} over {baseline.num_queries} queries")

    def evaluate_cell(ltc: LtcConfig) -> SweepCell:
        cell_reranker = reranker.with_ltc(ltc)
        entries = cell_reranker.rerank_run(queries, run, depth, settings.num_threads, progress=False)
        report = evaluate_run(entries, qrels)
        timing = measure_qps(lambda item: cell_reranker.rerank(*item, depth), workload, warmup, repeats)
        total = math.nan
        if include_total_cost:
            total = total_cost_ratio(
                config.num_layers, n, ltc.target_layer, ltc.rate, config.hidden, config.mlp_dim, fixed
            )
        attention = attention_cost_model(config.num_layers, n, ltc.target_layer, ltc.rate, fixed)
        return SweepCell(
            target_layer=ltc.target_layer,
            rate=ltc.rate,
            ndcg_at_10=report.mean,
            p_value=_p_value(baseline, report),
            qps=timing.qps,
            predicted_attn_ratio=attention.speedup_ratio,
            predicted_total_ratio=total,
        )

    cells = []
    grid = [(layer, rate) for layer in layers for rate in rates]
    for layer, rate in TQDM(grid, desc=f"{LTC_COLORSTR}Sweep", disable=not settings.progress):
        try:
            cell = evaluate_cell(LtcConfig(layer, rate))
        except (LtcError, ArithmeticError, RuntimeError, ValueError) as e:
            raise SweepCellError(layer, rate, str(e)) from e
        cells.append(cell)
        tracker.add_output_value(asdict(cell))

    _fill_qps_gain(cells)
    tracker.complete()

    if output_path is not None:
        write_sweep_csv(cells, output_path, include_total_cost)
        LOGGER.info(f"{LTC_COLORSTR}Wrote {len(cells)} sweep cells to {output_path}")
    heatmap = format_heatmap(cells)
    LOGGER.info(f"{LTC_COLORSTR}nDCG@10 by target layer and rate (* p < {SIGNIFICANCE_LEVEL}):\n{heatmap}")
    return cells


def _fill_qps_gain(cells: list[SweepCell]) -> None:
    """Relative QPS change of each cell against the rate 1.0 cell of the same layer."""
    baseline_qps = {cell.target_layer: cell.qps for cell in cells if cell.rate == 1.0}
    for cell in cells:
        cell.qps_gain = cell.qps / baseline_qps[cell.target_layer] - 1.0


def sweep_frame(cells: Sequence[SweepCell], include_total_cost: bool = False) -> pd.DataFrame:
    columns = [*SWEEP_CSV_COLUMNS, TOTAL_COST_COLUMN] if include_total_cost else list(SWEEP_CSV_COLUMNS)
    return pd.DataFrame([asdict(cell) for cell in cells], columns=columns)


def write_sweep_csv(cells: Sequence[SweepCell], path: str | Path, include_total_cost: bool = False) -> None:
    sweep_frame(cells, include_total_cost).to_csv(path, index=False, lineterminator="\n")


def format_heatmap(cells: Sequence[SweepCell], value: str = "ndcg_at_10") -> str:
    """Render one column of the sweep as a layer x rate grid, marking significant cells with '*'."""
    frame = pd.DataFrame(
        [
            {
                "target_layer": cell.target_layer,
                "rate": cell.rate,
                value: f"{getattr(cell, value):.4f}{'*' if cell.significant else ''}",
            }
            for cell in cells
        ]
    )
    return frame.pivot(index="target_layer", columns="rate", values=value).to_string()
