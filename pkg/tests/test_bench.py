import math

import pandas as pd
import pytest
from conftest import TMP

from ltc_rerank.bench import (
    QpsResult,
    SweepCell,
    attention_cost_model,
    block_flops,
    compare_throughput,
    compressed_prompt_length,
    default_layers,
    format_heatmap,
    measure_qps,
    sweep_grid,
    total_cost_ratio,
)
from ltc_rerank.constants import DEFAULT_RATES, INSTRUCTION_IDS
from ltc_rerank.engine import LtcConfig, ModelConfig, RerankerTransformer
from ltc_rerank.exceptions import ArgumentError, SweepCellError
from ltc_rerank.listwise import ListwiseReranker
from ltc_rerank.pointwise import PointwiseReranker
from ltc_rerank.settings import Settings
from ltc_rerank.utils.dataset import write_synthetic_collection
from ltc_rerank.utils.trec import load_corpus, load_qrels, load_queries, load_run

QUIET = Settings(progress=False)


# Cost model


def test_rate_one_costs_the_same() -> None:
    cost = attention_cost_model(8, 100, 3, 1.0)
    assert cost.baseline_cost == cost.ltc_cost == 8 * 100**2
    assert cost.speedup_ratio == 1.0


def test_attention_ratio_reference_value() -> None:
    # 28 n^2 / (7 n^2 + 21 * 0.16 n^2)
    assert attention_cost_model(28, 100, 8, 0.4).speedup_ratio == pytest.approx(2.7027, abs=0.01)
    assert attention_cost_model(28, 500, 8, 0.4).speedup_ratio == pytest.approx(28 / 10.36, rel=1e-9)


def test_attention_ratio_is_monotone_over_the_default_grid() -> None:
    num_layers, n = 28, 100
    for layer in range(1, num_layers + 1):
        ratios = [attention_cost_model(num_layers, n, layer, rate).speedup_ratio for rate in DEFAULT_RATES]
        assert all(a >= b for a, b in zip(ratios, ratios[1:])), f"Not monotone in rate at layer {layer}"
    for rate in DEFAULT_RATES:
        ratios = [attention_cost_model(num_layers, n, layer, rate).speedup_ratio for layer in range(1, num_layers + 1)]
        assert all(a >= b for a, b in zip(ratios, ratios[1:])), f"Not monotone in layer at rate {rate}"


@pytest.mark.parametrize(
    "num_layers,n,target_layer",
    [
        (8, 100, 0),  # Layers are 1-based
        (8, 100, 9),  # Deeper than the model
        (8, 0, 2),  # Empty sequence
    ],
)
def test_cost_model_invalid(num_layers, n, target_layer) -> None:
    with pytest.raises(ArgumentError):
        attention_cost_model(num_layers, n, target_layer, 0.5)


def test_uncompressed_tokens_lower_the_predicted_ratio() -> None:
    assert compressed_prompt_length(100, 0.4) == 40
    assert compressed_prompt_length(100, 0.4, fixed_tokens=30) == 58
    # 28 n^2 / (7 n^2 + 21 * 0.58^2 n^2)
    ratio = attention_cost_model(28, 100, 8, 0.4, fixed_tokens=30).speedup_ratio
    assert ratio == pytest.approx(280000 / (70000 + 21 * 58**2), rel=1e-9)
    assert ratio < attention_cost_model(28, 100, 8, 0.4).speedup_ratio
    assert attention_cost_model(28, 100, 8, 1.0, fixed_tokens=30).speedup_ratio == 1.0
    assert total_cost_ratio(8, 100, 2, 0.4, 64, 256, fixed_tokens=30) < total_cost_ratio(8, 100, 2, 0.4, 64, 256)

    with pytest.raises(ArgumentError):
        attention_cost_model(28, 100, 8, 0.4, fixed_tokens=100)


def test_total_ratio_lies_between_one_and_attention_ratio() -> None:
    for layer in (1, 2, 4, 8):
        for rate in DEFAULT_RATES:
            total = total_cost_ratio(8, 500, layer, rate, 64, 256)
            attention = attention_cost_model(8, 500, layer, rate).speedup_ratio
            assert 1.0 <= total <= attention + 1e-12


def test_block_flops_quadratic_term() -> None:
    hidden, mlp_dim = 64, 256
    # Second difference of a n + b n^2 is 2b with b = 4 * hidden
    second_difference = block_flops(12, hidden, mlp_dim) - 2 * block_flops(11, hidden, mlp_dim)
    second_difference += block_flops(10, hidden, mlp_dim)
    assert second_difference == 2 * 4 * hidden


# Throughput


def test_qps_uses_the_median_pass() -> None:
    result = QpsResult(num_queries=6, timings=(3.0, 1.0, 2.0))
    assert result.median_seconds == 2.0
    assert result.qps == 3.0


def test_measure_qps_runs_warmup_and_repeats() -> None:
    calls = []
    result = measure_qps(calls.append, ["a", "b", "c"], warmup=1, repeats=2)
    assert calls == ["a", "b", "c"] * 3
    assert result.num_queries == 3
    assert len(result.timings) == 2
    assert result.qps > 0


@pytest.mark.parametrize(
    "workload,warmup,repeats",
    [
        ([], 1, 3),  # Empty workload
        (["a"], 1, 0),  # No timed passes
        (["a"], -1, 3),  # Negative warmup
    ],
)
def test_measure_qps_invalid(workload, warmup, repeats) -> None:
    with pytest.raises(ArgumentError):
        measure_qps(lambda item: None, workload, warmup, repeats)


# Sweep


def test_default_layers() -> None:
    assert default_layers(8) == [2, 4, 6, 8]
    assert default_layers(3) == [2]
    assert default_layers(1) == [1]


@pytest.fixture
def sweep_inputs(tiny_model):
    collection = write_synthetic_collection(
        TMP / "sweep_collection", seed=1, num_queries=4, num_candidates=5, doc_len=8
    )
    reranker = PointwiseReranker(tiny_model, load_corpus(collection.corpus))
    return reranker, load_queries(collection.queries), load_run(collection.run), load_qrels(collection.qrels)


def _sweep(sweep_inputs, **kwargs) -> list[SweepCell]:
    options = {"rates": (0.5, 1.0), "layers": [1, 2], "warmup": 0, "repeats": 1, "settings": QUIET, **kwargs}
    return sweep_grid(*sweep_inputs, **options)


def test_sweep_grid_cells_and_csv(sweep_inputs) -> None:
    output = TMP / "sweep.csv"
    cells = _sweep(sweep_inputs, output_path=output)

    assert [(c.target_layer, c.rate) for c in cells] == [(1, 0.5), (1, 1.0), (2, 0.5), (2, 1.0)]
    for cell in cells:
        assert 0.0 <= cell.ndcg_at_10 <= 1.0
        assert cell.qps > 0
        if cell.rate == 1.0:
            assert cell.p_value == 1.0, "The uncompressed cell must equal the baseline"
            assert cell.predicted_attn_ratio == 1.0
            assert cell.qps_gain == 0.0
        else:
            assert cell.predicted_attn_ratio > 1.0

    lines = output.read_text().splitlines()
    assert lines[0] == "target_layer,rate,ndcg_at_10,p_value,qps,predicted_attn_ratio"
    assert len(lines) == 5
    frame = pd.read_csv(output)
    assert frame["target_layer"].tolist() == [1, 1, 2, 2]
    assert frame["ndcg_at_10"].tolist() == pytest.approx([c.ndcg_at_10 for c in cells])


def test_sweep_grid_total_cost_column(sweep_inputs) -> None:
    output = TMP / "sweep_total.csv"
    cells = _sweep(sweep_inputs, output_path=output, include_total_cost=True)
    assert output.read_text().splitlines()[0].endswith(",predicted_attn_ratio,predicted_total_ratio")
    assert all(not math.isnan(c.predicted_total_ratio) for c in cells)


def test_sweep_grid_listwise_cost_pools_only_documents(sweep_inputs) -> None:
    pointwise, queries, run, qrels = sweep_inputs
    reranker = ListwiseReranker(pointwise.model, pointwise.corpus, window=4, step=2)
    cells = sweep_grid(reranker, queries, run, qrels, rates=(0.5, 1.0), layers=[1], warmup=0, repeats=1, settings=QUIET)

    query_id = next(iter(run))
    n = reranker.prompt_length(queries[query_id], run[query_id])
    fixed = reranker.fixed_prompt_tokens(queries[query_id], run[query_id])
    assert fixed == len(INSTRUCTION_IDS) + len(reranker.tokenizer(queries[query_id])) + 4 + 1
    assert pointwise.fixed_prompt_tokens(queries[query_id], run[query_id]) == 0

    num_layers = pointwise.model.config.num_layers
    expected = attention_cost_model(num_layers, n, 1, 0.5, fixed).speedup_ratio
    assert cells[0].predicted_attn_ratio == pytest.approx(expected)
    assert cells[0].predicted_attn_ratio < attention_cost_model(num_layers, n, 1, 0.5).speedup_ratio
    assert cells[1].predicted_attn_ratio == 1.0


def test_sweep_grid_is_deterministic(sweep_inputs) -> None:
    first, second = _sweep(sweep_inputs), _sweep(sweep_inputs)
    assert [c.ndcg_at_10 for c in first] == [c.ndcg_at_10 for c in second]
    assert [c.p_value for c in first] == [c.p_value for c in second]


def test_sweep_grid_requires_the_baseline_rate(sweep_inputs) -> None:
    with pytest.raises(ArgumentError, match="1.0"):
        _sweep(sweep_inputs, rates=(0.2, 0.4))


def test_sweep_grid_names_the_failing_cell(sweep_inputs, monkeypatch) -> None:
    def fail(*args, **kwargs):
        raise RuntimeError("timer broke")

    monkeypatch.setattr("ltc_rerank.bench.sweep.measure_qps", fail)
    with pytest.raises(SweepCellError, match=r"target_layer=1, rate=0.5.*timer broke") as exc_info:
        _sweep(sweep_inputs)
    assert (exc_info.value.target_layer, exc_info.value.rate) == (1, 0.5)


def test_format_heatmap_marks_significant_cells() -> None:
    cells = [
        SweepCell(2, 0.5, 0.61, 0.01, 10.0, 3.0),
        SweepCell(2, 1.0, 0.70, 1.0, 5.0, 1.0),
        SweepCell(4, 0.5, 0.69, 0.40, 8.0, 2.0),
        SweepCell(4, 1.0, 0.70, 1.0, 5.0, 1.0),
    ]
    heatmap = format_heatmap(cells)
    assert "0.6100*" in heatmap
    assert "0.6900*" not in heatmap
    assert heatmap.count("*") == 1


@pytest.mark.slow
def test_compression_speeds_up_long_documents() -> None:
    model = RerankerTransformer(ModelConfig(num_layers=8, hidden=64, num_heads=4, mlp_dim=256))
    comparison = compare_throughput(model, LtcConfig(2, 0.4), doc_len=500)
    assert comparison.predicted_attn_ratio > 1.0
    assert comparison.measured_ratio >= 1.2
