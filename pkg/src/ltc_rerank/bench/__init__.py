from .cost import AttentionCost, attention_cost_model, block_flops, compressed_prompt_length, total_cost_ratio
from .qps import QpsResult, ThroughputComparison, compare_throughput, measure_qps
from .sweep import SweepCell, default_layers, format_heatmap, sweep_frame, sweep_grid, write_sweep_csv

__all__ = (
    "AttentionCost",
    "QpsResult",
    "SweepCell",
    "ThroughputComparison",
    "attention_cost_model",
    "block_flops",
    "compare_throughput",
    "compressed_prompt_length",
    "default_layers",
    "format_heatmap",
    "measure_qps",
    "sweep_frame",
    "sweep_grid",
    "total_cost_ratio",
    "write_sweep_csv",
)
