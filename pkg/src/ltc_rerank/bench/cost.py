"""Analytical cost of compressing at a target layer.

The attention model counts only the quadratic score and mixing terms, in units of n^2 per layer. `block_flops`
counts a whole decoder block (projections, attention, MLP, norms) so the linear terms can be compared too.

Both models take `fixed_tokens`, the tokens that compression leaves alone (instruction, query, identifier and trigger
tokens of a listwise prompt). Only the other n - fixed_tokens tokens are pooled. Pointwise inputs are pooled whole.
"""

from __future__ import annotations

from dataclasses import dataclass

from ltc_rerank.engine.compression import compressed_length
from ltc_rerank.exceptions import ArgumentError

RMSNORM = 4
GELU = 8


@dataclass(frozen=True)
class AttentionCost:
    baseline_cost: float
    ltc_cost: float

    @property
    def speedup_ratio(self) -> float:
        return self.baseline_cost / self.ltc_cost


def _check(num_layers: int, n: int, target_layer: int, fixed_tokens: int) -> None:
    if not 1 <= target_layer <= num_layers:
        raise ArgumentError(f"Target layer {target_layer} is outside [1, {num_layers}].")
    if n < 1:
        raise ArgumentError(f"Sequence length must be positive, got {n}.")
    if not 0 <= fixed_tokens < n:
        raise ArgumentError(f"Uncompressed part of {fixed_tokens} tokens must be in [0, {n}) for {n} tokens.")


def compressed_prompt_length(n: int, rate: float, fixed_tokens: int = 0) -> int:
    """Length of an n-token input after compression: fixed_tokens + max(1, floor((n - fixed_tokens) * r))."""
    return fixed_tokens + compressed_length(n - fixed_tokens, rate)


def attention_cost_model(
    num_layers: int, n: int, target_layer: int, rate: float, fixed_tokens: int = 0
) -> AttentionCost:
    """Attention-only cost with compression in front of `target_layer`.

    baseline = L * n^2, ltc = (l* - 1) * n^2 + (L - l* + 1) * n'^2 with n' = `compressed_prompt_length`.
    """
    _check(num_layers, n, target_layer, fixed_tokens)
    n_out = compressed_prompt_length(n, rate, fixed_tokens)
    baseline = num_layers * n**2
    ltc = (target_layer - 1) * n**2 + (num_layers - target_layer + 1) * n_out**2
    return AttentionCost(float(baseline), float(ltc))


def flops_matmul(m: int, n: int, p: int) -> int:
    return 2 * m * n * p


def block_flops(n: int, hidden: int, mlp_dim: int) -> int:
    """FLOPs of one decoder block on n tokens."""
    flops = RMSNORM * hidden * n
    flops += flops_matmul(n, hidden, 3 * hidden)  # QKV
    flops += flops_matmul(n, hidden, n)  # QK^T
    flops += flops_matmul(n, n, hidden)  # AV
    flops += flops_matmul(n, hidden, hidden)  # out
    flops += hidden * n  # residual
    flops += RMSNORM * hidden * n
    flops += flops_matmul(n, hidden, mlp_dim)
    flops += GELU * mlp_dim * n
    flops += flops_matmul(n, mlp_dim, hidden)
    flops += hidden * n  # residual
    return flops


def total_cost_ratio(
    num_layers: int, n: int, target_layer: int, rate: float, hidden: int, mlp_dim: int, fixed_tokens: int = 0
) -> float:
    """Baseline over compressed FLOPs for the whole stack of decoder blocks."""
    _check(num_layers, n, target_layer, fixed_tokens)
    n_out = compressed_prompt_length(n, rate, fixed_tokens)
    baseline = num_layers * block_flops(n, hidden, mlp_dim)
    ltc = (target_layer - 1) * block_flops(n, hidden, mlp_dim)
    ltc += (num_layers - target_layer + 1) * block_flops(n_out, hidden, mlp_dim)
    return baseline / ltc
