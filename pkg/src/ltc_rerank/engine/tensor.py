"""Dense math kernels shared by every layer of the reranker.

All functions are pure and shape-checked. They accept batched operands (leading dimensions broadcast the way torch
does) so that attention heads can be processed in one call.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import torch

from ltc_rerank.exceptions import ConfigurationError, ShapeError

NEG_INF = float("-inf")


def make_generator(seed: int) -> torch.Generator:
    """Create a CPU generator seeded with a 64-bit unsigned seed."""
    if not 0 <= seed < 2**64:
        raise ConfigurationError(f"Seed {seed} is not a 64-bit unsigned integer.")
    # torch accepts the full unsigned range, but only through a signed int64 view
    return torch.Generator().manual_seed(seed if seed < 2**63 else seed - 2**64)


def uniform_init(shape: Sequence[int], fan_in: int, generator: torch.Generator) -> torch.Tensor:
    """Draw weights uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return (torch.rand(tuple(shape), generator=generator, dtype=torch.float32) * 2.0 - 1.0) * bound


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product. The one place matrix products are computed in the forward path.

    :raises ShapeError: If the inner dimensions disagree.
    """
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"Cannot multiply shapes {tuple(a.shape)} and {tuple(b.shape)}.")
    return torch.matmul(a, b)


def causal_mask(n: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Additive causal mask: 0 on and below the diagonal, -inf above."""
    return torch.triu(torch.full((n, n), NEG_INF, dtype=dtype), diagonal=1)


def softmax_rows(
    m: torch.Tensor,
    additive_mask: torch.Tensor | None = None,
    return_flags: bool = False,
) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
    """Row-wise softmax with an additive {0, -inf} mask, stabilized by row-max subtraction.

    Rows in which every entry is masked come back as all zeros. With `return_flags`, a boolean tensor marking those
    rows is returned alongside the probabilities.

    :raises ShapeError: If the mask does not broadcast to the input shape.
    """
    if additive_mask is not None:
        try:
            scores = m + additive_mask
        except RuntimeError as e:
            raise ShapeError(
                f"Mask shape {tuple(additive_mask.shape)} does not match scores shape {tuple(m.shape)}."
            ) from e
        if scores.shape != m.shape:
            raise ShapeError(f"Mask shape {tuple(additive_mask.shape)} does not match scores shape {tuple(m.shape)}.")
    else:
        scores = m

    row_max = scores.amax(dim=-1, keepdim=True)
    fully_masked = torch.isneginf(row_max)
    row_max = torch.where(fully_masked, torch.zeros_like(row_max), row_max).detach()

    exp = torch.exp(scores - row_max)
    denom = exp.sum(dim=-1, keepdim=True)
    probs = exp / torch.where(denom == 0, torch.ones_like(denom), denom)

    if return_flags:
        return probs, fully_masked.squeeze(-1)
    return probs


def rms_norm(x: torch.Tensor, gain: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Scale the last dimension of `x` to unit root-mean-square, then multiply by `gain`."""
    if x.shape[-1] != gain.shape[-1]:
        raise ShapeError(f"Cannot normalize shape {tuple(x.shape)} with gain of shape {tuple(gain.shape)}.")
    return x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + eps) * gain


def rope_apply(h: torch.Tensor, positions: torch.Tensor | Sequence[int], base: float = 10000.0) -> torch.Tensor:
    """Rotate consecutive dimension pairs (2i, 2i+1) of each row by position * base^(-2i/d_head).

    :param h: Tensor of shape (..., n, d_head).
    :param positions: n integer positions, one per row.
    :param base: Rotary frequency base.
    :raises ConfigurationError: If d_head is odd.
    :raises ShapeError: If the number of positions differs from n.
    """
    d_head = h.shape[-1]
    if d_head % 2:
        raise ConfigurationError(f"Rotary embeddings need an even head dimension, got {d_head}.")
    positions = torch.as_tensor(positions)
    if positions.dim() != 1 or positions.shape[0] != h.shape[-2]:
        raise ShapeError(f"Got {tuple(positions.shape)} positions for {h.shape[-2]} rows.")

    # Angles in float64 so both precisions see the same rotation
    inv_freq = base ** (-torch.arange(0, d_head, 2, dtype=torch.float64) / d_head)
    angles = positions.to(torch.float64)[:, None] * inv_freq[None, :]
    cos = torch.cos(angles).to(h.dtype)
    sin = torch.sin(angles).to(h.dtype)

    x0 = h[..., 0::2]
    x1 = h[..., 1::2]
    rotated = torch.stack((x0 * cos - x1 * sin, x0 * sin + x1 * cos), dim=-1)
    return rotated.flatten(start_dim=-2)
