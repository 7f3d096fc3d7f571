from __future__ import annotations

import torch
import torch.nn.functional as F

from ltc_rerank.exceptions import ArgumentError


def group_ce_loss(scores: torch.Tensor, positive_index: int = 0) -> torch.Tensor:
    """Cross-entropy of the positive document against its group: -log softmax(scores)[positive_index].

    :param scores: The m + 1 scores of one group.
    :param positive_index: Index of the positive document within `scores`.
    :raises ArgumentError: For groups smaller than two or an out-of-range index.
    """
    if scores.dim() != 1 or scores.shape[0] < 2:
        raise ArgumentError(f"A group needs at least two scores, got shape {tuple(scores.shape)}.")
    if not 0 <= positive_index < scores.shape[0]:
        raise ArgumentError(f"Positive index {positive_index} is out of range for {scores.shape[0]} scores.")
    target = torch.tensor([positive_index], device=scores.device)
    return F.cross_entropy(scores.unsqueeze(0), target)
