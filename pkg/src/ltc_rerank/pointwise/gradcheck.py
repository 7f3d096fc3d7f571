from __future__ import annotations

import copy
from collections.abc import Sequence
from dataclasses import dataclass

import torch

from ltc_rerank.engine.compression import LtcConfig
from ltc_rerank.engine.model import RerankerTransformer
from ltc_rerank.engine.tensor import make_generator
from ltc_rerank.exceptions import ArgumentError
from ltc_rerank.pointwise.loss import group_ce_loss
from ltc_rerank.pointwise.trainer import backward, group_scores
from ltc_rerank.utils.dataset import SynthExample

# Discrepancies below this are float64 central-difference noise
EXACT_ATOL = 1e-9
GRADCHECK_TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_parameter: str | None
    num_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < GRADCHECK_TOLERANCE


def finite_diff_check(
    model: RerankerTransformer,
    example: SynthExample,
    ltc: LtcConfig | None = None,
    epsilon: float = 1e-5,
    params: Sequence[str] | None = None,
    samples_per_param: int = 8,
    seed: int = 0,
) -> GradCheckResult:
    """Compare autograd gradients of the group loss with central finite differences, in 64-bit precision.

    The model is copied and converted to float64; the original is not touched. For each checked parameter,
    `samples_per_param` random entries are perturbed by +/- epsilon.

    :param params: Names of the parameters to check; all parameters when None.
    :returns: The maximum of |analytic - numeric| / max(1e-8, |numeric|) over the checked entries.
    :raises ArgumentError: If epsilon is outside [1e-6, 1e-3] or a parameter name is unknown.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ArgumentError(f"Finite-difference epsilon {epsilon} is outside [1e-6, 1e-3].")

    model64 = copy.deepcopy(model).double().eval()
    named = dict(model64.named_parameters())
    names = list(named) if params is None else list(params)
    unknown = [name for name in names if name not in named]
    if unknown:
        raise ArgumentError(f"Unknown parameters {unknown}; available: {', '.join(named)}.")

    def loss_fn() -> torch.Tensor:
        return group_ce_loss(group_scores(model64, example, ltc), 0)

    analytic = backward(loss_fn(), model64)
    generator = make_generator(seed)

    max_error, worst, checked = 0.0, None, 0
    with torch.no_grad():
        for name in names:
            flat = named[name].view(-1)
            count = min(samples_per_param, flat.numel())
            indices = torch.randperm(flat.numel(), generator=generator)[:count].tolist()
            for index in indices:
                original = flat[index].item()
                flat[index] = original + epsilon
                plus = loss_fn().item()
                flat[index] = original - epsilon
                minus = loss_fn().item()
                flat[index] = original

                numeric = (plus - minus) / (2 * epsilon)
                a = analytic[name].view(-1)[index].item()
                difference = abs(a - numeric)
                error = 0.0 if difference < EXACT_ATOL else difference / max(1e-8, abs(numeric))
                if error > max_error:
                    max_error, worst = error, f"{name}[{index}]"
                checked += 1

    return GradCheckResult(max_error, worst, checked)
