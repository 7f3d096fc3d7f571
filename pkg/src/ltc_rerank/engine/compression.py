"""Layer-wise token compression.

Hidden states entering the target layer are shortened by 1D adaptive average pooling along the token axis. For
listwise prompts only document spans are pooled, each document on its own, so no pooled row ever mixes tokens from
two documents or from the prompt.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from ltc_rerank.constants import ROLE_DOCUMENT, ROLE_INSTRUCTION, ROLE_QUERY
from ltc_rerank.engine.tensor import causal_mask
from ltc_rerank.exceptions import ArgumentError, ConfigurationError

_ROLES = (ROLE_INSTRUCTION, ROLE_QUERY, ROLE_DOCUMENT)


@dataclass(frozen=True)
class LtcConfig:
    """Where and how much to compress.

    `target_layer` is the 1-based index of the first layer that runs on the compressed sequence, or None when
    compression is disabled. `rate` is the fraction of tokens retained. A rate of 1.0 is equivalent to disabled.
    """

    target_layer: int | None = None
    rate: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rate <= 1.0:
            raise ConfigurationError(f"Compression rate {self.rate} is not in the interval (0, 1].")
        if self.target_layer is not None and self.target_layer < 1:
            raise ConfigurationError(f"Target layer {self.target_layer} must be at least 1.")

    @classmethod
    def disabled(cls) -> LtcConfig:
        return cls()

    @property
    def enabled(self) -> bool:
        return self.target_layer is not None

    def validate(self, num_layers: int) -> None:
        """Check the target layer against the depth of the model the config is applied to.

        :raises ConfigurationError: If the target layer is deeper than the model.
        """
        if self.target_layer is not None and self.target_layer > num_layers:
            raise ConfigurationError(
                f"Target layer {self.target_layer} exceeds the number of layers in the model ({num_layers})."
            )

    def __str__(self) -> str:
        if not self.enabled:
            return "ltc(disabled)"
        return f"ltc(layer={self.target_layer}, rate={self.rate})"


@dataclass(frozen=True)
class Span:
    """A half-open token range [start, end) with a role. `document` is the 0-based document index for doc spans."""

    role: str
    start: int
    end: int
    document: int | None = None

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class DocumentLayout:
    """Token-span bookkeeping for a listwise prompt.

    Spans are contiguous, non-overlapping and cover [0, n). Exactly one doc span exists per document index in
    range(num_documents).
    """

    spans: tuple[Span, ...]
    num_documents: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "num_documents", sum(span.role == ROLE_DOCUMENT for span in self.spans))
        self._check_spans()

    @classmethod
    def from_segments(cls, segments: Iterable[tuple[str, int] | tuple[str, int, int]]) -> DocumentLayout:
        """Build a layout from consecutive (role, length) or (role, length, document) segments."""
        spans = []
        cursor = 0
        for segment in segments:
            role, length = segment[0], segment[1]
            document = segment[2] if len(segment) > 2 else None
            spans.append(Span(role, cursor, cursor + length, document))
            cursor += length
        return cls(tuple(spans))

    @property
    def length(self) -> int:
        return self.spans[-1].end if self.spans else 0

    def document_span(self, j: int) -> Span:
        return next(span for span in self.spans if span.document == j)

    def document_mask(self) -> torch.Tensor:
        """Materialize M in {0,1}^(n x k): entry (i, j) is 1 iff token i belongs to document j."""
        mask = torch.zeros((self.length, self.num_documents), dtype=torch.int8)
        for span in self.spans:
            if span.role == ROLE_DOCUMENT:
                mask[span.start : span.end, span.document] = 1
        return mask

    def validate(self, n: int) -> None:
        """Check that the layout describes exactly n tokens.

        :raises ArgumentError: If the layout length differs from n.
        """
        if self.length != n:
            raise ArgumentError(f"Layout covers {self.length} tokens but the hidden states have {n} rows.")

    def _check_spans(self) -> None:
        cursor = 0
        for span in self.spans:
            if span.role not in _ROLES:
                raise ArgumentError(f"Unknown span role '{span.role}', expected one of {_ROLES}.")
            if span.start != cursor or span.end < span.start:
                raise ArgumentError(f"Span {span} is not contiguous with the previous span ending at {cursor}.")
            if (span.role == ROLE_DOCUMENT) != (span.document is not None):
                raise ArgumentError(f"Span {span} must carry a document index iff its role is '{ROLE_DOCUMENT}'.")
            cursor = span.end

        documents = sorted(span.document for span in self.spans if span.role == ROLE_DOCUMENT)
        if documents != list(range(len(documents))):
            raise ArgumentError(f"Document spans must be numbered 0..k-1 exactly once, got {documents}.")


def compressed_length(n: int, rate: float) -> int:
    """Number of tokens retained from n tokens at the given rate: max(1, floor(n * rate)).

    :raises ArgumentError: If n < 1 or the rate is outside (0, 1].
    """
    if n < 1:
        raise ArgumentError(f"Cannot compress a sequence of length {n}.")
    if not 0.0 < rate <= 1.0:
        raise ArgumentError(f"Compression rate {rate} is not in the interval (0, 1].")
    # Tolerance keeps binary rounding of the rate from dropping an exact product by one
    return max(1, math.floor(n * rate + 1e-9))


def adaptive_avg_pool(h: torch.Tensor, n_out: int) -> torch.Tensor:
    """Pool the token axis (-2) of `h` from n to n_out rows.

    Output row i averages input rows [floor(i*n/n_out), ceil((i+1)*n/n_out)), so segments overlap when n_out does
    not divide n. For n_out == n the input is returned as an exact copy.

    :raises ArgumentError: If n_out is not in [1, n].
    """
    n = h.shape[-2]
    if not 1 <= n_out <= n:
        raise ArgumentError(f"Cannot pool {n} tokens into {n_out}; the output length must be in [1, {n}].")
    if n_out == n:
        return h.clone()

    # adaptive_avg_pool1d pools the last axis of a (batch, channels, length) tensor
    lead_shape = h.shape[:-2]
    tokens_last = h.reshape(-1, n, h.shape[-1]).transpose(-1, -2)
    pooled = F.adaptive_avg_pool1d(tokens_last, n_out).transpose(-1, -2)
    return pooled.reshape(*lead_shape, n_out, h.shape[-1])


def rebuild_positions_and_mask(n_out: int, dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Fresh positions 0..n_out-1 and a causal additive mask for a compressed sequence."""
    if n_out < 1:
        raise ArgumentError(f"Cannot build positions for {n_out} tokens.")
    return torch.arange(n_out), causal_mask(n_out, dtype=dtype)


def masked_document_pool(
    h: torch.Tensor, layout: DocumentLayout, rate: float
) -> tuple[torch.Tensor, DocumentLayout]:
    """Pool each document span of `h` independently, leaving instruction and query rows untouched.

    :param h: Hidden states of shape (n, hidden).
    :param layout: Layout describing the n rows.
    :param rate: Fraction of tokens retained per document.
    :returns: The compressed hidden states and the layout describing them.
    :raises ArgumentError: If the layout does not cover h's rows.
    """
    layout.validate(h.shape[-2])
    if not 0.0 < rate <= 1.0:
        raise ArgumentError(f"Compression rate {rate} is not in the interval (0, 1].")

    pieces: list[torch.Tensor] = []
    segments: list[tuple] = []
    for span in layout.spans:
        rows = h[..., span.start : span.end, :]
        if span.role == ROLE_DOCUMENT:
            # Empty documents have nothing to pool
            if span.length > 0:
                rows = adaptive_avg_pool(rows, compressed_length(span.length, rate))
            segments.append((span.role, rows.shape[-2], span.document))
        else:
            segments.append((span.role, span.length))
        pieces.append(rows)

    return torch.cat(pieces, dim=-2), DocumentLayout.from_segments(segments)


def pool_sequence(h: torch.Tensor, rate: float) -> torch.Tensor:
    """Pool a whole sequence (pointwise inputs) to compressed_length(n, rate) rows."""
    return adaptive_avg_pool(h, compressed_length(h.shape[-2], rate))
