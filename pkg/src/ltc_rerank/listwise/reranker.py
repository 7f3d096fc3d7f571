from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import TypeVar

from ltc_rerank.constants import DEFAULT_RUN_TAG, DEFAULT_STEP, DEFAULT_WINDOW, PASSAGE_MAX_TOKENS
from ltc_rerank.engine.compression import LtcConfig
from ltc_rerank.engine.model import RerankerTransformer, rank_by_logits
from ltc_rerank.engine.reranker import BaseReranker
from ltc_rerank.exceptions import ArgumentError, ConfigurationError
from ltc_rerank.utils.trec import Candidate

T = TypeVar("T")


def sliding_window_rerank(
    items: Sequence[T],
    scorer: Callable[[list[T]], Sequence[float]],
    window: int = DEFAULT_WINDOW,
    step: int = DEFAULT_STEP,
) -> list[T]:
    """Reorder `items` with overlapping windows, moving from the bottom of the list to the top.

    The first window covers the last `window` items; each following window ends `step` positions higher, and the
    last one is clamped to start at position 0. Every window is reordered by the scorer's logits, highest first,
    ties kept in incoming order. Lists shorter than the window get a single window.

    :param scorer: Maps the items of one window to one logit per item.
    :raises ArgumentError: Unless window > step >= 1.
    """
    if not window > step >= 1:
        raise ArgumentError(f"Need window > step >= 1, got window={window}, step={step}.")

    order = list(items)
    if len(order) < 2:
        return order

    end = len(order)
    while True:
        start = max(0, end - window)
        chunk = order[start:end]
        logits = scorer(chunk)
        order[start:end] = [chunk[i] for i in rank_by_logits(logits)]
        if start == 0:
            return order
        end -= step


class ListwiseReranker(BaseReranker):
    """First-token-logit listwise reranking over a sliding window.

    Each window becomes one prompt; documents are ordered by the logits of their identifier tokens at the final
    position. Run scores count down from the list length so they are non-increasing with rank.
    """

    def __init__(
        self,
        model: RerankerTransformer,
        corpus,
        ltc: LtcConfig | None = None,
        max_doc_tokens: int = PASSAGE_MAX_TOKENS,
        window: int = DEFAULT_WINDOW,
        step: int = DEFAULT_STEP,
        tag: str = DEFAULT_RUN_TAG,
    ):
        super().__init__(model, corpus, ltc, max_doc_tokens, tag)
        if window > model.config.num_identifiers:
            raise ConfigurationError(
                f"Window of {window} documents exceeds the {model.config.num_identifiers} reserved identifiers."
            )
        if not window > step >= 1:
            raise ArgumentError(f"Need window > step >= 1, got window={window}, step={step}.")
        self.window = window
        self.step = step

    def _order(self, query_tokens: list[int], candidates: list[Candidate], docs: list[list[int]]):
        def scorer(indices: list[int]) -> list[float]:
            logits = self.model.listwise_identifier_logits(query_tokens, [docs[i] for i in indices], self.ltc)
            return logits.tolist()

        order = sliding_window_rerank(list(range(len(candidates))), scorer, self.window, self.step)
        return [(candidates[i], float(len(order) - rank)) for rank, i in enumerate(order)]

    def prompt_length(self, query_text: str, candidates: Sequence[Candidate]) -> int:
        """Length of the prompt of the first (bottom) window."""
        query_tokens = self.tokenizer(query_text)
        docs = [tokens for tokens in (self.doc_tokens(c.doc_id) for c in candidates) if tokens is not None]
        window_docs = docs[-self.window :]
        if len(window_docs) < 2:
            return len(query_tokens) + sum(len(d) for d in window_docs)
        tokens, _ = self.model.assemble_listwise(query_tokens, window_docs)
        return len(tokens)

    def fixed_prompt_tokens(self, query_text: str, candidates: Sequence[Candidate]) -> int:
        """Tokens of the first window's prompt that lie outside every document span."""
        query_tokens = self.tokenizer(query_text)
        docs = [tokens for tokens in (self.doc_tokens(c.doc_id) for c in candidates) if tokens is not None]
        window_docs = docs[-self.window :]
        if len(window_docs) < 2:
            return 0
        tokens, layout = self.model.assemble_listwise(query_tokens, window_docs)
        return len(tokens) - sum(layout.document_span(j).length for j in range(layout.num_documents))
