from __future__ import annotations

from collections.abc import Sequence

from ltc_rerank.engine.reranker import BaseReranker
from ltc_rerank.utils.trec import Candidate


class PointwiseReranker(BaseReranker):
    """Cross-encoder reranking: every query-document pair is scored on its own and the list sorted by score.

    Equal scores keep first-stage order.
    """

    def _order(self, query_tokens: list[int], candidates: list[Candidate], docs: list[list[int]]):
        scores = [self.model.pointwise_score(query_tokens, doc, self.ltc).item() for doc in docs]
        order = sorted(range(len(candidates)), key=lambda i: (-scores[i], candidates[i].first_stage_rank))
        return [(candidates[i], scores[i]) for i in order]

    def prompt_length(self, query_text: str, candidates: Sequence[Candidate]) -> int:
        """Mean `[query] [SEP] [document]` length over the candidates that have text."""
        query_tokens = self.tokenizer(query_text)
        lengths = [
            len(self.model.assemble_pointwise(query_tokens, tokens))
            for tokens in (self.doc_tokens(c.doc_id) for c in candidates)
            if tokens is not None
        ]
        return round(sum(lengths) / len(lengths)) if lengths else len(query_tokens) + 1
