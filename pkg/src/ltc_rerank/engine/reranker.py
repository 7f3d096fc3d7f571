from __future__ import annotations

import copy
from collections.abc import Mapping, Sequence
from multiprocessing.pool import ThreadPool

import torch
from ultralytics.utils import LOGGER, TQDM

from ltc_rerank.constants import DEFAULT_DEPTH, DEFAULT_RUN_TAG, LTC_COLORSTR, PASSAGE_MAX_TOKENS
from ltc_rerank.engine.compression import LtcConfig
from ltc_rerank.engine.model import RerankerTransformer
from ltc_rerank.exceptions import ArgumentError
from ltc_rerank.utils.tokenizer import HashTokenizer
from ltc_rerank.utils.trec import Candidate, RunEntry


class BaseReranker:
    """Shared state and bookkeeping of the pointwise and listwise rerankers.

    Owns the model, the tokenizer, the corpus and the truncation length. Subclasses implement `_order`, which turns
    the scorable head of a candidate list into (candidate, score) pairs in final order.
    """

    def __init__(
        self,
        model: RerankerTransformer,
        corpus: Mapping[str, str],
        ltc: LtcConfig | None = None,
        max_doc_tokens: int = PASSAGE_MAX_TOKENS,
        tag: str = DEFAULT_RUN_TAG,
    ):
        if max_doc_tokens < 1:
            raise ArgumentError(f"max_doc_tokens must be positive, got {max_doc_tokens}.")
        self.model = model.eval()
        self.tokenizer = HashTokenizer.from_config(model.config)
        self.corpus = corpus
        self.ltc = ltc or LtcConfig.disabled()
        self.ltc.validate(model.config.num_layers)
        self.max_doc_tokens = max_doc_tokens
        self.tag = tag

    def with_ltc(self, ltc: LtcConfig) -> BaseReranker:
        """A shallow copy sharing model and corpus, with a different compression setting."""
        ltc.validate(self.model.config.num_layers)
        other = copy.copy(self)
        other.ltc = ltc
        return other

    def doc_tokens(self, doc_id: str) -> list[int] | None:
        text = self.corpus.get(doc_id)
        if text is None:
            return None
        return self.tokenizer(text)[: self.max_doc_tokens]

    def _order(self, query_tokens: list[int], candidates: list[Candidate], docs: list[list[int]]):
        raise NotImplementedError

    def rerank(
        self, query_id: str, query_text: str, candidates: Sequence[Candidate], depth: int = DEFAULT_DEPTH
    ) -> list[RunEntry]:
        """Rerank the top `depth` candidates; the rest keep first-stage order below them.

        Candidates without corpus text are not scored and go to the very end, in first-stage order. Entries below
        the reranked block get scores counting down from the lowest reranked score, so scores never increase with
        rank.
        """
        if depth < 0:
            raise ArgumentError(f"Depth must be non-negative, got {depth}.")
        candidates = sorted(candidates, key=lambda c: c.first_stage_rank)
        head, rest = candidates[:depth], candidates[depth:]

        scorable, docs, missing = [], [], []
        for candidate in head:
            tokens = self.doc_tokens(candidate.doc_id)
            if tokens is None:
                missing.append(candidate)
            else:
                scorable.append(candidate)
                docs.append(tokens)
        if missing:
            LOGGER.warning(
                f"{LTC_COLORSTR}Query {query_id}: no text for {len(missing)} candidates "
                f"({', '.join(c.doc_id for c in missing[:3])}{'...' if len(missing) > 3 else ''}), moved to the tail."
            )

        ordered: list[tuple[Candidate, float]] = []
        if scorable:
            with torch.no_grad():
                ordered = self._order(self.tokenizer(query_text), scorable, docs)

        floor = ordered[-1][1] if ordered else 0.0
        tail = [(c, floor - i) for i, c in enumerate([*rest, *missing], start=1)]
        return [
            RunEntry(query_id, candidate.doc_id, rank, score, self.tag)
            for rank, (candidate, score) in enumerate([*ordered, *tail], start=1)
        ]

    def rerank_run(
        self,
        queries: Mapping[str, str],
        run: Mapping[str, Sequence[Candidate]],
        depth: int = DEFAULT_DEPTH,
        num_threads: int = 1,
        progress: bool = True,
    ) -> dict[str, list[RunEntry]]:
        """Rerank every query of a first-stage run, in run order.

        Queries without text keep their first-stage order.
        """
        query_ids = list(run)

        def _rerank_query(query_id: str) -> list[RunEntry]:
            if query_id not in queries:
                LOGGER.warning(f"{LTC_COLORSTR}No text for query {query_id}, keeping the first-stage order.")
                return self.rerank(query_id, "", run[query_id], depth=0)
            return self.rerank(query_id, queries[query_id], run[query_id], depth)

        desc = f"{LTC_COLORSTR}Reranking ({self.ltc})"
        if num_threads > 1:
            with ThreadPool(num_threads) as pool:
                results = pool.imap(_rerank_query, query_ids)
                reranked = list(TQDM(results, total=len(query_ids), desc=desc, disable=not progress))
        else:
            reranked = [_rerank_query(q) for q in TQDM(query_ids, desc=desc, disable=not progress)]

        return dict(zip(query_ids, reranked))

    def prompt_length(self, query_text: str, candidates: Sequence[Candidate]) -> int:
        """Length of the model input built for `candidates`, used by the cost model."""
        raise NotImplementedError

    def fixed_prompt_tokens(self, query_text: str, candidates: Sequence[Candidate]) -> int:
        """How many of the `prompt_length` tokens compression never pools. Pointwise inputs are pooled whole."""
        return 0
