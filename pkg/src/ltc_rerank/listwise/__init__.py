from .reranker import ListwiseReranker, sliding_window_rerank

__all__ = ("ListwiseReranker", "sliding_window_rerank")
