from .checkpoint import load_checkpoint, save_checkpoint
from .compression import (
    DocumentLayout,
    LtcConfig,
    Span,
    adaptive_avg_pool,
    compressed_length,
    masked_document_pool,
    rebuild_positions_and_mask,
)
from .model import HiddenStates, ModelConfig, RerankerTransformer, rank_by_logits, record_layer_lengths

__all__ = (
    "DocumentLayout",
    "HiddenStates",
    "LtcConfig",
    "ModelConfig",
    "RerankerTransformer",
    "Span",
    "adaptive_avg_pool",
    "compressed_length",
    "load_checkpoint",
    "masked_document_pool",
    "rank_by_logits",
    "rebuild_positions_and_mask",
    "record_layer_lengths",
    "save_checkpoint",
)
