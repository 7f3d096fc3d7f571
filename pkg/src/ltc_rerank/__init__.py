from ltc_rerank.engine import LtcConfig, ModelConfig, RerankerTransformer, load_checkpoint, save_checkpoint
from ltc_rerank.listwise import ListwiseReranker
from ltc_rerank.pointwise import PointwiseReranker, TrainConfig, train
from ltc_rerank.settings import Settings

__all__ = [
    "ListwiseReranker",
    "LtcConfig",
    "ModelConfig",
    "PointwiseReranker",
    "RerankerTransformer",
    "Settings",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
