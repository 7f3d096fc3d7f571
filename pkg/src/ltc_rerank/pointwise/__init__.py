from .gradcheck import GradCheckResult, finite_diff_check
from .loss import group_ce_loss
from .reranker import PointwiseReranker
from .trainer import (
    AblationResult,
    EpochLog,
    PointwiseTrainer,
    TrainConfig,
    backward,
    compression_ablation,
    inference_only_grid,
    length_generalization,
    pairwise_accuracy,
    train,
)

__all__ = (
    "AblationResult",
    "EpochLog",
    "GradCheckResult",
    "PointwiseReranker",
    "PointwiseTrainer",
    "TrainConfig",
    "backward",
    "compression_ablation",
    "finite_diff_check",
    "group_ce_loss",
    "inference_only_grid",
    "length_generalization",
    "pairwise_accuracy",
    "train",
)
