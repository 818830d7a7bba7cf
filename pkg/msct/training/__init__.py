from msct.training.batching import RepresentationCache, precompute_representations
from msct.training.losses import (
    LossBreakdown,
    loss_hps_confusion,
    loss_outcome,
    loss_ps,
    total_loss,
)
from msct.training.trainer import (
    MsctTrainer,
    TrainConfig,
    gradient_reversal_variant,
    train_decoder,
    train_encoder,
)

__all__ = [
    "LossBreakdown",
    "MsctTrainer",
    "RepresentationCache",
    "TrainConfig",
    "gradient_reversal_variant",
    "loss_hps_confusion",
    "loss_outcome",
    "loss_ps",
    "precompute_representations",
    "total_loss",
    "train_decoder",
    "train_encoder",
]
