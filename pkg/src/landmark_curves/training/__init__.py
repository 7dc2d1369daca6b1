from ..config import Config as TrainConfig
from .losses import (
    LossBreakdown,
    decay_coefficient,
    dice_loss,
    focal_loss,
    induction_loss,
    stage_losses,
    total_loss,
)
from .loop import LOG_COLUMNS, TrainingError, TrainResult, image_loss, model_from_checkpoint, train
from .matching import (
    MatchResult,
    curve_distance,
    curve_distance_matrix,
    curve_distance_tensor,
    hungarian,
    matching_cost,
)

__all__ = [
    "LOG_COLUMNS",
    "LossBreakdown", "MatchResult", "TrainConfig", "TrainResult", "TrainingError",
    "curve_distance", "curve_distance_matrix", "curve_distance_tensor", "decay_coefficient",
    "dice_loss", "focal_loss", "hungarian", "image_loss", "induction_loss", "matching_cost",
    "model_from_checkpoint", "stage_losses", "total_loss", "train",
]
