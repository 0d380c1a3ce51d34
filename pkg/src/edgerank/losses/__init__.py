from .baseline import (
    cb_ce_loss,
    ce_dice_combined,
    ce_loss,
    class_balance,
    dice_loss,
    uncertainty_weighted_loss,
)
from .config import SELF_WEIGHT, LossConfig, LossResult, PrimaryTerms, Strategy, check_delta
from .ranking import overall_loss, primary_terms, rank_loss, sort_loss, step_h, weighted_rank_loss

__all__ = [
    "SELF_WEIGHT",
    "LossConfig",
    "LossResult",
    "PrimaryTerms",
    "Strategy",
    "check_delta",
    "step_h",
    "rank_loss",
    "sort_loss",
    "overall_loss",
    "weighted_rank_loss",
    "primary_terms",
    "cb_ce_loss",
    "ce_loss",
    "class_balance",
    "dice_loss",
    "ce_dice_combined",
    "uncertainty_weighted_loss",
]
