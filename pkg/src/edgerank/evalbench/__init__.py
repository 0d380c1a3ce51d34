from .metrics import (
    CertaintyLevel,
    EvalScores,
    ImageRecord,
    PRPoint,
    default_thresholds,
    evaluate,
    evaluate_uar,
    filter_ground_truth,
    format_pr_table,
    interpolated_ap,
    pr_point,
)
from .nms import edge_normals, nms_thin, suppress_non_maxima

__all__ = [
    "CertaintyLevel",
    "EvalScores",
    "ImageRecord",
    "PRPoint",
    "default_thresholds",
    "evaluate",
    "evaluate_uar",
    "filter_ground_truth",
    "format_pr_table",
    "interpolated_ap",
    "pr_point",
    "edge_normals",
    "nms_thin",
    "suppress_non_maxima",
]
