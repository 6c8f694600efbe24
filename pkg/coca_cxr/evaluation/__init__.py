from coca_cxr.evaluation.metrics import (
    AccuracyReport,
    TokenScore,
    box_iou,
    macro_accuracy,
    per_condition_macro_accuracy,
    swap_consistency,
    token_f1,
)
from coca_cxr.evaluation.evaluator import (
    DetectionResult,
    DetectionRow,
    EvalSummary,
    HeldOutEvaluator,
    classification_prompt,
    classify_progression,
    detect_and_score,
    generate_annotation,
    generate_report,
    score_detections,
    swap_consistency_rate,
)
