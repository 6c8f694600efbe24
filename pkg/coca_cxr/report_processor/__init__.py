from coca_cxr.report_processor.lexicon import (
    CONDITIONS,
    DEFAULT_LEXICON,
    ORGANS,
    PROGRESSIONS,
    ComparisonLexicon,
    flip_progression,
)
from coca_cxr.report_processor.report_pipeline import (
    Report,
    ReportPartition,
    clean_report,
    extract_comparisons,
    format_report_record,
    parse_report_record,
    partition_report,
    process_report_file,
    reverse_comparison_text,
)
from coca_cxr.report_processor.scene_annotation import (
    Box,
    SceneAnnotation,
    parse_scene_annotation,
    parse_scene_annotations,
    serialize_scene_annotation,
)
