from coca_cxr.corpus_generator.atlas import ATLAS, OrganAtlas, anatomy_template
from coca_cxr.corpus_generator.scene_generator import (
    GenConfig,
    Lesion,
    Scene,
    StudyPair,
    annotate,
    derive_progression_label,
    generate_pairs,
    generate_study_pair,
    pair_seed,
    render_scene,
)
from coca_cxr.corpus_generator.subdatasets import (
    PairRecord,
    build_subdatasets,
    load_image,
    load_pairs,
    load_subdataset,
    save_image,
    subdataset_path,
    subdataset_records,
    write_corpus,
)
from coca_cxr.corpus_generator.study_preview import StudyPreviewRenderer
