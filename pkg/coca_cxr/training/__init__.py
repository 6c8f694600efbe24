from coca_cxr.training.stage_config import (
    DESK_SCALE,
    FULL_SCALE,
    PAIR_RATIOS,
    STAGE_IDS,
    TRAINABLE_SETS,
    ExperimentConfig,
    StageConfig,
    default_stage_config,
)
from coca_cxr.training.data_mixer import (
    CorpusImageLoader,
    MixedBatchStream,
    PairSample,
    SubDatasets,
    batch_loader,
    batch_rng,
    collate,
    capped_workers,
    sample_mixed_batch,
)
from coca_cxr.training.trainer import (
    TrainState,
    checkpoint_roundtrip,
    enable_regional,
    frozen_snapshot,
    load_checkpoint,
    new_train_state,
    params_equal,
    run_stage,
    run_stages,
    save_checkpoint,
    set_trainable,
)
