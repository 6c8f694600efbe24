from coca_cxr.model.config import ModelConfig
from coca_cxr.model.vocabulary import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    POOL_ID,
    SPECIAL_TOKENS,
    Vocabulary,
)
from coca_cxr.model.regional_attention import (
    RegionalCrossAttentionBlock,
    RegionalMask,
    build_regional_mask,
)
from coca_cxr.model.coca_model import CoCaCXR, ModelOutput, build_model, constrained_choice, prepare_images
from coca_cxr.model.losses import (
    EmbeddingBatch,
    caption_targets,
    captioning_loss,
    coca_objective,
    contrastive_loss,
    total_loss,
)
