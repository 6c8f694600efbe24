from coca_cxr.tensor_ops.functional import (
    avg_pool_grid,
    check_finite,
    debug_enabled,
    grid_side,
    layer_norm,
    scaled_dot_attention,
    set_debug,
    softmax_lastdim,
)
from coca_cxr.tensor_ops.optimizer import AdamW, adamw_step
from coca_cxr.tensor_ops.gradcheck import finite_diff_gradcheck
from coca_cxr.tensor_ops.checkpoint_io import load_tensors, read_manifest, save_tensors
