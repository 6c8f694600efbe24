"""
Training Objectives
-------------------
L_Con (symmetric image/text contrastive loss), L_Cap (mean token NLL of the
captioner) and L_CoCa = w_con * L_Con + lambda * L_Cap.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from coca_cxr.errors import ConfigurationError, ShapeMismatchError
from coca_cxr.model.vocabulary import PAD_ID, POOL_ID

UNIT_NORM_TOLERANCE = {torch.float64: 1e-6, torch.float32: 1e-5}


@dataclass
class EmbeddingBatch:
    x: torch.Tensor  # (N, d) unit-norm image embeddings
    y: torch.Tensor  # (N, d) unit-norm text embeddings
    temperature: object

    def validate(self, tolerance=None):
        if self.x.ndim != 2 or self.x.shape != self.y.shape:
            raise ShapeMismatchError(
                f"image and text embeddings must be matching (N, d), got "
                f"{tuple(self.x.shape)} and {tuple(self.y.shape)}")
        if self.x.shape[0] < 2:
            raise ShapeMismatchError("contrastive loss needs at least 2 pairs")
        tau = torch.as_tensor(self.temperature)
        if not bool(tau > 0):
            raise ConfigurationError(f"temperature must be positive, got {float(tau)}")
        if tolerance is None:
            tolerance = UNIT_NORM_TOLERANCE.get(self.x.dtype, 1e-3)
        for name, rows in (("x", self.x), ("y", self.y)):
            deviation = (rows.detach().norm(dim=1) - 1).abs().max()
            if deviation > tolerance:
                raise ShapeMismatchError(f"rows of {name} are not unit-norm (max deviation {float(deviation):.2e})")
        return self


def contrastive_loss(batch):
    """-(1/N) sum_i [log softmax_i(x_i.y / tau) + log softmax_i(y_i.x / tau)]."""
    batch.validate()
    tau = torch.as_tensor(batch.temperature, dtype=batch.x.dtype, device=batch.x.device)
    logits = batch.x @ batch.y.T / tau
    labels = torch.arange(logits.shape[0], device=logits.device)
    return F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels)


def captioning_loss(logits, targets, pad_mask):
    """Mean negative log-likelihood over positions where `pad_mask` is False."""
    targets = torch.as_tensor(targets, dtype=torch.long, device=logits.device)
    pad_mask = torch.as_tensor(pad_mask, dtype=torch.bool, device=logits.device)
    vocab = logits.shape[-1]
    if logits.shape[:-1] != targets.shape or targets.shape != pad_mask.shape:
        raise ShapeMismatchError(
            f"logits {tuple(logits.shape)}, targets {tuple(targets.shape)} and "
            f"pad mask {tuple(pad_mask.shape)} disagree")
    keep = ~pad_mask.reshape(-1)
    if not keep.any():
        raise ShapeMismatchError("every caption position is padding")
    nll = F.cross_entropy(logits.reshape(-1, vocab), targets.reshape(-1), reduction="none")
    return nll[keep].mean()


def total_loss(con, cap, lambda_cap, contrastive_weight=1.0):
    if lambda_cap < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lambda_cap}")
    return contrastive_weight * con + lambda_cap * cap


def caption_targets(token_ids):
    """Next-token targets for [<bos> w.. <eos> <pool> <pad>..]; <pool> and <pad> targets are masked."""
    pad_column = torch.full_like(token_ids[:, :1], PAD_ID)
    targets = torch.cat([token_ids[:, 1:], pad_column], dim=1)
    pad_mask = (targets == PAD_ID) | (targets == POOL_ID)
    return targets, pad_mask


def coca_objective(model, current, prior, token_ids, contrastive_weight=1.0):
    """Return (L_CoCa, L_Con, L_Cap) for one batch."""
    token_ids = torch.as_tensor(token_ids, dtype=torch.long)
    out = model(current, prior, token_ids)
    targets, pad_mask = caption_targets(token_ids)
    cap = captioning_loss(out.logits, targets, pad_mask)
    con = contrastive_loss(EmbeddingBatch(out.x, out.y, out.temperature))
    return total_loss(con, cap, model.config.lambda_cap, contrastive_weight), con, cap
