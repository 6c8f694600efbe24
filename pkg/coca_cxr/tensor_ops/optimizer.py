"""
AdamW
-----
Decoupled-weight-decay Adam with bias-corrected moments. State is keyed by
parameter name so it can be written to checkpoints and restored exactly.
"""

import logging

import torch

from coca_cxr.errors import ConfigurationError, NonFiniteGradientError

logger = logging.getLogger(__name__)

DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8
DEFAULT_WEIGHT_DECAY = 0.01


@torch.no_grad()
def adamw_step(params, grads, state, lr, betas=DEFAULT_BETAS, eps=DEFAULT_EPS,
               weight_decay=DEFAULT_WEIGHT_DECAY):
    """
    Apply one AdamW update in place.

    params, grads: dicts name -> tensor (a missing or None grad skips the parameter)
    state: dict name -> {"step", "exp_avg", "exp_avg_sq"}, created on first use
    Returns the (mutated) state dict.
    """
    beta1, beta2 = betas
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if not torch.isfinite(grad).all():
            raise NonFiniteGradientError(name)

        slot = state.get(name)
        if slot is None:
            slot = {
                "step": 0,
                "exp_avg": torch.zeros_like(param),
                "exp_avg_sq": torch.zeros_like(param),
            }
            state[name] = slot
        slot["step"] += 1
        step = slot["step"]

        # Decoupled decay acts on the weights before the moment update
        if weight_decay:
            param.mul_(1.0 - lr * weight_decay)

        slot["exp_avg"].mul_(beta1).add_(grad, alpha=1.0 - beta1)
        slot["exp_avg_sq"].mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)

        m_hat = slot["exp_avg"] / (1.0 - beta1 ** step)
        v_hat = slot["exp_avg_sq"] / (1.0 - beta2 ** step)
        param.addcdiv_(m_hat, v_hat.sqrt().add_(eps), value=-lr)
    return state


class AdamW(torch.optim.Optimizer):
    """torch Optimizer front-end for `adamw_step` over named parameters."""

    def __init__(self, named_params, lr=1e-3, betas=DEFAULT_BETAS, eps=DEFAULT_EPS,
                 weight_decay=DEFAULT_WEIGHT_DECAY):
        named_params = list(named_params)
        if not named_params:
            raise ConfigurationError("AdamW received no trainable parameters")
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.param_names = [name for name, _ in named_params]
        defaults = dict(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)
        super().__init__([p for _, p in named_params], defaults)
        self.named_state = {}

    def step(self, closure=None):
        loss = closure() if closure is not None else None
        group = self.param_groups[0]
        params = dict(zip(self.param_names, group["params"]))
        grads = {name: p.grad for name, p in params.items()}
        adamw_step(params, grads, self.named_state, group["lr"], group["betas"],
                   group["eps"], group["weight_decay"])
        return loss

    def export_state(self):
        """Name-keyed copy of the moment buffers and step counters."""
        return {
            name: {
                "step": slot["step"],
                "exp_avg": slot["exp_avg"].detach().clone(),
                "exp_avg_sq": slot["exp_avg_sq"].detach().clone(),
            }
            for name, slot in self.named_state.items()
        }

    def import_state(self, named_state):
        params = dict(zip(self.param_names, self.param_groups[0]["params"]))
        self.named_state = {}
        for name, slot in named_state.items():
            if name not in params:
                logger.debug("ignoring optimizer state for untrained parameter %s", name)
                continue
            ref = params[name]
            self.named_state[name] = {
                "step": int(slot["step"]),
                "exp_avg": slot["exp_avg"].to(dtype=ref.dtype).clone(),
                "exp_avg_sq": slot["exp_avg_sq"].to(dtype=ref.dtype).clone(),
            }
