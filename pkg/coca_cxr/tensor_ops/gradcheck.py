"""
Finite-Difference Gradient Check
--------------------------------
Compares autograd gradients of a scalar function with central differences.
Meant for 64-bit parameters; reports the error, never asserts.
"""

import logging

import numpy as np
import torch

logger = logging.getLogger(__name__)


def finite_diff_gradcheck(f, params, h=1e-5, coords_per_param=8, seed=0):
    """
    Max relative error between analytic and central-difference gradients.

    f: zero-argument callable returning a scalar tensor built from `params`
    params: dict name -> leaf tensor with requires_grad, or a list of such tensors
    coords_per_param: coordinates sampled per parameter (None = every coordinate)
    Relative error per coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    named = params.items() if isinstance(params, dict) else enumerate(params)
    named = [(str(name), p) for name, p in named]
    for name, p in named:
        if p.dtype != torch.float64:
            logger.warning("gradcheck on %s parameter %s; use float64 for meaningful errors", p.dtype, name)

    for _, p in named:
        p.grad = None
    loss = f()
    analytic = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)

    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_name = None
    with torch.no_grad():
        for (name, p), grad in zip(named, analytic):
            flat = p.view(-1)
            grad_flat = grad.reshape(-1) if grad is not None else torch.zeros_like(flat)
            count = flat.numel()
            if coords_per_param is None or coords_per_param >= count:
                coords = np.arange(count)
            else:
                coords = rng.choice(count, size=coords_per_param, replace=False)

            for idx in coords:
                original = flat[idx].item()
                flat[idx] = original + h
                f_plus = f().item()
                flat[idx] = original - h
                f_minus = f().item()
                flat[idx] = original

                numeric = (f_plus - f_minus) / (2.0 * h)
                error = abs(grad_flat[idx].item() - numeric) / max(1.0, abs(numeric))
                if error > worst:
                    worst, worst_name = error, f"{name}[{idx}]"

    logger.info("✓ gradcheck max relative error %.3e (%s)", worst, worst_name or "-")
    return worst
