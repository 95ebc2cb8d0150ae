"""Central finite-difference gradient checker (64-bit)."""
from __future__ import annotations

import numpy as np
import torch


def finite_difference_check(loss_fn, module, *, step=1e-5, rtol=1e-4, atol=1e-7,
                            max_coords=200, rng=None):
    """Compare autograd gradients of loss_fn() against central differences.

    loss_fn must be a pure function of the module parameters (fixed inputs).
    Every trainable parameter is perturbed coordinate by coordinate (capped
    at max_coords seeded-random coordinates per parameter). Returns a list of
    failure descriptions; empty means the check passed.
    """
    rng = rng or np.random.default_rng(0)
    named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)

    failures = []
    for (name, param), grad in zip(named, grads):
        flat = param.data.view(-1)
        gflat = (grad.reshape(-1) if grad is not None
                 else torch.zeros_like(flat))
        n = flat.numel()
        coords = range(n) if n <= max_coords else \
            sorted(rng.choice(n, size=max_coords, replace=False).tolist())
        for idx in coords:
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + step
                f_plus = float(loss_fn())
                flat[idx] = original - step
                f_minus = float(loss_fn())
                flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = float(gflat[idx])
            tol = max(atol, rtol * max(abs(analytic), abs(numeric)))
            if abs(analytic - numeric) > tol:
                failures.append(f"{name}[{idx}]: analytic {analytic:.10g} "
                                f"vs numeric {numeric:.10g}")
    return failures
