"""Finite-difference gradient verification.

Backprop results are checked against central differences computed from
nothing but forward evaluations, so the two routes share no code.  Small
tensors are checked element by element; whole-model losses use random
directional derivatives because perturbing every parameter of a transformer
individually is not tractable.
"""

from __future__ import annotations

import numpy as np
import torch


def grad_check(f, x: torch.Tensor, h: float = 1e-4) -> float:
    """Relative error between backprop and central differences at x.

    `f` maps a tensor to a scalar tensor.  Returns the infinity norm of the
    gradient difference normalized by the larger gradient's infinity norm,
    so elements whose true derivative happens to be zero do not drown the
    comparison in finite-difference noise.  x should be float64; float32
    cannot represent the h-perturbations accurately enough to be meaningful.

    The default h balances O(h^2) truncation against forward-evaluation
    rounding, which grows as 1/h; much smaller steps make composites like
    layernorm look wrong when they are not.
    """
    if x.dtype != torch.float64:
        raise ValueError("grad_check requires a float64 input")
    x = x.detach().clone().requires_grad_(True)
    f(x).backward()
    grad = x.grad.detach().reshape(-1).clone()

    fd = torch.zeros_like(grad)
    flat = x.detach().reshape(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = float(f(x.detach()))
            flat[i] = orig - h
            down = float(f(x.detach()))
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
    scale = max(float(fd.abs().max()), float(grad.abs().max()), 1e-8)
    return float((fd - grad).abs().max()) / scale


def grad_check_params(loss_fn, module: torch.nn.Module, h: float = 1e-5,
                      directions: int = 8,
                      rng: np.random.Generator | None = None) -> float:
    """Directional finite-difference check over all module parameters.

    For each random unit direction d, compares g.d against
    (loss(theta + h d) - loss(theta - h d)) / 2h.  Returns the max relative
    error across directions.  The module must be float64.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = [p for p in module.parameters() if p.requires_grad]
    if not params:
        raise ValueError("module has no trainable parameters")
    if any(p.dtype != torch.float64 for p in params):
        raise ValueError("grad_check_params requires a float64 module")

    module.zero_grad()
    loss_fn().backward()
    grads = [p.grad.detach().clone() if p.grad is not None
             else torch.zeros_like(p) for p in params]

    grad_norm = float(torch.sqrt(sum((g * g).sum() for g in grads)))
    worst = 0.0
    for _ in range(directions):
        ds = [torch.as_tensor(rng.standard_normal(tuple(p.shape))) for p in params]
        norm = torch.sqrt(sum((d * d).sum() for d in ds))
        ds = [d / norm for d in ds]
        analytic = float(sum((g * d).sum() for g, d in zip(grads, ds)))
        with torch.no_grad():
            for p, d in zip(params, ds):
                p += h * d
            up = float(loss_fn())
            for p, d in zip(params, ds):
                p -= 2.0 * h * d
            down = float(loss_fn())
            for p, d in zip(params, ds):
                p += h * d
        fd = (up - down) / (2.0 * h)
        scale = max(abs(fd), abs(analytic), 1e-6 * grad_norm, 1e-8)
        worst = max(worst, abs(fd - analytic) / scale)
    return worst
