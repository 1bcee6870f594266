"""Shared test utilities: small model configs and finite-difference checks."""

from __future__ import annotations

import torch

from shapefm import ModelConfig


def tiny_model_config(**overrides) -> ModelConfig:
    defaults = dict(
        target_length=64,
        embed_dim=16,
        scales=((16, 16), (8, 8), (4, 4)),
        depth=1,
        heads=2,
        ff_dim=32,
        dropout=0.0,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def finite_diff_grads(f, tensors, h: float = 1e-6) -> list[torch.Tensor]:
    """Central-difference gradients of the scalar f() w.r.t. each tensor."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(f())
                flat[i] = orig - h
                fm = float(f())
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * h)
            grads.append(g)
    return grads


def analytic_grads(loss_fn, tensors) -> list[torch.Tensor]:
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]


def grad_rel_err(analytic: list[torch.Tensor], numeric: list[torch.Tensor]) -> float:
    a = torch.cat([g.reshape(-1) for g in analytic])
    n = torch.cat([g.reshape(-1) for g in numeric])
    denom = max(a.norm().item(), n.norm().item(), 1e-12)
    return float((a - n).norm().item() / denom)


def check_gradients(loss_fn, tensors, h: float = 1e-6, tol: float = 1e-4) -> float:
    """Assert analytic vs central-difference agreement; returns the error."""
    err = grad_rel_err(analytic_grads(loss_fn, tensors), finite_diff_grads(loss_fn, tensors, h))
    assert err < tol, f"gradient mismatch: relative error {err:.3e} >= {tol}"
    return err
