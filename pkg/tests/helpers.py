"""Shared numerical-check utilities for the test suite."""
import numpy as np
import torch


def fd_group_check(loss_fn, named_tensors, step=1e-5, rel_tol=1e-4):
    """Central finite differences vs autograd, per parameter group.

    loss_fn must re-evaluate the full forward pass from current tensor values.
    Returns {name: relative_error}; asserts every group is within rel_tol.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [t for _, t in named_tensors], allow_unused=True)
    errors = {}
    for (name, tensor), grad in zip(named_tensors, grads):
        analytic = (
            grad.detach().clone() if grad is not None else torch.zeros_like(tensor)
        )
        fd = torch.zeros_like(tensor)
        flat = tensor.data.view(-1)
        fd_flat = fd.view(-1)
        for k in range(flat.numel()):
            orig = flat[k].item()
            flat[k] = orig + step
            with torch.no_grad():
                up = float(loss_fn())
            flat[k] = orig - step
            with torch.no_grad():
                down = float(loss_fn())
            flat[k] = orig
            fd_flat[k] = (up - down) / (2 * step)
        denom = max(float(fd.norm()), float(analytic.norm()), 1e-12)
        errors[name] = float((fd - analytic).norm()) / denom
        assert errors[name] < rel_tol, f"group {name}: rel error {errors[name]:.3e}"
    return errors


def softmax_np(x, axis):
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def squash_np(s):
    norm2 = (s * s).sum(axis=-1, keepdims=True)
    return s * np.sqrt(norm2) / (1.0 + norm2)


def routing_oracle_np(H, S, b0, mask, iters):
    """Step-by-step dynamic-routing trace in numpy; returns (u, c, per-iter list)."""
    L = H.shape[0]
    e = H @ S.T  # (L, d)
    b = b0[:, :L].copy()
    m = mask.astype(float)[None, :]
    steps = []
    u = c = None
    for _ in range(iters):
        c = softmax_np(b, axis=0) * m
        s = c @ e
        u = squash_np(s)
        b = b + u @ e.T
        steps.append((u.copy(), c.copy()))
    return u, c, steps


def layer_norm_np(x, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)  # biased, matches torch.nn.LayerNorm
    return (x - mean) / np.sqrt(var + eps)
