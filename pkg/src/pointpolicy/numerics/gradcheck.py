"""Finite-difference verification of the autodiff backward rules."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .tensor import Tensor, zero_graph_grads


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between autodiff and central finite differences.

    ``fn`` rebuilds the graph from the current parameter values and returns a
    scalar. Parameters must be float64; finite differences drown in float32
    rounding. ``max_entries`` optionally subsamples which entries of each
    parameter get perturbed (seeded by ``rng``) to bound runtime on big models.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters, got {p.data.dtype} for {p.name}")
    out = fn()
    if out.size != 1:
        raise ValueError(f"grad_check requires a scalar objective, got shape {out.shape}")
    zero_graph_grads(out)
    for p in params:
        p.grad = None
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ad in zip(params, analytic):
        entries = range(p.size)
        if max_entries is not None and p.size > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            entries = gen.choice(p.size, size=max_entries, replace=False)
        for i in entries:
            orig = p.data.flat[i]
            p.data.flat[i] = orig + h
            f_plus = float(fn().data)
            p.data.flat[i] = orig - h
            f_minus = float(fn().data)
            p.data.flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(ad.flat[i])
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, rel)
    return worst


def jacobian(out: Tensor, wrt: Tensor) -> np.ndarray:
    """Dense Jacobian d(out)/d(wrt) of shape (out.size, wrt.size) via repeated backward."""
    jac = np.zeros((out.size, wrt.size), dtype=out.data.dtype)
    for i in range(out.size):
        zero_graph_grads(out)
        wrt.grad = None
        seed = np.zeros_like(out.data)
        seed.flat[i] = 1.0
        out.backward(seed)
        if wrt.grad is not None:
            jac[i] = wrt.grad.reshape(-1)
    return jac
