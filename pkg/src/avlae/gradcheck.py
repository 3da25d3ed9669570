"""Central finite-difference checks for the autodiff core."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_gradient(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``x.data``."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn().data)
            flat[i] = orig - eps
            lo = float(fn().data)
            flat[i] = orig
            out[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-30)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6, max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between backward() and finite differences.

    With ``max_entries`` set, only a random subset of coordinates per input is
    probed (the analytic gradient is compared on the same subset).
    """
    for x in inputs:
        x.grad = None
    fn().backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for x, a in zip(inputs, analytic):
        if max_entries is None or x.size <= max_entries:
            numeric = numerical_gradient(fn, x, eps)
            worst = max(worst, relative_error(a, numeric))
            continue
        idx = rng.choice(x.size, size=max_entries, replace=False)
        flat = x.data.reshape(-1)
        numeric = np.empty(max_entries)
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(fn().data)
                flat[i] = orig - eps
                lo = float(fn().data)
                flat[i] = orig
                numeric[j] = (hi - lo) / (2 * eps)
        worst = max(worst, relative_error(a.reshape(-1)[idx], numeric))
    return worst
