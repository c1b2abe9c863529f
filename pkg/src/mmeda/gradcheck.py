"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6, norm: str = "elementwise"
) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps finite-difference round-off (about 1e-11 absolute for an
    O(1) loss at h=1e-5) from dominating on near-zero gradient entries.
    ``norm="max"`` divides by the largest gradient magnitude instead.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    if norm == "max":
        den = max(np.abs(a).max(), np.abs(n).max(), floor)
    else:
        den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den))


def check_gradients(
    loss_fn: Callable[[], Node],
    params: Sequence[Node],
    h: float = 1e-5,
    floor: float = 1e-6,
    norm: str = "elementwise",
) -> float:
    """Worst relative error between backprop and finite differences over ``params``."""
    ad.zero_grad(params)
    ad.backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = numeric_grad(lambda: float(loss_fn().value), p.value, h)
        worst = max(worst, rel_error(analytic, numeric, floor, norm))
    return worst
