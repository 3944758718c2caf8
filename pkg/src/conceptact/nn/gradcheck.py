"""Central finite differences against the reverse-mode gradient."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .params import ParameterStore
from .tensor import NonFiniteError, Tensor, precision


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def _scalar(out) -> float:
    val = float(np.asarray(out.data if isinstance(out, Tensor) else out).sum())
    if not np.isfinite(val):
        raise NonFiniteError("non-finite value during finite differencing")
    return val


def finite_difference_check(op: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                            epsilon: float = 1e-5, floor: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradients of ``sum(op(*inputs))``.

    Runs in float64.  Every element of every input is perturbed.
    """
    with precision(np.float64):
        arrays = [np.array(x, dtype=np.float64) for x in inputs]
        leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = op(*leaves)
        if isinstance(out, Tensor) and out.data.size != 1:
            out = out.sum()
        out.backward()
        worst = 0.0
        for i, arr in enumerate(arrays):
            analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arr)
            numeric = np.zeros_like(arr)
            flat = arr.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                fp = _scalar(op(*[Tensor(a) for a in arrays]))
                flat[j] = orig - epsilon
                fm = _scalar(op(*[Tensor(a) for a in arrays]))
                flat[j] = orig
                numeric.reshape(-1)[j] = (fp - fm) / (2 * epsilon)
            worst = max(worst, relative_error(analytic, numeric, floor))
        return worst


def check_parameters(loss_fn: Callable[[], Tensor], store: ParameterStore, epsilon: float = 1e-5,
                     max_coords: int = 24, seed: int = 0, floor: float = 1e-5,
                     names: Sequence[str] | None = None) -> dict[str, float]:
    """Per-parameter max relative error for a float64 store.

    ``loss_fn`` rebuilds the scalar loss from the current store contents.  At
    most ``max_coords`` seeded coordinates are probed per parameter array.
    The ``floor`` keeps structurally zero gradients (an attention key bias,
    for one) from dividing rounding noise by zero.
    """
    if store.dtype != np.float64:
        raise TypeError("finite-difference checks need a float64 parameter store")
    rng = np.random.default_rng(seed)
    store.zero_grad()
    with precision(np.float64):
        loss_fn().backward()
        report = {}
        for name in names or store.names():
            p = store[name]
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if flat.size > max_coords:
                idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
            numeric = np.empty(len(idx))
            for k, j in enumerate(idx):
                orig = flat[j]
                flat[j] = orig + epsilon
                fp = _scalar(loss_fn())
                flat[j] = orig - epsilon
                fm = _scalar(loss_fn())
                flat[j] = orig
                numeric[k] = (fp - fm) / (2 * epsilon)
            report[name] = relative_error(analytic.reshape(-1)[idx], numeric, floor)
    store.zero_grad()
    return report
