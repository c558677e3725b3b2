"""Loss functions on network outputs, with exact gradients and Hessians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Loss:
    kind: str  # "squared" or "softmax_ce"
    num_classes: int = 0


def squared_error() -> Loss:
    """L(z, t) = ||z - t||^2 (no 1/2, no mean)."""
    return Loss("squared")


def softmax_cross_entropy(num_classes: int) -> Loss:
    """L(z, t) = -log softmax(z)[t] for an integer class target t."""
    if num_classes < 2:
        raise ValueError("softmax cross entropy needs at least 2 classes")
    return Loss("softmax_ce", int(num_classes))


def _check_output(loss: Loss, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("output must be a vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("output must be finite")
    if loss.kind == "softmax_ce" and z.shape[0] != loss.num_classes:
        raise ValueError(f"output dim {z.shape[0]} does not match num_classes {loss.num_classes}")
    return z


def _check_class(loss: Loss, target) -> int:
    t = int(target)
    if not 0 <= t < loss.num_classes:
        raise ValueError(f"class target {t} out of range [0, {loss.num_classes})")
    return t


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())  # max subtraction keeps exp bounded
    return e / e.sum()


def loss_eval(loss: Loss, z, target) -> float:
    z = _check_output(loss, z)
    if loss.kind == "squared":
        t = np.asarray(target, dtype=np.float64)
        if t.shape != z.shape:
            raise ValueError("target shape does not match output shape")
        d = z - t
        return float(d @ d)
    t = _check_class(loss, target)
    m = z.max()
    return float(np.log(np.exp(z - m).sum()) + m - z[t])


def loss_grad(loss: Loss, z, target) -> np.ndarray:
    z = _check_output(loss, z)
    if loss.kind == "squared":
        t = np.asarray(target, dtype=np.float64)
        if t.shape != z.shape:
            raise ValueError("target shape does not match output shape")
        return 2.0 * (z - t)
    t = _check_class(loss, target)
    g = _softmax(z)
    g[t] -= 1.0
    return g


def loss_hessian(loss: Loss, z, target) -> np.ndarray:
    z = _check_output(loss, z)
    if loss.kind == "squared":
        return 2.0 * np.eye(z.shape[0])
    _check_class(loss, target)
    p = _softmax(z)
    return np.diag(p) - np.outer(p, p)
