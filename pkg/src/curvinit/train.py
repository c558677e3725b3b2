"""Plain minibatch SGD on a Network. No momentum, no schedules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .losses import Loss
from .net import Layer, Network, activation_eval, draw_dropout_mask


class DivergenceError(ArithmeticError):
    """Training hit a non-finite loss. Carries the failing batch index."""

    def __init__(self, message: str, batch_index: int):
        super().__init__(message)
        self.batch_index = batch_index


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 1
    batch_size: int = 32
    seed: int = 0
    input_scale: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if not (np.isfinite(self.input_scale) and self.input_scale > 0):
            raise ValueError("input_scale must be positive and finite")


def batch_loss_grad(loss: Loss, outputs: np.ndarray, targets):
    """Per-sample losses and loss/output gradients for a whole batch.

    Row-vectorized version of loss_eval/loss_grad; outputs is (B, d_out).
    """
    if loss.kind == "squared":
        diff = outputs - np.asarray(targets, dtype=np.float64)
        return (diff * diff).sum(axis=1), 2.0 * diff
    t = np.asarray(targets, dtype=np.int64)
    m = outputs.max(axis=1, keepdims=True)
    e = np.exp(outputs - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(outputs.shape[0])
    losses = np.log(s[:, 0]) + m[:, 0] - outputs[rows, t]
    grads = e / s
    grads[rows, t] -= 1.0
    return losses, grads


def train_sgd(net: Network, data: Dataset, loss: Loss, cfg: TrainConfig):
    """Run SGD on the weight matrices and return (trained_network, history).

    Biases are left untouched (zero under the provided init schemes); the
    update is w <- w - lr * dL/dw. Batches are drawn from a fresh permutation
    each epoch (seeded by cfg.seed); the trailing partial batch is kept.
    Dropout masks are resampled once per batch. history holds the per-batch
    mean loss recorded before each update; a non-finite value raises
    DivergenceError with the global batch index.
    """
    if data.classification != (loss.kind == "softmax_ce"):
        raise ValueError("dataset target kind does not match the loss")
    X = data.inputs * cfg.input_scale
    n = data.n_samples
    ws = [layer.weights.copy() for layer in net.layers]
    bs = [layer.bias.copy() for layer in net.layers]
    acts = [layer.activation for layer in net.layers]
    depth = len(ws)
    rng = np.random.default_rng(cfg.seed)
    history = []
    batch_index = 0
    # divergence is detected by the explicit finiteness checks below, so the
    # overflow warnings numpy would emit on the way there are redundant
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                Z = X[idx]
                targets = data.targets[idx]
                zs = []
                d1s = []
                for k in range(depth):
                    zs.append(Z)
                    U = Z @ ws[k].T + bs[k]
                    if not np.all(np.isfinite(U)):
                        raise DivergenceError(
                            f"non-finite preactivation at batch {batch_index}", batch_index
                        )
                    mask = draw_dropout_mask(acts[k], k, ws[k].shape[0],
                                             _batch_seed(cfg.seed, batch_index))
                    Z, d1, _ = activation_eval(acts[k], U, mask)
                    d1s.append(d1)
                losses, delta = batch_loss_grad(loss, Z, targets)
                mean_loss = float(losses.mean())
                if not np.isfinite(mean_loss):
                    raise DivergenceError(
                        f"non-finite training loss at batch {batch_index}", batch_index
                    )
                history.append(mean_loss)
                b = idx.shape[0]
                for k in range(depth - 1, -1, -1):
                    s = delta * d1s[k]
                    gw = s.T @ zs[k] / b
                    delta = s @ ws[k]
                    ws[k] -= cfg.learning_rate * gw
                batch_index += 1
    if not all(np.all(np.isfinite(w)) for w in ws):
        raise DivergenceError(
            f"non-finite weights after batch {batch_index - 1}", batch_index - 1
        )
    trained = Network(tuple(Layer(w, b, a) for w, b, a in zip(ws, bs, acts)))
    return trained, history


def _batch_seed(seed: int, batch_index: int) -> int:
    return int(np.random.SeedSequence([seed, batch_index]).generate_state(1)[0])
