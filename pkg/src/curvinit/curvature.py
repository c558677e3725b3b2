"""Layerwise Hessian approximations, finite-difference oracles, power iteration.

The central quantity: for a probe direction g in the weight space of layer k,
the loss Hessian quadratic form H_{w^{(k)}}[g, g] is approximated by

    v = B^{(k+1)} diag(f'(u^{(k)})) (g z^{(k)}),     quadform ~ v^T H_z v

where B^{(k+1)} is the Jacobian from layer k+1's input to the network output
and H_z the loss Hessian at the output. The neglected remainder carries the
activation's second derivative and is third order in the input scale, so the
approximation is exact for relu and leaky kinds away from their kinks.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .losses import Loss, loss_hessian, loss_eval, loss_grad
from .net import (
    Network,
    ForwardTrace,
    activation_eval,
    forward,
    layer_jacobian,
    output_jacobian,
    replace_weights,
    weight_gradient,
)

RTOL_FLOOR = 1e-12
DEGENERATE_EXACT = 1e-10


class NonFiniteError(ArithmeticError):
    """A probed loss, gradient, or operator output was not finite."""


class UncenteredActivationWarning(UserWarning):
    """The network uses an activation with f(0) != 0 (sigmoid).

    The curvature approximation assumes activations map zero to zero, so its
    error bound does not apply; results are still computed.
    """


@dataclass(frozen=True)
class CurvatureProbe:
    """A weight-shaped probe direction for one layer."""

    layer: int
    direction: np.ndarray

    def __post_init__(self):
        if self.layer < 0:
            raise ValueError("probe layer must be nonnegative")
        d = np.array(self.direction, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("probe direction must be a weight-shaped 2-d array")
        if not np.all(np.isfinite(d)):
            raise ValueError("probe direction must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class QuadformReport:
    """An approximate quadratic form next to its finite-difference reference."""

    approx: float
    exact_fd: float | None = None
    rtol: float | None = None

    @classmethod
    def from_values(cls, approx: float, exact_fd: float) -> "QuadformReport":
        rtol = abs(approx - exact_fd) / max(abs(exact_fd), RTOL_FLOOR)
        return cls(float(approx), float(exact_fd), rtol)

    @property
    def degenerate(self) -> bool:
        """True when the reference is too small for a relative comparison."""
        return self.exact_fd is not None and abs(self.exact_fd) < DEGENERATE_EXACT


def _check_probe(net: Network, probe: CurvatureProbe):
    if probe.layer >= net.depth:
        raise IndexError(f"probe layer {probe.layer} out of range for depth {net.depth}")
    want = net.layers[probe.layer].weights.shape
    if probe.direction.shape != want:
        raise ValueError(f"probe shape {probe.direction.shape} does not match layer shape {want}")


def _warn_uncentered(net: Network):
    if any(layer.activation.kind == "sigmoid" for layer in net.layers):
        warnings.warn(
            "network uses sigmoid, which does not map 0 to 0; the curvature "
            "approximation's error bound does not apply",
            UncenteredActivationWarning,
            stacklevel=3,
        )


def _probe_pieces(net: Network, trace: ForwardTrace, probe: CurvatureProbe):
    k = probe.layer
    layer = net.layers[k]
    z_k = trace.inputs[k]
    _, d1, _ = activation_eval(layer.activation, trace.preacts[k], trace.masks[k])
    return k, z_k, d1


def direct_v(net: Network, trace: ForwardTrace, probe: CurvatureProbe) -> np.ndarray:
    """Output-space image v = B^{(k+1)} diag(f'(u^{(k)})) (g z^{(k)}) of a probe."""
    _check_probe(net, probe)
    k, z_k, d1 = _probe_pieces(net, trace, probe)
    B = output_jacobian(net, trace, k + 1)
    return B @ (d1 * (probe.direction @ z_k))


def approx_quadform(net: Network, trace: ForwardTrace, loss: Loss, target, probe: CurvatureProbe) -> float:
    """Linearization estimate of the Hessian quadratic form H_{w^{(k)}}[g, g]."""
    _check_probe(net, probe)
    _warn_uncentered(net)
    v = direct_v(net, trace, probe)
    H = loss_hessian(loss, trace.output, target)
    return float(v @ H @ v)


def approx_hvp(net: Network, trace: ForwardTrace, loss: Loss, target, probe: CurvatureProbe) -> np.ndarray:
    """Weight-shaped product of the approximate layer Hessian with the probe.

    Satisfies <approx_hvp(g), g> == approx_quadform(g) and is symmetric as a
    bilinear form in the probe.
    """
    _check_probe(net, probe)
    _warn_uncentered(net)
    k, z_k, d1 = _probe_pieces(net, trace, probe)
    B = output_jacobian(net, trace, k + 1)
    v = B @ (d1 * (probe.direction @ z_k))
    H = loss_hessian(loss, trace.output, target)
    back = B.T @ (H @ v)
    return np.outer(d1 * back, z_k)


def factorized_v(net: Network, trace: ForwardTrace, probe: CurvatureProbe) -> np.ndarray:
    """v rebuilt from layer Jacobians alone, linearizing the forward pass.

    The input-side factor replaces z^{(k)} by J^{(k-1)} ... J^{(0)} z^{(0)},
    which agrees with direct_v exactly on all-linear (zero-bias) networks and
    to third order in the input scale otherwise.
    """
    _check_probe(net, probe)
    k, _, d1 = _probe_pieces(net, trace, probe)
    r = trace.inputs[0]
    for i in range(k):
        r = layer_jacobian(net, trace, i) @ r
    v = d1 * (probe.direction @ r)
    for i in range(k + 1, net.depth):
        v = layer_jacobian(net, trace, i) @ v
    return v


def default_fd_eps(net: Network, probe: CurvatureProbe) -> float:
    """Step size 1e-3 max(1, ||w^{(k)}||_F) / ||g||_F used by the FD oracles."""
    gnorm = float(np.linalg.norm(probe.direction))
    if gnorm == 0.0:
        raise ValueError("probe direction must be nonzero")
    wnorm = float(np.linalg.norm(net.layers[probe.layer].weights))
    return 1e-3 * max(1.0, wnorm) / gnorm


def _loss_at(net: Network, x, loss: Loss, target, dropout_seed: int) -> float:
    value = loss_eval(loss, forward(net, x, dropout_seed).output, target)
    if not np.isfinite(value):
        raise NonFiniteError("loss is not finite under FD perturbation")
    return value


def fd_quadform(net: Network, x, loss: Loss, target, probe: CurvatureProbe,
                eps: float | None = None, dropout_seed: int = 0) -> float:
    """Central second difference of the loss along the probe direction.

    Exact on losses quadratic in the perturbation (all-linear or relu-kind
    networks with squared error, away from kinks), O(eps^2) otherwise.
    """
    _check_probe(net, probe)
    if eps is None:
        eps = default_fd_eps(net, probe)
    if not (np.isfinite(eps) and eps > 0):
        raise ValueError("eps must be positive and finite")
    k, g = probe.layer, probe.direction
    w = net.layers[k].weights
    lp = _loss_at(replace_weights(net, k, w + eps * g), x, loss, target, dropout_seed)
    l0 = _loss_at(net, x, loss, target, dropout_seed)
    lm = _loss_at(replace_weights(net, k, w - eps * g), x, loss, target, dropout_seed)
    return (lp - 2.0 * l0 + lm) / (eps * eps)


def fd_hvp(net: Network, x, loss: Loss, target, probe: CurvatureProbe,
           eps: float | None = None, dropout_seed: int = 0) -> np.ndarray:
    """Central-difference Hessian-probe product for layer k's diagonal block."""
    _check_probe(net, probe)
    if eps is None:
        eps = default_fd_eps(net, probe)
    if not (np.isfinite(eps) and eps > 0):
        raise ValueError("eps must be positive and finite")
    k, g = probe.layer, probe.direction
    w = net.layers[k].weights

    def grad_at(shifted: Network) -> np.ndarray:
        trace = forward(shifted, x, dropout_seed)
        og = loss_grad(loss, trace.output, target)
        gw, _ = weight_gradient(shifted, trace, og)[k]
        if not np.all(np.isfinite(gw)):
            raise NonFiniteError("gradient is not finite under FD perturbation")
        return gw

    gp = grad_at(replace_weights(net, k, w + eps * g))
    gm = grad_at(replace_weights(net, k, w - eps * g))
    return (gp - gm) / (2.0 * eps)


def top_eigenvalue(operator, shape, iters: int = 100, tol: float = 1e-9, seed: int = 0):
    """Power iteration for a symmetric PSD operator on weight-shaped arrays.

    Returns (eigenvalue, iterations_used). Terminates when successive
    Rayleigh quotients differ by less than tol. The seeded start vector is
    redrawn once if the first Rayleigh quotient is below 1e-14; a zero
    operator reports eigenvalue 0 after one iteration.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = np.random.default_rng(seed)

    def draw():
        g = rng.standard_normal(shape)
        return g / np.linalg.norm(g)

    def apply(g):
        h = np.asarray(operator(g), dtype=np.float64)
        if h.shape != tuple(shape):
            raise ValueError(f"operator output shape {h.shape} does not match {tuple(shape)}")
        if not np.all(np.isfinite(h)):
            raise NonFiniteError("operator returned non-finite values")
        return h

    g = draw()
    h = apply(g)
    rq = float(np.sum(g * h))
    if rq < 1e-14:
        g = draw()
        h = apply(g)
        rq = float(np.sum(g * h))
        if rq < 1e-14:
            return 0.0, 1
    used = 1
    prev = rq
    for it in range(2, iters + 1):
        norm = float(np.linalg.norm(h))
        if norm == 0.0:
            return 0.0, used
        g = h / norm
        h = apply(g)
        rq = float(np.sum(g * h))
        used = it
        if abs(rq - prev) < tol:
            break
        prev = rq
    return rq, used


def batch_quadform(net: Network, data, loss: Loss, probe: CurvatureProbe,
                   sample_limit: int, dropout_seed: int = 0) -> float:
    """Mean approximate quadratic form over the first `sample_limit` samples.

    `data` only needs `.inputs` (rows) and `.target(i)`. Accumulation runs in
    index order; dropout traces get per-sample seeds dropout_seed + i.
    """
    n = min(int(sample_limit), data.inputs.shape[0])
    if n < 1:
        raise ValueError("batch_quadform needs at least one sample")
    total = 0.0
    for i in range(n):
        trace = forward(net, data.inputs[i], dropout_seed + i)
        total += approx_quadform(net, trace, loss, data.target(i), probe)
    return total / n


def batch_curvature_operator(net: Network, data, loss: Loss, layer: int,
                             sample_limit: int, dropout_seed: int = 0):
    """Callable g -> mean approx_hvp over a batch, for power iteration.

    Precomputes, per sample, Q_i = P_i^T H_i P_i with P_i = B_i diag(a_i), so
    one application costs one small matmul and one outer product per sample.
    """
    if not 0 <= layer < net.depth:
        raise IndexError(f"layer index {layer} out of range for depth {net.depth}")
    n = min(int(sample_limit), data.inputs.shape[0])
    if n < 1:
        raise ValueError("batch operator needs at least one sample")
    _warn_uncentered(net)
    pieces = []
    for i in range(n):
        trace = forward(net, data.inputs[i], dropout_seed + i)
        lay = net.layers[layer]
        _, d1, _ = activation_eval(lay.activation, trace.preacts[layer], trace.masks[layer])
        P = output_jacobian(net, trace, layer + 1) * d1[None, :]
        H = loss_hessian(loss, trace.output, data.target(i))
        pieces.append((P.T @ H @ P, trace.inputs[layer]))

    def operator(g: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(g)
        for Q, z in pieces:
            acc += np.outer(Q @ (g @ z), z)
        return acc / n

    return operator


def jacobian_product_norm(net: Network, trace: ForwardTrace, from_layer: int,
                          to_layer: int, iters: int = 200, tol: float = 1e-12,
                          seed: int = 0) -> float:
    """Spectral norm of J^{(to)} ... J^{(from)} by power iteration on P^T P.

    The factors are applied sequentially; the product itself is never formed.
    """
    if not 0 <= from_layer <= to_layer < net.depth:
        raise IndexError(
            f"bad layer range [{from_layer}, {to_layer}] for depth {net.depth}"
        )
    jacs = [layer_jacobian(net, trace, i) for i in range(from_layer, to_layer + 1)]

    def through(v):
        for J in jacs:
            v = J @ v
        return v

    def back(v):
        for J in reversed(jacs):
            v = J.T @ v
        return v

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(jacs[0].shape[1])
    v /= np.linalg.norm(v)
    lam = None
    for _ in range(iters):
        p = through(v)
        new_lam = float(p @ p)  # Rayleigh quotient of P^T P at unit v
        if not np.isfinite(new_lam):
            raise NonFiniteError("jacobian product overflowed")
        if new_lam == 0.0:
            return 0.0
        if lam is not None and abs(new_lam - lam) < tol * max(1.0, abs(lam)):
            lam = new_lam
            break
        lam = new_lam
        y = back(p)
        v = y / np.linalg.norm(y)
    return float(np.sqrt(lam))
