"""Correlation testing across re-initializations, plus Monte-Carlo norm checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .init import InitScheme, initialize
from .losses import Loss, loss_grad
from .net import activation_eval, forward, layer_jacobian, output_jacobian

SECOND_QUANTITIES = ("jacobian", "weight", "output")


@dataclass(frozen=True)
class CorrelationReport:
    r: float
    p_value: float
    n_samples: int
    n_permutations: int


def pearson_r(xs, ys) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise ValueError("pearson_r needs two equal-length vectors")
    if xs.shape[0] < 3:
        raise ValueError("pearson_r needs at least 3 points")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise ValueError("degenerate (constant) sequence has no correlation")
    return float(xc @ yc) / np.sqrt(sx * sy)


def permutation_p_value(xs, ys, n_perm: int = 999, seed: int = 0) -> float:
    """Two-sided permutation p-value for the Pearson correlation.

    p = (1 + #{|r_perm| >= |r_obs|}) / (n_perm + 1), so p is never zero.
    """
    if n_perm < 100:
        raise ValueError("n_perm must be at least 100")
    r_obs = pearson_r(xs, ys)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = np.sqrt(float(xc @ xc) * float(yc @ yc))
    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(n_perm):
        r = float(xc @ rng.permutation(yc)) / denom
        if abs(r) >= abs(r_obs):
            count += 1
    return (1 + count) / (n_perm + 1)


def _seed_int(parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def correlation_experiment(specs, scheme: InitScheme, data_point, target, loss: Loss,
                           n_seeds: int = 10, n_inits: int = 1000, *,
                           second: str = "jacobian", grad_component: int = 0,
                           jac_layer: int | None = None, jac_component=(0, 0),
                           n_perm: int = 999, base_seed: int = 0) -> list:
    """Test whether a loss/output gradient component co-varies with a network
    quantity across random re-initializations.

    Per seed, the network is re-drawn n_inits times at the fixed data point
    and two scalars are recorded per draw: component `grad_component` of the
    loss/output gradient, and one of

        second="jacobian"  layer_jacobian(jac_layer)[i, j]
        second="weight"    d z_out[0] / d w^{(jac_layer)}[i, j]
        second="output"    output component i

    with (i, j) = jac_component. Returns one CorrelationReport per seed.
    """
    if n_inits < 100:
        raise ValueError("n_inits must be at least 100")
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    if second not in SECOND_QUANTITIES:
        raise ValueError(f"unknown second quantity {second!r}")
    specs = list(specs)
    depth = len(specs)
    layer = depth - 1 if jac_layer is None else int(jac_layer)
    if not 0 <= layer < depth:
        raise IndexError(f"jacobian layer {layer} out of range for depth {depth}")
    i, j = (int(jac_component[0]), int(jac_component[1]))
    x = np.asarray(data_point, dtype=np.float64)

    reports = []
    for s in range(n_seeds):
        xs = np.empty(n_inits)
        ys = np.empty(n_inits)
        for it in range(n_inits):
            init_seed = _seed_int([base_seed, s, it])
            net = initialize(specs, scheme, init_seed)
            trace = forward(net, x, dropout_seed=init_seed)
            xs[it] = loss_grad(loss, trace.output, target)[grad_component]
            if second == "jacobian":
                ys[it] = layer_jacobian(net, trace, layer)[i, j]
            elif second == "weight":
                lay = net.layers[layer]
                _, d1, _ = activation_eval(lay.activation, trace.preacts[layer], trace.masks[layer])
                B = output_jacobian(net, trace, layer + 1)
                ys[it] = (B[0] * d1)[i] * trace.inputs[layer][j]
            else:
                ys[it] = trace.output[i]
        p = permutation_p_value(xs, ys, n_perm=n_perm, seed=_seed_int([base_seed, s, 977]))
        reports.append(CorrelationReport(pearson_r(xs, ys), p, n_inits, n_perm))
    return reports


# ---------------------------------------------------------------------------
# Monte-Carlo checks of the norm-scaling rules the init schemes rely on.


def matrix_norm_factor(n: int, m: int, sigma: float, side: str = "forward",
                       trials: int = 2000, seed: int = 0) -> float:
    """Measured E||w z||^2 (forward) or E||z' w||^2 (backward) on unit inputs.

    w is (n, m) with i.i.d. N(0, sigma^2) entries; the expected factors are
    n sigma^2 forward and m sigma^2 backward.
    """
    if side not in ("forward", "backward"):
        raise ValueError("side must be 'forward' or 'backward'")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(trials):
        w = rng.normal(0.0, sigma, size=(n, m))
        if side == "forward":
            z = rng.standard_normal(m)
            y = w @ (z / np.linalg.norm(z))
        else:
            z = rng.standard_normal(n)
            y = (z / np.linalg.norm(z)) @ w
        total += float(y @ y)
    return total / trials


def relu_forward_factor(dim: int = 64, trials: int = 2000, seed: int = 0) -> float:
    """Measured E||relu(u)||^2 / E||u||^2 for symmetric zero-centered u."""
    rng = np.random.default_rng(seed)
    num = 0.0
    den = 0.0
    for _ in range(trials):
        u = rng.standard_normal(dim)
        r = np.maximum(u, 0.0)
        num += float(r @ r)
        den += float(u @ u)
    return num / den


def dropout_jacobian_factor(keep_rate: float, dim: int = 64, trials: int = 2000,
                            seed: int = 0) -> float:
    """Measured E||J z||^2 / ||z||^2 for the dropout Jacobian J = diag(mask)/keep.

    The measured value sits at 1/keep_rate, not keep_rate: the 1/keep scaling
    enters the Jacobian squared, while the mask only survives linearly.
    """
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError("keep_rate must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(trials):
        z = rng.standard_normal(dim)
        z /= np.linalg.norm(z)
        mask = (rng.random(dim) < keep_rate).astype(np.float64)
        y = mask * z / keep_rate
        total += float(y @ y)
    return total / trials
