"""Weight initialization schemes and calibration to a target top eigenvalue.

Base standard deviations per scheme for a layer with fan-in d_in and fan-out
d_out:

    glorot    sqrt(2 / (d_in + d_out))
    forward   sqrt(1 / d_out)     keeps E||w z||^2 = E||z||^2 layer to layer
    backward  sqrt(1 / d_in)      same for the backward pass E||z' w||^2
    fixed     a constant std

Optional corrections: divide by sqrt(2) on relu layers (relu halves the
expected squared norm of a symmetric preactivation) and divide by
sqrt(keep_rate) when a dropout layer follows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curvature import batch_curvature_operator, top_eigenvalue
from .net import Activation, LayerSpec, Layer, Network, scale_weights

SCHEME_VARIANTS = ("glorot", "forward", "backward", "fixed")

# bracket search range for calibration, as powers of two
_MAX_BRACKET_EXP = 20


class BracketNotFoundError(RuntimeError):
    """No scale in [2^-20, 2^20] straddles the calibration target."""


class CalibrationError(RuntimeError):
    """Bisection exhausted without entering the tolerance band."""


@dataclass(frozen=True)
class InitScheme:
    variant: str
    std: float = 0.0  # read for "fixed" only
    relu_correction: bool = False
    dropout_correction: bool = False

    def __post_init__(self):
        if self.variant not in SCHEME_VARIANTS:
            raise ValueError(f"unknown init scheme variant {self.variant!r}")
        if self.variant == "fixed" and not (np.isfinite(self.std) and self.std > 0):
            raise ValueError("fixed scheme needs a positive finite std")


def glorot(relu_correction: bool = False, dropout_correction: bool = False) -> InitScheme:
    return InitScheme("glorot", relu_correction=relu_correction, dropout_correction=dropout_correction)


def forward_stable(relu_correction: bool = False, dropout_correction: bool = False) -> InitScheme:
    return InitScheme("forward", relu_correction=relu_correction, dropout_correction=dropout_correction)


def backward_stable(relu_correction: bool = False, dropout_correction: bool = False) -> InitScheme:
    return InitScheme("backward", relu_correction=relu_correction, dropout_correction=dropout_correction)


def fixed(std: float, relu_correction: bool = False, dropout_correction: bool = False) -> InitScheme:
    return InitScheme("fixed", std=float(std), relu_correction=relu_correction,
                      dropout_correction=dropout_correction)


def scheme_std(scheme: InitScheme, layer: LayerSpec, next_activation: Activation | None = None) -> float:
    """Standard deviation for one layer's weights under the scheme."""
    if scheme.variant == "glorot":
        std = math.sqrt(2.0 / (layer.d_in + layer.d_out))
    elif scheme.variant == "forward":
        std = math.sqrt(1.0 / layer.d_out)
    elif scheme.variant == "backward":
        std = math.sqrt(1.0 / layer.d_in)
    else:
        std = scheme.std
    if scheme.relu_correction and layer.activation.kind == "relu":
        std /= math.sqrt(2.0)
    if scheme.dropout_correction and next_activation is not None and next_activation.kind == "dropout":
        std /= math.sqrt(next_activation.keep_rate)
    return std


def _check_chain(specs) -> list:
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one layer spec")
    for k, (a, b) in enumerate(zip(specs, specs[1:])):
        if a.d_out != b.d_in:
            raise ValueError(f"spec {k} produces {a.d_out} units but spec {k + 1} expects {b.d_in}")
    return specs


def initialize(specs, scheme: InitScheme, seed: int = 0) -> Network:
    """Draw a network: w ~ N(0, scheme_std^2) per layer, biases zero."""
    specs = _check_chain(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for k, spec in enumerate(specs):
        next_act = specs[k + 1].activation if k + 1 < len(specs) else None
        std = scheme_std(scheme, spec, next_act)
        w = rng.normal(0.0, std, size=(spec.d_out, spec.d_in))
        layers.append(Layer(w, np.zeros(spec.d_out), spec.activation))
    return Network(tuple(layers))


def calibrate_to_unit_hessian(specs, scheme: InitScheme, data, loss, layer: int,
                              target: float = 1.0, tol: float = 0.1,
                              max_bisect: int = 64, seed: int = 0, *,
                              sample_limit: int = 64, power_iters: int = 100,
                              power_tol: float = 1e-8):
    """Scale all layer stds by one factor until layer `layer`'s top eigenvalue
    hits the target.

    The batch-averaged approximate Hessian eigenvalue is evaluated over the
    first min(sample_limit, n) samples. Doubles or halves the scale from 1
    until the target is straddled (monotonicity is assumed only inside this
    loop), then bisects geometrically. Returns (scale, achieved_eigenvalue).
    """
    specs = _check_chain(specs)
    if not 0 <= layer < len(specs):
        raise IndexError(f"layer index {layer} out of range for depth {len(specs)}")
    if not (np.isfinite(target) and target > 0):
        raise ValueError("target must be positive and finite")
    if not (np.isfinite(tol) and tol > 0):
        raise ValueError("tol must be positive and finite")
    base = initialize(specs, scheme, seed)
    shape = base.layers[layer].weights.shape
    lo_band = target / (1.0 + tol)
    hi_band = target * (1.0 + tol)

    def eig(scale: float) -> float:
        net = scale_weights(base, scale)
        op = batch_curvature_operator(net, data, loss, layer, sample_limit)
        value, _ = top_eigenvalue(op, shape, iters=power_iters, tol=power_tol, seed=seed)
        return value

    e1 = eig(1.0)
    if lo_band <= e1 <= hi_band:
        return 1.0, e1

    # find a straddling bracket [lo, hi] with eig(lo) <= target <= eig(hi)
    if e1 < target:
        lo, e_lo = 1.0, e1
        hi = None
        for k in range(1, _MAX_BRACKET_EXP + 1):
            s = float(2 ** k)
            e = eig(s)
            if e >= target:
                hi = s
                break
            lo, e_lo = s, e
        if hi is None:
            raise BracketNotFoundError(
                f"eigenvalue stayed below target {target} up to scale 2^{_MAX_BRACKET_EXP}"
            )
    else:
        hi = 1.0
        lo = None
        for k in range(1, _MAX_BRACKET_EXP + 1):
            s = float(2.0 ** -k)
            e = eig(s)
            if e <= target:
                lo = s
                break
            hi = s
        if lo is None:
            raise BracketNotFoundError(
                f"eigenvalue stayed above target {target} down to scale 2^-{_MAX_BRACKET_EXP}"
            )

    for _ in range(max_bisect):
        mid = math.sqrt(lo * hi)
        e = eig(mid)
        if lo_band <= e <= hi_band:
            return mid, e
        if e < target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"no scale within {tol:.0%} of target after {max_bisect} bisections")
