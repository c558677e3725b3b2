"""Dense feedforward networks with per-layer activations and exact trace calculus.

A network is an immutable stack of layers z^{(k+1)} = f(w^{(k)} z^{(k)} + b^{(k)}).
Every derivative here is computed from a recorded forward trace, so repeated
queries against the same input are consistent (dropout masks included).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATION_NAMES = ("linear", "tanh", "sigmoid", "relu", "leaky", "dropout")


@dataclass(frozen=True)
class Activation:
    """Activation kind attached to one layer.

    `slope` is read only for "leaky", `keep_rate` and `mask_seed` only for
    "dropout". Masks are Bernoulli(keep_rate) keep bits drawn per forward
    trace; see `forward`.
    """

    kind: str
    slope: float = 0.0
    keep_rate: float = 1.0
    mask_seed: int = 0

    def __post_init__(self):
        if self.kind not in ACTIVATION_NAMES:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "leaky" and not (np.isfinite(self.slope) and self.slope >= 0.0):
            raise ValueError("leaky slope must be finite and nonnegative")
        if self.kind == "dropout":
            if not (0.0 < self.keep_rate <= 1.0):
                raise ValueError("dropout keep_rate must lie in (0, 1]")
            if self.mask_seed < 0:
                raise ValueError("dropout mask_seed must be nonnegative")


def linear() -> Activation:
    return Activation("linear")


def tanh() -> Activation:
    return Activation("tanh")


def sigmoid() -> Activation:
    return Activation("sigmoid")


def relu() -> Activation:
    return Activation("relu")


def leaky_relu(slope: float) -> Activation:
    return Activation("leaky", slope=float(slope))


def dropout(keep_rate: float, mask_seed: int = 0) -> Activation:
    return Activation("dropout", keep_rate=float(keep_rate), mask_seed=int(mask_seed))


def _sigmoid_stable(u: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def activation_eval(act: Activation, u, mask=None):
    """Return (f(u), f'(u), f''(u)) elementwise.

    `u` may be a scalar or an array. For dropout the caller must supply the
    keep mask recorded in the trace; the one-sided kinds use the convention
    f'(0) = 0 for relu and f'(0) = slope for leaky.
    """
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite preactivation")
    kind = act.kind
    if kind == "linear":
        val, d1, d2 = u, np.ones_like(u), np.zeros_like(u)
    elif kind == "tanh":
        t = np.tanh(u)
        d1 = 1.0 - t * t
        val, d2 = t, -2.0 * t * d1
    elif kind == "sigmoid":
        s = _sigmoid_stable(np.atleast_1d(u)).reshape(u.shape)
        d1 = s * (1.0 - s)
        val, d2 = s, d1 * (1.0 - 2.0 * s)
    elif kind == "relu":
        pos = u > 0
        val = np.where(pos, u, 0.0)
        d1 = pos.astype(np.float64)
        d2 = np.zeros_like(u)
    elif kind == "leaky":
        pos = u > 0
        val = np.where(pos, u, act.slope * u)
        d1 = np.where(pos, 1.0, act.slope)
        d2 = np.zeros_like(u)
    else:  # dropout
        if mask is None:
            raise ValueError("dropout evaluation requires the trace mask")
        factor = np.asarray(mask, dtype=np.float64) / act.keep_rate
        val = factor * u
        d1 = factor * np.ones_like(u)
        d2 = np.zeros_like(u)
    if u.ndim == 0:
        return float(val), float(d1), float(d2)
    return val, d1, d2


@dataclass(frozen=True)
class LayerSpec:
    """Shape and activation of one layer, without weights."""

    d_in: int
    d_out: int
    activation: Activation

    def __post_init__(self):
        if self.d_in < 1 or self.d_out < 1:
            raise ValueError("layer dimensions must be positive")


@dataclass(frozen=True)
class Layer:
    """One dense layer. Arrays are copied and frozen on construction."""

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("weights must be a 2-d array of shape (d_out, d_in)")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match d_out {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def d_in(self) -> int:
        return self.weights.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights.shape[0]

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(self.d_in, self.d_out, self.activation)


@dataclass(frozen=True)
class Network:
    """Immutable stack of compatible dense layers."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for k, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.d_out != b.d_in:
                raise ValueError(
                    f"layer {k} produces {a.d_out} units but layer {k + 1} expects {b.d_in}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def layer_specs(self):
        return [layer.spec for layer in self.layers]


def replace_weights(net: Network, layer: int, weights: np.ndarray) -> Network:
    """New network with layer `layer`'s weight matrix swapped out."""
    _check_layer_index(net, layer)
    old = net.layers[layer]
    new = Layer(weights, old.bias, old.activation)
    if new.weights.shape != old.weights.shape:
        raise ValueError("replacement weights change the layer shape")
    layers = list(net.layers)
    layers[layer] = new
    return Network(tuple(layers))


def scale_weights(net: Network, factor: float) -> Network:
    """New network with every weight matrix multiplied by `factor`. Biases kept."""
    if not np.isfinite(factor):
        raise ValueError("scale factor must be finite")
    return Network(
        tuple(Layer(layer.weights * factor, layer.bias, layer.activation) for layer in net.layers)
    )


@dataclass(frozen=True)
class ForwardTrace:
    """All intermediate values of one forward pass.

    inputs[k] is z^{(k)} (inputs[0] is the network input, inputs[-1] the
    output), preacts[k] is u^{(k)}, masks[k] is the dropout keep mask of
    layer k or None. Masks are fixed for the lifetime of the trace.
    """

    inputs: tuple
    preacts: tuple
    masks: tuple
    dropout_seed: int = 0

    @property
    def output(self) -> np.ndarray:
        return self.inputs[-1]


def forward(net: Network, x, dropout_seed: int = 0) -> ForwardTrace:
    """Run the network on one input vector and record the full trace."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.d_in,):
        raise ValueError(f"input shape {x.shape} does not match d_in {net.d_in}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input must be finite")
    if dropout_seed < 0:
        raise ValueError("dropout_seed must be nonnegative")
    inputs = [x]
    preacts = []
    masks = []
    z = x
    for k, layer in enumerate(net.layers):
        u = layer.weights @ z + layer.bias
        mask = draw_dropout_mask(layer.activation, k, layer.d_out, dropout_seed)
        val, _, _ = activation_eval(layer.activation, u, mask)
        preacts.append(u)
        masks.append(mask)
        inputs.append(val)
        z = val
    return ForwardTrace(tuple(inputs), tuple(preacts), tuple(masks), dropout_seed)


def draw_dropout_mask(act: Activation, layer_index: int, width: int, dropout_seed: int):
    """Deterministic keep mask for one dropout layer, or None for other kinds."""
    if act.kind != "dropout":
        return None
    rng = np.random.default_rng(np.random.SeedSequence([dropout_seed, layer_index, act.mask_seed]))
    return (rng.random(width) < act.keep_rate).astype(np.float64)


def _check_layer_index(net: Network, k: int):
    if not 0 <= k < net.depth:
        raise IndexError(f"layer index {k} out of range for depth {net.depth}")


def layer_jacobian(net: Network, trace: ForwardTrace, k: int) -> np.ndarray:
    """Jacobian dz^{(k+1)}/dz^{(k)} = diag(f'(u^{(k)})) w^{(k)} at the trace."""
    _check_layer_index(net, k)
    layer = net.layers[k]
    _, d1, _ = activation_eval(layer.activation, trace.preacts[k], trace.masks[k])
    return d1[:, None] * layer.weights


def output_jacobian(net: Network, trace: ForwardTrace, k: int) -> np.ndarray:
    """Jacobian dz^{(n)}/dz^{(k)}, the product of layer Jacobians above k.

    k == net.depth returns the identity on the output space.
    """
    if not 0 <= k <= net.depth:
        raise IndexError(f"layer index {k} out of range for depth {net.depth}")
    B = np.eye(net.d_out)
    for i in range(net.depth - 1, k - 1, -1):
        B = B @ layer_jacobian(net, trace, i)
    return B


def weight_gradient(net: Network, trace: ForwardTrace, output_grad) -> list:
    """Backpropagate a loss/output gradient to per-layer (dW, db) pairs."""
    delta = np.asarray(output_grad, dtype=np.float64)
    if delta.shape != (net.d_out,):
        raise ValueError(f"output_grad shape {delta.shape} does not match d_out {net.d_out}")
    grads: list = [None] * net.depth
    for k in range(net.depth - 1, -1, -1):
        layer = net.layers[k]
        _, d1, _ = activation_eval(layer.activation, trace.preacts[k], trace.masks[k])
        s = delta * d1
        grads[k] = (np.outer(s, trace.inputs[k]), s.copy())
        delta = layer.weights.T @ s
    return grads


# ---------------------------------------------------------------------------
# text serialization
#
# layers=<n>
# dims=<d_in>x<d_out> act=<name>[:<param>]
# <d_out weight rows, whitespace separated>
# <bias line>


def _activation_to_text(act: Activation) -> str:
    if act.kind == "leaky":
        return f"leaky:{act.slope:.17g}"
    if act.kind == "dropout":
        return f"dropout:{act.keep_rate:.17g},{act.mask_seed}"
    return act.kind


def _activation_from_text(token: str) -> Activation:
    name, _, param = token.partition(":")
    if name == "leaky":
        if not param:
            raise ValueError("leaky activation needs a slope parameter")
        return leaky_relu(float(param))
    if name == "dropout":
        keep, _, seed = param.partition(",")
        if not keep or not seed:
            raise ValueError("dropout activation needs keep_rate and mask_seed")
        return dropout(float(keep), int(seed))
    if param:
        raise ValueError(f"activation {name!r} takes no parameter")
    if name not in ("linear", "tanh", "sigmoid", "relu"):
        raise ValueError(f"unknown activation name {name!r}")
    return Activation(name)


def network_to_text(net: Network) -> str:
    lines = [f"layers={net.depth}"]
    for layer in net.layers:
        lines.append(f"dims={layer.d_in}x{layer.d_out} act={_activation_to_text(layer.activation)}")
        for row in layer.weights:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        lines.append(" ".join(f"{v:.17g}" for v in layer.bias))
    return "\n".join(lines) + "\n"


def network_from_text(text: str) -> Network:
    lines = text.splitlines()
    pos = 0

    def next_line() -> str:
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ValueError("truncated network text")
        line = lines[pos].strip()
        pos += 1
        return line

    header = next_line()
    if not header.startswith("layers="):
        raise ValueError("network text must start with a layers=<n> header")
    try:
        depth = int(header[len("layers="):])
    except ValueError as exc:
        raise ValueError(f"bad layer count in header {header!r}") from exc
    if depth < 1:
        raise ValueError("layer count must be positive")

    layers = []
    for k in range(depth):
        meta = next_line()
        parts = meta.split()
        if len(parts) != 2 or not parts[0].startswith("dims=") or not parts[1].startswith("act="):
            raise ValueError(f"bad layer header for layer {k}: {meta!r}")
        dims = parts[0][len("dims="):]
        d_in_s, sep, d_out_s = dims.partition("x")
        if not sep:
            raise ValueError(f"bad dims field for layer {k}: {dims!r}")
        try:
            d_in, d_out = int(d_in_s), int(d_out_s)
        except ValueError as exc:
            raise ValueError(f"bad dims field for layer {k}: {dims!r}") from exc
        act = _activation_from_text(parts[1][len("act="):])
        rows = []
        for r in range(d_out):
            tokens = next_line().split()
            if len(tokens) != d_in:
                raise ValueError(
                    f"layer {k} weight row {r} has {len(tokens)} entries, expected {d_in}"
                )
            rows.append([float(t) for t in tokens])
        bias_tokens = next_line().split()
        if len(bias_tokens) != d_out:
            raise ValueError(f"layer {k} bias has {len(bias_tokens)} entries, expected {d_out}")
        layers.append(Layer(np.array(rows), np.array([float(t) for t in bias_tokens]), act))
    return Network(tuple(layers))


def save_network(net: Network, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(network_to_text(net))


def load_network(path) -> Network:
    with open(path, "r", encoding="ascii") as fh:
        return network_from_text(fh.read())
