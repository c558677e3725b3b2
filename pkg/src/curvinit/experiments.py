"""Experiment drivers behind the CLI. Each one writes a deterministic CSV.

Configs are line-oriented `key=value` files; `#` starts a comment and
unknown keys are rejected. Floats are rendered with repr() so re-running a
config reproduces the output byte for byte.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import init as init_mod
from .curvature import (
    CurvatureProbe,
    QuadformReport,
    batch_curvature_operator,
    batch_quadform,
    fd_hvp,
    fd_quadform,
    top_eigenvalue,
)
from .data import DataError, Dataset, load_mnist_idx, synth_dataset
from .losses import Loss, softmax_cross_entropy, squared_error
from .net import Activation, LayerSpec, forward, leaky_relu
from .stats import correlation_experiment
from .train import TrainConfig, train_sgd


class ConfigError(ValueError):
    """Bad experiment configuration."""


# ---------------------------------------------------------------------------
# config file handling


def parse_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_lines(lines)


def parse_config_lines(lines) -> dict:
    cfg = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in cfg:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        cfg[key] = value
    return cfg


class _Config:
    """Typed accessors over the raw key=value dict, tracking consumed keys."""

    def __init__(self, raw: dict):
        self.raw = dict(raw)
        self.used = set()

    def _take(self, key: str, default):
        self.used.add(key)
        if key not in self.raw:
            if default is _REQUIRED:
                raise ConfigError(f"missing required config key {key!r}")
            return None
        return self.raw[key]

    def str_(self, key, default=None):
        v = self._take(key, default)
        return default if v is None else v

    def int_(self, key, default=None):
        v = self._take(key, default)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: expected an integer, got {v!r}") from exc

    def float_(self, key, default=None):
        v = self._take(key, default)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: expected a number, got {v!r}") from exc

    def bool_(self, key, default=False):
        v = self._take(key, default)
        if v is None or isinstance(v, bool):
            return default if v is None else v
        if v in ("0", "1"):
            return v == "1"
        raise ConfigError(f"config key {key!r}: expected 0 or 1, got {v!r}")

    def int_list(self, key, default=None):
        v = self._take(key, default)
        if v is None or isinstance(v, list):
            return default if v is None else v
        try:
            return [int(tok) for tok in v.split(",") if tok.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: expected comma-separated integers") from exc

    def float_list(self, key, default=None):
        v = self._take(key, default)
        if v is None or isinstance(v, list):
            return default if v is None else v
        try:
            return [float(tok) for tok in v.split(",") if tok.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: expected comma-separated numbers") from exc

    def reject_unknown(self):
        unknown = sorted(set(self.raw) - self.used)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


class _Required:
    pass


_REQUIRED = _Required()


# ---------------------------------------------------------------------------
# shared builders


def _parse_activation(name: str) -> Activation:
    base, _, param = name.partition(":")
    if base == "leaky":
        if not param:
            raise ConfigError("leaky activation needs a slope, e.g. leaky:0.1")
        try:
            return leaky_relu(float(param))
        except ValueError as exc:
            raise ConfigError(f"bad leaky slope {param!r}") from exc
    if param or base not in ("linear", "tanh", "sigmoid", "relu"):
        raise ConfigError(f"unknown activation {name!r}")
    return Activation(base)


def _build_specs(cfg: _Config):
    dims = cfg.int_list("layers", _REQUIRED)
    if dims is None or len(dims) < 2:
        raise ConfigError("layers must list at least two comma-separated dimensions")
    hidden = _parse_activation(cfg.str_("activation", "tanh"))
    output = _parse_activation(cfg.str_("output_activation", "linear"))
    specs = []
    for k in range(len(dims) - 1):
        act = output if k == len(dims) - 2 else hidden
        specs.append(LayerSpec(dims[k], dims[k + 1], act))
    return specs


def _build_scheme(cfg: _Config) -> init_mod.InitScheme:
    name = cfg.str_("scheme", "glorot")
    relu_c = cfg.bool_("relu_correct", False)
    drop_c = cfg.bool_("dropout_correct", False)
    base, _, param = name.partition(":")
    if base == "fixed":
        if not param:
            raise ConfigError("fixed scheme needs a std, e.g. fixed:0.1")
        try:
            return init_mod.fixed(float(param), relu_c, drop_c)
        except ValueError as exc:
            raise ConfigError(f"bad fixed std {param!r}") from exc
    if param or base not in ("glorot", "forward", "backward"):
        raise ConfigError(f"unknown init scheme {name!r}")
    return init_mod.InitScheme(base, relu_correction=relu_c, dropout_correction=drop_c)


def _build_loss(cfg: _Config, specs) -> Loss:
    name = cfg.str_("loss", "squared")
    if name == "squared":
        return squared_error()
    if name == "softmax-ce":
        return softmax_cross_entropy(specs[-1].d_out)
    raise ConfigError(f"unknown loss {name!r} (expected squared or softmax-ce)")


def _build_dataset(cfg: _Config, specs, loss: Loss, seed: int) -> Dataset:
    kind = cfg.str_("dataset", "blobs")
    # desk-scale image defaults: first 5000 rows, shrunk to small-input range
    n = cfg.int_("n", 5000 if kind == "mnist" else 256)
    data_scale = cfg.float_("data_scale", 1.0)
    data_seed = cfg.int_("data_seed", seed)
    input_scale = cfg.float_("input_scale", 0.1 if kind == "mnist" else 1.0)
    images = cfg.str_("mnist_images")
    labels = cfg.str_("mnist_labels")
    d_in, d_out = specs[0].d_in, specs[-1].d_out
    if kind == "mnist":
        if not images or not labels:
            raise ConfigError("dataset=mnist needs mnist_images and mnist_labels paths")
        data = load_mnist_idx(images, labels)
        if data.d_in != d_in:
            raise DataError(f"mnist rows have {data.d_in} pixels but layers expect {d_in}")
        if n < data.n_samples:
            data = data.subset(np.arange(n))
    elif kind in ("blobs", "linreg"):
        data = synth_dataset(kind, n, d_in, d_out, scale=data_scale, seed=data_seed)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if (loss.kind == "softmax_ce") != data.classification:
        raise ConfigError(f"loss {loss.kind!r} does not match dataset targets")
    if data.classification and int(data.targets.max()) >= loss.num_classes:
        raise DataError(
            f"label {int(data.targets.max())} out of range for {loss.num_classes} classes"
        )
    if input_scale != 1.0:
        data = data.scaled(input_scale)
    return data


def _seed_int(parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _unit_direction(rng: np.random.Generator, shape) -> np.ndarray:
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


# ---------------------------------------------------------------------------
# drivers


def _run_approx_error(cfg: _Config):
    specs = _build_specs(cfg)
    scheme = _build_scheme(cfg)
    loss = _build_loss(cfg, specs)
    seed = cfg.int_("seed", 0)
    data = _build_dataset(cfg, specs, loss, seed)
    probes = cfg.int_("probes", 100)
    batch_size = cfg.int_("batch_size", 32)
    thresholds = cfg.float_list("thresholds", [0.5, 1.0, 1.5])
    eps = cfg.float_("eps")
    cfg.reject_unknown()

    n = data.n_samples
    header = ["layer"] + [f"rtol_{t:g}" for t in thresholds]
    rows = []
    for k in range(len(specs)):
        reports = []
        for p in range(probes):
            net = init_mod.initialize(specs, scheme, _seed_int([seed, k, p, 0]))
            rng = np.random.default_rng(_seed_int([seed, k, p, 1]))
            g = _unit_direction(rng, net.layers[k].weights.shape)
            probe = CurvatureProbe(k, g)
            start = (p * batch_size) % n
            idx = [(start + j) % n for j in range(min(batch_size, n))]
            batch = data.subset(idx)
            approx = batch_quadform(net, batch, loss, probe, batch.n_samples)
            exact = 0.0
            for i in range(batch.n_samples):
                exact += fd_quadform(net, batch.inputs[i], loss, batch.target(i), probe,
                                     eps=eps, dropout_seed=i)
            exact /= batch.n_samples
            reports.append(QuadformReport.from_values(approx, exact))
        valid = [r for r in reports if not r.degenerate]
        row = [k]
        for t in thresholds:
            frac = sum(r.rtol <= t for r in valid) / len(valid) if valid else 0.0
            row.append(frac)
        rows.append(row)
    return header, rows


def _run_error_scaling(cfg: _Config):
    specs = _build_specs(cfg)
    scheme = _build_scheme(cfg)
    loss = _build_loss(cfg, specs)
    if loss.kind != "squared":
        raise ConfigError("error-scaling uses the squared loss")
    seed = cfg.int_("seed", 0)
    scales = cfg.float_list("scales", [0.2, 0.1, 0.05, 0.025])
    probes = cfg.int_("probes", 200)
    layer = cfg.int_("layer", 1)
    eps = cfg.float_("eps")
    cfg.reject_unknown()
    if not 0 <= layer < len(specs):
        raise ConfigError(f"layer {layer} out of range")

    net = init_mod.initialize(specs, scheme, _seed_int([seed, 0]))
    x_hat = _unit_direction(np.random.default_rng(_seed_int([seed, 1])), specs[0].d_in)
    target = _unit_direction(np.random.default_rng(_seed_int([seed, 2])), specs[-1].d_out)
    dirs = [
        _unit_direction(np.random.default_rng(_seed_int([seed, 3, p])),
                        net.layers[layer].weights.shape)
        for p in range(probes)
    ]

    med_err = []
    med_lead = []
    rows = []
    for c in scales:
        x = c * x_hat
        trace = forward(net, x)
        errs = np.empty(probes)
        leads = np.empty(probes)
        for p, g in enumerate(dirs):
            probe = CurvatureProbe(layer, g)
            from .curvature import approx_quadform
            a = approx_quadform(net, trace, loss, target, probe)
            e = fd_quadform(net, x, loss, target, probe, eps=eps)
            errs[p] = abs(e - a)
            leads[p] = abs(a)
        med_err.append(float(np.median(errs)))
        med_lead.append(float(np.median(leads)))
        rows.append([c, med_err[-1], med_lead[-1]])

    logc = np.log(np.asarray(scales))
    slope_err = float(np.polyfit(logc, np.log(med_err), 1)[0])
    slope_lead = float(np.polyfit(logc, np.log(med_lead), 1)[0])
    rows.append(["slopes", slope_err, slope_lead])
    return ["scale", "median_err", "median_lead"], rows


def _run_init_sweep(cfg: _Config):
    specs = _build_specs(cfg)
    loss = _build_loss(cfg, specs)
    seed = cfg.int_("seed", 0)
    data = _build_dataset(cfg, specs, loss, seed)
    stds = cfg.float_list("stds", [1.0, 0.1, 0.005])
    epochs = cfg.int_("epochs", 2)
    if epochs < 1:
        raise ConfigError("init-sweep needs at least one epoch")
    batch_size = cfg.int_("batch_size", 32)
    lr = cfg.float_("learning_rate", 0.01)
    eig_batch = cfg.int_("eig_batch", 64)
    eig_iters = cfg.int_("eig_iters", 100)
    eig_tol = cfg.float_("eig_tol", 1e-6)
    relu_c = cfg.bool_("relu_correct", False)
    drop_c = cfg.bool_("dropout_correct", False)
    cfg.reject_unknown()

    # eigenvalues are reported for the hidden layers (all but the output layer)
    hidden = list(range(max(len(specs) - 1, 1)))
    header = ["std"] + [f"eig_{k}" for k in hidden] + ["final_loss"]
    rows = []
    batches_per_epoch = math.ceil(data.n_samples / batch_size)
    for std in stds:
        scheme = init_mod.fixed(std, relu_c, drop_c)
        net = init_mod.initialize(specs, scheme, _seed_int([seed, 5]))
        eigs = []
        for k in hidden:
            op = batch_curvature_operator(net, data, loss, k, eig_batch)
            value, _ = top_eigenvalue(op, net.layers[k].weights.shape,
                                      iters=eig_iters, tol=eig_tol, seed=seed)
            eigs.append(value)
        tc = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch_size,
                         seed=_seed_int([seed, 6]))
        _, history = train_sgd(net, data, loss, tc)
        final_loss = float(np.mean(history[-batches_per_epoch:]))
        rows.append([std] + eigs + [final_loss])
    return header, rows


def _run_correlation(cfg: _Config):
    specs = _build_specs(cfg)
    scheme = _build_scheme(cfg)
    loss = _build_loss(cfg, specs)
    seed = cfg.int_("seed", 0)
    n_seeds = cfg.int_("n_seeds", 10)
    n_inits = cfg.int_("n_inits", 1000)
    n_perm = cfg.int_("n_perm", 999)
    second = cfg.str_("second", "jacobian")
    grad_component = cfg.int_("grad_component", 0)
    jac_layer = cfg.int_("jac_layer", len(specs) - 1)
    jac_component = cfg.int_list("jac_component", [0, 0])
    input_norm = cfg.float_("input_norm", 0.1)
    input_positive = cfg.bool_("input_positive", False)
    target_scale = cfg.float_("target_scale", 1.0)
    target_class = cfg.int_("target_class", 0)
    cfg.reject_unknown()
    if len(jac_component) != 2:
        raise ConfigError("jac_component needs two comma-separated indices")

    rng = np.random.default_rng(_seed_int([seed, 11]))
    x = rng.standard_normal(specs[0].d_in)
    if input_positive:
        x = np.abs(x)
    x *= input_norm / np.linalg.norm(x)
    if loss.kind == "squared":
        t_rng = np.random.default_rng(_seed_int([seed, 12]))
        target = target_scale * _unit_direction(t_rng, specs[-1].d_out)
    else:
        target = target_class

    reports = correlation_experiment(
        specs, scheme, x, target, loss, n_seeds=n_seeds, n_inits=n_inits,
        second=second, grad_component=grad_component, jac_layer=jac_layer,
        jac_component=tuple(jac_component), n_perm=n_perm, base_seed=seed,
    )
    header = ["seed", "r", "p_value", "n_inits", "n_perm", "detected"]
    rows = [
        [s, rep.r, rep.p_value, rep.n_samples, rep.n_permutations, int(rep.p_value < 0.05)]
        for s, rep in enumerate(reports)
    ]
    return header, rows


def _run_calibrate(cfg: _Config):
    specs = _build_specs(cfg)
    scheme = _build_scheme(cfg)
    loss = _build_loss(cfg, specs)
    seed = cfg.int_("seed", 0)
    data = _build_dataset(cfg, specs, loss, seed)
    target = cfg.float_("target", 1.0)
    tol = cfg.float_("tol", 0.1)
    layer = cfg.int_("layer", min(1, len(specs) - 1))
    max_bisect = cfg.int_("max_bisect", 64)
    sample_limit = cfg.int_("sample_limit", 64)
    power_iters = cfg.int_("power_iters", 100)
    power_tol = cfg.float_("power_tol", 1e-8)
    fd_check = cfg.bool_("fd_check", False)
    cfg.reject_unknown()

    scale, achieved = init_mod.calibrate_to_unit_hessian(
        specs, scheme, data, loss, layer, target=target, tol=tol,
        max_bisect=max_bisect, seed=seed, sample_limit=sample_limit,
        power_iters=power_iters, power_tol=power_tol,
    )
    header = ["scale", "achieved_eigenvalue"]
    row = [scale, achieved]
    if fd_check:
        from .net import scale_weights

        net = scale_weights(init_mod.initialize(specs, scheme, seed), scale)
        limit = min(sample_limit, data.n_samples)

        def fd_operator(g):
            acc = np.zeros_like(g)
            for i in range(limit):
                acc += fd_hvp(net, data.inputs[i], loss, data.target(i),
                              CurvatureProbe(layer, g), dropout_seed=i)
            return acc / limit

        fd_eig, _ = top_eigenvalue(fd_operator, net.layers[layer].weights.shape,
                                   iters=power_iters, tol=power_tol, seed=seed)
        header.append("fd_eigenvalue")
        row.append(fd_eig)
    return header, [row]


_DRIVERS = {
    "approx-error": _run_approx_error,
    "error-scaling": _run_error_scaling,
    "init-sweep": _run_init_sweep,
    "correlation": _run_correlation,
    "calibrate": _run_calibrate,
}

EXPERIMENT_NAMES = tuple(_DRIVERS)


def run_experiment(name: str, raw_config: dict, out_path) -> Path:
    """Run one named experiment and write its CSV to out_path."""
    if name not in _DRIVERS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {', '.join(_DRIVERS)}")
    cfg = _Config(raw_config)
    header, rows = _DRIVERS[name](cfg)
    return _write_csv(out_path, header, rows)
