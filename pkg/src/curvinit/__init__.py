"""Layerwise curvature estimation and curvature-aware initialization.

The package approximates the Hessian of a loss with respect to one weight
matrix of a small dense network, using only quantities already computed in a
forward/backward pass, and uses that approximation to pick weight scales
whose top curvature eigenvalue sits at a chosen target.
"""
from .curvature import (
    CurvatureProbe,
    NonFiniteError,
    QuadformReport,
    UncenteredActivationWarning,
    approx_hvp,
    approx_quadform,
    batch_curvature_operator,
    batch_quadform,
    default_fd_eps,
    direct_v,
    factorized_v,
    fd_hvp,
    fd_quadform,
    jacobian_product_norm,
    top_eigenvalue,
)
from .data import DataError, Dataset, load_mnist_idx, synth_dataset
from .experiments import (
    EXPERIMENT_NAMES,
    ConfigError,
    parse_config_file,
    parse_config_lines,
    run_experiment,
)
from .init import (
    BracketNotFoundError,
    CalibrationError,
    InitScheme,
    calibrate_to_unit_hessian,
    fixed,
    forward_stable,
    backward_stable,
    glorot,
    initialize,
    scheme_std,
)
from .losses import Loss, loss_eval, loss_grad, loss_hessian, softmax_cross_entropy, squared_error
from .net import (
    Activation,
    ForwardTrace,
    Layer,
    LayerSpec,
    Network,
    activation_eval,
    dropout,
    draw_dropout_mask,
    forward,
    layer_jacobian,
    leaky_relu,
    linear,
    load_network,
    network_from_text,
    network_to_text,
    output_jacobian,
    relu,
    replace_weights,
    save_network,
    scale_weights,
    sigmoid,
    tanh,
    weight_gradient,
)
from .stats import (
    CorrelationReport,
    correlation_experiment,
    dropout_jacobian_factor,
    matrix_norm_factor,
    pearson_r,
    permutation_p_value,
    relu_forward_factor,
)
from .train import DivergenceError, TrainConfig, batch_loss_grad, train_sgd

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "BracketNotFoundError",
    "CalibrationError",
    "ConfigError",
    "CorrelationReport",
    "CurvatureProbe",
    "DataError",
    "Dataset",
    "DivergenceError",
    "EXPERIMENT_NAMES",
    "ForwardTrace",
    "InitScheme",
    "Layer",
    "LayerSpec",
    "Loss",
    "Network",
    "NonFiniteError",
    "QuadformReport",
    "TrainConfig",
    "UncenteredActivationWarning",
    "activation_eval",
    "approx_hvp",
    "approx_quadform",
    "backward_stable",
    "batch_curvature_operator",
    "batch_loss_grad",
    "batch_quadform",
    "calibrate_to_unit_hessian",
    "correlation_experiment",
    "default_fd_eps",
    "direct_v",
    "draw_dropout_mask",
    "dropout",
    "dropout_jacobian_factor",
    "factorized_v",
    "fd_hvp",
    "fd_quadform",
    "fixed",
    "forward",
    "forward_stable",
    "glorot",
    "initialize",
    "jacobian_product_norm",
    "layer_jacobian",
    "leaky_relu",
    "linear",
    "load_mnist_idx",
    "load_network",
    "loss_eval",
    "loss_grad",
    "loss_hessian",
    "matrix_norm_factor",
    "network_from_text",
    "network_to_text",
    "output_jacobian",
    "parse_config_file",
    "parse_config_lines",
    "pearson_r",
    "permutation_p_value",
    "relu",
    "relu_forward_factor",
    "replace_weights",
    "run_experiment",
    "save_network",
    "scale_weights",
    "scheme_std",
    "sigmoid",
    "softmax_cross_entropy",
    "squared_error",
    "synth_dataset",
    "tanh",
    "top_eigenvalue",
    "train_sgd",
    "weight_gradient",
]
