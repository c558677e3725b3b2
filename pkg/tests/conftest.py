"""Shared fixtures: synthetic IDX image files and small random net builders."""
import struct

import numpy as np
import pytest

from curvinit import Layer, LayerSpec, Network, forward, linear, loss_eval, relu, tanh

IMG_SIDE = 28
N_CLASSES = 10


def write_idx_pair(images_path, labels_path, images, labels):
    """Write a uint8 image stack and label vector in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", 2049, n))
        fh.write(labels.tobytes())


def make_image_set(n, seed=0):
    """Template stand-in for a digit set: one sparse template per class with a
    random per-image gain and heavy pixel noise, labels round robin. The noise
    keeps the classes from being linearly separable at a glance, which matters
    for the training-order checks."""
    rng = np.random.default_rng(seed)
    templates = 255.0 * (rng.random((N_CLASSES, IMG_SIDE * IMG_SIDE)) < 0.12)
    labels = (np.arange(n) % N_CLASSES).astype(np.uint8)
    gain = rng.uniform(0.35, 0.9, size=(n, 1))
    flat = gain * templates[labels] + rng.normal(0.0, 90.0, (n, IMG_SIDE * IMG_SIDE))
    images = np.clip(flat, 0, 255).astype(np.uint8).reshape(n, IMG_SIDE, IMG_SIDE)
    return images, labels


@pytest.fixture(scope="session")
def mnist_files(tmp_path_factory):
    """Paths to a 5000-image IDX pair shared across the session."""
    root = tmp_path_factory.mktemp("idx")
    images_path = root / "train-images-idx3-ubyte"
    labels_path = root / "train-labels-idx1-ubyte"
    images, labels = make_image_set(5000, seed=20240915)
    write_idx_pair(images_path, labels_path, images, labels)
    return str(images_path), str(labels_path)


def random_net(widths, act, rng, weight_scale=None, out_act=None):
    """Dense net with N(0, scale^2) weights and zero biases.

    weight_scale defaults to glorot-style sqrt(2/(d_in+d_out)) per layer.
    The last layer gets out_act (default linear).
    """
    layers = []
    for k in range(len(widths) - 1):
        d_in, d_out = widths[k], widths[k + 1]
        std = weight_scale if weight_scale is not None else np.sqrt(2.0 / (d_in + d_out))
        w = rng.normal(0.0, std, size=(d_out, d_in))
        a = act if k < len(widths) - 2 else (out_act or linear())
        layers.append(Layer(w, np.zeros(d_out), a))
    return Network(tuple(layers))


def unit_probe(shape, rng):
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g)


def fd_loss_weight_grad(net, x, loss, target, k, eps=1e-4, dropout_seed=0):
    """Central-difference gradient of the loss w.r.t. every entry of w^(k)."""
    w = net.layers[k].weights
    out = np.zeros_like(w)
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            for sign in (1.0, -1.0):
                shifted = w.copy()
                shifted[i, j] += sign * eps
                layers = list(net.layers)
                layers[k] = Layer(shifted, net.layers[k].bias, net.layers[k].activation)
                val = loss_eval(loss, forward(Network(tuple(layers)), x, dropout_seed).output, target)
                out[i, j] += sign * val
    return out / (2.0 * eps)


def tanh_specs(widths):
    return [
        LayerSpec(widths[k], widths[k + 1], tanh() if k < len(widths) - 2 else linear())
        for k in range(len(widths) - 1)
    ]


def relu_specs(widths):
    return [
        LayerSpec(widths[k], widths[k + 1], relu() if k < len(widths) - 2 else linear())
        for k in range(len(widths) - 1)
    ]
