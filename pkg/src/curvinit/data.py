"""Datasets: IDX image files and synthetic generators."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class Dataset:
    """Inputs plus either integer class labels or real-valued target rows."""

    inputs: np.ndarray
    targets: np.ndarray
    name: str = ""

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        t = np.array(self.targets)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DataError("inputs must be a nonempty (n, d_in) array")
        if not np.all(np.isfinite(x)):
            raise DataError("inputs must be finite")
        if t.ndim == 1:
            t = t.astype(np.int64)
            if np.any(t < 0):
                raise DataError("class labels must be nonnegative")
        elif t.ndim == 2:
            t = t.astype(np.float64)
            if not np.all(np.isfinite(t)):
                raise DataError("targets must be finite")
        else:
            raise DataError("targets must be 1-d labels or 2-d target rows")
        if t.shape[0] != x.shape[0]:
            raise DataError(f"{x.shape[0]} inputs but {t.shape[0]} targets")
        x.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", t)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def classification(self) -> bool:
        return self.targets.ndim == 1

    def target(self, i: int):
        """Per-sample target: an int for labels, a row for regression."""
        if self.classification:
            return int(self.targets[i])
        return self.targets[i]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.targets[indices], self.name)

    def scaled(self, factor: float) -> "Dataset":
        return Dataset(self.inputs * float(factor), self.targets, self.name)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label file pair into flat rows mapped to [0, 1]."""
    with open(images_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise DataError(f"{images_path}: truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", blob[:16])
    if magic != IMAGES_MAGIC:
        raise DataError(f"{images_path}: bad magic {magic}, expected {IMAGES_MAGIC}")
    want = 16 + count * rows * cols
    if len(blob) != want:
        raise DataError(f"{images_path}: expected {want} bytes, found {len(blob)}")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=16)
    inputs = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise DataError(f"{labels_path}: truncated IDX label header")
    magic, lcount = struct.unpack(">II", blob[:8])
    if magic != LABELS_MAGIC:
        raise DataError(f"{labels_path}: bad magic {magic}, expected {LABELS_MAGIC}")
    if len(blob) != 8 + lcount:
        raise DataError(f"{labels_path}: expected {8 + lcount} bytes, found {len(blob)}")
    if lcount != count:
        raise DataError(f"{count} images but {lcount} labels")
    labels = np.frombuffer(blob, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(inputs, labels, name="mnist")


def synth_dataset(kind: str, n: int, d_in: int, n_out: int, scale: float = 1.0,
                  seed: int = 0) -> Dataset:
    """Deterministic synthetic data.

    "blobs": n_out Gaussian clusters with unit-separated means, labels round
    robin, all inputs rescaled so max ||x|| equals `scale`.
    "linreg": Gaussian inputs rescaled the same way, targets from a hidden
    linear map plus N(0, 0.01^2) noise.
    """
    if n < 1 or d_in < 1 or n_out < 1:
        raise DataError("n, d_in and n_out must be positive")
    if not (np.isfinite(scale) and scale > 0):
        raise DataError("scale must be positive and finite")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        means = rng.normal(size=(n_out, d_in))
        if n_out > 1:
            gaps = [np.linalg.norm(a - b) for idx, a in enumerate(means) for b in means[idx + 1:]]
            means /= min(gaps)  # closest pair of means at distance 1
        labels = np.arange(n, dtype=np.int64) % n_out
        inputs = means[labels] + 0.25 * rng.standard_normal((n, d_in))
        inputs *= scale / np.max(np.linalg.norm(inputs, axis=1))
        return Dataset(inputs, labels, name="blobs")
    if kind == "linreg":
        inputs = rng.standard_normal((n, d_in))
        inputs *= scale / np.max(np.linalg.norm(inputs, axis=1))
        hidden = rng.normal(size=(n_out, d_in))
        targets = inputs @ hidden.T + 0.01 * rng.standard_normal((n, n_out))
        return Dataset(inputs, targets, name="linreg")
    raise DataError(f"unknown synthetic dataset kind {kind!r}")
