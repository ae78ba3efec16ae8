from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .rng import RngStream

TRUNCATION = 2.0


@dataclass
class DenseLayer:
    """Fully-connected layer; ``weights`` is (out_units, in_units)."""

    weights: object
    bias: object
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        w, b = np.shape(_raw(self.weights)), np.shape(_raw(self.bias))
        if len(w) != 2 or b != (w[0],):
            raise ValueError(f"inconsistent layer shapes: weights {w}, bias {b}")

    @property
    def in_units(self) -> int:
        return np.shape(_raw(self.weights))[1]

    @property
    def out_units(self) -> int:
        return np.shape(_raw(self.weights))[0]


def _raw(x):
    return x.data if isinstance(x, ad.Tensor) else x


def init_truncated_normal(shape, mean: float = 0.0, std: float = 0.045,
                          rng: RngStream | None = None) -> np.ndarray:
    """Normal draws resampled until they fall within ``mean +- 2*std``."""
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    gen = (rng or RngStream(0)).generator()
    out = gen.normal(mean, std, size=shape)
    bad = np.abs(out - mean) > TRUNCATION * std
    while bad.any():
        out[bad] = gen.normal(mean, std, size=int(bad.sum()))
        bad = np.abs(out - mean) > TRUNCATION * std
    return out


def dropout(x, rate: float, training: bool, gen: np.random.Generator | None):
    """Inverted dropout: survivors are scaled by 1/(1-rate) in training mode."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return ad.as_tensor(x)
    keep = gen.random(np.shape(_raw(x))) >= rate
    return ad.mul(x, keep / (1.0 - rate))


def mlp_forward(layers: Sequence[DenseLayer], x, dropout_rate: float = 0.0,
                training: bool = False, rng: RngStream | None = None):
    """Run ``x`` through ``layers``.

    Dropout follows every layer except the last. Returns the output tensor and
    the list of per-layer outputs.
    """
    if not layers:
        raise ValueError("mlp_forward needs at least one layer")
    h = ad.as_tensor(x)
    if h.shape[-1] != layers[0].in_units:
        raise ValueError(f"input width {h.shape[-1]} != first layer in_units {layers[0].in_units}")
    gen = rng.generator() if (training and dropout_rate > 0) else None
    cache = []
    for i, layer in enumerate(layers):
        h = ad.ACTIVATIONS[layer.activation](ad.linear(h, layer.weights, layer.bias))
        if i < len(layers) - 1:
            h = dropout(h, dropout_rate, training, gen)
        cache.append(h)
    return h, cache
