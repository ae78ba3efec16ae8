"""Plain numpy primitives shared by the tape ops and the evaluation path."""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def softmax(logits, axis: int = -1, mask=None) -> np.ndarray:
    """Numerically stable softmax; entries where ``mask`` is False get 0."""
    z = np.asarray(logits, dtype=np.float64)
    if mask is None:
        shifted = z - z.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
    filled = np.where(mask, z, -np.inf)
    top = filled.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, z - top, 0.0)), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def weighted_cross_entropy(probs, target_class: int, class_weights) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if not 0 <= int(target_class) < probs.shape[-1]:
        raise IndexError(f"target class {target_class} outside [0, {probs.shape[-1]})")
    if class_weights.shape[-1] != probs.shape[-1]:
        raise ValueError("class_weights length does not match the number of classes")
    p = max(float(probs[target_class]), PROB_FLOOR)
    return float(-class_weights[target_class] * np.log(p))
