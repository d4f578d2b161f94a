"""Top-k accuracy and average power loss over ranked beam predictions."""
from __future__ import annotations

import numpy as np

from .fusion import topk_indices


class DegenerateSampleError(ValueError):
    """A sample whose optimal power does not exceed the noise floor."""


def _check_aligned(probs: np.ndarray, n: int) -> None:
    if probs.ndim != 2:
        raise ValueError(f"predictions must be (N, K), got {probs.shape}")
    if probs.shape[0] != n:
        raise ValueError(f"{probs.shape[0]} predictions but {n} labels")


def topk_accuracy(probs, labels, k: int) -> float:
    """Fraction of samples whose label is among the ``k`` most probable beams."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(np.int64)
    _check_aligned(probs, len(labels))
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(labels) == 0:
        return 0.0
    top = topk_indices(probs, k)
    return float(np.mean(np.any(top == labels[:, None], axis=1)))


def average_power_loss(probs, powers, k: int, p_o: float = 0.0, labels=None) -> float:
    """−10·log10 of the mean ratio (p̂ − p_o)/(p_gt − p_o), in dB.

    ``p̂`` is the best measured power among the top-k predicted beams and
    ``p_gt`` the power at the label beam (the argmax of ``powers`` unless
    ``labels`` are given).
    """
    probs = np.asarray(probs, dtype=float)
    powers = np.asarray(powers, dtype=float)
    _check_aligned(probs, len(powers))
    if powers.shape != probs.shape:
        raise ValueError(f"power vectors {powers.shape} do not match predictions {probs.shape}")
    rows = np.arange(len(powers))
    lab = np.argmax(powers, axis=1) if labels is None else np.asarray(labels).astype(np.int64)
    p_gt = powers[rows, lab]
    if np.any(p_gt <= p_o):
        bad = int(np.flatnonzero(p_gt <= p_o)[0])
        raise DegenerateSampleError(f"sample {bad}: optimal power {p_gt[bad]:.3e} <= noise floor {p_o:.3e}")
    top = topk_indices(probs, k)
    p_hat = np.take_along_axis(powers, top, axis=1).max(axis=1)
    ratio = np.mean((p_hat - p_o) / (p_gt - p_o))
    return float(-10.0 * np.log10(ratio)) if ratio != 1.0 else 0.0


def estimate_noise_floor(powers) -> float:
    """Minimum observed power over a split, used as p_o for noisy data."""
    return float(np.min(np.asarray(powers, dtype=float)))


def mean_cross_entropy(probs, labels) -> float:
    """Reference cross-entropy from probabilities, independent of the autodiff kernel."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(np.int64)
    return float(-np.mean(np.log(probs[np.arange(len(labels)), labels])))
