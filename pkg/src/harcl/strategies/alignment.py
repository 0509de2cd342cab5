"""Output-layer corrections for class imbalance: weight aligning, ADB rescaling and bias correction."""

from __future__ import annotations

import numpy as np

from ..network import Network
from ..numerics import log_softmax, one_hot


def wa_mdf_gamma(net: Network, n_old: int) -> float:
    """Ratio of mean old-class to mean new-class weight-row norms."""
    if n_old < 1 or n_old >= net.num_classes:
        raise ValueError("need at least one old and one new class")
    norms = np.linalg.norm(net.weights[-1], axis=1)
    mean_new = norms[n_old:].mean()
    if mean_new == 0:
        raise ValueError("new-class weight rows are all zero")
    return float(norms[:n_old].mean() / mean_new)


def wa_mdf_align(net: Network, n_old: int) -> Network:
    """Scale the new-class output rows (and their biases) so both groups share a mean norm."""
    gamma = wa_mdf_gamma(net, n_old)
    out = net.copy()
    out.weights[-1][n_old:] *= gamma
    out.biases[-1][n_old:] *= gamma
    return out


def wa_mdf_norm_gap(net: Network, n_old: int) -> float:
    norms = np.linalg.norm(net.weights[-1], axis=1)
    return float(abs(norms[n_old:].mean() - norms[:n_old].mean()))


def clamp_output_weights(net: Network) -> None:
    np.maximum(net.weights[-1], 0.0, out=net.weights[-1])


def normalize_output_rows(net: Network) -> None:
    w = net.weights[-1]
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    np.divide(w, norms, out=w, where=norms > 0)


def wa_adb_factors(class_counts, gamma: float, largest: float | None = None) -> np.ndarray:
    counts = np.asarray(class_counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError("class counts must be positive")
    n1 = counts.max() if largest is None else float(largest)
    return (n1 / counts) ** gamma


def wa_adb_rescale(net: Network, class_counts, gamma: float, largest: float | None = None) -> Network:
    """Multiply each class's weight row and bias by ``(n_1 / n_i) ** gamma``.

    ``n_1`` is ``largest`` when given (the largest class seen so far),
    otherwise the maximum of ``class_counts``.
    """
    factors = wa_adb_factors(class_counts, gamma, largest)
    if factors.shape[0] != net.num_classes:
        raise ValueError(f"need {net.num_classes} class counts, got {factors.shape[0]}")
    out = net.copy()
    out.weights[-1] *= factors[:, None]
    out.biases[-1] *= factors
    return out


def bic_apply(logits, n_old: int, alpha: float, beta: float) -> np.ndarray:
    """``alpha * y + beta`` on new-class logits; old-class logits pass through."""
    out = np.array(logits, dtype=np.float64, copy=True)
    out[..., n_old:] = alpha * out[..., n_old:] + beta
    return out


def bic_fit(logits, labels, n_old: int, epochs: int = 200, lr: float = 1e-3,
            batch_size: int = 64, rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Fit the bias-correction pair on frozen validation logits by mini-batch gradient descent.

    Starts from the identity correction ``(1, 0)``.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if not (np.any(labels < n_old) and np.any(labels >= n_old)):
        raise ValueError("validation set must contain both old and new classes")
    n = logits.shape[0]
    targets = one_hot(labels, logits.shape[1])
    alpha, beta = 1.0, 0.0
    for _ in range(epochs):
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            z = logits[idx]
            corrected = bic_apply(z, n_old, alpha, beta)
            d = (np.exp(log_softmax(corrected)) - targets[idx]) / len(idx)
            d_new = d[:, n_old:]
            alpha -= lr * float(np.sum(d_new * z[:, n_old:]))
            beta -= lr * float(np.sum(d_new))
    return alpha, beta
