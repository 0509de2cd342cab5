"""Dense-vector primitives, seeded randomness and probability transforms.

Everything runs in float64. Random streams come from numpy's PCG64 bit
generator seeded through ``SeedSequence``; a stream is addressed by a root
seed plus a tuple of integers (the spawn key), so run ``i`` of an experiment
always sees the same draws regardless of which runs executed before it.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "PCG64"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and sub-stream ``stream``.

    ``make_rng(7, 3)`` and ``make_rng(7, 3)`` yield identical draws;
    ``make_rng(7, 3)`` and ``make_rng(7, 4)`` are statistically independent.
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError("seed and stream indices must be non-negative")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(seq))


def _as_finite(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    z = _as_finite(logits, "logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = _as_finite(logits, "logits")
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def temperature_rescale(probs, T: float, axis: int = -1) -> np.ndarray:
    """Sharpen or soften a probability vector: ``p**(1/T) / sum(p**(1/T))``.

    Works on a single vector or on a batch along ``axis``.
    """
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    p = _as_finite(probs, "probs")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.allclose(p.sum(axis=axis), 1.0, atol=1e-9):
        raise ValueError("probabilities must sum to 1")
    # log-space keeps tiny probabilities from underflowing when 1/T is large
    with np.errstate(divide="ignore"):
        logp = np.log(p) / T
    logp = logp - logp.max(axis=axis, keepdims=True)
    q = np.exp(logp)
    return q / q.sum(axis=axis, keepdims=True)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two non-zero vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def row_normalize(x: np.ndarray, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x / ||x||_row, ||x||_row)``; rows with norm < eps map to zero."""
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms < eps, 1.0, norms)
    out = x / safe[:, None]
    out[norms < eps] = 0.0
    return out, norms


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
