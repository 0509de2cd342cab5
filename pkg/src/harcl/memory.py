"""Fixed-budget per-class replay memory and exemplar samplers.

Samplers work on embeddings (typically penultimate-layer activations of
the freshly trained model) and return row indices into the array they are
given. All of them are deterministic for fixed inputs and generator state.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SAMPLERS = ("random", "herding", "exemplar", "fwsr", "boundary")


class SamplerWarning(UserWarning):
    """A sampler fell back to a weaker rule or stopped before converging."""


def sample_random(n: int, s: int, rng: np.random.Generator) -> np.ndarray:
    if s < 1:
        raise ValueError("s must be >= 1")
    if s >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=s, replace=False))


def _pairwise_dist(E: np.ndarray, F: np.ndarray | None = None) -> np.ndarray:
    F = E if F is None else F
    sq = np.sum(E * E, axis=1)[:, None] + np.sum(F * F, axis=1)[None, :] - 2.0 * E @ F.T
    return np.sqrt(np.maximum(sq, 0.0))


def sample_herding(embeddings, s: int) -> np.ndarray:
    """The ``s`` points nearest the class mean, nearest first (lowest index wins ties)."""
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if s < 1 or E.shape[0] == 0:
        raise ValueError("need s >= 1 and at least one embedding")
    d = np.linalg.norm(E - E.mean(axis=0), axis=1)
    return np.argsort(d, kind="stable")[:s]


def sample_exemplar(embeddings, s: int) -> np.ndarray:
    """Greedy k-medoids: repeatedly add the point that most lowers the total nearest-exemplar distance."""
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    n = E.shape[0]
    if s < 1:
        raise ValueError("s must be >= 1")
    if s >= n:
        return np.arange(n)
    D = _pairwise_dist(E)
    chosen: list[int] = []
    nearest = np.full(n, np.inf)
    for _ in range(s):
        # cost[c] = sum_j min(nearest_j, D[j, c])
        cost = np.minimum(nearest[:, None], D).sum(axis=0)
        cost[chosen] = np.inf
        c = int(np.argmin(cost))
        chosen.append(c)
        nearest = np.minimum(nearest, D[:, c])
    return np.array(chosen)


def sample_fwsr(embeddings, s: int, max_iters: int = 500, tol: float = 1e-6, radius: float | None = None) -> np.ndarray:
    """Frank-Wolfe sparse self-representation.

    Minimises ``||Y - Y Z||_F^2`` over ``Z`` in the row-wise l1,2 ball of
    ``radius`` (columns of ``Y`` are the raw samples). Rows of ``Z`` with
    the largest l2 mass are the selected representatives. Stops when the
    Frank-Wolfe duality gap falls below ``tol`` times the initial objective
    or after ``max_iters`` iterations; in the latter case the last iterate
    (the best one, since exact line search never increases the objective)
    is used and a :class:`SamplerWarning` is emitted.

    The default radius ``sqrt(n * s)`` is the norm budget of ``s`` atoms
    that each reproduce ``n / s`` samples with unit weight. Samples are not
    centred: centring drops the rank of ``k`` clusters to ``k - 1`` and lets
    fewer atoms span them all.
    """
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    n = E.shape[0]
    if s < 1:
        raise ValueError("s must be >= 1")
    if s >= n:
        return np.arange(n)
    Y = E.T
    K = Y.T @ Y
    f0 = float(np.trace(K))
    if f0 <= 0:
        # every sample coincides; any one represents the class
        return np.arange(min(s, n))
    tau = float(np.sqrt(n * s)) if radius is None else float(radius)
    Z = np.zeros((n, n))
    converged = False
    for _ in range(max_iters):
        R = K - K @ Z                      # Y^T (Y - Y Z)
        grad = -2.0 * R
        row_norms = np.linalg.norm(grad, axis=1)
        i = int(np.argmax(row_norms))
        if row_norms[i] == 0:
            converged = True
            break
        S = np.zeros_like(Z)
        S[i] = -tau * grad[i] / row_norms[i]
        D = S - Z
        gap = -float(np.sum(grad * D))
        if gap <= tol * f0:
            converged = True
            break
        # exact line search on the quadratic ||Y - Y(Z + t D)||^2
        YD = Y @ D
        curv = float(np.sum(YD * YD))
        t = 1.0 if curv <= 0 else min(1.0, gap / (2.0 * curv))
        Z += t * D
    if not converged:
        warnings.warn(f"FWSR stopped after {max_iters} iterations without reaching tol={tol}", SamplerWarning)
    return _pick_atoms(Z, s)


def _pick_atoms(Z, s: int, max_cos: float = 0.95) -> np.ndarray:
    """Rows of ``Z`` by decreasing l2 mass, skipping near-parallel rows.

    Near-duplicate samples can split one atom's coefficients between them
    at no cost in the objective; their rows are nearly parallel because
    they reproduce the same samples. Skipped rows only fill remaining slots.
    """
    mass = np.linalg.norm(Z, axis=1)
    order = np.argsort(-mass, kind="stable")
    picked: list[int] = []
    for i in order:
        if len(picked) == s or mass[i] == 0:
            break
        if all(abs(Z[i] @ Z[j]) < max_cos * mass[i] * mass[j] for j in picked):
            picked.append(int(i))
    rest = [int(i) for i in order if i not in picked]
    return np.array(picked + rest[: s - len(picked)], dtype=np.int64)


def sample_boundary(embeddings, labels, target, s: int) -> np.ndarray:
    """Rows of class ``target`` closest to any other class (nearest-enemy ranking).

    Returns indices relative to the rows of ``target`` in ``embeddings``.
    Falls back to herding with a :class:`SamplerWarning` when no other
    class is visible.
    """
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    labels = np.asarray(labels)
    own = np.flatnonzero(labels == target)
    other = np.flatnonzero(labels != target)
    if own.size == 0:
        raise ValueError(f"no samples of class {target}")
    if s < 1:
        raise ValueError("s must be >= 1")
    if other.size == 0:
        warnings.warn("boundary sampling needs two classes; falling back to herding", SamplerWarning)
        return sample_herding(E[own], s)
    enemy = _pairwise_dist(E[own], E[other]).min(axis=1)
    return np.argsort(enemy, kind="stable")[:s]


@dataclass
class ReplayMemory:
    """Per-class exemplar store with a fixed per-class budget."""

    budget: int
    sampler: str = "random"
    store: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; choose from {SAMPLERS}")

    def __len__(self) -> int:
        return sum(len(v) for v in self.store.values())

    @property
    def classes(self) -> list[int]:
        return sorted(self.store)

    def arrays(self, classes=None) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(X, y)`` for ``classes`` (all stored classes by default)."""
        classes = self.classes if classes is None else [c for c in classes if c in self.store]
        if not classes:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        X = np.vstack([self.store[c] for c in classes])
        y = np.concatenate([np.full(len(self.store[c]), c, dtype=np.int64) for c in classes])
        return X, y

    def to_csv(self, path) -> None:
        """Dump as ``class,index,f0..fN`` rows."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            dim = next((v.shape[1] for v in self.store.values() if v.size), 0)
            w.writerow(["class", "index"] + [f"f{i}" for i in range(dim)])
            for c in self.classes:
                for i, row in enumerate(self.store[c]):
                    w.writerow([c, i] + [repr(float(x)) for x in row])


def select_indices(sampler: str, embeddings, s: int, rng: np.random.Generator,
                   labels=None, target=None) -> np.ndarray:
    """Dispatch to a sampler. ``labels``/``target`` are needed by boundary sampling only."""
    E = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if sampler == "random":
        n = E.shape[0] if labels is None else int(np.sum(np.asarray(labels) == target))
        return sample_random(n, s, rng)
    if sampler == "boundary":
        if labels is None:
            raise ValueError("boundary sampling needs labels for every embedding")
        return sample_boundary(E, labels, target, s)
    own = E if labels is None else E[np.asarray(labels) == target]
    if sampler == "herding":
        return sample_herding(own, s)
    if sampler == "exemplar":
        return sample_exemplar(own, s)
    if sampler == "fwsr":
        return sample_fwsr(own, s)
    raise ValueError(f"unknown sampler {sampler!r}; choose from {SAMPLERS}")


def update_memory(memory: ReplayMemory, X, y, embeddings, classes, rng: np.random.Generator,
                  context_embeddings=None, context_labels=None) -> ReplayMemory:
    """Store exemplars for each class in ``classes``; already stored classes are left untouched.

    ``embeddings`` are row-aligned with ``X``. ``context_*`` supply extra
    labelled embeddings (e.g. the current memory) that boundary sampling
    treats as competing classes.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    E = np.asarray(embeddings, dtype=np.float64)
    if E.shape[0] != X.shape[0] or y.shape[0] != X.shape[0]:
        raise ValueError("X, y and embeddings must be row-aligned")
    if memory.sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {memory.sampler!r}")
    if memory.budget == 0:
        return memory
    all_E, all_y = E, y
    if context_embeddings is not None and len(context_embeddings):
        all_E = np.vstack([E, context_embeddings])
        all_y = np.concatenate([y, context_labels])
    for c in classes:
        if c in memory.store:
            continue
        rows = np.flatnonzero(y == c)
        if rows.size == 0:
            raise ValueError(f"class {c} has no training data")
        if memory.sampler == "boundary":
            picked = select_indices("boundary", all_E, memory.budget, rng, labels=all_y, target=c)
        else:
            picked = select_indices(memory.sampler, E[rows], memory.budget, rng)
        memory.store[c] = X[rows[picked]].copy()
    return memory
