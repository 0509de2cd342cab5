"""Gradient projections used by GEM and A-GEM."""

from __future__ import annotations

import numpy as np


class ProjectionError(RuntimeError):
    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


def _solve_dual(A, b, tol: float, max_iter: int) -> np.ndarray:
    """Lawson-Hanson active-set method for ``min_{v >= 0} 1/2 v^T A v + b^T v``.

    ``A`` is positive semi-definite (a Gram matrix). Indices enter the passive
    set by largest negative gradient; an infeasible subproblem solution is
    walked back to the boundary and the blocking indices leave again.
    """
    k = b.size
    v = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    scale = max(1.0, float(np.max(np.abs(b))))
    it = 0
    while True:
        w = -(A @ v + b)
        cand = np.where(~passive, w, -np.inf)
        j = int(np.argmax(cand))
        if cand[j] <= tol * scale:
            return v
        passive[j] = True
        while True:
            it += 1
            if it > max_iter:
                raise ProjectionError("GEM dual did not converge", max_iter)
            z = np.zeros(k)
            idx = np.flatnonzero(passive)
            z[idx], *_ = np.linalg.lstsq(A[np.ix_(idx, idx)], -b[idx], rcond=None)
            if np.all(z[idx] > 0):
                v = z
                break
            neg = idx[z[idx] <= 0]
            step = np.min(v[neg] / (v[neg] - z[neg]))
            v = v + step * (z - v)
            passive &= v > tol * scale * 1e-3
            v[~passive] = 0.0
            if not np.any(passive):
                break


def gem_project(g, memory_grads, tol: float = 1e-10, max_iter: int = 1000) -> np.ndarray:
    """Closest vector to ``g`` whose inner product with every memory gradient is non-negative.

    Works on the dual ``min_{v >= 0} 1/2 v^T (G G^T) v + (G g)^T v`` and
    returns ``g + G^T v``. If no constraint is violated ``g`` is returned
    unchanged.
    """
    g = np.asarray(g, dtype=np.float64).ravel()
    G = np.atleast_2d(np.asarray(memory_grads, dtype=np.float64))
    if G.shape[0] == 0:
        raise ValueError("need at least one memory gradient")
    if G.shape[1] != g.size:
        raise ValueError(f"memory gradients have length {G.shape[1]}, g has {g.size}")
    b = G @ g
    if np.all(b >= 0):
        return g.copy()
    return g + G.T @ _solve_dual(G @ G.T, b, tol, max_iter)


def agem_project(g, ref_grad) -> np.ndarray:
    """Remove the component of ``g`` that opposes the averaged memory gradient."""
    g = np.asarray(g, dtype=np.float64).ravel()
    r = np.asarray(ref_grad, dtype=np.float64).ravel()
    if r.shape != g.shape:
        raise ValueError("g and the reference gradient differ in length")
    rr = float(r @ r)
    if rr == 0:
        raise ValueError("reference gradient is zero")
    dot = float(g @ r)
    if dot >= 0:
        return g.copy()
    return g - (dot / rr) * r
