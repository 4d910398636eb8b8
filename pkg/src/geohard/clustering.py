"""Seeded k-means (k-means++ initialization, Lloyd iterations)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import SizeMismatch, ValidationError

DEFAULT_SEEDS = (2, 4, 42, 102, 144)


@dataclass(frozen=True)
class KMeansModel:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    seed: int
    inertia_history: tuple[float, ...] = field(default=(), repr=False)
    init: str = "k-means++"

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "init": self.init,
            "inertia": self.inertia,
            "iterations_run": self.iterations_run,
            "centroids": self.centroids.tolist(),
            "assignments": self.assignments.tolist(),
        }


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen center
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        closest = np.minimum(closest, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _assign(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    D = _sq_dists(X, C)
    labels = np.argmin(D, axis=1)
    return labels, D[np.arange(X.shape[0]), labels]


def _repair_empty(X: np.ndarray, labels: np.ndarray, dist: np.ndarray, k: int) -> bool:
    repaired = False
    for j in range(k):
        if np.any(labels == j):
            continue
        sizes = np.bincount(labels, minlength=k)
        movable = sizes[labels] > 1
        cand = np.where(movable, dist, -np.inf)
        far = int(np.argmax(cand))
        labels[far] = j
        dist[far] = 0.0
        repaired = True
    return repaired


@numba.njit(cache=True)
def _hartigan(X, labels, C, counts, max_passes):
    """Single-point transfers that strictly lower inertia; C and counts are kept exact."""
    n, d = X.shape
    k = C.shape[0]
    for _ in range(max_passes):
        moved = False
        for i in range(n):
            a = labels[i]
            if counts[a] <= 1:
                continue
            da = 0.0
            for t in range(d):
                da += (X[i, t] - C[a, t]) ** 2
            remove_gain = counts[a] / (counts[a] - 1.0) * da
            best = a
            best_cost = remove_gain
            for b in range(k):
                if b == a:
                    continue
                db = 0.0
                for t in range(d):
                    db += (X[i, t] - C[b, t]) ** 2
                cost = counts[b] / (counts[b] + 1.0) * db
                if cost < best_cost * (1.0 - 1e-12):
                    best = b
                    best_cost = cost
            if best != a:
                for t in range(d):
                    C[a, t] = (C[a, t] * counts[a] - X[i, t]) / (counts[a] - 1.0)
                    C[best, t] = (C[best, t] * counts[best] + X[i, t]) / (counts[best] + 1.0)
                counts[a] -= 1
                counts[best] += 1
                labels[i] = best
                moved = True
        if not moved:
            break


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float):
    C = _kmeanspp(X, k, rng)
    labels, dist = _assign(X, C)
    _repair_empty(X, labels, dist, k)
    history = [float(dist.sum())]

    it = 0
    for it in range(1, max_iter + 1):
        newC = np.stack([X[labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.linalg.norm(newC - C))
        C = newC
        labels, dist = _assign(X, C)
        repaired = _repair_empty(X, labels, dist, k)
        inertia = float(dist.sum())
        if inertia > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means inertia increased at iteration {it}: {history[-1]} -> {inertia}")
        history.append(inertia)
        if shift < tol and not repaired:
            break

    # Lloyd fixed points can still be improved by moving single points.
    C = np.stack([X[labels == j].mean(axis=0) for j in range(k)])
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    labels = labels.astype(np.int64)
    _hartigan(X, labels, C, counts, 100)
    C = np.stack([X[labels == j].mean(axis=0) for j in range(k)])
    inertia = float(((X - C[labels]) ** 2).sum())
    if inertia > history[-1] * (1 + 1e-12) + 1e-12:
        raise AssertionError(f"k-means inertia increased in refinement: {history[-1]} -> {inertia}")
    history.append(inertia)
    return C, labels, history, it


def kmeans_fit(
    X: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-4, n_init: int = 10
) -> KMeansModel:
    """Cluster rows of ``X`` into ``k`` groups.

    Runs ``n_init`` k-means++ starts drawn from one seeded generator and keeps
    the lowest-inertia run (earliest on ties). Each run iterates Lloyd steps
    until the Frobenius norm of the centroid shift drops below ``tol`` or
    ``max_iter`` is reached, then applies Hartigan single-point transfers.
    A cluster that empties out is reseeded with the point farthest from its
    own centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("X must be a 2-D matrix")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} must lie in [1, n={n}]")
    if n_init < 1:
        raise ValidationError("n_init must be >= 1")
    if not np.isfinite(X).all():
        raise ValidationError("X contains non-finite values")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(X, k, rng, max_iter, tol)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    C, labels, history, it = best
    return KMeansModel(C, labels.astype(np.int64), history[-1], it, seed, tuple(history), f"k-means++ x{n_init} + hartigan")


def nearest_to_centroid(X: np.ndarray, model: KMeansModel) -> list[int]:
    """Index of the member closest to each centroid; ties go to the lower index."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.centroids.shape[1]:
        raise SizeMismatch(f"X has dimension {X.shape[-1]}, model has {model.centroids.shape[1]}")
    if X.shape[0] != model.assignments.shape[0]:
        raise SizeMismatch("model was fitted on a different number of points")
    out = []
    for j in range(model.k):
        members = np.flatnonzero(model.assignments == j)
        d = ((X[members] - model.centroids[j]) ** 2).sum(axis=1)
        out.append(int(members[np.argmin(d)]))
    return out
