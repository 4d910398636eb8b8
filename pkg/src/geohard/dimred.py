"""Dimensionality reduction: PCA and a UMAP-style neighbor-graph layout.

The layout follows the usual recipe: exact k-nearest-neighbor search,
per-point bandwidth calibration into fuzzy membership strengths, fuzzy-union
symmetrization, then stochastic gradient descent on the cross-entropy
between the graph and a low-dimensional similarity curve
``1 / (1 + a * d^(2b))``.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit
from scipy.spatial.distance import cdist

from .embeddings import EmbeddingMatrix, l2_normalize, load_embeddings, store_embeddings
from .errors import DivergenceError, KTooLarge, RangeE, SizeMismatch, ValidationError

log = logging.getLogger(__name__)

EXACT_KNN_LIMIT = 4096
_CHUNK = 512
_SMOOTH_TOL = 1e-6
_SMOOTH_ITERS = 200
_GRAD_CLIP = 4.0


@dataclass(frozen=True)
class ReducedMatrix:
    ids: tuple[str, ...]
    coords: np.ndarray
    method: str
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] < 1:
            raise ValidationError("coords must be an n x E matrix with E >= 1")
        if coords.shape[0] != len(self.ids):
            raise ValidationError(f"{len(self.ids)} ids for {coords.shape[0]} rows")
        if not np.isfinite(coords).all():
            raise ValidationError("reduced coordinates must be finite")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "coords", coords)

    @property
    def E(self) -> int:
        return int(self.coords.shape[1])

    def sidecar(self) -> dict:
        return {"method": self.method, "seed": self.seed, "params": self.params}


def store_reduced(r: ReducedMatrix, path: str | os.PathLike, format: str = "binary") -> Path:
    """Persist coordinates in the embedding file format plus a ``.json`` sidecar."""
    path = Path(path)
    store_embeddings(EmbeddingMatrix(r.ids, r.coords, source_tag=r.method), path, format)
    sidecar = path.with_name(path.name + ".json")
    tmp = sidecar.with_name(sidecar.name + ".tmp")
    tmp.write_text(json.dumps(r.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, sidecar)
    return sidecar


def load_reduced(path: str | os.PathLike) -> ReducedMatrix:
    path = Path(path)
    m = load_embeddings(path)
    sidecar = path.with_name(path.name + ".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    return ReducedMatrix(m.ids, m.as_float64(), meta.get("method", "unknown"), meta.get("seed"), meta.get("params", {}))


def _default_ids(n: int, ids: Sequence[str] | None) -> tuple[str, ...]:
    if ids is None:
        return tuple(str(i) for i in range(n))
    if len(ids) != n:
        raise SizeMismatch(f"{len(ids)} ids for {n} rows")
    return tuple(ids)


# --------------------------------------------------------------------------- PCA


def pca_fit_transform(
    X: np.ndarray, E: int = 2, center: bool = True, ids: Sequence[str] | None = None
) -> ReducedMatrix:
    """Project onto the top-``E`` principal directions.

    Each component is sign-fixed so that its largest-magnitude loading is
    positive. ``params["explained_variance_ratio"]`` holds the ratios of the
    full decomposition (length ``min(n, d)``), not only the kept ones.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("X must be a 2-D matrix")
    n, d = X.shape
    if n < 2:
        raise ValidationError("PCA needs at least 2 rows")
    if not 1 <= E <= min(n - 1, d):
        raise RangeE(f"E={E} outside [1, {min(n - 1, d)}] for a {n}x{d} input")
    mean = X.mean(axis=0) if center else np.zeros(d)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    for row in vt:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1
    var = s**2
    total = var.sum()
    ratio = var / total if total > 0 else np.zeros_like(var)

    coords = Xc @ vt[:E].T
    tol = max(n, d) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    dead = s[:E] <= tol
    if dead.any():
        warnings.warn(
            f"data has rank {int((s > tol).sum())} < E={E}; trailing components zero-padded",
            RuntimeWarning,
            stacklevel=2,
        )
        coords[:, dead] = 0.0
    params = {
        "E": E,
        "center": center,
        "explained_variance_ratio": [float(v) for v in ratio],
    }
    return ReducedMatrix(_default_ids(n, ids), coords, "pca", None, params)


# ------------------------------------------------------------------ kNN graph


@dataclass(frozen=True)
class NeighborGraph:
    indices: np.ndarray  # n x k, nearest first, self excluded
    distances: np.ndarray  # n x k
    rhos: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray  # n x k directed memberships
    graph: sp.csr_matrix  # symmetrized fuzzy union, zero diagonal

    @property
    def k(self) -> int:
        return int(self.indices.shape[1])


def _prepare_metric(X: np.ndarray, metric: str) -> tuple[np.ndarray, str]:
    if metric == "euclidean":
        return X, "euclidean"
    if metric == "cosine":
        return l2_normalize(X), "cosine"
    raise ValidationError(f"unsupported metric {metric!r}")


def nearest_neighbors(X: np.ndarray, k: int, metric: str = "euclidean") -> tuple[np.ndarray, np.ndarray]:
    """Exact brute-force kNN (self excluded); ties go to the lower index."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise ValidationError("k must be positive")
    if k >= n:
        raise KTooLarge(f"k={k} must be smaller than n={n}")
    Z, m = _prepare_metric(X, metric)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _CHUNK):
        stop = min(n, start + _CHUNK)
        D = cdist(Z[start:stop], Z, metric=m)
        if m == "cosine":
            np.clip(D, 0.0, 2.0, out=D)
        rows = np.arange(stop - start)
        D[rows, rows + start] = np.inf
        order = np.argsort(D, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        dist[start:stop] = np.take_along_axis(D, order, axis=1)
    return idx, dist


def _smooth_knn(dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row bandwidth so that sum_j exp(-(d_j - rho) / sigma) = log2(k)."""
    n, k = dist.shape
    target = np.log2(k)
    positive = np.where(dist > 0, dist, np.inf)
    rho = positive.min(axis=1)
    rho[~np.isfinite(rho)] = 0.0
    shifted = np.maximum(dist - rho[:, None], 0.0)

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    sigma = np.ones(n)
    for _ in range(_SMOOTH_ITERS):
        with np.errstate(divide="ignore", over="ignore"):
            psum = np.exp(-shifted / sigma[:, None]).sum(axis=1)
        done = np.abs(psum - target) < _SMOOTH_TOL
        if done.all():
            break
        too_big = psum > target
        hi = np.where(too_big & ~done, sigma, hi)
        lo = np.where(~too_big & ~done, sigma, lo)
        sigma = np.where(
            done,
            sigma,
            np.where(np.isfinite(hi), (lo + hi) / 2.0, sigma * 2.0),
        )
    return rho, sigma


def knn_graph(X: np.ndarray, k: int, metric: str = "euclidean") -> NeighborGraph:
    """k-NN graph with calibrated fuzzy memberships and their fuzzy union.

    Search is exact at every size: for ``n`` above ``EXACT_KNN_LIMIT`` the
    brute force simply runs in row chunks, so recall is 1.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    idx, dist = nearest_neighbors(X, k, metric)
    rho, sigma = _smooth_knn(dist)
    with np.errstate(divide="ignore", over="ignore"):
        w = np.exp(-np.maximum(dist - rho[:, None], 0.0) / sigma[:, None])
    rows = np.repeat(np.arange(n), k)
    W = sp.coo_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n)).tocsr()
    P = W + W.T - W.multiply(W.T)
    P = sp.csr_matrix(P)
    P.setdiag(0.0)
    P.eliminate_zeros()
    P.sort_indices()
    return NeighborGraph(idx, dist, rho, sigma, w, P)


def knn_preservation(X: np.ndarray, Y: np.ndarray, k: int = 10, metric: str = "euclidean") -> float:
    """Mean fraction of each point's k nearest neighbors shared between X and Y.

    ``metric`` applies to X only; Y is always compared in Euclidean space.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise SizeMismatch(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    ix, _ = nearest_neighbors(X, k, metric)
    iy, _ = nearest_neighbors(Y, k, "euclidean")
    n = X.shape[0]
    overlap = 0
    for a, b in zip(ix, iy):
        overlap += np.intersect1d(a, b, assume_unique=True).size
    return overlap / (n * k)


# ------------------------------------------------------------------- layout


@dataclass(frozen=True)
class UmapConfig:
    n_neighbors: int = 15
    min_dist: float = 0.1
    n_epochs: int = 500
    learning_rate: float = 1.0
    negative_sample_rate: int = 5
    metric: str = "cosine"
    E: int = 2
    spread: float = 1.0
    repulsion_strength: float = 1.0
    init: str = "spectral"
    normalize: bool = False

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValidationError("n_neighbors must be positive")
        if self.min_dist < 0:
            raise ValidationError("min_dist must be >= 0")
        if self.n_epochs < 1 or self.learning_rate <= 0 or self.negative_sample_rate < 1:
            raise ValidationError("n_epochs, learning_rate and negative_sample_rate must be positive")
        if self.E < 1:
            raise ValidationError("E must be >= 1")
        if self.metric not in ("euclidean", "cosine"):
            raise ValidationError(f"unsupported metric {self.metric!r}")
        if self.init not in ("spectral", "pca"):
            raise ValidationError(f"unsupported init {self.init!r}")


def fit_ab(spread: float, min_dist: float) -> tuple[float, float]:
    """Fit ``1 / (1 + a x^(2b))`` to the offset-exponential target curve."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    (a, b), _ = curve_fit(curve, xv, yv, p0=(1.0, 1.0), maxfev=10000)
    return float(a), float(b)


@numba.njit(cache=True)
def _attraction_coef(dist2, a, b):
    if dist2 <= 0.0:
        return 0.0
    return -2.0 * a * b * dist2 ** (b - 1.0) / (a * dist2**b + 1.0)


@numba.njit(cache=True)
def _repulsion_coef(dist2, a, b, gamma):
    return 2.0 * gamma * b / ((0.001 + dist2) * (a * dist2**b + 1.0))


def attraction_loss(yi: np.ndarray, yj: np.ndarray, a: float, b: float, weight: float = 1.0) -> float:
    """Cross-entropy attraction term of one edge: ``w * log(1 + a * d^(2b))``."""
    d2 = float(np.sum((np.asarray(yi) - np.asarray(yj)) ** 2))
    return weight * float(np.log1p(a * d2**b))


def attraction_grad(yi: np.ndarray, yj: np.ndarray, a: float, b: float, weight: float = 1.0) -> np.ndarray:
    """Gradient of :func:`attraction_loss` with respect to ``yi`` (unclipped).

    Uses the same coefficient routine as the layout kernel; the kernel moves
    points along the negative of this gradient.
    """
    diff = np.asarray(yi, dtype=np.float64) - np.asarray(yj, dtype=np.float64)
    return -weight * _attraction_coef(float(diff @ diff), a, b) * diff


@numba.njit(cache=True)
def _clip(v):
    if v > 4.0:
        return 4.0
    if v < -4.0:
        return -4.0
    return v


@numba.njit(cache=True)
def _sgd_epoch(Y, head, tail, neg_offsets, neg_tails, a, b, gamma, alpha):
    dim = Y.shape[1]
    for e in range(head.shape[0]):
        i = head[e]
        j = tail[e]
        d2 = 0.0
        for c in range(dim):
            diff = Y[i, c] - Y[j, c]
            d2 += diff * diff
        coef = _attraction_coef(d2, a, b)
        for c in range(dim):
            g = _clip(coef * (Y[i, c] - Y[j, c]))
            Y[i, c] += g * alpha
            Y[j, c] -= g * alpha
        for p in range(neg_offsets[e], neg_offsets[e + 1]):
            k = neg_tails[p]
            if k == i:
                continue
            d2 = 0.0
            for c in range(dim):
                diff = Y[i, c] - Y[k, c]
                d2 += diff * diff
            if d2 > 0.0:
                coef = _repulsion_coef(d2, a, b, gamma)
                for c in range(dim):
                    Y[i, c] += _clip(coef * (Y[i, c] - Y[k, c])) * alpha
            else:
                for c in range(dim):
                    Y[i, c] += _GRAD_CLIP * alpha


def _spectral_init(P: sp.csr_matrix, E: int) -> np.ndarray | None:
    n = P.shape[0]
    n_comp, _ = sp.csgraph.connected_components(P, directed=False)
    if n_comp > 1 or n <= E + 1:
        return None
    deg = np.asarray(P.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    L = sp.identity(n) - sp.diags(dinv) @ P @ sp.diags(dinv)
    if n <= 3000:
        _, vecs = np.linalg.eigh(L.toarray())
    else:
        from scipy.sparse.linalg import eigsh

        v0 = np.ones(n) / np.sqrt(n)
        _, vecs = eigsh(L.tocsc(), k=E + 1, which="SM", v0=v0, tol=1e-4, maxiter=n * 5)
    emb = vecs[:, 1 : E + 1]
    for col in emb.T:
        j = int(np.argmax(np.abs(col)))
        if col[j] < 0:
            col *= -1
    return emb


def _pca_init(X: np.ndarray, E: int) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    for row in vt:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1
    out = Xc @ vt[:E].T
    if out.shape[1] < E:
        out = np.hstack([out, np.zeros((out.shape[0], E - out.shape[1]))])
    return out


def _initial_layout(X: np.ndarray, P: sp.csr_matrix, cfg: UmapConfig, rng: np.random.Generator) -> tuple[np.ndarray, str]:
    Y = None
    used = cfg.init
    if cfg.init == "spectral":
        Y = _spectral_init(P, cfg.E)
        if Y is None:
            used = "pca"
            log.info("neighbor graph is disconnected; falling back to PCA initialization")
    if Y is None:
        Y = _pca_init(X, cfg.E)
    scale = np.abs(Y).max()
    Y = Y * (10.0 / scale) if scale > 0 else Y
    Y = Y + rng.normal(scale=1e-4, size=Y.shape)
    return np.ascontiguousarray(Y, dtype=np.float64), used


def umap_fit_transform(
    X: np.ndarray,
    cfg: UmapConfig = UmapConfig(),
    seed: int = 0,
    ids: Sequence[str] | None = None,
) -> ReducedMatrix:
    """Nonlinear neighbor-embedding layout of ``X`` into ``cfg.E`` dimensions.

    When ``ids`` are given, rows are processed in sorted-id order so the
    layout per id does not depend on how the input rows were stored.
    Single-threaded and deterministic for fixed ``(X, cfg, seed)``.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n <= cfg.n_neighbors:
        raise KTooLarge(f"need more than n_neighbors={cfg.n_neighbors} points, got {n}")
    if not np.isfinite(X).all():
        raise ValidationError("input contains non-finite values")
    out_ids = _default_ids(n, ids)
    order = np.argsort(np.asarray(out_ids, dtype=object), kind="stable") if ids is not None else np.arange(n)
    Xs = X[order]
    if cfg.normalize:
        Xs = l2_normalize(Xs)

    rng = np.random.default_rng(seed)
    g = knn_graph(Xs, cfg.n_neighbors, cfg.metric)
    P = g.graph.tocoo()
    keep = P.data >= P.data.max() / cfg.n_epochs
    head = P.row[keep].astype(np.int64)
    tail = P.col[keep].astype(np.int64)
    w = P.data[keep]

    a, b = fit_ab(cfg.spread, cfg.min_dist)
    Y, init_used = _initial_layout(Xs, g.graph, cfg, rng)

    eps = w.max() / w
    eps_neg = eps / cfg.negative_sample_rate
    next_sample = eps.copy()
    next_neg = eps_neg.copy()
    for epoch in range(cfg.n_epochs):
        active = np.flatnonzero(next_sample <= epoch)
        if active.size:
            n_neg = np.floor((epoch - next_neg[active]) / eps_neg[active]).astype(np.int64)
            n_neg = np.maximum(n_neg, 0)
            offsets = np.zeros(active.size + 1, dtype=np.int64)
            np.cumsum(n_neg, out=offsets[1:])
            neg_tails = rng.integers(0, n, size=int(offsets[-1]))
            alpha = cfg.learning_rate * (1.0 - epoch / cfg.n_epochs)
            _sgd_epoch(Y, head[active], tail[active], offsets, neg_tails, a, b, cfg.repulsion_strength, alpha)
            next_sample[active] += eps[active]
            next_neg[active] += n_neg * eps_neg[active]
            if not np.isfinite(Y).all():
                raise DivergenceError(f"non-finite layout at epoch {epoch}")

    coords = np.empty_like(Y)
    coords[order] = Y
    params = asdict(cfg)
    params.update({"a": a, "b": b, "init_used": init_used, "n_edges": int(head.size)})
    return ReducedMatrix(out_ids, coords, "umap", seed, params)
