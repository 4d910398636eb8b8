"""Slow, loop-based reference implementations used as test oracles."""

import math

import numpy as np

from geohard.clustering import kmeans_fit


def random_instance(seed, K=3, classes=("A", "B", "C")):
    """Small labeled point cloud: n <= 50 rows in d <= 5 dimensions, every class present."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    n = int(rng.integers(2 * K, 51))
    labels = [classes[i % K] for i in range(n)]
    rng.shuffle(labels)
    X = rng.normal(size=(n, d)) * rng.uniform(0.5, 5) + rng.normal(size=d) * 3
    return X, labels


def class_stats_loops(coords, labels, classes):
    cents, vars_ = [], []
    for c in classes:
        rows = [list(coords[i]) for i in range(len(labels)) if labels[i] == c]
        n = len(rows)
        d = len(rows[0])
        mu = [sum(r[j] for r in rows) / n for j in range(d)]
        var = [sum((r[j] - mu[j]) ** 2 for r in rows) / n for j in range(d)]
        cents.append(mu)
        vars_.append(var)
    return np.array(cents), np.array(vars_)


def intra_loops(variances):
    return [math.sqrt(sum(v * v for v in row)) for row in variances]


def inter_loops(centroids):
    K = len(centroids)
    out = []
    for k in range(K):
        total = 0.0
        for i in range(K):
            if i != k:
                total += sum(abs(a - b) for a, b in zip(centroids[k], centroids[i]))
        out.append(-total / (K - 1))
    return out


def cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


def spread_loops(Xtr, ytr, Xte, yte, k_shot, same_class=False):
    scores = []
    for q, yq in zip(Xte, yte):
        sims = [cosine(q, x) for x, y in zip(Xtr, ytr) if not same_class or y == yq]
        sims.sort(reverse=True)
        scores.append(sum(sims[:k_shot]) / k_shot)
    return scores


def thrust_formula(q, clusters, n_classes, k_per_class, eps):
    """clusters: list of (member rows) across all classes."""
    total = [0.0] * len(q)
    for members in clusters:
        size = len(members)
        m = [sum(r[j] for r in members) / size for j in range(len(q))]
        d = [m[j] - q[j] for j in range(len(q))]
        r = max(math.sqrt(sum(x * x for x in d)), eps)
        for j in range(len(q)):
            total[j] += size / r**2 * d[j] / r
    scale = 1.0 / (n_classes * k_per_class)
    return math.sqrt(sum((scale * t) ** 2 for t in total))


class RecordingKMeans:
    """Wraps kmeans_fit and keeps each clustering's member rows, grouped per setup."""

    def __init__(self, per_setup):
        self.per_setup = per_setup
        self.calls = []

    def __call__(self, X, k, seed=0):
        model = kmeans_fit(X, k, seed=seed)
        self.calls.append([X[model.assignments == j] for j in range(model.k)])
        return model

    def setups(self):
        n = self.per_setup
        return [sum(self.calls[i : i + n], []) for i in range(0, len(self.calls), n)]
