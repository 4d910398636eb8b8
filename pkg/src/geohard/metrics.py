"""Class-wise hardness metrics.

Orientation conventions (used by the correlation protocol):

* ``intra``, ``inter``, ``geohard``, ``sensitivity``: higher means harder.
* ``spread``, ``thrust``: higher means easier.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .clustering import DEFAULT_SEEDS, KMeansModel, kmeans_fit
from .dataset import Dataset, LabelSchema
from .errors import EmptyClass, MalformedRecord, SizeMismatch, UnknownId, UnknownLabel, ValidationError

ORIENTATION = {
    "intra": "hardness",
    "inter": "hardness",
    "geohard": "hardness",
    "sensitivity": "hardness",
    "annotation_entropy": "hardness",
    "spread": "easiness",
    "thrust": "easiness",
}


def _classes(schema: LabelSchema | Sequence[str]) -> tuple[str, ...]:
    return schema.classes if isinstance(schema, LabelSchema) else tuple(schema)


@dataclass(frozen=True)
class ClassStats:
    classes: tuple[str, ...]
    counts: np.ndarray
    centroids: np.ndarray  # K x E element-wise means
    variances: np.ndarray  # K x E element-wise population variances
    space_tag: str = "reduced"

    @property
    def K(self) -> int:
        return len(self.classes)


def class_stats(
    coords: np.ndarray,
    labels: Sequence[str],
    schema: LabelSchema | Sequence[str],
    space_tag: str = "reduced",
) -> ClassStats:
    """Per-class element-wise mean and population variance (divide by ``n_c``)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2:
        raise ValidationError("coords must be an n x E matrix")
    if coords.shape[0] != len(labels):
        raise SizeMismatch(f"{coords.shape[0]} rows for {len(labels)} labels")
    classes = _classes(schema)
    labels_arr = np.asarray(labels, dtype=object)
    unknown = set(labels_arr.tolist()) - set(classes)
    if unknown:
        raise UnknownLabel(sorted(unknown)[0])
    counts, cents, vars_ = [], [], []
    for c in classes:
        rows = coords[labels_arr == c]
        if rows.shape[0] == 0:
            raise EmptyClass(c)
        mu = rows.mean(axis=0)
        counts.append(rows.shape[0])
        cents.append(mu)
        vars_.append(((rows - mu) ** 2).mean(axis=0))
    return ClassStats(classes, np.array(counts), np.array(cents), np.array(vars_), space_tag)


def intra_hardness(stats: ClassStats) -> dict[str, float]:
    """L2 norm of each class's element-wise variance vector."""
    return {c: float(np.linalg.norm(v)) for c, v in zip(stats.classes, stats.variances)}


def inter_hardness(stats: ClassStats) -> dict[str, float]:
    """Negated mean L1 distance from each class centroid to the other centroids."""
    if stats.K < 2:
        raise ValidationError("inter-class hardness needs at least 2 classes")
    D = np.abs(stats.centroids[:, None, :] - stats.centroids[None, :, :]).sum(axis=2)
    return {c: float(-D[k].sum() / (stats.K - 1)) for k, c in enumerate(stats.classes)}


@dataclass
class HardnessReport:
    classes: tuple[str, ...]
    intra: list[float]
    inter: list[float]
    geohard: list[float]
    baselines: dict[str, list[float]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def values(self, metric: str) -> list[float]:
        if metric in ("intra", "inter", "geohard"):
            return list(getattr(self, metric))
        return list(self.baselines[metric])

    def metrics(self) -> list[str]:
        return ["intra", "inter", "geohard", *self.baselines]

    def hardest(self) -> str:
        return self.classes[int(np.argmax(self.geohard))]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "hardness": {"intra": self.intra, "inter": self.inter, "geohard": self.geohard},
            "baselines": self.baselines,
            "metadata": self.metadata,
        }


def geohard_total(stats: ClassStats, **metadata) -> HardnessReport:
    """Intra plus inter hardness per class; higher values mark harder classes."""
    intra = intra_hardness(stats)
    inter = inter_hardness(stats)
    cls = stats.classes
    meta = {"space_tag": stats.space_tag, **metadata}
    return HardnessReport(
        cls,
        [intra[c] for c in cls],
        [inter[c] for c in cls],
        [intra[c] + inter[c] for c in cls],
        metadata=meta,
    )


def geohard(coords: np.ndarray, labels: Sequence[str], schema, space_tag: str = "reduced", **metadata) -> HardnessReport:
    return geohard_total(class_stats(coords, labels, schema, space_tag), **metadata)


def average_reports(reports: Sequence[HardnessReport], **metadata) -> HardnessReport:
    """Element-wise mean of several reports over the same classes (e.g. per conjunction)."""
    if not reports:
        raise ValidationError("nothing to average")
    classes = reports[0].classes
    if any(r.classes != classes for r in reports):
        raise ValidationError("reports disagree on class order")
    intra = np.mean([r.intra for r in reports], axis=0)
    inter = np.mean([r.inter for r in reports], axis=0)
    return HardnessReport(
        classes,
        [float(v) for v in intra],
        [float(v) for v in inter],
        [float(a + b) for a, b in zip(intra, inter)],
        metadata={"averaged_over": len(reports), **metadata},
    )


# ------------------------------------------------------------------ Spread


@dataclass(frozen=True)
class SpreadConfig:
    k_shot: int = 8
    similarity: str = "cosine"
    restrict_same_class: bool = False
    space: str = "raw"

    def __post_init__(self):
        if self.k_shot < 1:
            raise ValidationError("k_shot must be positive")
        if self.similarity != "cosine":
            raise ValidationError("only cosine similarity is supported")
        if self.space not in ("raw", "reduced"):
            raise ValidationError(f"unknown space {self.space!r}")


def _unit_rows(X: np.ndarray, ids: Sequence[str] | None, what: str) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        who = ids[zero[0]] if ids is not None else f"row {zero[0]}"
        raise ValidationError(f"zero-norm {what} vector: {who}")
    return X / norms[:, None]


def spread_scores(
    train: tuple[np.ndarray, Sequence[str]],
    test: tuple[np.ndarray, Sequence[str]],
    cfg: SpreadConfig = SpreadConfig(),
    train_ids: Sequence[str] | None = None,
    test_ids: Sequence[str] | None = None,
) -> np.ndarray:
    """Per test instance: mean cosine similarity to its ``k_shot`` most similar training rows."""
    Xtr = np.asarray(train[0], dtype=np.float64)
    Xte = np.asarray(test[0], dtype=np.float64)
    ytr = np.asarray(train[1], dtype=object)
    yte = np.asarray(test[1], dtype=object)
    Utr = _unit_rows(Xtr, train_ids, "training")
    Ute = _unit_rows(Xte, test_ids, "test")
    out = np.empty(Xte.shape[0])
    if cfg.restrict_same_class:
        for c in dict.fromkeys(yte.tolist()):
            pool = Utr[ytr == c]
            rows = np.flatnonzero(yte == c)
            if cfg.k_shot > pool.shape[0]:
                raise ValidationError(f"k_shot={cfg.k_shot} exceeds the {pool.shape[0]} training rows of class {c!r}")
            S = Ute[rows] @ pool.T
            out[rows] = -np.sort(-S, axis=1)[:, : cfg.k_shot].mean(axis=1)
    else:
        if cfg.k_shot > Utr.shape[0]:
            raise ValidationError(f"k_shot={cfg.k_shot} exceeds the {Utr.shape[0]} training rows")
        for start in range(0, Ute.shape[0], 1024):
            S = Ute[start : start + 1024] @ Utr.T
            out[start : start + 1024] = -np.sort(-S, axis=1)[:, : cfg.k_shot].mean(axis=1)
    return np.clip(out, -1.0, 1.0)


def _class_means(scores: np.ndarray, labels: Sequence[str], classes: Sequence[str]) -> dict[str, float]:
    labels = np.asarray(labels, dtype=object)
    out = {}
    for c in classes:
        sel = scores[labels == c]
        if sel.size == 0:
            raise EmptyClass(c, " among scored instances")
        out[c] = float(sel.mean())
    return out


def spread_class_scores(
    train: tuple[np.ndarray, Sequence[str]],
    test: tuple[np.ndarray, Sequence[str]],
    cfg: SpreadConfig = SpreadConfig(),
    classes: Sequence[str] | None = None,
) -> dict[str, float]:
    """Class mean of :func:`spread_scores` over test instances (higher = easier)."""
    s = spread_scores(train, test, cfg)
    classes = list(dict.fromkeys(test[1])) if classes is None else classes
    return _class_means(s, test[1], classes)


# ------------------------------------------------------------------ Thrust


@dataclass(frozen=True)
class ThrustConfig:
    sample_size: int = 200
    cluster_count_override: int | None = None
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    epsilon: float = 1e-8
    aggregation_quantile: float = 0.25
    cross_seeds: bool = True

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be > 0")
        if not 0 < self.aggregation_quantile <= 1:
            raise ValidationError("aggregation_quantile must lie in (0, 1]")
        if self.sample_size < 1:
            raise ValidationError("sample_size must be positive")
        if self.cluster_count_override is not None and self.cluster_count_override < 1:
            raise ValidationError("cluster_count_override must be positive")

    @classmethod
    def for_task(cls, task_kind: str, **kw) -> "ThrustConfig":
        return cls(sample_size=600 if task_kind == "pair" else 200, **kw)

    @property
    def cluster_count(self) -> int:
        if self.cluster_count_override is not None:
            return self.cluster_count_override
        return thrust_cluster_count(self.sample_size)

    def setups(self) -> list[tuple[int, int]]:
        if self.cross_seeds:
            return [(s, c) for s in self.seeds for c in self.seeds]
        return [(s, s) for s in self.seeds]


def thrust_cluster_count(sample_size: int) -> int:
    return max(math.ceil(sample_size**0.25), 3)


def thrust_vector_score(
    queries: np.ndarray,
    centroids: np.ndarray,
    sizes: np.ndarray,
    n_clusters_total: int,
    epsilon: float = 1e-8,
) -> np.ndarray:
    """Norm of the size-weighted inverse-square pull of all cluster centroids on each query."""
    Q = np.asarray(queries, dtype=np.float64)
    d = centroids[None, :, :] - Q[:, None, :]  # queries x clusters x dim
    r = np.maximum(np.linalg.norm(d, axis=2), epsilon)
    pull = (sizes[None, :] / r**2)[:, :, None] * (d / r[:, :, None])
    return np.linalg.norm(pull.sum(axis=1) / n_clusters_total, axis=1)


KMeansFn = Callable[..., KMeansModel]


def thrust_scores(
    train: tuple[np.ndarray, Sequence[str]],
    queries: tuple[np.ndarray, Sequence[str]],
    cfg: ThrustConfig = ThrustConfig(),
    kmeans: KMeansFn = kmeans_fit,
    classes: Sequence[str] | None = None,
) -> np.ndarray:
    """Per-query Thrust score averaged over the configured (sampling, clustering) seed setups."""
    Xtr = np.asarray(train[0], dtype=np.float64)
    ytr = np.asarray(train[1], dtype=object)
    Q = np.asarray(queries[0], dtype=np.float64)
    classes = list(dict.fromkeys(ytr.tolist())) if classes is None else list(classes)
    pools = {c: np.flatnonzero(ytr == c) for c in classes}
    for c, idx in pools.items():
        if idx.size == 0:
            raise EmptyClass(c, " in the Thrust training pool")

    total = np.zeros(Q.shape[0])
    setups = cfg.setups()
    for sample_seed, cluster_seed in setups:
        rng = np.random.default_rng(sample_seed)
        cents, sizes = [], []
        for c in classes:
            idx = pools[c]
            take = min(cfg.sample_size, idx.size)
            sampled = np.sort(rng.choice(idx, size=take, replace=False))
            k = min(cfg.cluster_count, take)
            model = kmeans(Xtr[sampled], k, seed=cluster_seed)
            cents.append(model.centroids)
            sizes.append(np.bincount(model.assignments, minlength=model.k))
        C = np.vstack(cents)
        S = np.concatenate(sizes).astype(np.float64)
        total += thrust_vector_score(Q, C, S, C.shape[0], cfg.epsilon)
    return total / len(setups)


def bottom_quantile_mean(values: np.ndarray, q: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    m = max(1, math.ceil(q * v.size))
    return float(v[:m].mean())


def thrust_class_scores(
    train: tuple[np.ndarray, Sequence[str]],
    queries: tuple[np.ndarray, Sequence[str]],
    cfg: ThrustConfig = ThrustConfig(),
    kmeans: KMeansFn = kmeans_fit,
    classes: Sequence[str] | None = None,
) -> tuple[np.ndarray, dict[str, float]]:
    """Per-query scores and, per class, the mean of its lowest ``aggregation_quantile`` share."""
    scores = thrust_scores(train, queries, cfg, kmeans, classes)
    qlabels = np.asarray(queries[1], dtype=object)
    classes = list(dict.fromkeys(np.asarray(train[1], dtype=object).tolist())) if classes is None else classes
    agg = {}
    for c in classes:
        sel = scores[qlabels == c]
        if sel.size == 0:
            raise EmptyClass(c, " among Thrust queries")
        agg[c] = bottom_quantile_mean(sel, cfg.aggregation_quantile)
    return scores, agg


# ------------------------------------------------------------- sensitivity


def load_sensitivity(path: str | os.PathLike) -> dict[str, float]:
    scores: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                id_, score = str(obj["id"]), float(obj["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(lineno, f"bad sensitivity record ({exc})") from None
            if id_ in scores:
                raise MalformedRecord(lineno, f"duplicate id {id_!r}")
            if not math.isfinite(score):
                raise MalformedRecord(lineno, f"non-finite score for {id_!r}")
            scores[id_] = score
    return scores


@dataclass
class SensitivityAggregate:
    values: dict[str, float]
    counts: dict[str, int]
    coverage: float


def aggregate_sensitivity(scores: Mapping[str, float], dataset: Dataset) -> SensitivityAggregate:
    """Class mean of per-instance sensitivity scores (higher = harder)."""
    label_of = {inst.id: inst.label for inst in dataset.instances}
    unknown = [i for i in scores if i not in label_of]
    if unknown:
        raise UnknownId(f"scored ids absent from the dataset: {unknown[:10]}")
    sums = {c: 0.0 for c in dataset.schema.classes}
    counts = {c: 0 for c in dataset.schema.classes}
    for id_, s in scores.items():
        sums[label_of[id_]] += s
        counts[label_of[id_]] += 1
    for c, n in counts.items():
        if n == 0:
            raise EmptyClass(c, " among scored instances")
    coverage = len(scores) / len(dataset) if len(dataset) else 0.0
    return SensitivityAggregate({c: sums[c] / counts[c] for c in sums}, counts, coverage)
