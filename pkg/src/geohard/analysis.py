"""Validation and application of class-wise hardness.

Covers the correlation protocol against reference class-wise F1, a small
softmax-regression reference classifier, a Monte-Carlo check of the
train/test mean-gap bound, class reorganization and few-shot
demonstration selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .clustering import kmeans_fit, nearest_to_centroid
from .errors import (
    DivergenceError,
    LengthMismatch,
    TooFew,
    UnknownLabel,
    ValidationError,
    ZeroVariance,
)
from .metrics import ORIENTATION, geohard


# ----------------------------------------------------------------- Pearson


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"vectors of shape {x.shape} and {y.shape}")
    if x.size < 2:
        raise LengthMismatch("need at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        raise ZeroVariance("Pearson correlation is undefined for a constant vector")
    r = float(xc @ yc) / (sx * sy)
    return max(-1.0, min(1.0, r))


@dataclass
class MetricTable:
    """Class-wise values of several metrics for one dataset."""

    classes: tuple[str, ...]
    values: dict[str, list[float]]
    orientations: dict[str, str] = field(default_factory=dict)

    def orientation(self, metric: str) -> str:
        o = self.orientations.get(metric) or ORIENTATION.get(metric)
        if o not in ("hardness", "easiness"):
            raise ValidationError(f"no orientation known for metric {metric!r}")
        return o


@dataclass
class ReferenceSet:
    """One or more class-wise F1 vectors for one dataset, averaged element-wise."""

    classes: tuple[str, ...]
    vectors: list[list[float]]

    def mean(self) -> list[float]:
        arr = np.asarray(self.vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != len(self.classes) or arr.shape[0] == 0:
            raise LengthMismatch("reference vectors must each have one value per class")
        return [float(v) for v in arr.mean(axis=0)]


@dataclass
class CorrelationEntry:
    dataset: str
    metric: str
    orientation: str
    r_raw: float | None
    r_adjusted: float | None
    violation: bool
    defined: bool


@dataclass
class CorrelationReport:
    entries: list[CorrelationEntry]
    macro: dict[str, float | None]
    macro_abs: dict[str, float | None]
    references: dict[str, list[float]]
    tables: dict[str, MetricTable]

    def get(self, dataset: str, metric: str) -> CorrelationEntry:
        for e in self.entries:
            if e.dataset == dataset and e.metric == metric:
                return e
        raise KeyError((dataset, metric))

    def to_dict(self) -> dict:
        return {
            "entries": [e.__dict__ for e in self.entries],
            "macro": self.macro,
            "macro_abs": self.macro_abs,
            "datasets": {
                name: {
                    "classes": list(t.classes),
                    "reference_f1": self.references[name],
                    "metrics": t.values,
                }
                for name, t in self.tables.items()
            },
        }


def correlate_report(
    tables: Mapping[str, MetricTable], references: Mapping[str, ReferenceSet]
) -> CorrelationReport:
    """Pearson r of every metric against the (averaged) reference F1, sign-adjusted.

    Hardness-oriented metrics are negated so that a positive adjusted value
    always means "agrees with the reference". Undefined correlations (a
    constant vector) are flagged and left out of the macro average.
    """
    entries: list[CorrelationEntry] = []
    refs: dict[str, list[float]] = {}
    for name, table in tables.items():
        if len(table.classes) < 2:
            raise ValidationError(f"{name}: need at least 2 classes")
        if name not in references:
            raise ValidationError(f"{name}: no reference F1 supplied")
        ref = references[name]
        if tuple(ref.classes) != tuple(table.classes):
            raise ValidationError(f"{name}: class order {list(ref.classes)} != {list(table.classes)}")
        refs[name] = ref.mean()
        for metric, vec in table.values.items():
            if len(vec) != len(table.classes):
                raise LengthMismatch(f"{name}/{metric}: {len(vec)} values for {len(table.classes)} classes")
            orient = table.orientation(metric)
            try:
                r = pearson(vec, refs[name])
            except ZeroVariance:
                entries.append(CorrelationEntry(name, metric, orient, None, None, False, False))
                continue
            adj = -r if orient == "hardness" else r
            entries.append(CorrelationEntry(name, metric, orient, r, adj, adj < 0, True))

    macro: dict[str, float | None] = {}
    macro_abs: dict[str, float | None] = {}
    for metric in dict.fromkeys(e.metric for e in entries):
        vals = [e.r_adjusted for e in entries if e.metric == metric and e.defined]
        macro[metric] = float(np.mean(vals)) if vals else None
        macro_abs[metric] = abs(macro[metric]) if vals else None
    return CorrelationReport(entries, macro, macro_abs, refs, dict(tables))


# ------------------------------------------------------- class-wise F1


@dataclass
class ClassF1:
    values: dict[str, float]
    undefined: list[str]


def class_f1(predictions: Sequence[str], golds: Sequence[str], classes: Sequence[str]) -> ClassF1:
    """One-vs-rest F1 per class; 0 when precision + recall is 0.

    Classes absent from both predictions and golds also get 0 and are
    listed in ``undefined``.
    """
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(golds)} golds")
    pred = np.asarray(predictions, dtype=object)
    gold = np.asarray(golds, dtype=object)
    values, undefined = {}, []
    for c in classes:
        tp = int(np.sum((pred == c) & (gold == c)))
        fp = int(np.sum((pred == c) & (gold != c)))
        fn = int(np.sum((pred != c) & (gold == c)))
        if tp + fp + fn == 0:
            undefined.append(c)
        denom = 2 * tp + fp + fn
        values[c] = 2 * tp / denom if denom else 0.0
    return ClassF1(values, undefined)


# ------------------------------------------------ reference classifier


@dataclass(frozen=True)
class ReferenceParams:
    learning_rate: float = 0.5
    epochs: int = 500
    l2: float = 1e-4
    standardize: bool = True


@dataclass
class ReferenceModel:
    classes: tuple[str, ...]
    weights: np.ndarray  # K x (d + 1), last column is the bias
    params: ReferenceParams
    seed: int
    f1: dict[str, float]
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    loss_history: list[float] = field(default_factory=list, repr=False)

    def predict(self, X: np.ndarray) -> list[str]:
        Xb = _with_bias((np.asarray(X, dtype=np.float64) - self.feature_mean) / self.feature_scale)
        return [self.classes[i] for i in np.argmax(Xb @ self.weights.T, axis=1)]


def _with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def softmax_loss_grad(W: np.ndarray, Xb: np.ndarray, Y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||W_no_bias||^2`` and its gradient.

    ``Xb`` carries a trailing column of ones; ``Y`` is one-hot.
    """
    n = Xb.shape[0]
    Z = Xb @ W.T
    Zs = Z - Z.max(axis=1, keepdims=True)
    logp = Zs - np.log(np.exp(Zs).sum(axis=1, keepdims=True))
    Wr = W.copy()
    Wr[:, -1] = 0.0
    loss = -float((Y * logp).sum()) / n + 0.5 * l2 * float((Wr**2).sum())
    grad = (np.exp(logp) - Y).T @ Xb / n + l2 * Wr
    return loss, grad


def train_reference(
    X: np.ndarray,
    labels: Sequence[str],
    splits: Sequence[str],
    classes: Sequence[str],
    params: ReferenceParams = ReferenceParams(),
    seed: int = 0,
    train_split: str = "train",
    eval_split: str = "test",
) -> ReferenceModel:
    """Full-batch gradient descent on L2-regularized softmax regression.

    Returns the model with one-vs-rest F1 per class on ``eval_split``.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=object)
    splits = np.asarray(splits, dtype=object)
    classes = tuple(classes)
    if not (X.shape[0] == labels.size == splits.size):
        raise LengthMismatch("X, labels and splits must align")
    tr = splits == train_split
    ev = splits == eval_split
    for c in classes:
        if not np.any(labels[tr] == c):
            raise ValidationError(f"class {c!r} absent from split {train_split!r}")
        if not np.any(labels[ev] == c):
            raise ValidationError(f"class {c!r} absent from split {eval_split!r}")
    unknown = set(labels.tolist()) - set(classes)
    if unknown:
        raise UnknownLabel(sorted(unknown)[0])

    Xtr = X[tr]
    mean = Xtr.mean(axis=0) if params.standardize else np.zeros(X.shape[1])
    scale = Xtr.std(axis=0) if params.standardize else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    Xb = _with_bias((Xtr - mean) / scale)
    y_idx = np.array([classes.index(c) for c in labels[tr]])
    Y = np.eye(len(classes))[y_idx]

    rng = np.random.default_rng(seed)
    W = rng.normal(scale=0.01, size=(len(classes), Xb.shape[1]))
    history = []
    for epoch in range(params.epochs):
        loss, grad = softmax_loss_grad(W, Xb, Y, params.l2)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        history.append(loss)
        W -= params.learning_rate * grad
    if not np.isfinite(W).all():
        raise DivergenceError("non-finite weights after training")

    model = ReferenceModel(classes, W, params, seed, {}, mean, scale, history)
    preds = model.predict(X[ev])
    model.f1 = class_f1(preds, labels[ev].tolist(), classes).values
    return model


# ------------------------------------------------- mean-gap bound check


@dataclass(frozen=True)
class ChebyshevSimConfig:
    sigma: float = 1.0
    n_tr: int = 200
    n_te: int = 100
    k_values: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    trials: int = 100_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(self.k_values))
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.n_tr < 1 or self.n_te < 1 or self.trials < 1:
            raise ValidationError("n_tr, n_te and trials must be positive")
        if self.n_tr < self.n_te:
            raise ValidationError("n_tr must be >= n_te")
        if any(k <= 0 for k in self.k_values):
            raise ValidationError("k values must be positive")


@dataclass
class ChebyshevRow:
    k: float
    threshold: float
    empirical: float
    bound: float
    slack: float

    @property
    def within_bound(self) -> bool:
        return self.empirical <= self.bound + self.slack


def chebyshev_simulate(cfg: ChebyshevSimConfig, chunk: int = 10_000) -> list[ChebyshevRow]:
    """Monte-Carlo frequency of ``|mean_tr - mean_te| >= 2 k sigma / sqrt(n_te)``.

    Each trial draws ``n_tr`` and ``n_te`` fresh N(0, sigma^2) samples. The
    reported slack is three Monte-Carlo standard errors of the bound.
    """
    rng = np.random.default_rng(cfg.seed)
    gaps = np.empty(cfg.trials)
    for start in range(0, cfg.trials, chunk):
        m = min(chunk, cfg.trials - start)
        tr = rng.normal(0.0, cfg.sigma, size=(m, cfg.n_tr)).mean(axis=1)
        te = rng.normal(0.0, cfg.sigma, size=(m, cfg.n_te)).mean(axis=1)
        gaps[start : start + m] = np.abs(tr - te)
    rows = []
    for k in cfg.k_values:
        thr = 2 * k * cfg.sigma / math.sqrt(cfg.n_te)
        bound = 2.0 / k**2
        p = min(bound, 1.0)
        rows.append(ChebyshevRow(k, thr, float(np.mean(gaps >= thr)), bound, 3 * math.sqrt(p * (1 - p) / cfg.trials)))
    return rows


def gaussian_gap_tail(cfg: ChebyshevSimConfig, k: float) -> float:
    """Exact P(|mean_tr - mean_te| >= threshold) when samples are Gaussian."""
    sd = cfg.sigma * math.sqrt(1 / cfg.n_tr + 1 / cfg.n_te)
    thr = 2 * k * cfg.sigma / math.sqrt(cfg.n_te)
    return math.erfc(thr / (sd * math.sqrt(2)))


# ------------------------------------------------------ reorganization


def reorg_split(
    coords: np.ndarray,
    labels: Sequence[str],
    target_class: str,
    n_subclasses: int = 2,
    method: str = "kmeans",
    seed: int = 0,
) -> list[str]:
    """Relabel members of ``target_class`` as ``<target>#0`` .. ``<target>#(n-1)``."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = list(labels)
    members = np.flatnonzero(np.asarray(labels, dtype=object) == target_class)
    if members.size == 0:
        raise UnknownLabel(target_class)
    if n_subclasses < 1 or members.size < n_subclasses:
        raise TooFew(f"class {target_class!r} has {members.size} members, cannot split into {n_subclasses}")
    if method == "kmeans":
        assign = kmeans_fit(coords[members], n_subclasses, seed=seed).assignments
    elif method == "random":
        rng = np.random.default_rng(seed)
        while True:
            assign = rng.integers(0, n_subclasses, size=members.size)
            if np.unique(assign).size == n_subclasses:
                break
    else:
        raise ValidationError(f"unknown split method {method!r}")
    out = list(labels)
    for idx, a in zip(members, assign):
        out[idx] = f"{target_class}#{int(a)}"
    return out


def population_std(values: Sequence[float]) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(np.sqrt(((v - v.mean()) ** 2).mean()))


@dataclass
class ReorgReport:
    classes_before: list[str]
    classes_after: list[str]
    before: list[float]
    after: list[float]
    std_before: float
    std_after: float
    relative_change: float
    method: str | None = None
    seed: int | None = None

    @classmethod
    def from_vectors(cls, before, after, classes_before=None, classes_after=None, method=None, seed=None):
        sb, sa = population_std(before), population_std(after)
        rel = (sa - sb) / sb if sb else float("nan")
        return cls(
            list(classes_before or [str(i) for i in range(len(before))]),
            list(classes_after or [str(i) for i in range(len(after))]),
            [float(v) for v in before],
            [float(v) for v in after],
            sb,
            sa,
            rel,
            method,
            seed,
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _class_order(labels: Sequence[str], preferred: Sequence[str] | None) -> list[str]:
    present = list(dict.fromkeys(labels))
    if preferred is None:
        return present
    order: list[str] = []
    for c in preferred:
        if c in present:
            order.append(c)
        else:
            order.extend(sorted(p for p in present if p.startswith(f"{c}#")))
    order.extend(sorted(p for p in present if p not in order))
    return order


def reorg_evaluate(
    coords: np.ndarray,
    labels_before: Sequence[str],
    labels_after: Sequence[str],
    classes: Sequence[str] | None = None,
    method: str | None = None,
    seed: int | None = None,
) -> ReorgReport:
    """GeoHard per class before/after a relabeling, with the population std of each vector."""
    if len(labels_before) != len(labels_after):
        raise LengthMismatch("label vectors differ in length")
    cb = _class_order(labels_before, classes)
    ca = _class_order(labels_after, cb)
    before = geohard(coords, labels_before, cb)
    after = geohard(coords, labels_after, ca)
    return ReorgReport.from_vectors(before.geohard, after.geohard, cb, ca, method, seed)


# ------------------------------------------------ demonstration selection

PROMPT_SEPARATOR = "#####"
PROMPT_TAIL = "Sentence: {input}\nSentiment:"


@dataclass
class Demonstrations:
    indices: list[int]
    labels: list[str]
    prompt: str | None


def select_demonstrations(
    coords: np.ndarray,
    labels: Sequence[str],
    composition: Mapping[str, int],
    seed: int = 0,
    texts: Sequence[str] | None = None,
    verbalizer: Mapping[str, str] | None = None,
) -> Demonstrations:
    """Pick cluster-medoid demonstrations per class and assemble a few-shot prompt.

    A class asking for ``s`` shots is clustered into ``s`` groups and the
    member nearest each centroid is taken. Blocks follow ``composition``
    order; ``verbalizer`` maps class names to the label text shown.
    """
    coords = np.asarray(coords, dtype=np.float64)
    labels_arr = np.asarray(labels, dtype=object)
    indices: list[int] = []
    chosen_labels: list[str] = []
    for c, shots in composition.items():
        members = np.flatnonzero(labels_arr == c)
        if members.size == 0:
            raise UnknownLabel(c)
        if shots < 1 or shots > members.size:
            raise TooFew(f"class {c!r} has {members.size} members, {shots} shots requested")
        model = kmeans_fit(coords[members], shots, seed=seed)
        picks = [int(members[i]) for i in nearest_to_centroid(coords[members], model)]
        indices.extend(picks)
        chosen_labels.extend([c] * len(picks))

    prompt = None
    if texts is not None:
        verbalizer = verbalizer or {}
        blocks = [f"Sentence: {texts[i]}\nSentiment: {verbalizer.get(lab, lab)}" for i, lab in zip(indices, chosen_labels)]
        prompt = f"\n{PROMPT_SEPARATOR}\n".join([*blocks, PROMPT_TAIL])
    return Demonstrations(indices, chosen_labels, prompt)


def parse_composition(spec: str) -> dict[str, int]:
    """``"Positive=1,Neutral=2"`` -> ``{"Positive": 1, "Neutral": 2}``."""
    out: dict[str, int] = {}
    for part in spec.split(","):
        if not part.strip():
            continue
        name, _, count = part.rpartition("=")
        if not name or not count.strip().isdigit():
            raise ValidationError(f"bad composition entry {part!r}; expected CLASS=SHOTS")
        out[name.strip()] = int(count)
    if not out:
        raise ValidationError("empty composition")
    return out
