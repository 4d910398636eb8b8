"""Labeled dataset model, JSONL ingestion and class-level preprocessing."""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    EmptyClass,
    EmptySegment,
    MalformedRecord,
    MissingField,
    UnknownLabel,
    UnmappedLabel,
    ValidationError,
)

SPLITS = ("train", "validation", "test")

CONJUNCTIONS = ("Maybe", "And", "Therefore", "But", "On the other hand", "It is true that")

# 5-star review ratings -> 3-way sentiment (Amazon, APP, Yelp)
FIVE_STAR_TO_THREE = {
    "1": "Negative",
    "2": "Negative",
    "3": "Neutral",
    "4": "Positive",
    "5": "Positive",
}

# SST-5 fine-grained sentiment -> 3-way
SST5_TO_THREE = {
    "very negative": "Negative",
    "negative": "Negative",
    "neutral": "Neutral",
    "positive": "Positive",
    "very positive": "Positive",
}

# Twitter financial news sentiment -> 3-way
TFNS_TO_THREE = {"Bearish": "Negative", "Neutral": "Neutral", "Bullish": "Positive"}


@dataclass(frozen=True)
class SingleText:
    text: str


@dataclass(frozen=True)
class Pair:
    premise: str
    hypothesis: str


@dataclass(frozen=True)
class LabelSchema:
    classes: tuple[str, ...]
    task_kind: str = "single_text"

    def __post_init__(self):
        classes = tuple(self.classes)
        object.__setattr__(self, "classes", classes)
        if len(classes) < 2:
            raise ValidationError("a label schema needs at least 2 classes")
        if any(not c for c in classes):
            raise ValidationError("class names must be non-empty")
        if len(set(classes)) != len(classes):
            raise ValidationError(f"class names must be distinct: {classes}")
        if self.task_kind not in ("single_text", "pair"):
            raise ValidationError(f"unknown task kind {self.task_kind!r}")

    @property
    def K(self) -> int:
        return len(self.classes)

    def index(self, label: str) -> int:
        return self.classes.index(label)


@dataclass(frozen=True)
class Instance:
    id: str
    content: SingleText | Pair
    label: str
    split: str = "train"
    annotations: Mapping[str, int] | None = None

    def text(self, conjunction: str = "And", strict: bool = True) -> str:
        """Text fed to a sentence encoder; pairs are joined with ``conjunction``."""
        if isinstance(self.content, Pair):
            return join_pair(self.content.premise, self.content.hypothesis, conjunction, strict=strict)
        return self.content.text


@dataclass(frozen=True)
class Dataset:
    schema: LabelSchema
    instances: tuple[Instance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        instances = tuple(self.instances)
        object.__setattr__(self, "instances", instances)
        seen: set[str] = set()
        for inst in instances:
            if not inst.id:
                raise ValidationError("instance ids must be non-empty")
            if inst.id in seen:
                raise DuplicateId(inst.id)
            seen.add(inst.id)
            if inst.label not in self.schema.classes:
                raise UnknownLabel(inst.label)
            if inst.split not in SPLITS:
                raise ValidationError(f"instance {inst.id!r}: unknown split {inst.split!r}")

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def ids(self) -> list[str]:
        return [inst.id for inst in self.instances]

    @property
    def labels(self) -> list[str]:
        return [inst.label for inst in self.instances]

    def split(self, name: str | Sequence[str] | None) -> "Dataset":
        if name is None:
            return self
        names = {name} if isinstance(name, str) else set(name)
        return Dataset(self.schema, tuple(i for i in self.instances if i.split in names))

    def class_counts(self) -> dict[str, int]:
        counts = Counter(inst.label for inst in self.instances)
        return {c: counts.get(c, 0) for c in self.schema.classes}


def _parse_record(obj, line: int, schema: LabelSchema) -> Instance:
    if not isinstance(obj, dict):
        raise MalformedRecord(line, "record is not a JSON object")
    for key in ("id", "label"):
        if key not in obj:
            raise MissingField(line, f"missing required field {key!r}")
    has_text = "text" in obj
    has_pair = "premise" in obj or "hypothesis" in obj
    if has_text and has_pair:
        raise MalformedRecord(line, "record has both 'text' and premise/hypothesis")
    if has_pair:
        if "premise" not in obj or "hypothesis" not in obj:
            raise MissingField(line, "pair records need both 'premise' and 'hypothesis'")
        content: SingleText | Pair = Pair(str(obj["premise"]), str(obj["hypothesis"]))
        kind = "pair"
    elif has_text:
        content = SingleText(str(obj["text"]))
        kind = "single_text"
    else:
        raise MissingField(line, "missing 'text' or 'premise'+'hypothesis'")
    if kind != schema.task_kind:
        raise MalformedRecord(line, f"{kind} record under a {schema.task_kind} schema")

    label = str(obj["label"])
    if label not in schema.classes:
        raise UnknownLabel(label, line)
    split = obj.get("split", "train")
    if split not in SPLITS:
        raise MalformedRecord(line, f"unknown split {split!r}")

    annotations = obj.get("annotations")
    if annotations is not None:
        if not isinstance(annotations, dict):
            raise MalformedRecord(line, "'annotations' must be an object")
        for name, count in annotations.items():
            if name not in schema.classes:
                raise UnknownLabel(name, line)
            if not isinstance(count, int) or isinstance(count, bool) or count < 0:
                raise MalformedRecord(line, f"annotation count for {name!r} must be a non-negative integer")
        if sum(annotations.values()) < 1:
            raise MalformedRecord(line, "annotation counts sum to zero")
        annotations = dict(annotations)

    id_ = str(obj["id"])
    if not id_:
        raise MalformedRecord(line, "empty id")
    return Instance(id_, content, label, split, annotations)


def load_dataset(path: str | os.PathLike, schema: LabelSchema) -> Dataset:
    """Read a JSONL dataset file, validating every record against ``schema``.

    The first offending record aborts the load; its 1-based line number is
    carried by the raised error.
    """
    instances: list[Instance] = []
    first_line: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})") from None
            inst = _parse_record(obj, lineno, schema)
            if inst.id in first_line:
                raise DuplicateId(inst.id, lineno)
            first_line[inst.id] = lineno
            instances.append(inst)
    return Dataset(schema, tuple(instances))


def instance_to_record(inst: Instance) -> dict:
    rec: dict = {"id": inst.id}
    if isinstance(inst.content, Pair):
        rec["premise"] = inst.content.premise
        rec["hypothesis"] = inst.content.hypothesis
    else:
        rec["text"] = inst.content.text
    rec["label"] = inst.label
    rec["split"] = inst.split
    if inst.annotations is not None:
        rec["annotations"] = dict(inst.annotations)
    return rec


def write_dataset(dataset: Dataset, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for inst in dataset.instances:
            fh.write(json.dumps(instance_to_record(inst), ensure_ascii=False) + "\n")
    os.replace(tmp, path)


def normalize_labels(
    dataset: Dataset, mapping: Mapping[str, str], target_schema: LabelSchema
) -> Dataset:
    """Relabel every instance through ``mapping`` into ``target_schema``.

    Annotation counts are folded through the same mapping, so two source
    classes mapped onto one target have their votes summed.
    """
    bad_targets = sorted({t for t in mapping.values() if t not in target_schema.classes})
    if bad_targets:
        raise UnknownLabel(bad_targets[0])
    unmapped = sorted({i.label for i in dataset.instances if i.label not in mapping})
    if unmapped:
        raise UnmappedLabel(f"source labels without a mapping: {unmapped}")

    out = []
    for inst in dataset.instances:
        annotations = None
        if inst.annotations is not None:
            folded: Counter = Counter()
            for name, count in inst.annotations.items():
                if name not in mapping:
                    raise UnmappedLabel(f"annotation label {name!r} has no mapping")
                folded[mapping[name]] += count
            annotations = {c: folded[c] for c in target_schema.classes if c in folded}
        out.append(replace(inst, label=mapping[inst.label], annotations=annotations))
    return Dataset(target_schema, tuple(out))


def balance_classes(
    dataset: Dataset,
    seed: int,
    fraction: float = 1.0,
    per_split: bool = True,
    splits: Iterable[str] | None = None,
) -> Dataset:
    """Downsample every class to ``floor(fraction * min_count)`` members.

    With ``per_split`` the minimum is taken inside each split separately;
    otherwise the whole dataset is treated as one pool. ``splits`` restricts
    which splits are resampled (others pass through untouched). Original
    instance order is preserved among the kept rows.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    targeted = set(SPLITS if splits is None else splits)
    rng = np.random.default_rng(seed)

    if per_split:
        groups = [(s,) for s in SPLITS if s in targeted]
    else:
        groups = [tuple(s for s in SPLITS if s in targeted)]

    keep = np.ones(len(dataset), dtype=bool)
    split_arr = np.array([i.split for i in dataset.instances], dtype=object)
    label_arr = np.array(dataset.labels, dtype=object)
    for group in groups:
        in_group = np.isin(split_arr, list(group)) if len(dataset) else np.zeros(0, bool)
        if not in_group.any():
            continue
        members = {c: np.flatnonzero(in_group & (label_arr == c)) for c in dataset.schema.classes}
        for c, idx in members.items():
            if idx.size == 0:
                raise EmptyClass(c, f" in split(s) {', '.join(group)}")
        target = max(1, math.floor(fraction * min(idx.size for idx in members.values())))
        for c in dataset.schema.classes:
            idx = members[c]
            chosen = rng.choice(idx.size, size=target, replace=False)
            drop = np.ones(idx.size, dtype=bool)
            drop[chosen] = False
            keep[idx[drop]] = False

    kept = tuple(inst for inst, k in zip(dataset.instances, keep) if k)
    return Dataset(dataset.schema, kept)


def join_pair(premise: str, hypothesis: str, conjunction: str, *, strict: bool = True) -> str:
    """Join an NLI pair into one sentence: ``"<premise> <conjunction> <hypothesis>"``.

    With ``strict`` the conjunction must be one of :data:`CONJUNCTIONS`.
    """
    if not premise or not hypothesis:
        raise EmptySegment("premise and hypothesis must be non-empty")
    if strict and conjunction not in CONJUNCTIONS:
        raise ValidationError(f"unknown conjunction {conjunction!r}; pass strict=False to override")
    return f"{premise} {conjunction} {hypothesis}"


@dataclass
class AnnotationEntropy:
    values: dict[str, float]
    annotated: dict[str, int]
    excluded: dict[str, int]


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def annotation_entropy(dataset: Dataset) -> AnnotationEntropy:
    """Mean Shannon entropy (nats) of the per-instance annotation distribution, per class."""
    sums = {c: 0.0 for c in dataset.schema.classes}
    annotated = {c: 0 for c in dataset.schema.classes}
    excluded = {c: 0 for c in dataset.schema.classes}
    for inst in dataset.instances:
        if not inst.annotations or sum(inst.annotations.values()) <= 0:
            excluded[inst.label] += 1
            continue
        counts = np.array(list(inst.annotations.values()), dtype=float)
        sums[inst.label] += _entropy(counts)
        annotated[inst.label] += 1
    for c, n in annotated.items():
        if n == 0:
            raise EmptyClass(c, " with annotations")
    values = {c: sums[c] / annotated[c] for c in dataset.schema.classes}
    return AnnotationEntropy(values, annotated, excluded)


def infer_schema(path: str | os.PathLike) -> LabelSchema:
    """Schema from a JSONL file: classes in order of first appearance, task kind from the first record."""
    classes: dict[str, None] = {}
    kind = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "label" not in obj:
                raise MissingField(lineno, "missing required field 'label'")
            classes.setdefault(str(obj["label"]), None)
            if kind is None:
                kind = "pair" if "premise" in obj else "single_text"
    return LabelSchema(tuple(classes), kind or "single_text")
