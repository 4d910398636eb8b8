"""Command-line interface: ``geohard <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error (bad flags, bad input files,
violated preconditions), 2 I/O or network failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import (
    ChebyshevSimConfig,
    MetricTable,
    ReferenceParams,
    ReferenceSet,
    chebyshev_simulate,
    correlate_report,
    gaussian_gap_tail,
    parse_composition,
    reorg_evaluate,
    reorg_split,
    select_demonstrations,
    train_reference,
)
from .dataset import (
    CONJUNCTIONS,
    FIVE_STAR_TO_THREE,
    SST5_TO_THREE,
    TFNS_TO_THREE,
    Dataset,
    LabelSchema,
    annotation_entropy,
    balance_classes,
    infer_schema,
    load_dataset,
    normalize_labels,
    write_dataset,
)
from .dimred import UmapConfig, load_reduced, pca_fit_transform, store_reduced, umap_fit_transform
from .embeddings import EmbeddingMatrix, ProviderConfig, align, fetch_embeddings, load_embeddings, store_embeddings
from .errors import GeoHardError, TransportError, ValidationError
from .metrics import (
    ORIENTATION,
    HardnessReport,
    SpreadConfig,
    ThrustConfig,
    aggregate_sensitivity,
    average_reports,
    geohard,
    load_sensitivity,
    spread_class_scores,
    thrust_class_scores,
)
from .plot import plot_scatter
from .report import dataset_entry, emit_report, load_report, new_report, render_report

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("geohard")

SUBCOMMANDS = (
    "ingest", "embed", "reduce", "measure", "baseline", "correlate",
    "reorg", "demos", "simulate-chebyshev", "plot",
)

MAP_PRESETS = {
    "five-star": (FIVE_STAR_TO_THREE, ("Positive", "Neutral", "Negative")),
    "sst5": (SST5_TO_THREE, ("Positive", "Neutral", "Negative")),
    "tfns": (TFNS_TO_THREE, ("Positive", "Neutral", "Negative")),
}


class UsageError(ValidationError):
    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


# ---------------------------------------------------------------- parser


def _csv_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _add_dataset_flags(p, required=True):
    p.add_argument("--dataset", required=required, help="dataset JSONL file")
    p.add_argument("--classes", type=_csv_list, help="comma-separated class order (default: order of first appearance)")
    p.add_argument("--task", choices=["single_text", "pair"], help="task kind (default: inferred)")


def _add_reduce_flags(p, default="umap"):
    p.add_argument("--reduce", choices=["pca", "umap", "none"], default=default)
    p.add_argument("--dim", type=int, default=2, help="reduced dimension E")
    p.add_argument("--n-neighbors", type=int, default=15)
    p.add_argument("--min-dist", type=float, default=0.1)
    p.add_argument("--n-epochs", type=int, default=500)
    p.add_argument("--metric", choices=["cosine", "euclidean"], default="cosine")
    p.add_argument("--init", choices=["spectral", "pca"], default="spectral")
    p.add_argument("--normalize", action="store_true", help="L2-normalize embeddings before reduction")


def _add_provider_flags(p):
    p.add_argument("--provider-url", help="base URL of an OpenAI-compatible embedding service")
    p.add_argument("--model", help="embedding model name sent to the provider")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--retry-limit", type=int, default=3)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--text-prefix", default="")
    p.add_argument("--cache-dir")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML file with flag defaults (flags win)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")
    common.add_argument("--format", choices=["json", "csv"], default="json", help="report format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="geohard", description="Class-wise hardness in embedding space.")
    parser.add_argument("--version", action="version", version=f"geohard {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate, relabel and balance a dataset")
    _add_dataset_flags(p)
    p.add_argument("--map", help="JSON file mapping source labels to target labels")
    p.add_argument("--map-preset", choices=sorted(MAP_PRESETS))
    p.add_argument("--target-classes", type=_csv_list)
    p.add_argument("--balance", action="store_true")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--balance-splits", type=_csv_list, help="splits to resample (default: all)")
    p.add_argument("--pool-splits", action="store_true", help="balance over the union of splits instead of per split")
    p.add_argument("--out", required=True)

    p = sub.add_parser("embed", parents=[common], help="fetch embeddings from a provider")
    _add_dataset_flags(p)
    _add_provider_flags(p)
    p.add_argument("--conjunctions", default="all", help="pair tasks: 'all' or a comma list")
    p.add_argument("--emb-format", choices=["binary", "jsonl"], default="binary")
    p.add_argument("--out", required=True, help="output path; may contain {conj} for pair tasks")

    p = sub.add_parser("reduce", parents=[common], help="reduce an embedding file")
    p.add_argument("--embeddings", required=True)
    _add_reduce_flags(p)
    p.add_argument("--emb-format", choices=["binary", "jsonl"], default="binary")
    p.add_argument("--out", required=True)

    p = sub.add_parser("measure", parents=[common], help="class-wise GeoHard")
    _add_dataset_flags(p)
    p.add_argument("--embeddings", action="append", default=[], help="PATH, or CONJ=PATH for pair tasks (repeatable)")
    _add_provider_flags(p)
    _add_reduce_flags(p)
    p.add_argument("--conjunctions", default="all")
    p.add_argument("--split", type=_csv_list, default=["train"], help="split(s) whose instances are measured")
    p.add_argument("--runs", type=int, default=1, help="number of seeds (seed, seed+1, ...) to average")
    p.add_argument("--fraction", type=float, default=1.0, help="class-balanced subsample fraction")
    p.add_argument("--balance", action="store_true")
    p.add_argument("--name", help="dataset name in the report (default: file stem)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("baseline", parents=[common], help="Spread / Thrust / sensitivity / annotation entropy")
    _add_dataset_flags(p)
    p.add_argument("--embeddings", help="raw embeddings for Spread (and Thrust unless --thrust-embeddings)")
    p.add_argument("--thrust-embeddings")
    p.add_argument("--sensitivity", help="JSONL of per-instance sensitivity scores")
    p.add_argument("--metrics", type=_csv_list, default=None, help="subset of spread,thrust,sensitivity,annotation_entropy")
    p.add_argument("--k-shot", type=int, default=8)
    p.add_argument("--restrict-same-class", action="store_true")
    p.add_argument("--eval-split", default="test")
    p.add_argument("--thrust-sample-size", type=int)
    p.add_argument("--thrust-quantile", type=float, default=0.25)
    p.add_argument("--thrust-seeds", type=lambda s: [int(v) for v in _csv_list(s)])
    p.add_argument("--name")
    p.add_argument("--out", required=True)

    p = sub.add_parser("correlate", parents=[common], help="Pearson correlation against reference F1")
    p.add_argument("--report", action="append", default=[], required=True, help="report JSON (repeatable)")
    p.add_argument("--references", help='JSON {"<dataset>": {"classes": [...], "f1": [[...], ...]}}')
    p.add_argument("--fit-reference", action="store_true", help="train a softmax reference on --dataset/--ref-embeddings")
    _add_dataset_flags(p, required=False)
    p.add_argument("--ref-embeddings")
    p.add_argument("--name")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reorg", parents=[common], help="split a class and compare hardness spread")
    _add_dataset_flags(p)
    p.add_argument("--embeddings", required=True)
    _add_reduce_flags(p, default="none")
    p.add_argument("--split", type=_csv_list, default=["train"])
    p.add_argument("--target-class", help="class to split (default: the hardest)")
    p.add_argument("--n-subclasses", type=int, default=2)
    p.add_argument("--method", choices=["kmeans", "random", "both"], default="both")
    p.add_argument("--out", required=True)

    p = sub.add_parser("demos", parents=[common], help="cluster-medoid ICL demonstrations")
    _add_dataset_flags(p)
    p.add_argument("--embeddings", required=True)
    _add_reduce_flags(p, default="none")
    p.add_argument("--split", type=_csv_list, default=["train"])
    p.add_argument("--composition", required=True, help="e.g. Positive=1,Neutral=2,Negative=1")
    p.add_argument("--lowercase-labels", action="store_true")
    p.add_argument("--conjunction", default="And", help="pair tasks: conjunction used in prompt text")
    p.add_argument("--out", required=True, help="prompt text file")
    p.add_argument("--report-out", help="optional JSON report with selected ids")

    p = sub.add_parser("simulate-chebyshev", parents=[common], help="Monte-Carlo check of the mean-gap bound")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--n-tr", type=int, default=200)
    p.add_argument("--n-te", type=int, default=100)
    p.add_argument("--k-values", type=lambda s: [float(v) for v in _csv_list(s)], default=[1.0, 2.0, 3.0, 4.0])
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot", parents=[common], help="SVG scatter of a 2-D layout")
    _add_dataset_flags(p)
    p.add_argument("--reduced", help="reduced matrix file (E=2)")
    p.add_argument("--embeddings", help="embeddings to reduce on the fly")
    _add_reduce_flags(p)
    p.add_argument("--split", type=_csv_list)
    p.add_argument("--title", default="")
    p.add_argument("--out", required=True)
    return parser


# ----------------------------------------------------------------- config


def _apply_toml(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{known.config}: {exc}") from None
    command = next((a for a in argv if a in SUBCOMMANDS), None)
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(command, {}) if command else {}
    values = {**flat, **section}
    if not command:
        return
    subparser = parser._subparsers._group_actions[0].choices[command]
    dests = {a.dest for a in subparser._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise ValidationError(f"{known.config}: unknown option {key!r} for {command}")
        if dest in ("classes", "target_classes", "split", "balance_splits", "metrics") and isinstance(value, str):
            value = _csv_list(value)
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    for action in subparser._actions:
        if action.dest in defaults and action.required:
            action.required = False


def resolved_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "json_errors", "verbose")}
    return dict(sorted(cfg.items()))


# ---------------------------------------------------------------- helpers


def _schema(args) -> LabelSchema:
    inferred = None
    if not args.classes or not args.task:
        inferred = infer_schema(args.dataset)
    classes = tuple(args.classes) if args.classes else inferred.classes
    task = args.task or inferred.task_kind
    return LabelSchema(classes, task)


def _load(args) -> Dataset:
    return load_dataset(args.dataset, _schema(args))


def _umap_cfg(args) -> UmapConfig:
    return UmapConfig(
        n_neighbors=args.n_neighbors,
        min_dist=args.min_dist,
        n_epochs=args.n_epochs,
        metric=args.metric,
        E=args.dim,
        init=args.init,
        normalize=args.normalize,
    )


def _reduce(X: np.ndarray, ids, args, seed: int):
    """Returns (coords, method, params)."""
    if args.reduce == "none":
        return X, "raw", {}
    if args.reduce == "pca":
        Z = X
        if args.normalize:
            Z = X / np.linalg.norm(X, axis=1, keepdims=True)
        r = pca_fit_transform(Z, args.dim, ids=ids)
    else:
        r = umap_fit_transform(X, _umap_cfg(args), seed=seed, ids=ids)
    return r.coords, r.method, r.params


def _conjunction_list(value: str) -> list[str]:
    if value == "all":
        return list(CONJUNCTIONS)
    return _csv_list(value)


def _slug(conj: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", conj.lower()).strip("-")


def _provider(args) -> ProviderConfig:
    if not args.provider_url or not args.model:
        raise ValidationError("--provider-url and --model are required to fetch embeddings")
    return ProviderConfig(
        base_url=args.provider_url,
        model=args.model,
        batch_size=args.batch_size,
        max_in_flight=args.max_in_flight,
        retry_limit=args.retry_limit,
        timeout=args.timeout,
        text_prefix=args.text_prefix,
    )


def _fetch_for(dataset: Dataset, args, conj: str | None) -> EmbeddingMatrix:
    texts = [inst.text(conj, strict=False) if conj else inst.text() for inst in dataset.instances]
    return fetch_embeddings(texts, _provider(args), cache_dir=args.cache_dir, ids=dataset.ids)


def _embedding_sources(args, dataset: Dataset) -> list[tuple[str | None, EmbeddingMatrix]]:
    """(conjunction or None, matrix) pairs from --embeddings or the provider."""
    pair = dataset.schema.task_kind == "pair"
    if args.embeddings and args.provider_url:
        raise ValidationError("--embeddings and --provider-url are mutually exclusive")
    if args.embeddings:
        out = []
        for spec in args.embeddings:
            conj, sep, path = spec.partition("=")
            if sep and pair and conj in CONJUNCTIONS + tuple(_conjunction_list(args.conjunctions)):
                out.append((conj, load_embeddings(path)))
            else:
                out.append((None, load_embeddings(spec)))
        if not pair and len(out) > 1:
            raise ValidationError("single-text datasets take exactly one --embeddings file")
        return out
    if args.provider_url:
        if pair:
            return [(c, _fetch_for(dataset, args, c)) for c in _conjunction_list(args.conjunctions)]
        return [(None, _fetch_for(dataset, args, None))]
    raise ValidationError("measure needs --embeddings or --provider-url")


def _write_text(path: str, text: str) -> None:
    p = Path(path)
    tmp = p.with_name(f".{p.name}.tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    tmp.replace(p)


# --------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    if args.map and args.map_preset:
        raise ValidationError("--map and --map-preset are mutually exclusive")
    ds = _load(args)
    if args.map or args.map_preset:
        if args.map_preset:
            mapping, default_target = MAP_PRESETS[args.map_preset]
        else:
            mapping = json.loads(Path(args.map).read_text(encoding="utf-8"))
            default_target = tuple(dict.fromkeys(mapping.values()))
        target = LabelSchema(tuple(args.target_classes or default_target), ds.schema.task_kind)
        ds = normalize_labels(ds, mapping, target)
    elif args.target_classes:
        raise ValidationError("--target-classes requires --map or --map-preset")
    if args.balance or args.fraction != 1.0:
        ds = balance_classes(ds, args.seed, args.fraction, per_split=not args.pool_splits, splits=args.balance_splits)
    write_dataset(ds, args.out)
    summary = {s: ds.split(s).class_counts() for s in ("train", "validation", "test") if len(ds.split(s))}
    print(json.dumps({"classes": list(ds.schema.classes), "counts": summary}, indent=2))
    return 0


def cmd_embed(args) -> int:
    ds = _load(args)
    if ds.schema.task_kind == "pair":
        written = {}
        for conj in _conjunction_list(args.conjunctions):
            m = _fetch_for(ds, args, conj)
            if "{conj}" in args.out:
                path = args.out.replace("{conj}", _slug(conj))
            else:
                p = Path(args.out)
                path = str(p.with_name(f"{p.stem}.{_slug(conj)}{p.suffix}"))
            store_embeddings(m, path, args.emb_format)
            written[conj] = path
        for conj, path in written.items():
            print(f"{conj}={path}")
    else:
        m = _fetch_for(ds, args, None)
        store_embeddings(m, args.out, args.emb_format)
        print(args.out)
    return 0


def cmd_reduce(args) -> int:
    if args.reduce == "none":
        raise ValidationError("reduce needs --reduce pca or umap")
    m = load_embeddings(args.embeddings)
    X = m.as_float64()
    if args.reduce == "pca":
        if args.normalize:
            X = X / np.linalg.norm(X, axis=1, keepdims=True)
        r = pca_fit_transform(X, args.dim, ids=m.ids)
    else:
        r = umap_fit_transform(X, _umap_cfg(args), seed=args.seed, ids=m.ids)
    r.params["source"] = m.source_tag
    store_reduced(r, args.out, args.emb_format)
    return 0


def _measure_one(X: np.ndarray, ids, labels, schema: LabelSchema, args) -> HardnessReport:
    runs = []
    seeds = [args.seed + i for i in range(max(1, args.runs))]
    if args.reduce != "umap":
        seeds = seeds[:1]
    for seed in seeds:
        coords, method, params = _reduce(X, ids, args, seed)
        runs.append(geohard(coords, labels, schema, space_tag="raw" if method == "raw" else "reduced"))
    rep = average_reports(runs, seeds=seeds, reduction=args.reduce, reduction_params=params)
    return rep


def cmd_measure(args) -> int:
    ds = _load(args)
    sel = ds.split(args.split)
    if args.balance or args.fraction != 1.0:
        sel = balance_classes(sel, args.seed, args.fraction)
    sources = _embedding_sources(args, sel)
    per_conj = []
    for conj, m in sources:
        X, labels = align(sel, m, None)
        rep = _measure_one(X, sel.ids, labels, ds.schema, args)
        rep.metadata["conjunction"] = conj
        rep.metadata["source"] = m.source_tag
        per_conj.append(rep)
    if len(per_conj) == 1:
        final = per_conj[0]
    else:
        final = average_reports(per_conj)
        final.metadata["per_conjunction"] = {
            r.metadata["conjunction"]: {"intra": r.intra, "inter": r.inter, "geohard": r.geohard} for r in per_conj
        }
    conjs = [c for c, _ in sources if c is not None]
    final.metadata.update(
        {
            "conjunctions": conjs,
            "non_default_conjunctions": [c for c in conjs if c not in CONJUNCTIONS],
            "splits": list(args.split),
            "class_counts": sel.class_counts(),
            "reduction_fit": "single fit on the union of the measured splits",
        }
    )
    report = new_report(resolved_config(args))
    report["datasets"].append(dataset_entry(args.name or Path(args.dataset).stem, final))
    emit_report(report, args.format, args.out)
    return 0


def cmd_baseline(args) -> int:
    ds = _load(args)
    classes = ds.schema.classes
    wanted = args.metrics
    if wanted is None:
        wanted = []
        if args.embeddings:
            wanted.append("spread")
        if args.embeddings or args.thrust_embeddings:
            wanted.append("thrust")
        if args.sensitivity:
            wanted.append("sensitivity")
    unknown = set(wanted) - {"spread", "thrust", "sensitivity", "annotation_entropy"}
    if unknown:
        raise ValidationError(f"unknown baseline metrics: {sorted(unknown)}")
    if not wanted:
        raise ValidationError("nothing to compute; pass --embeddings, --thrust-embeddings or --sensitivity")

    baselines: dict[str, list[float]] = {}
    meta: dict = {}
    train = ds.split("train")
    evals = ds.split(args.eval_split)
    if "spread" in wanted:
        if not args.embeddings:
            raise ValidationError("spread needs --embeddings")
        m = load_embeddings(args.embeddings)
        Xtr, ytr = align(train, m)
        Xte, yte = align(evals, m)
        cfg = SpreadConfig(k_shot=args.k_shot, restrict_same_class=args.restrict_same_class)
        vals = spread_class_scores((Xtr, ytr), (Xte, yte), cfg, classes)
        baselines["spread"] = [vals[c] for c in classes]
        meta["spread"] = {**asdict(cfg), "eval_split": args.eval_split, "source": m.source_tag}
    if "thrust" in wanted:
        path = args.thrust_embeddings or args.embeddings
        if not path:
            raise ValidationError("thrust needs --thrust-embeddings or --embeddings")
        m = load_embeddings(path)
        Xtr, ytr = align(train, m)
        Xq, yq = align(evals, m)
        kw = {"aggregation_quantile": args.thrust_quantile}
        if args.thrust_seeds:
            kw["seeds"] = tuple(args.thrust_seeds)
        if args.thrust_sample_size:
            cfg = ThrustConfig(sample_size=args.thrust_sample_size, **kw)
        else:
            cfg = ThrustConfig.for_task(ds.schema.task_kind, **kw)
        _, agg = thrust_class_scores((Xtr, ytr), (Xq, yq), cfg, classes=classes)
        baselines["thrust"] = [agg[c] for c in classes]
        meta["thrust"] = {**asdict(cfg), "cluster_count": cfg.cluster_count, "source": m.source_tag}
    if "sensitivity" in wanted:
        if not args.sensitivity:
            raise ValidationError("sensitivity needs --sensitivity")
        agg = aggregate_sensitivity(load_sensitivity(args.sensitivity), ds)
        baselines["sensitivity"] = [agg.values[c] for c in classes]
        meta["sensitivity"] = {"coverage": agg.coverage, "counts": agg.counts}
    if "annotation_entropy" in wanted:
        ent = annotation_entropy(ds)
        baselines["annotation_entropy"] = [ent.values[c] for c in classes]
        meta["annotation_entropy"] = {"annotated": ent.annotated, "excluded": ent.excluded, "unit": "nats"}

    report = new_report(resolved_config(args))
    entry = dataset_entry(args.name or Path(args.dataset).stem, classes=classes)
    entry["baselines"] = baselines
    entry["metadata"] = meta
    report["datasets"].append(entry)
    emit_report(report, args.format, args.out)
    return 0


def _merge_tables(paths: Sequence[str]) -> tuple[dict[str, MetricTable], dict[str, dict]]:
    tables: dict[str, MetricTable] = {}
    entries: dict[str, dict] = {}
    for path in paths:
        for ds in load_report(path)["datasets"]:
            name = ds["name"]
            values = {**ds.get("hardness", {}), **ds.get("baselines", {})}
            if name in tables:
                if tuple(ds["classes"]) != tables[name].classes:
                    raise ValidationError(f"{name}: reports disagree on class order")
                tables[name].values.update(values)
                entries[name]["hardness"].update(ds.get("hardness", {}))
                entries[name]["baselines"].update(ds.get("baselines", {}))
            else:
                tables[name] = MetricTable(tuple(ds["classes"]), dict(values))
                entries[name] = {
                    "name": name,
                    "classes": list(ds["classes"]),
                    "hardness": dict(ds.get("hardness", {})),
                    "baselines": dict(ds.get("baselines", {})),
                    "metadata": ds.get("metadata", {}),
                    "correlations": {},
                }
    for t in tables.values():
        for metric in t.values:
            t.orientations[metric] = ORIENTATION.get(metric, "hardness")
    return tables, entries


def cmd_correlate(args) -> int:
    tables, entries = _merge_tables(args.report)
    refs: dict[str, ReferenceSet] = {}
    if args.references:
        raw = json.loads(Path(args.references).read_text(encoding="utf-8"))
        for name, obj in raw.items():
            refs[name] = ReferenceSet(tuple(obj["classes"]), [list(map(float, v)) for v in obj["f1"]])
    if args.fit_reference:
        if not (args.dataset and args.ref_embeddings):
            raise ValidationError("--fit-reference needs --dataset and --ref-embeddings")
        ds = _load(args)
        m = load_embeddings(args.ref_embeddings)
        X, labels = align(ds, m)
        splits = [i.split for i in ds.instances]
        model = train_reference(X, labels, splits, ds.schema.classes, ReferenceParams(), seed=args.seed)
        name = args.name or Path(args.dataset).stem
        f1 = [100.0 * model.f1[c] for c in ds.schema.classes]
        refs.setdefault(name, ReferenceSet(ds.schema.classes, []))
        refs[name].vectors.append(f1)
    if not refs:
        raise ValidationError("correlate needs --references and/or --fit-reference")
    missing = [n for n in tables if n not in refs]
    if missing:
        raise ValidationError(f"no reference F1 for datasets {missing}")

    corr = correlate_report(tables, refs)
    report = new_report(resolved_config(args))
    for name, entry in entries.items():
        entry["reference_f1"] = corr.references[name]
        entry["correlations"] = {
            e.metric: {
                "r_raw": e.r_raw,
                "r_adjusted": e.r_adjusted,
                "orientation": e.orientation,
                "violation": e.violation,
                "defined": e.defined,
            }
            for e in corr.entries
            if e.dataset == name
        }
        report["datasets"].append(entry)
    report["macro"] = corr.macro
    report["macro_abs"] = corr.macro_abs
    emit_report(report, args.format, args.out)
    return 0


def _coords_for(args, ds: Dataset) -> tuple[Dataset, np.ndarray]:
    sel = ds.split(args.split)
    m = load_embeddings(args.embeddings)
    X, _ = align(sel, m)
    coords, _, _ = _reduce(X, sel.ids, args, args.seed)
    return sel, coords


def cmd_reorg(args) -> int:
    ds = _load(args)
    sel, coords = _coords_for(args, ds)
    labels = sel.labels
    target = args.target_class
    if target is None:
        target = geohard(coords, labels, ds.schema).hardest()
    elif target not in ds.schema.classes:
        raise ValidationError(f"unknown class {target!r}")
    methods = ["kmeans", "random"] if args.method == "both" else [args.method]
    results = {}
    for method in methods:
        after = reorg_split(coords, labels, target, args.n_subclasses, method, args.seed)
        results[method] = reorg_evaluate(coords, labels, after, ds.schema.classes, method, args.seed).to_dict()
    report = new_report(resolved_config(args))
    report["reorganization"] = {"target_class": target, "results": results}
    emit_report(report, "json", args.out)
    return 0


def cmd_demos(args) -> int:
    ds = _load(args)
    sel, coords = _coords_for(args, ds)
    comp = parse_composition(args.composition)
    for c in comp:
        if c not in ds.schema.classes:
            raise ValidationError(f"unknown class {c!r} in composition")
    texts = [inst.text(args.conjunction, strict=False) for inst in sel.instances]
    verbalizer = {c: c.lower() for c in ds.schema.classes} if args.lowercase_labels else None
    demos = select_demonstrations(coords, sel.labels, comp, args.seed, texts, verbalizer)
    _write_text(args.out, demos.prompt + "\n")
    summary = {"ids": [sel.ids[i] for i in demos.indices], "labels": demos.labels, "composition": comp}
    if args.report_out:
        report = new_report(resolved_config(args))
        report["demonstrations"] = summary
        emit_report(report, "json", args.report_out)
    print(json.dumps(summary))
    return 0


def cmd_simulate(args) -> int:
    cfg = ChebyshevSimConfig(args.sigma, args.n_tr, args.n_te, tuple(args.k_values), args.trials, args.seed)
    rows = chebyshev_simulate(cfg)
    report = new_report(resolved_config(args))
    report["simulation"] = [
        {**r.__dict__, "within_bound": r.within_bound, "gaussian_tail": gaussian_gap_tail(cfg, r.k)} for r in rows
    ]
    emit_report(report, "json", args.out)
    return 0 if all(r.within_bound for r in rows) else 1


def cmd_plot(args) -> int:
    ds = _load(args)
    sel = ds.split(args.split) if args.split else ds
    if bool(args.reduced) == bool(args.embeddings):
        raise ValidationError("pass exactly one of --reduced or --embeddings")
    if args.reduced:
        r = load_reduced(args.reduced)
        m = EmbeddingMatrix(r.ids, r.coords)
        coords, labels = align(sel, m)
    else:
        m = load_embeddings(args.embeddings)
        X, labels = align(sel, m)
        coords, _, _ = _reduce(X, sel.ids, args, args.seed)
    plot_scatter(coords, labels, args.out, ds.schema.classes, args.title)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "embed": cmd_embed,
    "reduce": cmd_reduce,
    "measure": cmd_measure,
    "baseline": cmd_baseline,
    "correlate": cmd_correlate,
    "reorg": cmd_reorg,
    "demos": cmd_demos,
    "simulate-chebyshev": cmd_simulate,
    "plot": cmd_plot,
}


def _report_error(exc: BaseException, code: int, as_json: bool, usage: str = "") -> int:
    if as_json:
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(payload), file=sys.stderr)
    else:
        if usage:
            print(usage.rstrip(), file=sys.stderr)
        print(f"geohard: error: {exc}", file=sys.stderr)
    return code


def run_command(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--json-errors" in argv
    parser = build_parser()
    try:
        _apply_toml(parser, argv)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required", parser.format_usage())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _report_error(exc, 1, as_json, exc.usage)
    except (TransportError, OSError) as exc:
        return _report_error(exc, 2, as_json)
    except (ValidationError, GeoHardError) as exc:
        return _report_error(exc, 1, as_json)
    except (ValueError, KeyError, TypeError) as exc:
        # malformed JSON config/reference files and similar bad input
        return _report_error(exc, 1, as_json)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
