"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; the
default ``-rA`` option also shows them in the summary.
"""

import math
import statistics
import time

import numpy as np
import pytest

import oracles
from conftest import CLASSES, MockEmbeddingServer, lift, synth, synth_split, text_vector
from geohard.analysis import (
    ChebyshevSimConfig,
    ReorgReport,
    chebyshev_simulate,
    gaussian_gap_tail,
    pearson,
    reorg_evaluate,
    reorg_split,
    softmax_loss_grad,
    train_reference,
)
from geohard.cli import run_command
from geohard.clustering import DEFAULT_SEEDS, kmeans_fit
from geohard.dimred import UmapConfig, attraction_grad, attraction_loss, fit_ab, knn_preservation, umap_fit_transform
from geohard.embeddings import EmbeddingMatrix, ProviderConfig, fetch_embeddings, load_embeddings, store_embeddings
from geohard.metrics import (
    SpreadConfig,
    ThrustConfig,
    class_stats,
    geohard,
    inter_hardness,
    intra_hardness,
    spread_scores,
    thrust_class_scores,
    thrust_vector_score,
)

SEEDS = range(5)


def verdict(n, ok, detail):
    print(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_c01_pearson_amazon():
    f1 = [87.6, 71.0, 80.5]
    gh = [-8.316, -3.818, -6.493]
    r = pearson(f1, gh)
    times = []
    for _ in range(50):
        t0 = time.perf_counter()
        pearson(f1, gh)
        times.append(time.perf_counter() - t0)
    ms = statistics.median(times) * 1e3
    verdict(1, abs(r - -0.999) <= 2e-3 and ms < 1.0, f"r={r:.5f} (target -0.999 +/- 2e-3), median {ms:.3f} ms")


def test_c02_reorg_std_table():
    three = [-5.58, -3.08, -5.48]
    rand = [-3.89, -0.71, -0.71, -3.62]
    kmeans = [-5.24, -4.26, -3.41, -4.78]
    r_rand = ReorgReport.from_vectors(three, rand, method="random")
    r_km = ReorgReport.from_vectors(three, kmeans, method="kmeans")
    got = [r_km.std_before, r_km.std_after, r_rand.std_after]
    want = [1.15, 0.68, 1.53]
    errs = [abs(g - w) for g, w in zip(got, want)]
    detail = ", ".join(f"{g:.4f} vs {w}" for g, w in zip(got, want))
    verdict(2, max(errs) <= 0.005, f"{detail} (tolerance 0.005)")


def test_c03_synthetic_end_to_end():
    t0 = time.perf_counter()
    argmax_b, lowest_b, rs = 0, 0, []
    for seed in SEEDS:
        X, labels, splits = synth_split(seed)
        train_rows = [i for i, s in enumerate(splits) if s == "train"]
        gh = geohard(X[train_rows], [labels[i] for i in train_rows], CLASSES).geohard
        model = train_reference(X, labels, splits, CLASSES, seed=seed)
        f1 = [model.f1[c] for c in CLASSES]
        argmax_b += CLASSES[int(np.argmax(gh))] == "B"
        lowest_b += CLASSES[int(np.argmin(f1))] == "B"
        rs.append(pearson(gh, f1))
    secs = time.perf_counter() - t0
    mean_r = float(np.mean(rs))
    ok = argmax_b == 5 and lowest_b >= 4 and mean_r <= -0.9 and secs < 30
    verdict(3, ok, f"argmax=B {argmax_b}/5, lowest F1=B {lowest_b}/5, mean r={mean_r:.4f}, {secs:.1f} s")


def test_c04_chebyshev_simulation():
    t0 = time.perf_counter()
    ok, k3 = True, []
    for seed in SEEDS:
        cfg = ChebyshevSimConfig(1.0, 200, 100, (1.0, 2.0, 3.0, 4.0), 100_000, seed)
        for row in chebyshev_simulate(cfg):
            ok &= row.within_bound
            if row.k == 3.0:
                k3.append(row.empirical)
    secs = time.perf_counter() - t0
    tail = gaussian_gap_tail(ChebyshevSimConfig(1.0, 200, 100), 3.0)
    ok = ok and max(k3) < 1e-3 and secs < 20
    verdict(4, ok, f"all bounds held, k=3 empirical max {max(k3):.2e} (gaussian tail {tail:.2e}), {secs:.1f} s")


def test_c05_metric_oracles():
    worst = 0.0
    for seed in range(20):
        X, labels = oracles.random_instance(seed)
        s = class_stats(X, labels, CLASSES)
        cents, vars_ = oracles.class_stats_loops(X, labels, CLASSES)
        intra, inter = intra_hardness(s), inter_hardness(s)
        worst = max(
            worst,
            np.abs(s.centroids - cents).max(),
            np.abs(s.variances - vars_).max(),
            np.abs(np.array([intra[c] for c in CLASSES]) - oracles.intra_loops(vars_)).max(),
            np.abs(np.array([inter[c] for c in CLASSES]) - oracles.inter_loops(cents)).max(),
        )
        half = len(labels) // 2
        Xtr, ytr, Xte, yte = X[:half], labels[:half], X[half:], labels[half:]
        k = min(3, len(ytr))
        got = spread_scores((Xtr, ytr), (Xte, yte), SpreadConfig(k_shot=k))
        worst = max(worst, np.abs(got - oracles.spread_loops(Xtr, ytr, Xte, yte, k)).max())

        rng = np.random.default_rng(seed)
        Q = rng.normal(size=(5, X.shape[1])) * 3
        qlab = [CLASSES[i % 3] for i in range(5)]
        cfg = ThrustConfig(sample_size=int(rng.integers(3, 12)), seeds=(2, 4))
        rec = oracles.RecordingKMeans(per_setup=3)
        scores, _ = thrust_class_scores((X, labels), (Q, qlab), cfg, kmeans=rec, classes=CLASSES)
        want = [
            np.mean([oracles.thrust_formula(q, cl, 3, cfg.cluster_count, cfg.epsilon) for cl in rec.setups()]) for q in Q
        ]
        worst = max(worst, np.abs(scores - want).max())

    C, S = np.array([[0.0, 0.0]]), np.array([7.0])
    s = [thrust_vector_score(np.array([[r, 0.0]]), C, S, 1)[0] for r in (1.0, 2.0, 4.0)]
    decay = max(abs(s[0] / s[1] - 4.0), abs(s[1] / s[2] - 4.0))
    verdict(5, worst <= 1e-9 and decay <= 1e-9, f"max oracle deviation {worst:.1e}, 1/r^2 ratio deviation {decay:.1e}")


def test_c06_kmeans_toy_optimality():
    from test_clustering import optimal_inertia, toy_cases

    passed, monotone = 0, True
    for X, k in toy_cases():
        opt = optimal_inertia(X, k)
        good = 0
        for seed in DEFAULT_SEEDS:
            m = kmeans_fit(X, k, seed=seed)
            monotone &= bool(np.all(np.diff(m.inertia_history) <= 1e-12))
            good += m.inertia <= 1.05 * opt + 1e-12
        passed += good >= 4
    verdict(6, passed == 20 and monotone, f"{passed}/20 cases optimal within 5% for >= 4 seeds, monotone={monotone}")


def test_c07_umap_quality():
    X2, _ = synth(0)
    X = lift(X2, dim=50, seed=1)
    t0 = time.perf_counter()
    a = umap_fit_transform(X, UmapConfig(), seed=0)
    b = umap_fit_transform(X, UmapConfig(), seed=0)
    secs = time.perf_counter() - t0
    score = knn_preservation(X, a.coords, 10, metric=a.params["metric"])
    euclid = knn_preservation(X, a.coords, 10, metric="euclidean")
    same = a.coords.tobytes() == b.coords.tobytes()
    ok = score >= 0.80 and same and secs < 30
    verdict(7, ok, f"preservation {score:.3f} in the {a.params['metric']} input metric (euclidean {euclid:.3f}), deterministic={same}, {secs:.1f} s")


def test_c08_gradients():
    rng = np.random.default_rng(0)
    worst_soft = 0.0
    h = 1e-6
    for _ in range(50):
        n, d, K = 15, 3, 3
        Xb = np.c_[rng.normal(size=(n, d)), np.ones(n)]
        Y = np.eye(K)[rng.integers(0, K, n)]
        W = rng.normal(size=(K, d + 1))
        _, G = softmax_loss_grad(W, Xb, Y, 1e-3)
        N = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            Wp, Wm = W.copy(), W.copy()
            Wp[idx] += h
            Wm[idx] -= h
            N[idx] = (softmax_loss_grad(Wp, Xb, Y, 1e-3)[0] - softmax_loss_grad(Wm, Xb, Y, 1e-3)[0]) / (2 * h)
        worst_soft = max(worst_soft, np.linalg.norm(G - N) / np.linalg.norm(N))

    a, b = fit_ab(1.0, 0.1)
    worst_umap = 0.0
    for _ in range(50):
        yi, yj = rng.normal(size=2), rng.normal(size=2)
        w = rng.uniform(0.1, 1.0)
        g = attraction_grad(yi, yj, a, b, w)
        fd = np.empty(2)
        for dim in range(2):
            e = np.zeros(2)
            e[dim] = h
            fd[dim] = (attraction_loss(yi + e, yj, a, b, w) - attraction_loss(yi - e, yj, a, b, w)) / (2 * h)
        worst_umap = max(worst_umap, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    ok = worst_soft <= 1e-5 and worst_umap <= 1e-4
    verdict(8, ok, f"softmax max rel err {worst_soft:.1e}, umap attraction max rel err {worst_umap:.1e}")


def test_c09_reorganization_direction():
    reduced, random_ok, lines = 0, 0, []
    for seed in SEEDS:
        X, labels = synth(seed)
        km = reorg_evaluate(X, labels, reorg_split(X, labels, "B", 2, "kmeans", seed), CLASSES, "kmeans", seed)
        rnd = reorg_evaluate(X, labels, reorg_split(X, labels, "B", 2, "random", seed), CLASSES, "random", seed)
        reduced += km.std_after < km.std_before
        random_ok += rnd.std_after >= km.std_after
        lines.append(f"{km.std_before:.2f}->{km.std_after:.2f}/{rnd.std_after:.2f}")
    ok = reduced >= 4 and random_ok == 5
    verdict(9, ok, f"kmeans reduced std {reduced}/5, random not below kmeans {random_ok}/5 [{'; '.join(lines)}]")


def test_c10_plumbing_determinism(tmp_path):
    rng = np.random.default_rng(0)
    m = EmbeddingMatrix(tuple(f"id{i}" for i in range(50)), rng.normal(size=(50, 16)), "acceptance")
    store_embeddings(m, tmp_path / "e.ghe")
    back = load_embeddings(tmp_path / "e.ghe")
    roundtrip = back.vectors.tobytes() == m.vectors.tobytes() and back.ids == m.ids

    texts = [f"sentence {i}" for i in range(41)]
    with MockEmbeddingServer(max_delay=0.05, seed=3) as srv:
        cfg = ProviderConfig(srv.url, "m", batch_size=3, max_in_flight=8, retry_limit=0, timeout=5)
        first = fetch_embeddings(texts, cfg, cache_dir=tmp_path / "cache")
        expected = np.array([text_vector(t) for t in texts], dtype=np.float32)
        ordered = first.vectors.tobytes() == expected.tobytes()
        before = len(srv.requests)
        second = fetch_embeddings(texts, cfg, cache_dir=tmp_path / "cache")
        warm = len(srv.requests) == before and second.vectors.tobytes() == first.vectors.tobytes()

    X2, labels = synth(0, 30)
    ids = [f"r{i}" for i in range(len(labels))]
    (tmp_path / "d.jsonl").write_text(
        "".join(f'{{"id": "{i}", "text": "t {i}", "label": "{y}"}}\n' for i, y in zip(ids, labels))
    )
    store_embeddings(EmbeddingMatrix(tuple(ids), lift(X2, 8)), tmp_path / "x.ghe")
    argv = ["measure", "--dataset", str(tmp_path / "d.jsonl"), "--embeddings", str(tmp_path / "x.ghe"),
            "--reduce", "umap", "--n-epochs", "50", "--n-neighbors", "10", "--seed", "7", "--out", str(tmp_path / "r.json")]
    assert run_command(argv) == 0
    report_a = (tmp_path / "r.json").read_bytes()
    assert run_command(argv) == 0
    same_report = (tmp_path / "r.json").read_bytes() == report_a

    ok = roundtrip and ordered and warm and same_report
    verdict(10, ok, f"roundtrip={roundtrip}, order={ordered}, warm cache zero requests={warm}, report identical={same_report}")
