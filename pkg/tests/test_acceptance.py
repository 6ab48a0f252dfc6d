"""Acceptance criteria, one test per criterion, tolerances pinned below."""

import math
import os
import time

import numpy as np
import pytest

from jpec.cli import main
from jpec.evalkit import (RankedList, average_precision, check_split, hits_at_k, make_regular_split,
                         make_zero_shot_split, mean_average_precision, mrr, reciprocal_rank)
from jpec.gradcheck import check_gradients, random_instance
from jpec.graph import LabeledPair
from jpec.linalg import SparseMatrix, laplacian_from_pairs
from jpec.model import build_encoder_operator, loss_neg, loss_pos, trace_form
from jpec.pipeline import run_planted
from jpec.synth import SynthSpec, generate

SEEDS = range(5)
TRACE_RTOL = 1e-10
GRAD_EPS, GRAD_TOL = 1e-5, 1e-4
OPERATOR_ATOL = 1e-12
REGULAR_HITS_MIN, REGULAR_CHANCE_FACTOR = 0.5, 5.0
ZERO_SHOT_CHANCE_FACTOR = 3.0
DESCENT_RATIO = 0.5
SEED_BUDGET_S = 120.0


@pytest.fixture(scope="module")
def regular_runs():
    return [run_planted(s, "regular") for s in SEEDS]


@pytest.fixture(scope="module")
def symmetric_runs():
    return [run_planted(s, "regular", norm_mode="symmetric") for s in SEEDS]


@pytest.fixture(scope="module")
def zero_shot_runs():
    return [run_planted(s, "zero_shot") for s in SEEDS]


def test_1_trace_identity(acceptance):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, k = int(rng.integers(2, 51)), int(rng.integers(1, 9))
        y = rng.standard_normal((n, k))
        pairs = [(int(i), int(j)) for i, j in rng.integers(0, n, size=(3 * n, 2)) if i != j]
        weights = rng.uniform(0.1, 2.0, len(pairs))
        pos = [LabeledPair(i, j, w) for (i, j), w in zip(pairs, weights)]
        neg = [LabeledPair(i, j, -w) for (i, j), w in zip(pairs, weights)]
        lap = laplacian_from_pairs([(i, j, w) for (i, j), w in zip(pairs, weights)], n)
        trace = 2.0 * float(np.trace(y.T @ lap.to_dense() @ y))
        for pairwise in (loss_pos(y, pos), loss_neg(y, neg), trace_form(y, lap)):
            worst = max(worst, abs(pairwise - trace) / max(abs(trace), 1e-300))
    elapsed = time.perf_counter() - start
    ok = acceptance(1, worst <= TRACE_RTOL and elapsed < 1.0,
                    f"max rel err {worst:.2e} (tol {TRACE_RTOL:g}), {elapsed:.3f}s (< 1s)")
    assert ok


def test_2_gradient_check(acceptance):
    start = time.perf_counter()
    cases = {"active hinge": [random_instance(s) for s in range(3)],
             "inactive hinge": [random_instance(s, margin=0.0) for s in range(3)],
             "beta=0": [random_instance(s, beta=0.0) for s in range(3)]}
    worst, kinds = 0.0, set()
    for name, instances in cases.items():
        for inst in instances:
            res = check_gradients(*inst, eps=GRAD_EPS)
            worst = max(worst, res.max_rel_error)
            kinds.add(res.hinge_active)
    elapsed = time.perf_counter() - start
    ok = acceptance(2, worst < GRAD_TOL and kinds == {True, False} and elapsed < 30,
                    f"max rel err {worst:.2e} over 9 instances (tol {GRAD_TOL:g}), {elapsed:.2f}s (< 30s)")
    assert ok


def _brute(cands, rel, k):
    top = cands[:k]
    hits = sum(c in rel for c in top) / min(k, len(rel))
    ranks = [p + 1 for p, c in enumerate(cands) if c in rel]
    rr = 1 / ranks[0] if ranks else 0.0
    ap = sum((m + 1) / r for m, r in enumerate(ranks)) / len(rel)
    return hits, rr, ap


def test_3_metric_oracle(acceptance):
    def ranked(ids):
        return RankedList(0, np.array(ids), -np.arange(len(ids), dtype=float))

    rng = np.random.default_rng(99)
    mismatches, results, brute_rr, brute_ap = 0, [], [], []
    for _ in range(100):
        length = int(rng.integers(3, 40))
        cands = rng.permutation(60)[:length].tolist()
        rel = set(rng.choice(60, size=int(rng.integers(1, 8)), replace=False).tolist())
        k = int(rng.integers(1, 12))
        r = ranked(cands)
        h, rr, ap = _brute(cands, rel, k)
        mismatches += hits_at_k(r, rel, k) != h
        mismatches += reciprocal_rank(r, rel) != rr
        mismatches += not math.isclose(average_precision(r, rel), ap, rel_tol=0, abs_tol=1e-15)
        results.append((r, rel))
        brute_rr.append(rr)
        brute_ap.append(ap)
    mismatches += not math.isclose(mrr(results), math.fsum(brute_rr) / 100, abs_tol=1e-15)
    mismatches += not math.isclose(mean_average_precision(results), math.fsum(brute_ap) / 100, abs_tol=1e-15)
    hand_map = mean_average_precision([(ranked([7, 0, 8]), {7, 8})])
    hand_mrr = mrr([(ranked([0, 7, 1, 2]), {7}), (ranked([0, 1, 2, 7]), {7})])
    ok = acceptance(3, mismatches == 0 and hand_map == pytest.approx(5 / 6) and hand_mrr == 0.375,
                    f"{mismatches} mismatches on 100 instances, MAP {hand_map:.6f} (5/6), MRR {hand_mrr}")
    assert ok


def _ring(n, d):
    a = np.zeros((n, n))
    for i in range(n):
        for s in range(1, d // 2 + 1):
            a[i, (i + s) % n] = a[(i + s) % n, i] = 1
    return SparseMatrix.from_dense(a)


@pytest.mark.slow
def test_4_normalization_ablation(acceptance, regular_runs, symmetric_runs):
    gap = max(np.max(np.abs(build_encoder_operator(_ring(n, d), "row").to_dense()
                            - build_encoder_operator(_ring(n, d), "symmetric").to_dense()))
              for n, d in [(8, 2), (12, 4), (30, 6), (50, 10)])
    row = float(np.mean([r.hits10 for r in regular_runs]))
    sym = float(np.mean([r.hits10 for r in symmetric_runs]))
    ok = acceptance(4, gap <= OPERATOR_ATOL and row >= sym,
                    f"regular-graph gap {gap:.1e} (tol {OPERATOR_ATOL:g}); "
                    f"Hits@10 row {row:.3f} >= symmetric {sym:.3f}")
    assert ok


@pytest.mark.slow
def test_5_regular_recovery(acceptance, regular_runs):
    hits = float(np.mean([r.hits10 for r in regular_runs]))
    chance = float(np.mean([r.chance10 for r in regular_runs]))
    slowest = max(r.seconds for r in regular_runs)
    ok = acceptance(5, hits >= REGULAR_HITS_MIN and hits >= REGULAR_CHANCE_FACTOR * chance
                    and slowest < SEED_BUDGET_S,
                    f"mean Hits@10 {hits:.3f} (>= {REGULAR_HITS_MIN}), chance {chance:.4f} "
                    f"(ratio {hits / chance:.1f}x >= {REGULAR_CHANCE_FACTOR:g}x), slowest seed {slowest:.1f}s")
    assert ok


@pytest.mark.slow
def test_6_zero_shot_recovery(acceptance, zero_shot_runs):
    finite = all(np.all(np.isfinite(r.embeddings[q.node])) for r in zero_shot_runs for q in r.split.queries)
    finite = finite and all(np.all(np.isfinite(r.embeddings[r.split.params["selected"], :]))
                            for r in zero_shot_runs)
    hits = float(np.mean([r.hits10 for r in zero_shot_runs]))
    chance = float(np.mean([r.chance10 for r in zero_shot_runs]))
    ok = acceptance(6, finite and hits >= ZERO_SHOT_CHANCE_FACTOR * chance,
                    f"mean Hits@10 {hits:.3f}, chance {chance:.4f} "
                    f"(ratio {hits / chance:.1f}x >= {ZERO_SHOT_CHANCE_FACTOR:g}x), no NaN: {finite}")
    assert ok


def test_7_determinism(acceptance, tmp_path, monkeypatch):
    data = tmp_path / "data"
    assert main(["generate", "--out", str(data), "--seed", "1"]) == 0
    argv = ["train", "--nodes", str(data / "nodes.tsv"), "--supply", str(data / "supply.tsv"),
            "--competitors", str(data / "competitors.tsv"), "--epochs", "30", "--seed", "5"]
    runs = {}
    for name, threads in [("a", None), ("b", None), ("seq", "0")]:
        if threads is None:
            monkeypatch.delenv("JPEC_THREADS", raising=False)
        else:
            monkeypatch.setenv("JPEC_THREADS", threads)
        assert main(argv + ["--out", str(tmp_path / name)]) == 0
        runs[name] = {f: (tmp_path / name / f).read_bytes() for f in ("model.jpec", "train_report.tsv",
                                                                      "embeddings.emb")}
    repeat = runs["a"] == runs["b"]
    threads = runs["a"] == runs["seq"]
    ok = acceptance(7, repeat and threads,
                    f"repeat run identical: {repeat}; JPEC_THREADS=0 vs default identical: {threads}")
    assert ok


def test_8_split_sweep(acceptance):
    problems = 0
    for seed in range(100):
        g, _ = generate(SynthSpec(n=300, industries=6, intra_competitor_prob=0.5, seed=seed))
        problems += len(check_split(g, make_regular_split(g, 0.2, 5, seed), 5))
        problems += len(check_split(g, make_zero_shot_split(g, 0.2, 5, seed), 5))
    ok = acceptance(8, problems == 0, f"{problems} invariant violations over 100 regular + 100 zero-shot splits")
    assert ok


@pytest.mark.slow
def test_9_descent(acceptance, regular_runs):
    ratios = [r.report.final.total / r.report.records[0].total for r in regular_runs]
    ok = acceptance(9, max(ratios) < DESCENT_RATIO,
                    f"final/initial loss per seed {', '.join(f'{x:.3f}' for x in ratios)} (< {DESCENT_RATIO})")
    assert ok
