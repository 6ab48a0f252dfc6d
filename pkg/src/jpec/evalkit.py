"""Held-out splits of the competitor edges and ranked-retrieval metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InfeasibleError, ShapeError
from .graph import CompanyGraph, canonical
from .linalg import as_dense

SCORES = ("neg_sq_euclidean", "cosine")


class Query(NamedTuple):
    node: int
    held_out: frozenset


@dataclass(frozen=True, eq=False)
class SplitResult:
    """Training graph plus the queries whose competitors were held out."""

    train_graph: CompanyGraph
    queries: tuple
    removed_edges: tuple
    split_kind: str
    seed: int
    params: dict = field(default_factory=dict)

    def training_competitors(self) -> list[set]:
        return self.train_graph.competitor_neighbors()


# --- splits -----------------------------------------------------------------

def make_zero_shot_split(g: CompanyGraph, node_fraction: float = 0.2, min_competitors: int = 5,
                         seed: int = 0) -> SplitResult:
    """Strip a random subset of labelled nodes of every competitor edge.

    Supply edges and attributes are untouched, so the stripped nodes can
    still be embedded.  Only stripped nodes with at least
    ``min_competitors`` original competitors become queries.
    """
    if not 0 < node_fraction < 1:
        raise ValueError(f"node_fraction must be in (0, 1), got {node_fraction}")
    nbrs = g.competitor_neighbors()
    labeled = np.array([v for v in range(g.n) if nbrs[v]], dtype=np.int64)
    count = int(round(node_fraction * labeled.size))
    rng = np.random.default_rng(seed)
    selected = np.sort(rng.choice(labeled, size=count, replace=False)) if count else labeled[:0]
    stripped = set(int(v) for v in selected)

    removed = tuple(e for e in g.competitor_edges if e[0] in stripped or e[1] in stripped)
    kept = [e for e in g.competitor_edges if e[0] not in stripped and e[1] not in stripped]
    queries = tuple(Query(int(v), frozenset(nbrs[v])) for v in selected
                    if len(nbrs[v]) >= min_competitors)
    if not queries:
        raise InfeasibleError(
            f"none of the {count} stripped nodes has >= {min_competitors} competitors")
    return SplitResult(g.with_competitors(kept), queries, removed, "zero_shot", seed,
                       {"node_fraction": node_fraction, "min_competitors": min_competitors,
                        "selected": tuple(int(v) for v in selected)})


def make_regular_split(g: CompanyGraph, edge_fraction: float = 0.2, min_competitors: int = 5,
                       seed: int = 0) -> SplitResult:
    """Hold out a random fraction of competitor edges.

    Edges are visited in a seeded random order and removed unless that
    would leave an endpoint with no training competitor.  Nodes that lost
    at least ``min_competitors`` edges become queries.
    """
    if not 0 < edge_fraction < 1:
        raise ValueError(f"edge_fraction must be in (0, 1), got {edge_fraction}")
    edges = list(g.competitor_edges)
    target = int(round(edge_fraction * len(edges)))
    if target == 0:
        raise InfeasibleError(f"removing {edge_fraction} of {len(edges)} edges removes nothing")
    degree = g.competitor_degree()
    rng = np.random.default_rng(seed)
    removed = set()
    for k in rng.permutation(len(edges)):
        if len(removed) == target:
            break
        i, j = edges[k]
        if degree[i] > 1 and degree[j] > 1:
            degree[i] -= 1
            degree[j] -= 1
            removed.add((i, j))
    if len(removed) < target:
        raise InfeasibleError(
            f"only {len(removed)} of {target} edges can be held out without "
            "leaving a node with no training competitor")

    held = [set() for _ in range(g.n)]
    for i, j in removed:
        held[i].add(j)
        held[j].add(i)
    queries = tuple(Query(v, frozenset(held[v])) for v in range(g.n)
                    if len(held[v]) >= min_competitors)
    if not queries:
        raise InfeasibleError(f"no node lost >= {min_competitors} competitor edges")
    kept = [e for e in edges if e not in removed]
    return SplitResult(g.with_competitors(kept), queries, tuple(sorted(removed)), "regular", seed,
                       {"edge_fraction": edge_fraction, "min_competitors": min_competitors})


def check_split(original: CompanyGraph, split: SplitResult, min_competitors: int) -> list[str]:
    """Return every violated split invariant (empty when the split is sound)."""
    problems = []
    train = split.train_graph
    train_edges = set(train.competitor_edges)
    orig_edges = set(original.competitor_edges)
    removed = set(split.removed_edges)
    if train_edges | removed != orig_edges or train_edges & removed:
        problems.append("train and removed edges do not partition the original edges")
    if train.supply_edges != original.supply_edges:
        problems.append("supply edges changed")
    if not np.array_equal(train.attr, original.attr):
        problems.append("attributes changed")
    train_nbrs = train.competitor_neighbors()
    for q in split.queries:
        if not q.held_out:
            problems.append(f"query {q.node} has an empty held-out set")
        if len(q.held_out) < min_competitors:
            problems.append(f"query {q.node} has {len(q.held_out)} < {min_competitors} held-out")
        for c in q.held_out:
            if canonical(q.node, c) in train_edges:
                problems.append(f"held-out pair ({q.node}, {c}) is still a training edge")
            if canonical(q.node, c) not in orig_edges:
                problems.append(f"held-out pair ({q.node}, {c}) was never a competitor edge")
        if split.split_kind == "zero_shot" and train_nbrs[q.node]:
            problems.append(f"zero-shot query {q.node} keeps training competitors")
    if split.split_kind == "regular":
        orig_deg = original.competitor_degree()
        train_deg = train.competitor_degree()
        lost = np.flatnonzero((orig_deg > 0) & (train_deg == 0))
        if lost.size:
            problems.append(f"nodes {lost[:5].tolist()} lost every competitor edge")
    return problems


# --- ranking ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RankedList:
    query: int
    candidates: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return self.candidates.size

    def ranks_of(self, relevant: Iterable[int]) -> np.ndarray:
        """1-based ranks of the relevant nodes that appear in the list."""
        return np.flatnonzero(np.isin(self.candidates, list(relevant))) + 1


def order_by_score(candidates, scores) -> np.ndarray:
    """Indices sorting by descending score, ties by ascending node id."""
    return np.lexsort((np.asarray(candidates), -np.asarray(scores, dtype=np.float64)))


def score_candidates(y: np.ndarray, query: int, candidates: np.ndarray, score: str) -> np.ndarray:
    if score == "neg_sq_euclidean":
        d = y[candidates] - y[query]
        return -np.sum(d * d, axis=1)
    if score == "cosine":
        norms = np.linalg.norm(y, axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        return (y[candidates] @ y[query]) / (norms[candidates] * norms[query])
    raise ValueError(f"score must be one of {SCORES}, got {score!r}")


def rank_candidates(y, query: int, pool: Optional[Iterable[int]] = None,
                    score: str = "neg_sq_euclidean", filter: Iterable[int] = ()) -> RankedList:
    """Rank ``pool`` (default: every node) for ``query``, best first.

    The query itself and members of ``filter`` never appear in the output.
    """
    y = as_dense(y, "embedding")
    if not 0 <= query < y.shape[0]:
        raise ShapeError(f"query {query} out of range for {y.shape[0]} embeddings")
    keep = np.zeros(y.shape[0], dtype=bool)
    if pool is None:
        keep[:] = True
    else:
        keep[np.fromiter(pool, dtype=np.int64)] = True
    keep[query] = False
    excluded = np.fromiter(filter, dtype=np.int64)
    if excluded.size:
        keep[excluded] = False
    candidates = np.flatnonzero(keep)
    if candidates.size == 0:
        raise ValueError(f"query {query} has an empty candidate pool")
    scores = score_candidates(y, query, candidates, score)
    order = order_by_score(candidates, scores)
    return RankedList(query, candidates[order], scores[order])


# --- metrics ----------------------------------------------------------------

def _relevant(relevant) -> set:
    rel = set(int(r) for r in relevant)
    if not rel:
        raise ValueError("relevant set is empty")
    return rel


def hits_at_k(ranked: RankedList, relevant, k: int, denominator: str = "min") -> float:
    """Share of relevant items in the top ``k``.

    ``denominator="min"`` divides by ``min(k, |relevant|)`` so a perfect
    ranking scores 1; ``"k"`` divides by ``k``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rel = _relevant(relevant)
    found = sum(1 for c in ranked.candidates[:k] if int(c) in rel)
    if denominator == "min":
        return found / min(k, len(rel))
    if denominator == "k":
        return found / k
    raise ValueError(f"denominator must be 'min' or 'k', got {denominator!r}")


def reciprocal_rank(ranked: RankedList, relevant) -> float:
    ranks = ranked.ranks_of(_relevant(relevant))
    return 1.0 / ranks[0] if ranks.size else 0.0


def average_precision(ranked: RankedList, relevant) -> float:
    """Mean of precision@rank at each relevant hit; misses count as zero."""
    rel = _relevant(relevant)
    ranks = ranked.ranks_of(rel)
    return math.fsum((n + 1) / r for n, r in enumerate(ranks)) / len(rel)


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


def mrr(results: Sequence[tuple]) -> float:
    """Mean reciprocal rank over ``(RankedList, relevant)`` pairs."""
    return _mean(reciprocal_rank(r, rel) for r, rel in results)


def mean_average_precision(results: Sequence[tuple]) -> float:
    return _mean(average_precision(r, rel) for r, rel in results)


def chance_hits_at_k(pool_size: int, n_relevant: int, k: int, denominator: str = "min") -> float:
    """Expected hits@k of a uniformly random ranking (hypergeometric mean)."""
    if pool_size < 1 or n_relevant < 1:
        raise ValueError("pool_size and n_relevant must be positive")
    expected_found = min(k, pool_size) * n_relevant / pool_size
    return expected_found / (min(k, n_relevant) if denominator == "min" else k)


@dataclass
class MetricReport:
    hits: dict
    hits_over_k: dict
    mrr: float
    map: float
    chance_hits: dict
    per_query: list = field(default_factory=list)

    @property
    def n_queries(self) -> int:
        return len(self.per_query)


def evaluate(y, split: SplitResult, ks: Sequence[int] = (1, 5, 10),
             score: str = "neg_sq_euclidean", filtered: bool = True) -> MetricReport:
    """Rank every node for every query and aggregate Hits@K, MRR and MAP.

    With ``filtered`` each query's training competitors are removed from
    its candidate pool.  Aggregates use exact summation, so the result does
    not depend on query order.
    """
    y = as_dense(y, "embedding")
    if y.shape[0] != split.train_graph.n:
        raise ShapeError(f"{y.shape[0]} embeddings for {split.train_graph.n} nodes")
    train_nbrs = split.training_competitors()
    per_query = []
    for q in sorted(split.queries, key=lambda q: q.node):
        excluded = train_nbrs[q.node] if filtered else ()
        ranked = rank_candidates(y, q.node, None, score, excluded)
        row = {"query": q.node, "n_relevant": len(q.held_out), "pool": len(ranked),
               "rr": reciprocal_rank(ranked, q.held_out),
               "ap": average_precision(ranked, q.held_out)}
        for k in ks:
            row[f"hits@{k}"] = hits_at_k(ranked, q.held_out, k)
            row[f"hits/k@{k}"] = hits_at_k(ranked, q.held_out, k, denominator="k")
            row[f"chance@{k}"] = chance_hits_at_k(len(ranked), len(q.held_out), k)
        per_query.append(row)
    return MetricReport(
        hits={k: _mean(r[f"hits@{k}"] for r in per_query) for k in ks},
        hits_over_k={k: _mean(r[f"hits/k@{k}"] for r in per_query) for k in ks},
        mrr=_mean(r["rr"] for r in per_query),
        map=_mean(r["ap"] for r in per_query),
        chance_hits={k: _mean(r[f"chance@{k}"] for r in per_query) for k in ks},
        per_query=per_query,
    )
