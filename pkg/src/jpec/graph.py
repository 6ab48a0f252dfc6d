"""Company knowledge graph: attributes, directed supply edges, competitor pairs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import GraphValidationError, PairError
from .linalg import SparseMatrix, as_dense


class LabeledPair(NamedTuple):
    """Canonical node pair ``i < j`` with weight +1 (competitor) or -1."""

    i: int
    j: int
    w: int


def canonical(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class GraphIssue:
    kind: str
    indices: tuple
    message: str

    def __str__(self):
        return f"{self.kind}: {self.message}"


@dataclass(frozen=True, eq=False)
class CompanyGraph:
    """Attributed company graph.

    Parameters
    ----------
    n : int
        Number of nodes.
    attr : ndarray, shape (n, d)
        Node attribute matrix.
    supply_edges : sequence of (src, dst)
        Directed supply-chain edges.
    competitor_edges : sequence of (i, j)
        Undirected competitor pairs stored with ``i < j``.
    node_labels : sequence of str, optional
        External id for every node, in index order.

    Construction does not validate; call :func:`validate` or
    :meth:`check` before using a graph from an untrusted source.
    """

    n: int
    attr: np.ndarray
    supply_edges: tuple = ()
    competitor_edges: tuple = ()
    node_labels: Optional[tuple] = field(default=None)

    def __post_init__(self):
        attr = np.array(self.attr, dtype=np.float64)
        if attr.ndim != 2 and attr.size == 0:
            attr = np.zeros((self.n, 0))
        attr = as_dense(attr, "attr").copy()
        attr.flags.writeable = False
        object.__setattr__(self, "attr", attr)
        object.__setattr__(self, "supply_edges", tuple((int(a), int(b)) for a, b in self.supply_edges))
        object.__setattr__(self, "competitor_edges",
                           tuple((int(a), int(b)) for a, b in self.competitor_edges))
        if self.node_labels is not None:
            object.__setattr__(self, "node_labels", tuple(str(s) for s in self.node_labels))

    @property
    def attr_dim(self) -> int:
        return self.attr.shape[1]

    def check(self) -> "CompanyGraph":
        issue = validate(self)
        if issue is not None:
            raise GraphValidationError(issue)
        return self

    def with_competitors(self, edges) -> "CompanyGraph":
        return CompanyGraph(self.n, self.attr, self.supply_edges, sorted(edges), self.node_labels)

    def competitor_degree(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in self.competitor_edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def competitor_neighbors(self) -> list[set]:
        nbrs = [set() for _ in range(self.n)]
        for i, j in self.competitor_edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return nbrs


def validate(g: CompanyGraph) -> Optional[GraphIssue]:
    """Return the first violated graph invariant, or ``None`` if the graph is valid."""
    if g.n < 0:
        return GraphIssue("negative size", (g.n,), f"node count {g.n} < 0")
    if g.attr.shape[0] != g.n:
        return GraphIssue("attribute rows", (g.attr.shape[0], g.n),
                          f"attr has {g.attr.shape[0]} rows for {g.n} nodes")
    if not np.all(np.isfinite(g.attr)):
        bad = tuple(int(r) for r in np.unique(np.nonzero(~np.isfinite(g.attr))[0])[:5])
        return GraphIssue("non-finite attribute", bad, f"non-finite attributes in rows {bad}")
    if g.node_labels is not None and len(g.node_labels) != g.n:
        return GraphIssue("label count", (len(g.node_labels), g.n),
                          f"{len(g.node_labels)} labels for {g.n} nodes")
    for name, edges in (("supply", g.supply_edges), ("competitor", g.competitor_edges)):
        for a, b in edges:
            if not (0 <= a < g.n and 0 <= b < g.n):
                return GraphIssue("index out of range", (a, b),
                                  f"{name} edge ({a}, {b}) out of range for n={g.n}")
            if a == b:
                return GraphIssue("self-loop", (a, b), f"{name} edge ({a}, {b}) is a self-loop")
    seen = set()
    for a, b in g.competitor_edges:
        if a > b:
            return GraphIssue("non-canonical order", (a, b),
                              f"competitor pair ({a}, {b}) must be stored as ({b}, {a})")
        if (a, b) in seen:
            return GraphIssue("duplicate competitor edge", (a, b),
                              f"competitor pair ({a}, {b}) appears more than once")
        seen.add((a, b))
    return None


def supply_adjacency(g: CompanyGraph) -> SparseMatrix:
    """Directed 0/1 adjacency of the supply edges (duplicates collapse)."""
    edges = sorted(set(g.supply_edges))
    if not edges:
        return SparseMatrix.zeros(g.n, g.n)
    src, dst = zip(*edges)
    return SparseMatrix.from_triplets(g.n, g.n, src, dst, np.ones(len(edges)))


def competitor_pair_sets(g: CompanyGraph, negatives: Sequence) -> tuple[list, list]:
    """Split training pairs into competitor (+1) and non-competitor (-1) lists."""
    pos = [LabeledPair(i, j, 1) for i, j in g.competitor_edges]
    known = set(g.competitor_edges)
    neg = []
    for p in negatives:
        p = LabeledPair(int(p[0]), int(p[1]), int(p[2]))
        if p.w != -1:
            raise PairError(f"negative pair ({p.i}, {p.j}) has weight {p.w}, expected -1")
        if canonical(p.i, p.j) in known:
            raise PairError(f"pair ({p.i}, {p.j}) is both a competitor edge and a negative")
        neg.append(p)
    return pos, neg


def degree_bucket_features(n: int, supply_edges, buckets: int = 16) -> np.ndarray:
    """One-hot log2 buckets of total supply degree, for graphs without attributes."""
    deg = np.zeros(n, dtype=np.int64)
    for a, b in supply_edges:
        deg[a] += 1
        deg[b] += 1
    idx = np.minimum(np.floor(np.log2(deg + 1)).astype(np.int64), buckets - 1)
    out = np.zeros((n, buckets))
    out[np.arange(n), idx] = 1.0
    return out
