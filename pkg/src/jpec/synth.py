"""Planted-industry company graphs with known competitor structure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import CompanyGraph


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a planted-industry graph.

    Nodes are dealt round-robin into ``industries``.  Competitor edges
    appear independently inside each industry with ``intra_competitor_prob``.
    Industries are arranged in a seeded random cyclic value chain; each
    industry mainly supplies the next one, and every other ordered industry
    pair keeps a ``flow_background`` share.  A directed supply edge
    ``u -> v`` appears with probability ``supply_edge_prob * flow[ind(u), ind(v)]``.  Attributes are a scaled
    one-hot block per industry plus Gaussian noise of scale ``attr_noise``.
    """

    n: int = 300
    industries: int = 6
    attr_dim: int = 24
    attr_noise: float = 0.5
    intra_competitor_prob: float = 0.5
    supply_edge_prob: float = 0.1
    seed: int = 0
    centroid_scale: float = 1.0
    flow_background: float = 0.05

    def __post_init__(self):
        if self.industries < 1:
            raise ValueError("need at least one industry")
        if self.industries > self.n:
            raise ValueError(f"{self.industries} industries for only {self.n} nodes")
        if self.attr_dim < self.industries:
            raise ValueError(f"attr_dim {self.attr_dim} < industries {self.industries}")
        if self.attr_noise < 0:
            raise ValueError("attr_noise must be >= 0")
        for name in ("intra_competitor_prob", "supply_edge_prob"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


def industry_centroids(spec: SynthSpec) -> np.ndarray:
    """Orthogonal blocks: industry ``a`` owns columns ``a*b .. (a+1)*b - 1``."""
    block = spec.attr_dim // spec.industries
    c = np.zeros((spec.industries, spec.attr_dim))
    for a in range(spec.industries):
        c[a, a * block:(a + 1) * block] = spec.centroid_scale
    return c


def flow_matrix(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    k = spec.industries
    order = rng.permutation(k)
    f = np.full((k, k), spec.flow_background)
    if k > 1:
        f[order, np.roll(order, -1)] = 1.0
    return f


def generate(spec: SynthSpec) -> tuple[CompanyGraph, np.ndarray]:
    """Sample a graph; returns ``(graph, industry_of_node)``."""
    rng = np.random.default_rng(spec.seed)
    industry = np.arange(spec.n) % spec.industries

    competitors = []
    for a in range(spec.industries):
        members = np.flatnonzero(industry == a)
        iu, ju = np.triu_indices(members.size, k=1)
        keep = rng.random(iu.size) < spec.intra_competitor_prob
        competitors.extend(zip(members[iu[keep]].tolist(), members[ju[keep]].tolist()))
    competitors.sort()

    flow = flow_matrix(spec, rng)
    prob = spec.supply_edge_prob * flow[industry[:, None], industry[None, :]]
    draw = rng.random((spec.n, spec.n)) < prob
    np.fill_diagonal(draw, False)
    src, dst = np.nonzero(draw)
    supply = list(zip(src.tolist(), dst.tolist()))

    attr = industry_centroids(spec)[industry] + spec.attr_noise * rng.standard_normal((spec.n, spec.attr_dim))
    labels = [f"c{v:05d}" for v in range(spec.n)]
    return CompanyGraph(spec.n, attr, supply, competitors, labels), industry


def oracle_embeddings(industry: np.ndarray) -> np.ndarray:
    """One-hot industry membership, the ideal embedding for planted graphs."""
    industry = np.asarray(industry)
    out = np.zeros((industry.size, int(industry.max()) + 1 if industry.size else 0))
    out[np.arange(industry.size), industry] = 1.0
    return out
