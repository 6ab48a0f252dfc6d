"""Random non-competitor pairs for the negative eigenmap term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError
from .graph import CompanyGraph, LabeledPair


@dataclass(frozen=True)
class NegativeSampleSpec:
    ratio: float = 1.0
    seed: int = 0
    restrict_to_labeled: bool = True

    def __post_init__(self):
        if not self.ratio > 0:
            raise ValueError(f"ratio must be positive, got {self.ratio}")


def sample_negatives(g: CompanyGraph, spec: NegativeSampleSpec) -> list[LabeledPair]:
    """Draw ``round(ratio * |C|)`` distinct unconnected pairs, weight -1.

    Pairs are drawn uniformly among eligible nodes (by default only nodes
    with at least one competitor edge) by rejection.  Gives up with
    :class:`InfeasibleError` after 100 attempts per requested pair.
    """
    target = int(round(spec.ratio * len(g.competitor_edges)))
    if target == 0:
        return []
    if spec.restrict_to_labeled:
        eligible = np.flatnonzero(g.competitor_degree() > 0)
    else:
        eligible = np.arange(g.n)
    m = eligible.size
    if m < 2:
        raise InfeasibleError(f"only {m} eligible node(s); cannot sample {target} negative pairs")

    known = set(g.competitor_edges)
    rng = np.random.default_rng(spec.seed)
    chosen: dict = {}
    attempts, cap = 0, 100 * target
    while len(chosen) < target:
        if attempts >= cap:
            raise InfeasibleError(
                f"found {len(chosen)} of {target} negative pairs after {attempts} attempts; "
                "the competitor graph is too dense or too small")
        a, b = rng.integers(0, m, size=2)
        attempts += 1
        if a == b:
            continue
        i, j = int(eligible[a]), int(eligible[b])
        pair = (i, j) if i < j else (j, i)
        if pair in known or pair in chosen:
            continue
        chosen[pair] = None
    return [LabeledPair(i, j, -1) for i, j in chosen]
