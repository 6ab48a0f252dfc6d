import math

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from jpec.graph import supply_adjacency, validate
from jpec.linalg import SparseMatrix
from jpec.synth import SynthSpec, flow_matrix, generate, oracle_embeddings


def test_two_triangles():
    g, industry = generate(SynthSpec(n=6, industries=2, attr_dim=2, attr_noise=0, intra_competitor_prob=1))
    assert industry.tolist() == [0, 1, 0, 1, 0, 1]
    assert len(g.competitor_edges) == 6
    i, j = np.array(g.competitor_edges).T
    adj = SparseMatrix.from_triplets(6, 6, i, j, np.ones(6)).to_scipy()
    count, labels = connected_components(adj, directed=False)
    assert count == 2
    assert np.array_equal(labels, industry) or np.array_equal(labels, 1 - industry)


def test_zero_probability():
    g, _ = generate(SynthSpec(n=50, industries=5, attr_dim=5, intra_competitor_prob=0))
    assert g.competitor_edges == ()


def test_binomial_edge_count():
    g, _ = generate(SynthSpec(n=120, industries=4, attr_dim=8, intra_competitor_prob=0.5, seed=7))
    trials = 4 * math.comb(30, 2)
    assert abs(len(g.competitor_edges) - 0.5 * trials) <= 4 * math.sqrt(trials * 0.25)


@pytest.mark.parametrize("seed", range(5))
def test_ground_truth_consistency(seed):
    g, industry = generate(SynthSpec(n=90, seed=seed))
    assert validate(g) is None
    assert all(industry[i] == industry[j] for i, j in g.competitor_edges)


def test_noise_free_attributes():
    g, industry = generate(SynthSpec(n=40, industries=4, attr_dim=8, attr_noise=0))
    for a in range(4):
        rows = g.attr[industry == a]
        assert np.all(rows == rows[0])
    assert np.unique(g.attr, axis=0).shape[0] == 4


def test_deterministic():
    a, _ = generate(SynthSpec(seed=5))
    b, _ = generate(SynthSpec(seed=5))
    c, _ = generate(SynthSpec(seed=6))
    assert a.supply_edges == b.supply_edges and a.competitor_edges == b.competitor_edges
    assert a.attr.tobytes() == b.attr.tobytes()
    assert a.competitor_edges != c.competitor_edges


def test_supply_follows_value_chain():
    g, industry = generate(SynthSpec(n=600, industries=6))
    counts = np.zeros((6, 6))
    for u, v in g.supply_edges:
        counts[industry[u], industry[v]] += 1
    target = counts.argmax(axis=1)
    assert sorted(target.tolist()) == list(range(6))
    assert np.all(target != np.arange(6))
    strong = np.zeros((6, 6), dtype=bool)
    strong[np.arange(6), target] = True
    assert counts[strong].min() > 3 * counts[~strong].max()
    assert supply_adjacency(g).nnz == len(g.supply_edges)


def test_flow_matrix_is_cyclic():
    flow = flow_matrix(SynthSpec(industries=5), np.random.default_rng(0))
    strong = flow >= 1
    assert np.all(strong.sum(axis=1) == 1) and np.all(strong.sum(axis=0) == 1)
    assert not np.any(np.diag(strong))
    step, seen = 0, {0}
    for _ in range(4):
        step = int(np.flatnonzero(strong[step])[0])
        seen.add(step)
    assert seen == set(range(5))


@pytest.mark.parametrize("kw", [{"industries": 0}, {"n": 3, "industries": 4}, {"attr_noise": -1},
                                {"intra_competitor_prob": 1.5}, {"supply_edge_prob": -0.1}])
def test_degenerate_specs(kw):
    with pytest.raises(ValueError):
        SynthSpec(**kw)


def test_oracle_is_one_hot():
    y = oracle_embeddings(np.array([0, 2, 1, 2]))
    np.testing.assert_array_equal(y, [[1, 0, 0], [0, 0, 1], [0, 1, 0], [0, 0, 1]])
