import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from threadpoolctl import threadpool_limits

from jpec.errors import DivergenceError, PairError, ShapeError
from jpec.graph import CompanyGraph, LabeledPair
from jpec.linalg import SparseMatrix, laplacian_from_pairs
from jpec.model import (
    JpecConfig,
    JpecModel,
    Operators,
    build_decoder_operator,
    build_encoder_operator,
    decode,
    embed,
    encode,
    init_model,
    loss_first_order,
    loss_neg,
    loss_pos,
    loss_second_order,
    total_loss,
    trace_form,
    train,
)
from jpec.sampling import NegativeSampleSpec, sample_negatives
from jpec.synth import SynthSpec, generate

I2 = SparseMatrix.identity(2)
HALF = SparseMatrix.from_dense([[0.5, 0.5], [0.5, 0.5]])
SHARP = SparseMatrix.from_dense([[1.5, -0.5], [-0.5, 1.5]])


def identity_model(width=1, depth=1, act="identity"):
    dims = (width,) * (depth + 1)
    cfg = JpecConfig(encoder_dims=dims, hidden_activation=act, output_activation=act)
    eye = [np.eye(width) for _ in range(depth)]
    return JpecModel(eye, [w.copy() for w in eye], cfg)


def ring(n, d):
    a = np.zeros((n, n))
    for i in range(n):
        for s in range(1, d // 2 + 1):
            a[i, (i + s) % n] = a[(i + s) % n, i] = 1
    return SparseMatrix.from_dense(a)


class TestOperators:
    def test_row_mode_example(self):
        out = build_encoder_operator(SparseMatrix.from_dense([[0, 1], [0, 0]]), "row").to_dense()
        np.testing.assert_array_equal(out, [[0.5, 0.5], [0, 1]])

    def test_edgeless_is_identity(self):
        np.testing.assert_array_equal(build_encoder_operator(SparseMatrix.zeros(2, 2)).to_dense(), np.eye(2))
        np.testing.assert_array_equal(build_decoder_operator(SparseMatrix.zeros(2, 2)).to_dense(), np.eye(2))

    def test_sharpening_example(self):
        out = build_decoder_operator(SparseMatrix.from_dense([[0, 1], [1, 0]])).to_dense()
        np.testing.assert_array_equal(out, [[1.5, -0.5], [-0.5, 1.5]])

    def test_sharpening_fixes_constants(self):
        rng = np.random.default_rng(0)
        adj = SparseMatrix.from_dense((rng.random((9, 9)) < 0.3) * (1 - np.eye(9)))
        c = np.full((9, 1), 3.7)
        np.testing.assert_allclose(build_decoder_operator(adj) @ c, c, atol=1e-12)

    @pytest.mark.parametrize("n,d", [(6, 2), (10, 4)])
    def test_modes_coincide_on_regular_graphs(self, n, d):
        adj = ring(n, d)
        diff = build_encoder_operator(adj, "row").to_dense() - build_encoder_operator(adj, "symmetric").to_dense()
        assert np.max(np.abs(diff)) <= 1e-12

    def test_symmetric_mode_symmetrizes_directed_input(self):
        out = build_encoder_operator(SparseMatrix.from_dense([[0, 1], [0, 0]]), "symmetric").to_dense()
        np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]])


class TestForward:
    def test_uniform_averaging(self):
        y, _ = encode(identity_model(), HALF, [[1], [3]])
        np.testing.assert_array_equal(y, [[2], [2]])

    def test_identity_network(self):
        x = np.random.default_rng(0).standard_normal((2, 3))
        y, _ = encode(identity_model(3, depth=2), I2, x)
        np.testing.assert_array_equal(y, x)

    def test_relu(self):
        model = identity_model(2, act="relu")
        y, cache = encode(model, SparseMatrix.identity(1), [[-1, 2]])
        np.testing.assert_array_equal(y, [[0, 2]])
        np.testing.assert_array_equal(cache.preacts[0], [[-1, 2]])

    def test_decode_examples(self):
        m = identity_model()
        np.testing.assert_array_equal(decode(m, I2, [[1], [3]])[0], [[1], [3]])
        np.testing.assert_array_equal(decode(m, SHARP, [[2], [2]])[0], [[2], [2]])
        np.testing.assert_array_equal(decode(m, SHARP, [[1], [3]])[0], [[0], [4]])

    def test_shape_errors(self):
        m = identity_model(2)
        with pytest.raises(ShapeError):
            encode(m, I2, np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            encode(m, SparseMatrix.identity(3), np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            decode(m, I2, np.zeros((2, 5)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 10_000))
    def test_smoothing_stays_in_column_range(self, n, seed):
        rng = np.random.default_rng(seed)
        adj = SparseMatrix.from_dense((rng.random((n, n)) < 0.3) * (1 - np.eye(n)))
        x = rng.standard_normal((n, 3))
        y, _ = encode(identity_model(3), build_encoder_operator(adj), x)
        assert np.all(y >= x.min(axis=0) - 1e-12) and np.all(y <= x.max(axis=0) + 1e-12)

    def test_default_activations(self):
        cfg = JpecConfig(encoder_dims=(8, 6, 4))
        assert cfg.encoder_activations() == ["relu", "identity"]
        assert cfg.decoder_dims == (4, 6, 8)


class TestLosses:
    def test_pos_example(self):
        y = np.array([[0.0], [1.0]])
        assert loss_pos(y, [LabeledPair(0, 1, 1)]) == 2.0
        assert trace_form(y, laplacian_from_pairs([(0, 1, 1)], 2)) == 2.0

    def test_neg_example(self):
        assert loss_neg(np.array([[0.0], [2.0]]), [LabeledPair(0, 1, -1)]) == 8.0

    def test_degenerate(self):
        y = np.ones((3, 2))
        assert loss_pos(y, [LabeledPair(0, 1, 1)]) == 0
        assert loss_neg(y, [LabeledPair(0, 2, -1)]) == 0
        assert loss_pos(y, []) == 0 and loss_neg(y, []) == 0

    def test_sign_guards(self):
        with pytest.raises(PairError):
            loss_neg(np.zeros((2, 1)), [LabeledPair(0, 1, 1)])
        with pytest.raises(PairError):
            loss_pos(np.zeros((2, 1)), [LabeledPair(0, 1, -1)])
        with pytest.raises(PairError):
            loss_pos(np.zeros((2, 1)), [LabeledPair(0, 5, 1)])

    def test_first_order_hinge(self):
        y = np.array([[0.0], [1.0], [2.0]])
        pos = [LabeledPair(0, 1, 1)]  # L_pos = 2
        far = [LabeledPair(0, 2, -1)]  # L_neg = 8
        near = [LabeledPair(1, 2, -1)]  # L_neg = 2
        assert loss_first_order(y, pos, far, 5.0) == 2.0
        assert loss_first_order(y, pos, near, 5.0) == 5.0
        assert loss_first_order(y, pos, [], 5.0) == 7.0

    def test_first_order_example_values(self):
        # L_pos = 2, L_neg = 1 via a half-unit gap
        y = np.array([[0.0], [1.0], [0.0], [np.sqrt(0.5)]])
        assert loss_first_order(y, [LabeledPair(0, 1, 1)], [LabeledPair(2, 3, -1)], 5.0) == pytest.approx(6.0)

    def test_second_order(self):
        assert loss_second_order([[1, 2]], [[1, 2]]) == 0
        assert loss_second_order([[1, 0]], [[0, 0]]) == 1
        assert loss_second_order([[1, 2], [3, 4]], np.zeros((2, 2))) == 30
        with pytest.raises(ShapeError):
            loss_second_order([[1, 2]], [[1]])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_hinge_monotone_in_margin(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((6, 2))
        pos, neg = [LabeledPair(0, 1, 1)], [LabeledPair(2, 3, -1), LabeledPair(4, 5, -1)]
        margins = np.sort(rng.uniform(0, 50, 8))
        vals = [loss_first_order(y, pos, neg, m) for m in margins]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_total_loss_composition(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 3))
        adj = SparseMatrix.from_dense([[0, 1, 0, 0], [0, 0, 1, 0], [1, 0, 0, 0], [0, 0, 0, 0]])
        ops = Operators.from_adjacency(adj)
        pos, neg = [LabeledPair(0, 1, 1)], [LabeledPair(2, 3, -1)]
        base = JpecConfig(encoder_dims=(3, 4, 2), beta=0.0, lam=0.0, margin=3.0)
        model = init_model(base)
        total, parts, *_ = total_loss(model, ops, x, pos, neg)
        assert total == parts.first
        cfg = JpecConfig(**{**base.to_dict(), "beta": 0.5, "lam": 0.1})
        m2 = JpecModel(model.encoder_weights, model.decoder_weights, cfg)
        total2, p2, *_ = total_loss(m2, ops, x, pos, neg)
        assert abs(total2 - (p2.first + 0.5 * p2.second + 0.1 * p2.regularizer)) <= 1e-9
        zero = m2.with_weights([np.zeros_like(w) for w in m2.weights])
        assert total_loss(zero, ops, x, pos, neg)[1].regularizer == 0


@pytest.fixture(scope="module")
def planted():
    g, _ = generate(SynthSpec(n=120, industries=4, attr_dim=16, intra_competitor_prob=0.5, seed=7))
    return g, sample_negatives(g, NegativeSampleSpec(1.0, seed=7))


class TestTrain:
    def test_zero_epochs(self, planted):
        g, negs = planted
        cfg = JpecConfig(encoder_dims=(16, 32, 8), epochs=0, seed=3)
        model, report = train(g, negs, cfg)
        assert len(report) == 0 and report.final is None
        for a, b in zip(model.weights, init_model(cfg).weights):
            assert a.tobytes() == b.tobytes()

    def test_deterministic(self, planted):
        g, negs = planted
        cfg = JpecConfig(encoder_dims=(16, 32, 8), epochs=15, seed=11)
        m1, r1 = train(g, negs, cfg)
        m2, r2 = train(g, negs, cfg)
        assert r1 == r2
        assert all(a.tobytes() == b.tobytes() for a, b in zip(m1.weights, m2.weights))

    def test_blas_threads_do_not_change_results(self, planted):
        g, negs = planted
        cfg = JpecConfig(encoder_dims=(16, 256, 64), epochs=5, seed=2)
        runs = []
        for limit in (1, 8):
            with threadpool_limits(limits=limit, user_api="blas"):
                model, report = train(g, negs, cfg)
                runs.append((report, [w.tobytes() for w in model.weights], embed(model, g).tobytes()))
        assert runs[0] == runs[1]

    def test_descent(self, planted):
        g, negs = planted
        cfg = JpecConfig(encoder_dims=(16, 64, 16), epochs=150, seed=7)
        _, report = train(g, negs, cfg)
        assert report.final.total < report.records[0].total
        for r in report.records:
            assert abs(r.total - (r.first + cfg.beta * r.second + cfg.lam * r.regularizer)) <= 1e-9

    def test_resampled_negatives_run(self, planted):
        g, negs = planted
        cfg = JpecConfig(encoder_dims=(16, 8, 4), epochs=3, resample_negatives=True)
        _, report = train(g, negs, cfg)
        assert len(report) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self, planted):
        g, negs = planted
        cfg = JpecConfig(encoder_dims=(16, 32, 8), epochs=200, learning_rate=1e6, grad_clip=None, seed=1)
        with pytest.raises(DivergenceError) as info:
            train(g, negs, cfg)
        assert info.value.epoch >= 1

    def test_width_mismatch(self, planted):
        g, negs = planted
        with pytest.raises(ShapeError):
            train(g, negs, JpecConfig(encoder_dims=(5, 4)))

    def test_embed_covers_every_node(self):
        g = CompanyGraph(4, np.arange(8.0).reshape(4, 2), [(0, 1)], [(0, 1)])
        model = init_model(JpecConfig(encoder_dims=(2, 3)))
        y = embed(model, g)
        assert y.shape == (4, 3) and np.all(np.isfinite(y))

    def test_embed_identity_model_is_smoothing(self):
        g = CompanyGraph(3, np.arange(6.0).reshape(3, 2), [(0, 1), (2, 0)])
        model = identity_model(2)
        expected = build_encoder_operator(SparseMatrix.from_dense([[0, 1, 0], [0, 0, 0], [1, 0, 0]])) @ g.attr
        np.testing.assert_array_equal(embed(model, g), expected)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"encoder_dims": (3,)}, {"encoder_dims": (3, 0)}, {"margin": -1}, {"learning_rate": 0},
        {"norm_mode": "col"}, {"hidden_activation": "gelu"}, {"negative_ratio": 0}, {"optimizer": "sgd"},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            JpecConfig(**kw)

    def test_round_trip_dict(self):
        cfg = JpecConfig(encoder_dims=(4, 3, 2), margin=2.5, seed=9)
        assert JpecConfig.from_dict(cfg.to_dict()) == cfg
