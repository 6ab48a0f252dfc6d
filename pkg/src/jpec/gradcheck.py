"""Analytic-versus-finite-difference check of the training gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import LabeledPair
from .linalg import SparseMatrix, finite_diff_gradient
from .model import JpecConfig, JpecModel, Operators, PairTerms, backward, init_model, total_loss


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_weight: list
    hinge_active: bool
    loss: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def check_gradients(model: JpecModel, ops: Operators, x, pos, neg, eps: float = 1e-5) -> GradCheckResult:
    x = np.asarray(x, dtype=np.float64)
    terms = PairTerms(pos, neg, x.shape[0])
    total, parts, enc_c, dec_c, y, x_hat = total_loss(model, ops, x, terms)
    analytic = backward(model, enc_c, dec_c, terms, None, x, x_hat, y)
    weights = model.weights
    errors = []
    for k in range(len(weights)):
        def f(w, k=k):
            trial = list(weights)
            trial[k] = w
            return total_loss(model.with_weights(trial), ops, x, terms)[0]

        numeric = finite_diff_gradient(f, weights[k], eps)
        errors.append(float(np.max(relative_error(analytic[k], numeric))))
    return GradCheckResult(max(errors), errors, model.config.margin > parts.neg, total)


def random_instance(seed: int = 0, n: int = 6, dims=(4, 5, 3), margin: float = None,
                    beta: float = 1.0, lam: float = 1e-3, activation: str = "tanh",
                    norm_mode: str = "row"):
    """Small random graph, attributes and pairs for gradient checks.

    ``margin=None`` picks a margin that keeps the hinge active; pass a
    small value (e.g. 0) for the inactive case.
    """
    rng = np.random.default_rng(seed)
    adj = (rng.random((n, n)) < 0.4).astype(float)
    np.fill_diagonal(adj, 0.0)
    adj_sparse = SparseMatrix.from_dense(adj)
    x = rng.standard_normal((n, dims[0]))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    order = rng.permutation(len(pairs))
    pos = [LabeledPair(*pairs[k], 1) for k in order[:3]]
    neg = [LabeledPair(*pairs[k], -1) for k in order[3:6]]
    cfg = JpecConfig(encoder_dims=dims, margin=0.0 if margin is None else margin, beta=beta,
                     lam=lam, seed=seed, norm_mode=norm_mode, hidden_activation=activation)
    model = init_model(cfg)
    ops = Operators.from_adjacency(adj_sparse, norm_mode)
    if margin is None:
        l_neg = total_loss(model, ops, x, pos, neg)[1].neg
        cfg = JpecConfig(**{**cfg.to_dict(), "margin": 2.0 * l_neg + 1.0})
        model = JpecModel(model.encoder_weights, model.decoder_weights, cfg)
    return model, ops, x, pos, neg
