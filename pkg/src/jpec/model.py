"""Directed-GCN autoencoder trained with a competitor eigenmap objective.

The encoder smooths attributes over the supply graph with the random-walk
operator ``D^-1 (A + I)``; the decoder sharpens with ``2I - D^-1 (A + I)``
and reconstructs the attributes.  The embedding ``Y`` (encoder output) is
pulled together on competitor pairs and pushed apart on sampled
non-competitor pairs through a margin hinge on the aggregate distance.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

from .errors import DivergenceError, PairError, ShapeError
from .graph import CompanyGraph, competitor_pair_sets, supply_adjacency
from .linalg import (
    SparseMatrix,
    add_self_loops,
    as_dense,
    laplacian_from_pairs,
    row_normalize,
    spmm,
    sym_normalize,
)

NORM_MODES = ("row", "symmetric")
ACTIVATIONS = ("relu", "tanh", "identity")
OPTIMIZERS = ("gd", "adam")


@dataclass(frozen=True)
class JpecConfig:
    """Architecture, objective weights and optimizer settings.

    ``encoder_dims`` runs from the attribute width to the embedding width;
    the decoder mirrors it.  Hidden layers use ``hidden_activation`` and the
    last layer of both encoder and decoder uses ``output_activation``.
    ``lam`` is the weight-decay coefficient on every weight entry.
    """

    encoder_dims: tuple = (16, 256, 64)
    margin: float = 10.0
    beta: float = 1.0
    lam: float = 1e-4
    learning_rate: float = 0.01
    epochs: int = 200
    seed: int = 0
    norm_mode: str = "row"
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    negative_ratio: float = 1.0
    grad_clip: Optional[float] = 5.0
    resample_negatives: bool = False
    optimizer: str = "gd"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.encoder_dims)
        object.__setattr__(self, "encoder_dims", dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"encoder_dims needs >= 2 positive widths, got {dims}")
        if self.margin < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("margin, beta and lam must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}, got {self.norm_mode!r}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"activation must be one of {ACTIVATIONS}, got {act!r}")
        if not self.negative_ratio > 0:
            raise ValueError(f"negative_ratio must be positive, got {self.negative_ratio}")
        if self.grad_clip is not None and self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative or None")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    @property
    def decoder_dims(self) -> tuple:
        return self.encoder_dims[::-1]

    def encoder_activations(self) -> list[str]:
        depth = len(self.encoder_dims) - 1
        return [self.hidden_activation] * (depth - 1) + [self.output_activation]

    decoder_activations = encoder_activations

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "JpecConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class JpecModel:
    encoder_weights: list
    decoder_weights: list
    config: JpecConfig

    def __post_init__(self):
        enc, dec = self.config.encoder_dims, self.config.decoder_dims
        for name, weights, dims in (("encoder", self.encoder_weights, enc),
                                    ("decoder", self.decoder_weights, dec)):
            if len(weights) != len(dims) - 1:
                raise ShapeError(f"{name} has {len(weights)} weights for dims {dims}")
            for layer, w in enumerate(weights):
                if w.shape != (dims[layer], dims[layer + 1]):
                    raise ShapeError(f"{name} layer {layer} weight has shape {w.shape}, "
                                     f"expected {(dims[layer], dims[layer + 1])}")
                if not np.all(np.isfinite(w)):
                    raise ValueError(f"{name} layer {layer} weight has non-finite entries")

    @property
    def weights(self) -> list:
        return list(self.encoder_weights) + list(self.decoder_weights)

    def weight_sq(self) -> float:
        return float(sum(np.sum(w * w) for w in self.weights))

    def with_weights(self, weights: Sequence[np.ndarray]) -> "JpecModel":
        k = len(self.encoder_weights)
        return JpecModel(list(weights[:k]), list(weights[k:]), self.config)


def init_model(cfg: JpecConfig) -> JpecModel:
    """Glorot-uniform weights drawn in layer order (encoder, then decoder)."""
    rng = np.random.default_rng(cfg.seed)

    def layer(fan_in, fan_out):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    enc = [layer(a, b) for a, b in zip(cfg.encoder_dims[:-1], cfg.encoder_dims[1:])]
    dec = [layer(a, b) for a, b in zip(cfg.decoder_dims[:-1], cfg.decoder_dims[1:])]
    return JpecModel(enc, dec, cfg)


# --- propagation operators -------------------------------------------------

def _binarized_union(adj: SparseMatrix) -> SparseMatrix:
    m = adj.to_scipy()
    sym = ((m != 0) + (m.T != 0)).astype(np.float64)
    return SparseMatrix.from_scipy(sym)


def build_encoder_operator(adj: SparseMatrix, mode: str = "row") -> SparseMatrix:
    """Smoothing operator of the encoder.

    ``row`` is ``D^-1 (A + I)`` on the directed adjacency.  ``symmetric`` is
    the classic GCN operator on ``A`` OR ``A^T``, kept for comparison.
    """
    if mode == "row":
        return row_normalize(add_self_loops(adj))
    if mode == "symmetric":
        return sym_normalize(add_self_loops(_binarized_union(adj)))
    raise ValueError(f"unknown norm mode {mode!r}")


def build_decoder_operator(adj: SparseMatrix, mode: str = "row") -> SparseMatrix:
    """Sharpening operator ``2I - P`` with ``P`` the encoder operator."""
    p = build_encoder_operator(adj, mode).to_scipy()
    return SparseMatrix.from_scipy(2.0 * sp.identity(p.shape[0], format="csr") - p)


class Operators(NamedTuple):
    enc: SparseMatrix
    enc_t: SparseMatrix
    dec: SparseMatrix
    dec_t: SparseMatrix

    @classmethod
    def from_adjacency(cls, adj: SparseMatrix, mode: str = "row") -> "Operators":
        enc = build_encoder_operator(adj, mode)
        dec = build_decoder_operator(adj, mode)
        return cls(enc, enc.transpose(), dec, dec.transpose())

    @classmethod
    def from_graph(cls, g: CompanyGraph, mode: str = "row") -> "Operators":
        return cls.from_adjacency(supply_adjacency(g), mode)


# --- forward ----------------------------------------------------------------

def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return (z > 0).astype(np.float64)
    if act == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations kept for backpropagation."""

    op_t: SparseMatrix
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    activations: list = field(default_factory=list)


def _propagate(weights, acts, op: SparseMatrix, op_t: Optional[SparseMatrix], h: np.ndarray):
    if op.rows != h.shape[0] or op.cols != h.shape[0]:
        raise ShapeError(f"operator {op.shape} does not match {h.shape[0]} input rows")
    cache = ForwardCache(op_t if op_t is not None else op.transpose())
    for w, act in zip(weights, acts):
        if h.shape[1] != w.shape[0]:
            raise ShapeError(f"layer input width {h.shape[1]} != weight rows {w.shape[0]}")
        z = spmm(op, h @ w)
        cache.inputs.append(h)
        cache.preacts.append(z)
        cache.activations.append(act)
        h = _activate(z, act)
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("non-finite activation output")
    return h, cache


def encode(model: JpecModel, p_enc: SparseMatrix, x, p_enc_t: SparseMatrix = None):
    """Encoder forward pass; returns ``(Y, cache)``."""
    x = as_dense(x, "attributes")
    if x.shape[1] != model.config.encoder_dims[0]:
        raise ShapeError(f"attribute width {x.shape[1]} != encoder input {model.config.encoder_dims[0]}")
    return _propagate(model.encoder_weights, model.config.encoder_activations(), p_enc, p_enc_t, x)


def decode(model: JpecModel, p_dec: SparseMatrix, y, p_dec_t: SparseMatrix = None):
    """Decoder forward pass; returns ``(X_hat, cache)``."""
    y = as_dense(y, "embedding")
    if y.shape[1] != model.config.encoder_dims[-1]:
        raise ShapeError(f"embedding width {y.shape[1]} != {model.config.encoder_dims[-1]}")
    return _propagate(model.decoder_weights, model.config.decoder_activations(), p_dec, p_dec_t, y)


# --- losses -----------------------------------------------------------------

def _pair_arrays(pairs, n_rows: int):
    if not len(pairs):
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    arr = np.asarray([(p[0], p[1], p[2]) for p in pairs], dtype=np.float64)
    i, j = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64)
    if i.min() < 0 or j.min() < 0 or max(i.max(), j.max()) >= n_rows:
        raise PairError(f"pair index out of range for {n_rows} embedding rows")
    return i, j, arr[:, 2]


def _pairwise_sq(y: np.ndarray, i, j, w) -> float:
    diff = y[i] - y[j]
    return float(2.0 * np.sum(w * np.sum(diff * diff, axis=1)))


def loss_pos(y, pos: Sequence) -> float:
    """Competitor eigenmap term: sum of ``2 w ||y_i - y_j||^2`` over pairs."""
    y = as_dense(y, "embedding")
    i, j, w = _pair_arrays(pos, y.shape[0])
    if np.any(w <= 0):
        raise PairError("positive pairs must carry positive weights")
    return _pairwise_sq(y, i, j, w)


def loss_neg(y, neg: Sequence) -> float:
    """Non-competitor eigenmap term, using the flipped weight ``-w`` (so >= 0)."""
    y = as_dense(y, "embedding")
    i, j, w = _pair_arrays(neg, y.shape[0])
    if np.any(w >= 0):
        raise PairError("negative pairs must carry weight -1")
    return _pairwise_sq(y, i, j, -w)


def trace_form(y, laplacian: SparseMatrix) -> float:
    """``2 tr(Y^T L Y)``."""
    y = as_dense(y, "embedding")
    return float(2.0 * np.sum(y * spmm(laplacian, y)))


def hinge(margin: float, l_neg: float) -> float:
    return max(0.0, margin - l_neg)


def loss_first_order(y, pos, neg, m: float) -> float:
    if m < 0:
        raise ValueError(f"margin must be >= 0, got {m}")
    return loss_pos(y, pos) + hinge(m, loss_neg(y, neg))


def loss_second_order(x, x_hat) -> float:
    x, x_hat = as_dense(x), as_dense(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"reconstruction shape {x_hat.shape} != attributes {x.shape}")
    d = x - x_hat
    return float(np.sum(d * d))


class LossBreakdown(NamedTuple):
    first: float
    pos: float
    neg: float
    second: float
    regularizer: float
    total: float


class PairTerms:
    """Laplacians of the competitor and non-competitor pair sets."""

    def __init__(self, pos: Sequence, neg: Sequence, n: int):
        for p in pos:
            if p[2] <= 0:
                raise PairError(f"positive pair ({p[0]}, {p[1]}) has weight {p[2]}")
        for p in neg:
            if p[2] >= 0:
                raise PairError(f"negative pair ({p[0]}, {p[1]}) has weight {p[2]}")
        self.n = n
        self.lap_pos = laplacian_from_pairs(pos, n)
        self.lap_neg = laplacian_from_pairs([(p[0], p[1], -p[2]) for p in neg], n)

    @classmethod
    def coerce(cls, pairs, neg, n):
        return pairs if isinstance(pairs, PairTerms) else cls(pairs, neg, n)


def total_loss(model: JpecModel, ops: Operators, x, pos, neg=()):
    """Full objective and its components.

    ``pos`` may be a prebuilt :class:`PairTerms`, in which case ``neg`` is
    ignored.  Returns ``(total, breakdown, enc_cache, dec_cache, y, x_hat)``.
    """
    cfg = model.config
    x = as_dense(x, "attributes")
    terms = PairTerms.coerce(pos, neg, x.shape[0])
    y, enc_cache = encode(model, ops.enc, x, ops.enc_t)
    x_hat, dec_cache = decode(model, ops.dec, y, ops.dec_t)
    l_pos = trace_form(y, terms.lap_pos)
    l_neg = trace_form(y, terms.lap_neg)
    first = l_pos + hinge(cfg.margin, l_neg)
    second = loss_second_order(x, x_hat)
    reg = model.weight_sq()
    total = first + cfg.beta * second + cfg.lam * reg
    parts = LossBreakdown(first, l_pos, l_neg, second, reg, total)
    return total, parts, enc_cache, dec_cache, y, x_hat


# --- backward ---------------------------------------------------------------

def _layers_backward(weights, cache: ForwardCache, grad_out: np.ndarray):
    grads = [None] * len(weights)
    g = grad_out
    for layer in reversed(range(len(weights))):
        dz = g * _activation_grad(cache.preacts[layer], cache.activations[layer])
        dhw = spmm(cache.op_t, dz)
        grads[layer] = cache.inputs[layer].T @ dhw
        g = dhw @ weights[layer].T
    return grads, g


def backward(model: JpecModel, enc_cache: ForwardCache, dec_cache: ForwardCache,
             pos, neg, x, x_hat, y=None) -> list:
    """Exact gradients of the objective for every weight (encoder then decoder).

    The hinge contributes only while ``margin - L_neg > 0``; at the kink its
    subgradient is taken as zero.
    """
    if enc_cache is None or dec_cache is None or not enc_cache.inputs or not dec_cache.inputs:
        raise ValueError("backward needs the caches of a completed forward pass")
    cfg = model.config
    x = as_dense(x, "attributes")
    terms = PairTerms.coerce(pos, neg, x.shape[0])
    if y is None:
        y = dec_cache.inputs[0]

    d_xhat = 2.0 * cfg.beta * (x_hat - x)
    dec_grads, d_y = _layers_backward(model.decoder_weights, dec_cache, d_xhat)
    # d/dY of 2 tr(Y^T L Y) is 2 (L + L^T) Y = 4 L Y for symmetric L
    d_y = d_y + 4.0 * spmm(terms.lap_pos, y)
    if cfg.margin - trace_form(y, terms.lap_neg) > 0:
        d_y = d_y - 4.0 * spmm(terms.lap_neg, y)
    enc_grads, _ = _layers_backward(model.encoder_weights, enc_cache, d_y)

    grads = enc_grads + dec_grads
    if cfg.lam:
        grads = [g + 2.0 * cfg.lam * w for g, w in zip(grads, model.weights)]
    return grads


# --- training ---------------------------------------------------------------

REPORT_COLUMNS = ("epoch", "l_first", "l_pos", "l_neg", "l_second", "regularizer", "total")


@dataclass
class TrainReport:
    """Per-epoch loss components (measured before that epoch's update).

    ``seconds`` holds wall-clock per epoch and is excluded from equality so
    reports of identical runs compare equal.
    """

    records: list = field(default_factory=list)
    seconds: list = field(default_factory=list, compare=False)
    final: Optional[LossBreakdown] = None

    def __len__(self):
        return len(self.records)

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    def rows(self):
        for epoch, r in enumerate(self.records):
            yield (epoch, r.first, r.pos, r.neg, r.second, r.regularizer, r.total)


def clip_gradients(grads: list, max_norm: Optional[float]) -> list:
    if not max_norm:
        return grads
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


class Adam:
    """Adam with the usual defaults; state is plain arrays, so runs are reproducible."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, weights: list, grads: list) -> list:
        if self.m is None:
            self.m = [np.zeros_like(w) for w in weights]
            self.v = [np.zeros_like(w) for w in weights]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for k, (w, g) in enumerate(zip(weights, grads)):
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            out.append(w - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps))
        return out


class GradientDescent:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, weights: list, grads: list) -> list:
        return [w - self.lr * g for w, g in zip(weights, grads)]


def make_optimizer(cfg: JpecConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else GradientDescent(cfg.learning_rate)


def train(g: CompanyGraph, negatives: Sequence, cfg: JpecConfig, model: JpecModel = None,
          callback=None):
    """Full-batch gradient descent on the joint objective.

    Deterministic for a given ``(graph, negatives, cfg)``, whatever the
    thread settings: dense products run on a single BLAS thread because
    threaded BLAS may change summation order.  With
    ``cfg.resample_negatives`` the pair set is redrawn every epoch from a
    seed derived from ``cfg.seed`` and the epoch index instead.

    Returns ``(model, report)``.  Raises :class:`DivergenceError` as soon as
    the loss or a gradient stops being finite.
    """
    with threadpool_limits(limits=1, user_api="blas"):
        return _train(g, negatives, cfg, model, callback)


def _train(g, negatives, cfg, model, callback):
    from .sampling import NegativeSampleSpec, sample_negatives

    if g.attr_dim != cfg.encoder_dims[0]:
        raise ShapeError(f"graph attribute width {g.attr_dim} != encoder input {cfg.encoder_dims[0]}")
    pos, neg = competitor_pair_sets(g, negatives)
    model = init_model(cfg) if model is None else model
    report = TrainReport()
    if cfg.epochs == 0:
        return model, report

    ops = Operators.from_graph(g, cfg.norm_mode)
    x = g.attr
    terms = PairTerms(pos, neg, g.n)
    weights = [w.copy() for w in model.weights]
    optimizer = make_optimizer(cfg)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        if cfg.resample_negatives:
            spec = NegativeSampleSpec(cfg.negative_ratio, seed=cfg.seed + 1 + epoch)
            terms = PairTerms(pos, sample_negatives(g, spec), g.n)
        current = model.with_weights(weights)
        try:
            total, parts, enc_c, dec_c, y, x_hat = total_loss(current, ops, x, terms)
        except FloatingPointError as exc:
            raise DivergenceError(epoch, str(exc)) from exc
        if not math.isfinite(total):
            raise DivergenceError(epoch, f"non-finite loss {total}")
        grads = backward(current, enc_c, dec_c, terms, None, x, x_hat, y)
        if not all(np.all(np.isfinite(gr)) for gr in grads):
            raise DivergenceError(epoch, "non-finite gradient")
        grads = clip_gradients(grads, cfg.grad_clip)
        weights = optimizer.step(weights, grads)
        report.records.append(parts)
        report.seconds.append(time.perf_counter() - start)
        if callback is not None:
            callback(epoch, parts)

    model = model.with_weights(weights)
    try:
        report.final = total_loss(model, ops, x, terms)[1]
    except FloatingPointError as exc:
        raise DivergenceError(cfg.epochs, str(exc)) from exc
    if not math.isfinite(report.final.total):
        raise DivergenceError(cfg.epochs, f"non-finite loss {report.final.total}")
    return model, report


def embed(model: JpecModel, g: CompanyGraph) -> np.ndarray:
    """Encoder output for every node of ``g``, labelled or not."""
    ops = build_encoder_operator(supply_adjacency(g), model.config.norm_mode)
    with threadpool_limits(limits=1, user_api="blas"):
        y, _ = encode(model, ops, g.attr)
    return y
