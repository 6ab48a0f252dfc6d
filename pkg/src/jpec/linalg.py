"""Dense and CSR kernels shared by the rest of the package.

Dense matrices are plain 2-D ``float64`` numpy arrays.  The only sparse
format is CSR, wrapped in :class:`SparseMatrix`.  Every operation is pure:
inputs are never mutated and results are fresh objects.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from .errors import NormalizationError, PairError, ShapeError

THREADS_ENV = "JPEC_THREADS"
_PARALLEL_MIN_ROWS = 256


def thread_count() -> int:
    """Kernel thread budget from ``JPEC_THREADS`` (0 means sequential).

    Unset means one worker per available CPU, capped at 8.
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return min(8, os.cpu_count() or 1)
    value = int(raw)
    if value < 0:
        raise ValueError(f"{THREADS_ENV} must be >= 0, got {value}")
    return value


def as_dense(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSR matrix with float64 values.

    Column indices are strictly increasing within each row, so two
    matrices with the same entries have identical storage.
    """

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if self.rows < 0 or self.cols < 0:
            raise ShapeError(f"negative shape ({self.rows}, {self.cols})")
        if row_ptr.shape != (self.rows + 1,):
            raise ShapeError(f"row_ptr has length {row_ptr.size}, expected {self.rows + 1}")
        nnz = int(row_ptr[-1])
        if row_ptr[0] != 0 or np.any(np.diff(row_ptr) < 0):
            raise ShapeError("row_ptr must start at 0 and be non-decreasing")
        if col_idx.size != nnz or values.size != nnz:
            raise ShapeError(
                f"nnz mismatch: row_ptr says {nnz}, col_idx {col_idx.size}, values {values.size}"
            )
        if nnz:
            if col_idx.min() < 0 or col_idx.max() >= self.cols:
                raise ShapeError(f"column index out of range for {self.cols} columns")
            row_of = np.repeat(np.arange(self.rows), np.diff(row_ptr))
            same_row = row_of[1:] == row_of[:-1]
            if np.any(np.diff(col_idx)[same_row] <= 0):
                raise ShapeError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(values)):
            raise ShapeError("sparse values must be finite")
        object.__setattr__(self, "row_ptr", _readonly(row_ptr))
        object.__setattr__(self, "col_idx", _readonly(col_idx))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = as_dense(a)
        m = sp.csr_matrix(a)
        m.eliminate_zeros()
        return cls.from_scipy(m)

    @classmethod
    def from_triplets(cls, rows: int, cols: int, i, j, v) -> "SparseMatrix":
        """Build from coordinate triplets; duplicates are summed."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        v = np.asarray(v, dtype=np.float64)
        return cls.from_scipy(sp.coo_matrix((v, (i, j)), shape=(rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SparseMatrix":
        return cls(rows, cols, np.zeros(rows + 1, dtype=np.int64), [], [])

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values.copy(), self.col_idx.copy(), self.row_ptr.copy()),
            shape=self.shape,
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T)

    @property
    def T(self) -> "SparseMatrix":
        return self.transpose()

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.rows)
        for r in range(self.rows):
            acc = 0.0
            for k in range(self.row_ptr[r], self.row_ptr[r + 1]):
                acc += self.values[k]
            out[r] = acc
        return out

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.rows != self.cols:
            return False
        diff = self.to_scipy() - self.to_scipy().T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) <= tol

    def __matmul__(self, other):
        return spmm(self, other)

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def spmm(a: SparseMatrix, b) -> np.ndarray:
    """CSR times dense, accumulating each output row in storage order.

    With more than one kernel thread the rows are split into contiguous
    blocks; every row is computed by the same sequential kernel, so the
    result is bitwise identical to the single-threaded product.
    """
    b = as_dense(b, "dense operand")
    if a.cols != b.shape[0]:
        raise ShapeError(f"spmm dimension mismatch: sparse {a.shape} x dense {b.shape}")
    m = a.to_scipy()
    threads = thread_count()
    if threads <= 1 or a.rows < _PARALLEL_MIN_ROWS:
        out = np.asarray(m @ b)
    else:
        bounds = np.linspace(0, a.rows, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda k: np.asarray(m[bounds[k]:bounds[k + 1]] @ b), range(threads)))
        out = np.vstack(parts)
    out = np.ascontiguousarray(out, dtype=np.float64).reshape(a.rows, b.shape[1])
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("spmm produced non-finite entries")
    return out


def _require_square(a: SparseMatrix, what: str):
    if a.rows != a.cols:
        raise ShapeError(f"{what} needs a square matrix, got {a.shape}")


def add_self_loops(a: SparseMatrix) -> SparseMatrix:
    _require_square(a, "add_self_loops")
    return SparseMatrix.from_scipy(a.to_scipy() + sp.identity(a.rows, format="csr"))


def _scale_rows(a: SparseMatrix, factors: np.ndarray) -> np.ndarray:
    counts = np.diff(a.row_ptr)
    return a.values * np.repeat(factors, counts)


def row_normalize(a: SparseMatrix) -> SparseMatrix:
    """Random-walk normalization ``D^-1 A`` (every row sums to one)."""
    _require_square(a, "row_normalize")
    sums = a.row_sums()
    bad = np.flatnonzero(sums <= 0)
    if bad.size:
        raise NormalizationError(f"row {int(bad[0])} has non-positive sum {sums[bad[0]]!r}")
    return SparseMatrix(a.rows, a.cols, a.row_ptr, a.col_idx, _scale_rows(a, 1.0 / sums))


def sym_normalize(a: SparseMatrix) -> SparseMatrix:
    """Symmetric normalization ``D^-1/2 A D^-1/2`` of a symmetric matrix."""
    _require_square(a, "sym_normalize")
    if not a.is_symmetric():
        raise NormalizationError("sym_normalize requires a symmetric matrix; symmetrize first")
    sums = a.row_sums()
    bad = np.flatnonzero(sums <= 0)
    if bad.size:
        raise NormalizationError(f"row {int(bad[0])} has non-positive sum {sums[bad[0]]!r}")
    inv_sqrt = 1.0 / np.sqrt(sums)
    values = _scale_rows(a, inv_sqrt) * inv_sqrt[a.col_idx]
    return SparseMatrix(a.rows, a.cols, a.row_ptr, a.col_idx, values)


def laplacian_from_pairs(pairs: Iterable, n: int) -> SparseMatrix:
    """Graph Laplacian ``D - W`` of weighted undirected pairs ``(i, j, w)``.

    Weights must be strictly positive; repeated pairs accumulate.
    """
    triples = [(int(p[0]), int(p[1]), float(p[2])) for p in pairs]
    for i, j, w in triples:
        if i == j:
            raise PairError(f"self-pair ({i}, {j})")
        if not (0 <= i < n and 0 <= j < n):
            raise PairError(f"pair ({i}, {j}) out of range for n={n}")
        if not w > 0:
            raise PairError(f"pair ({i}, {j}) has non-positive weight {w}")
    if not triples:
        return SparseMatrix.zeros(n, n)
    i, j, w = (np.array(c) for c in zip(*triples))
    adj = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                        shape=(n, n)).tocsr()
    adj.sum_duplicates()
    degree = np.asarray(adj.sum(axis=1)).ravel()
    return SparseMatrix.from_scipy(sp.diags(degree, format="csr") - adj)


def finite_diff_gradient(f: Callable[[np.ndarray], float], at, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.array(as_dense(at), dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        hi = float(f(x.copy()))
        x[idx] = orig - eps
        lo = float(f(x.copy()))
        x[idx] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite function value probing entry {idx}")
        grad[idx] = (hi - lo) / (2.0 * eps)
    return grad
