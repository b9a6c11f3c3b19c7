"""Linear operators and the small dense factorizations built on top of them.

Every operator exposes ``apply`` (``A @ v``) and ``apply_transpose``
(``A.T @ w``).  Both accept a single vector or a 2-D block whose columns are
treated independently, which is how the samplers push many right-hand sides
through one operator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SYMMETRY_RTOL = 1e-12


class DimensionError(ValueError):
    """Raised when an array does not match an operator's declared shape."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization met a non-positive pivot.

    ``pivot`` is the 0-based index of the leading minor that failed.
    """

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (pivot {pivot} <= 0)")


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, rank, ncols):
        self.rank = rank
        self.ncols = ncols
        super().__init__(f"matrix is rank deficient: numerical rank {rank} < {ncols} columns")


class SingularOperatorError(np.linalg.LinAlgError):
    pass


def _as_float_array(v, name="input"):
    arr = np.asarray(v, dtype=float)
    if arr.ndim not in (1, 2):
        raise DimensionError(f"{name} must be a vector or a 2-D block, got ndim={arr.ndim}")
    return arr


class LinearOperator:
    """Abstract linear map from R^cols to R^rows.

    Subclasses implement ``_matvec`` and ``_rmatvec``; both receive an array
    whose first axis has the right length (1-D or 2-D) and must return an
    array of matching dimensionality.
    """

    kind = "abstract"

    def __init__(self, rows, cols):
        rows, cols = int(rows), int(cols)
        if rows < 0 or cols < 0:
            raise ValueError("operator dimensions must be non-negative")
        self.rows = rows
        self.cols = cols

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __repr__(self):
        return f"<{type(self).__name__} {self.rows}x{self.cols} kind={self.kind}>"

    def apply(self, v, check_finite=True):
        v = _as_float_array(v)
        if v.shape[0] != self.cols:
            raise DimensionError(
                f"apply expects leading dimension {self.cols}, got {v.shape[0]}"
            )
        if check_finite and not np.all(np.isfinite(v)):
            raise ValueError("apply received non-finite entries")
        return self._matvec(v)

    def apply_transpose(self, w, check_finite=True):
        w = _as_float_array(w)
        if w.shape[0] != self.rows:
            raise DimensionError(
                f"apply_transpose expects leading dimension {self.rows}, got {w.shape[0]}"
            )
        if check_finite and not np.all(np.isfinite(w)):
            raise ValueError("apply_transpose received non-finite entries")
        return self._rmatvec(w)

    def _matvec(self, v):
        raise NotImplementedError

    def _rmatvec(self, w):
        raise NotImplementedError

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return CompositeOperator(self, other)
        return self.apply(other)

    @property
    def T(self):
        return TransposeOperator(self)

    def to_dense(self):
        """Materialize the operator, probing through whichever side is thinner."""
        if self.rows <= self.cols:
            return np.ascontiguousarray(self._rmatvec(np.eye(self.rows)).T)
        return self._matvec(np.eye(self.cols))

    def norm_estimate(self):
        """Cheap upper bound on the spectral norm (the Frobenius norm of the dense form)."""
        return float(np.linalg.norm(self.to_dense()))


class DenseOperator(LinearOperator):
    kind = "dense"

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float, order="F", ndmin=2)
        if matrix.ndim != 2:
            raise DimensionError("dense operator needs a 2-D matrix")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("dense operator entries must be finite")
        matrix.setflags(write=False)
        super().__init__(*matrix.shape)
        self.matrix = matrix

    def _matvec(self, v):
        return self.matrix @ v

    def _rmatvec(self, w):
        return self.matrix.T @ w

    def to_dense(self):
        return np.array(self.matrix)

    def norm_estimate(self):
        return float(np.linalg.norm(self.matrix))


class SparseOperator(LinearOperator):
    """Sparse matrix operator stored in compressed-column form."""

    kind = "sparse"

    def __init__(self, matrix):
        matrix = sp.csc_matrix(matrix, dtype=float)
        matrix.sum_duplicates()
        if not np.all(np.isfinite(matrix.data)):
            raise ValueError("sparse operator entries must be finite")
        super().__init__(*matrix.shape)
        self.matrix = matrix
        self._matrix_t = matrix.T.tocsc()

    def _matvec(self, v):
        return np.asarray(self.matrix @ v)

    def _rmatvec(self, w):
        return np.asarray(self._matrix_t @ w)

    def to_dense(self):
        return self.matrix.toarray()

    def norm_estimate(self):
        return float(spla.norm(self.matrix))


def identity(n):
    return SparseOperator(sp.identity(n, format="csc"))


def as_operator(obj):
    """Wrap arrays and scipy sparse matrices; pass operators through."""
    if isinstance(obj, LinearOperator):
        return obj
    if sp.issparse(obj):
        return SparseOperator(obj)
    return DenseOperator(obj)


class KroneckerOperator(LinearOperator):
    """``left ⊗ right`` acting on column-major vectorized arrays.

    For ``x = vec(X)`` with ``X`` of shape ``(right.cols, left.cols)`` the
    product is ``vec(right @ X @ left.T)``; the Kronecker matrix itself is
    never formed.
    """

    kind = "kronecker"

    def __init__(self, left, right):
        self.left = as_operator(left)
        self.right = as_operator(right)
        super().__init__(
            self.left.rows * self.right.rows, self.left.cols * self.right.cols
        )

    @staticmethod
    def _two_sided(first, second, v, p, q, forward):
        # v holds vec(X) with X of shape (p, q), possibly with a trailing batch axis
        k = 1 if v.ndim == 1 else v.shape[1]
        X = v.reshape(p, q, k, order="F")
        apply = (lambda op, a: op._matvec(a)) if forward else (lambda op, a: op._rmatvec(a))
        # right factor on axis 0
        Y = apply(second, X.reshape(p, q * k, order="F"))
        Y = Y.reshape(-1, q, k, order="F")
        r = Y.shape[0]
        # left factor on axis 1
        Z = np.transpose(Y, (1, 0, 2)).reshape(q, r * k, order="F")
        Z = apply(first, Z).reshape(-1, r, k, order="F")
        out = np.transpose(Z, (1, 0, 2)).reshape(-1, k, order="F")
        return out[:, 0] if v.ndim == 1 else out

    def _matvec(self, v):
        return self._two_sided(self.left, self.right, v, self.right.cols, self.left.cols, True)

    def _rmatvec(self, w):
        return self._two_sided(self.left, self.right, w, self.right.rows, self.left.rows, False)

    def to_dense(self):
        return np.kron(self.left.to_dense(), self.right.to_dense())


class CompositeOperator(LinearOperator):
    """Product ``ops[0] @ ops[1] @ ... @ ops[-1]``, applied right to left."""

    kind = "composite"

    def __init__(self, *ops):
        if not ops:
            raise ValueError("composite operator needs at least one factor")
        ops = [as_operator(op) for op in ops]
        for a, b in zip(ops[:-1], ops[1:]):
            if a.cols != b.rows:
                raise DimensionError(f"cannot compose {a.shape} with {b.shape}")
        self.ops = tuple(ops)
        super().__init__(ops[0].rows, ops[-1].cols)

    def _matvec(self, v):
        for op in reversed(self.ops):
            v = op._matvec(v)
        return v

    def _rmatvec(self, w):
        for op in self.ops:
            w = op._rmatvec(w)
        return w


class HStackOperator(LinearOperator):
    """Horizontal concatenation ``[A_1, A_2, ..., A_L]`` of operators sharing a row count."""

    kind = "composite"

    def __init__(self, blocks):
        blocks = [as_operator(b) for b in blocks]
        if not blocks:
            raise ValueError("need at least one block")
        rows = blocks[0].rows
        if any(b.rows != rows for b in blocks):
            raise DimensionError("all blocks must have the same number of rows")
        self.blocks = tuple(blocks)
        self.offsets = np.concatenate([[0], np.cumsum([b.cols for b in blocks])])
        super().__init__(rows, int(self.offsets[-1]))

    def _matvec(self, v):
        out = None
        for blk, lo, hi in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            part = blk._matvec(v[lo:hi])
            out = part if out is None else out + part
        return out

    def _rmatvec(self, w):
        return np.concatenate([blk._rmatvec(w) for blk in self.blocks], axis=0)


class ScaledOperator(LinearOperator):
    """``diag(row_scale) @ op @ diag(col_scale)``; either scale may be a scalar."""

    kind = "composite"

    def __init__(self, op, row_scale=1.0, col_scale=1.0):
        self.op = as_operator(op)
        super().__init__(*self.op.shape)
        self.row_scale = np.broadcast_to(np.asarray(row_scale, dtype=float), (self.rows,))
        self.col_scale = np.broadcast_to(np.asarray(col_scale, dtype=float), (self.cols,))

    @staticmethod
    def _scale(s, v):
        return s * v if v.ndim == 1 else s[:, None] * v

    def _matvec(self, v):
        return self._scale(self.row_scale, self.op._matvec(self._scale(self.col_scale, v)))

    def _rmatvec(self, w):
        return self._scale(self.col_scale, self.op._rmatvec(self._scale(self.row_scale, w)))


class TransposeOperator(LinearOperator):
    kind = "composite"

    def __init__(self, op):
        self.op = as_operator(op)
        super().__init__(self.op.cols, self.op.rows)

    def _matvec(self, v):
        return self.op._rmatvec(v)

    def _rmatvec(self, w):
        return self.op._matvec(w)


class CallbackOperator(LinearOperator):
    """Matrix-free operator defined by user callables on single vectors.

    2-D blocks are processed column by column.
    """

    kind = "callback"

    def __init__(self, shape, matvec, rmatvec):
        super().__init__(*shape)
        self._fwd = matvec
        self._adj = rmatvec

    @staticmethod
    def _columnwise(fn, v, out_len):
        if v.ndim == 1:
            out = np.asarray(fn(v), dtype=float)
            if out.shape != (out_len,):
                raise DimensionError(f"callback returned shape {out.shape}, expected ({out_len},)")
            return out
        return np.column_stack(
            [CallbackOperator._columnwise(fn, v[:, j], out_len) for j in range(v.shape[1])]
        ) if v.shape[1] else np.zeros((out_len, 0))

    def _matvec(self, v):
        return self._columnwise(self._fwd, v, self.rows)

    def _rmatvec(self, w):
        return self._columnwise(self._adj, w, self.cols)


class InverseOperator(LinearOperator):
    """Applies ``op^{-1}`` through a factorization computed once at construction."""

    kind = "composite"

    def __init__(self, op):
        op = as_operator(op)
        if op.rows != op.cols:
            raise DimensionError(f"only square operators can be inverted, got {op.shape}")
        super().__init__(op.rows, op.cols)
        self.op = op
        if isinstance(op, SparseOperator):
            try:
                lu = spla.splu(op.matrix)
            except RuntimeError as exc:
                raise SingularOperatorError(str(exc)) from exc
            self._solve = lambda v: lu.solve(np.asarray(v, dtype=float))
            self._solve_t = lambda w: lu.solve(np.asarray(w, dtype=float), trans="T")
        else:
            dense = op.to_dense()
            with warnings.catch_warnings():
                # singularity is reported below with our own error type
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(dense, check_finite=True)
            diag = np.abs(np.diag(lu))
            if diag.size and diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * op.rows:
                raise SingularOperatorError("operator is numerically singular")
            self._solve = lambda v: sla.lu_solve((lu, piv), v)
            self._solve_t = lambda w: sla.lu_solve((lu, piv), w, trans=1)

    def _matvec(self, v):
        return self._solve(v)

    def _rmatvec(self, w):
        return self._solve_t(w)


def inverse_operator(op):
    """Inverse of a square operator; Kronecker products invert factor-wise."""
    op = as_operator(op)
    if isinstance(op, KroneckerOperator):
        return KroneckerOperator(inverse_operator(op.left), inverse_operator(op.right))
    if isinstance(op, CallbackOperator):
        raise TypeError("callback operators cannot be inverted without a matrix")
    return InverseOperator(op)


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray

    def __post_init__(self):
        self.lower.setflags(write=False)

    @property
    def dim(self):
        return self.lower.shape[0]

    def reconstruct(self):
        return self.lower @ self.lower.T

    def solve(self, B):
        return solve_spd(self, B)


def cholesky_factor(M):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    The input is symmetrized by averaging after a relative symmetry check.
    A failing pivot raises :class:`NotPositiveDefiniteError` carrying its index.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = np.linalg.norm(M)
    asym = np.linalg.norm(M - M.T)
    if asym > SYMMETRY_RTOL * scale:
        raise ValueError(f"matrix is not symmetric (relative asymmetry {asym / scale:.2e})")
    sym = 0.5 * (M + M.T)
    lower, info = sla.lapack.dpotrf(sym, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:  # pragma: no cover - argument error inside LAPACK
        raise ValueError(f"dpotrf argument {-info} invalid")
    return CholeskyFactor(np.ascontiguousarray(lower))


def solve_spd(factor, B):
    """Solve ``M X = B`` for all columns of ``B`` with one Cholesky factor."""
    B = np.asarray(B, dtype=float)
    if B.ndim not in (1, 2) or B.shape[0] != factor.dim:
        raise DimensionError(f"right-hand side has shape {B.shape}, factor dim is {factor.dim}")
    if B.ndim == 2 and B.shape[1] == 0:
        return np.zeros_like(B)
    return sla.cho_solve((factor.lower, True), B, check_finite=False)


def dense_lstsq(A, b):
    """Least-squares solution of a tall full-column-rank system via reduced QR."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2:
        raise DimensionError("matrix must be 2-D")
    p, q = A.shape
    if p < q:
        raise DimensionError(f"need at least as many rows as columns, got {A.shape}")
    if b.shape[0] != p:
        raise DimensionError(f"right-hand side length {b.shape[0]} != {p}")
    if q == 0:
        return np.zeros((0,) + b.shape[1:])
    Q, R = np.linalg.qr(A, mode="reduced")
    d = np.abs(np.diag(R))
    if d.min() <= max(p, q) * np.finfo(float).eps * d.max():
        raise RankDeficientError(int(np.linalg.matrix_rank(A)), q)
    return sla.solve_triangular(R, Q.T @ b, lower=False)
