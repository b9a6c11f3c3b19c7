"""Golub-Kahan bidiagonalization and the projected Krylov solvers built on it.

Both solvers handle shifted systems with a shift ``mu >= 0``:

* adjoint equations ``(A A^T + mu I) z = b``, with ``z`` sought in span(U),
* normal equations ``(A^T A + mu I) x = A^T b``, with ``x`` sought in span(V).

Each iteration extends the bidiagonalization by one step and solves the small
``(l+1) x l`` least-squares problem whose residual equals the residual of the
full system, so the reported residual is exact up to loss of orthogonality.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_operator, dense_lstsq

logger = logging.getLogger(__name__)

BREAKDOWN_RTOL = 1e-14


@dataclass(frozen=True)
class KrylovConfig:
    max_steps: int = 100
    tol: float = 1e-8
    reorth: str = "full"
    # only the variant that stores the Lanczos vectors is implemented
    storage: str = "store"

    def __post_init__(self):
        if int(self.max_steps) < 1:
            raise ValueError("max_steps must be at least 1")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")
        if self.reorth not in ("full", "none"):
            raise ValueError(f"reorth must be 'full' or 'none', got {self.reorth!r}")
        if self.storage != "store":
            raise ValueError(f"unsupported storage mode {self.storage!r}; only 'store' exists")


@dataclass
class KrylovStats:
    steps: int
    residual: float
    converged: bool
    breakdown: bool
    history: list = field(default_factory=list, repr=False)

    CSV_HEADER = ("steps", "residual", "breakdown")

    def csv_row(self):
        return (self.steps, float(self.residual), int(self.breakdown))


@dataclass(frozen=True)
class BidiagFactors:
    """Output of ``steps`` Golub-Kahan steps.

    ``U`` is m x (l+1), ``V`` is n x l, ``alphas`` has l entries and ``betas``
    l+1.  ``alpha_next``/``v_next`` complete the relation
    ``A^T U = V B^T + alpha_next v_next e_{l+1}^T``.  After a breakdown the
    vectors that could not be normalized are stored as zeros.
    """

    U: np.ndarray
    V: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    alpha_next: float
    v_next: np.ndarray
    breakdown: bool

    @property
    def steps(self):
        return len(self.alphas)

    @property
    def B(self):
        return _lower_bidiagonal(self.alphas, self.betas[1:], self.steps + 1)


def _lower_bidiagonal(alphas, subdiag, nrows):
    l = len(alphas)
    B = np.zeros((nrows, l))
    idx = np.arange(l)
    B[idx, idx] = alphas
    k = min(len(subdiag), nrows - 1)
    B[idx[:k] + 1, idx[:k]] = subdiag[:k]
    return B


def _orthogonalize(w, basis, full):
    if full and basis:
        Q = np.column_stack(basis)
        # two passes of classical Gram-Schmidt
        w = w - Q @ (Q.T @ w)
        w = w - Q @ (Q.T @ w)
    return w


class _Bidiagonalizer:
    """Incremental Golub-Kahan process.

    After ``steps`` calls to :meth:`step` it holds u_1..u_{l+1}, v_1..v_{l+1},
    alpha_1..alpha_{l+1} and beta_1..beta_{l+1}; the trailing alpha/v pair is
    the look-ahead needed by the normal-equation residual.
    """

    def __init__(self, op, b, reorth="full"):
        self.op = as_operator(op)
        b = np.asarray(b, dtype=float)
        if b.shape != (self.op.rows,):
            raise ValueError(f"seed vector must have length {self.op.rows}, got {b.shape}")
        beta1 = float(np.linalg.norm(b))
        if beta1 == 0.0 or not np.isfinite(beta1):
            raise ValueError("seed vector must be nonzero and finite")
        self.full = reorth == "full"
        m, n = self.op.shape
        self.m, self.n = m, n
        self.us = [b / beta1]
        self.betas = [beta1]
        self.vs = []
        self.alphas = []
        self.steps = 0
        self.breakdown = False
        self.beta_breakdown = False
        self._sumsq = 0.0
        self._push_v(self.op._rmatvec(self.us[0]))

    def _threshold(self):
        return BREAKDOWN_RTOL * np.sqrt(self._sumsq)

    def _push_v(self, w):
        if self.vs:
            w = _orthogonalize(w, self.vs, self.full)
        alpha = float(np.linalg.norm(w))
        exhausted = len(self.vs) >= self.n
        if exhausted or alpha <= max(self._threshold(), np.finfo(float).tiny):
            self.alphas.append(0.0)
            self.vs.append(np.zeros(self.n))
            self.breakdown = True
            return
        self._sumsq += alpha * alpha
        self.alphas.append(alpha)
        self.vs.append(w / alpha)

    def step(self):
        if self.breakdown:
            raise RuntimeError("cannot continue past a breakdown")
        l = self.steps + 1
        u = self.op._matvec(self.vs[l - 1]) - self.alphas[l - 1] * self.us[l - 1]
        u = _orthogonalize(u, self.us, self.full)
        beta = float(np.linalg.norm(u))
        self.steps = l
        if l >= self.m or beta <= self._threshold():
            self.betas.append(0.0)
            self.us.append(np.zeros(self.m))
            self.alphas.append(0.0)
            self.vs.append(np.zeros(self.n))
            self.breakdown = self.beta_breakdown = True
            return
        self._sumsq += beta * beta
        self.betas.append(beta)
        self.us.append(u / beta)
        self._push_v(self.op._rmatvec(self.us[l]) - beta * self.vs[l - 1])

    def factors(self):
        l = self.steps
        return BidiagFactors(
            U=np.column_stack(self.us[: l + 1]),
            V=np.column_stack(self.vs[:l]) if l else np.zeros((self.n, 0)),
            alphas=np.array(self.alphas[:l]),
            betas=np.array(self.betas[: l + 1]),
            alpha_next=self.alphas[l],
            v_next=self.vs[l],
            breakdown=self.breakdown,
        )


def golub_kahan(op, b, steps, reorth=True):
    """Run ``steps`` steps of Golub-Kahan bidiagonalization seeded with ``b``.

    Stops early on breakdown, i.e. when a new alpha or beta falls below
    ``1e-14`` times the running norm estimate of the computed bidiagonal; the
    returned factors then have fewer steps and ``breakdown=True``.
    """
    op = as_operator(op)
    steps = int(steps)
    if not 1 <= steps < min(op.shape):
        raise ValueError(f"steps must satisfy 1 <= steps < min(m, n) = {min(op.shape)}")
    proc = _Bidiagonalizer(op, b, "full" if reorth else "none")
    while proc.steps < steps and not proc.breakdown:
        proc.step()
    return proc.factors()


def _finish(stats_steps, history, breakdown, tol):
    res = history[-1] if history else 0.0
    return KrylovStats(
        steps=stats_steps,
        residual=res,
        converged=bool(res <= tol or breakdown),
        breakdown=breakdown,
        history=history,
    )


def solve_adjoint_krylov(op, b, mu=1.0, cfg=None):
    """Approximate ``(A A^T + mu I) z = b`` in the Krylov space K_l(b, A A^T).

    Returns ``(z, stats)``; ``stats.residual`` is the residual norm relative to
    ``||b||``.  Non-convergence within ``cfg.max_steps`` is reported through
    ``stats.converged`` rather than raised.
    """
    cfg = cfg or KrylovConfig()
    op = as_operator(op)
    if mu < 0:
        raise ValueError("shift mu must be non-negative")
    b = np.asarray(b, dtype=float)
    proc = _Bidiagonalizer(op, b, cfg.reorth)
    beta1 = proc.betas[0]
    if proc.breakdown:  # A^T b = 0, so A A^T b = 0 as well
        if mu == 0:
            raise np.linalg.LinAlgError("A A^T is singular on the seed vector; use mu > 0")
        return b / mu, _finish(0, [0.0], True, cfg.tol)

    history = []
    xi = None
    while proc.steps < cfg.max_steps and not proc.breakdown:
        proc.step()
        l = proc.steps
        alphas = np.array(proc.alphas[:l])
        betas = np.array(proc.betas[: l + 1])
        rhs = np.zeros(l + 1)
        rhs[0] = beta1
        if proc.breakdown and not proc.beta_breakdown:
            # span(U_{l+1}) is invariant under A A^T: solve there exactly
            B = _lower_bidiagonal(alphas, betas[1:], l + 1)
            M = B @ B.T + mu * np.eye(l + 1)
            xi = dense_lstsq(M, rhs)
            history.append(float(np.linalg.norm(M @ xi - rhs)) / beta1)
            basis = l + 1
            break
        C = _lower_bidiagonal(alphas, betas[1:l], l)
        M = np.vstack([C @ C.T + mu * np.eye(l), np.zeros((1, l))])
        M[l, l - 1] = betas[l] * alphas[l - 1]
        xi = dense_lstsq(M, rhs)
        history.append(float(np.linalg.norm(M @ xi - rhs)) / beta1)
        basis = l
        if history[-1] <= cfg.tol:
            break

    z = np.column_stack(proc.us[:basis]) @ xi
    stats = _finish(proc.steps, history, proc.breakdown, cfg.tol)
    if not stats.converged:
        logger.warning("adjoint Krylov solve stopped at %d steps, residual %.2e", stats.steps, stats.residual)
    return z, stats


def solve_normal_krylov(op, b, mu=1.0, cfg=None):
    """Approximate ``(A^T A + mu I) x = A^T b`` in K_l(A^T b, A^T A).

    ``stats.residual`` is relative to ``||A^T b||``.
    """
    cfg = cfg or KrylovConfig()
    op = as_operator(op)
    if mu < 0:
        raise ValueError("shift mu must be non-negative")
    b = np.asarray(b, dtype=float)
    proc = _Bidiagonalizer(op, b, cfg.reorth)
    if proc.breakdown:  # A^T b = 0
        return np.zeros(op.cols), _finish(0, [0.0], True, cfg.tol)
    scale = proc.alphas[0] * proc.betas[0]

    history = []
    zeta = None
    while proc.steps < cfg.max_steps and not proc.breakdown:
        proc.step()
        l = proc.steps
        B = _lower_bidiagonal(np.array(proc.alphas[:l]), np.array(proc.betas[1 : l + 1]), l + 1)
        M = np.vstack([B.T @ B + mu * np.eye(l), np.zeros((1, l))])
        M[l, l - 1] = proc.alphas[l] * proc.betas[l]
        rhs = np.zeros(l + 1)
        rhs[0] = scale
        zeta = dense_lstsq(M, rhs)
        history.append(float(np.linalg.norm(M @ zeta - rhs)) / scale)
        if history[-1] <= cfg.tol:
            break

    x = np.column_stack(proc.vs[: proc.steps]) @ zeta
    stats = _finish(proc.steps, history, proc.breakdown, cfg.tol)
    if not stats.converged:
        logger.warning("normal Krylov solve stopped at %d steps, residual %.2e", stats.steps, stats.residual)
    return x, stats
