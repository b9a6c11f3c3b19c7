"""Reduction of general Gaussian linear models to standard form.

Two prior forms are supported:

* a square invertible precision factor ``L`` with ``Gamma^{-1} = L^T L``;
  the change of variables ``xt = L (x - x0)`` gives ``At = S A L^{-1}``;
* a tall full-column-rank transform ``L`` (p x n, p >= n) with the prior
  placed on ``w = L (x - x0) ~ N(0, I_p)``; samples are drawn in w-space for
  ``At = S A L^+`` and mapped back with the pseudoinverse, which also
  discards the component of the prior perturbation lying in null(L^T).

``S`` is the noise precision factor, ``Sigma^{-1} = S^T S``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linalg import (
    CompositeOperator,
    DenseOperator,
    DimensionError,
    LinearOperator,
    as_operator,
    cholesky_factor,
    inverse_operator,
    solve_spd,
)
from .sampler import DIRECT_CAP, StandardFormModel, sample


def _columnwise_add(X, x0):
    return X + (x0 if X.ndim == 1 else x0[:, None])


@dataclass(frozen=True)
class GeneralGaussianModel:
    op: LinearOperator
    b: np.ndarray
    x0: Optional[np.ndarray] = None
    prior_precision_factor: Optional[LinearOperator] = None
    transform_prior: Optional[LinearOperator] = None
    noise_precision_factor: Optional[LinearOperator] = None

    def __post_init__(self):
        op = as_operator(self.op)
        object.__setattr__(self, "op", op)
        m, n = op.shape
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape != (m,):
            raise DimensionError(f"data has length {b.size}, operator has {m} rows")
        object.__setattr__(self, "b", b)
        x0 = np.zeros(n) if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (n,):
            raise DimensionError(f"prior mean has length {x0.size}, expected {n}")
        object.__setattr__(self, "x0", x0)

        if (self.prior_precision_factor is None) == (self.transform_prior is None):
            raise ValueError("give exactly one of prior_precision_factor and transform_prior")
        if self.prior_precision_factor is not None:
            L = as_operator(self.prior_precision_factor)
            if L.shape != (n, n):
                raise DimensionError(f"prior precision factor must be {n} x {n}, got {L.shape}")
            object.__setattr__(self, "prior_precision_factor", L)
        else:
            L = as_operator(self.transform_prior)
            if L.cols != n or L.rows < n:
                raise DimensionError(f"transform prior must be p x {n} with p >= {n}, got {L.shape}")
            object.__setattr__(self, "transform_prior", L)
        if self.noise_precision_factor is not None:
            S = as_operator(self.noise_precision_factor)
            if S.shape != (m, m):
                raise DimensionError(f"noise precision factor must be {m} x {m}, got {S.shape}")
            object.__setattr__(self, "noise_precision_factor", S)

    def with_data(self, b, x0=None):
        """Same operators, new data (and optionally new prior mean)."""
        return GeneralGaussianModel(
            self.op, b, self.x0 if x0 is None else x0, self.prior_precision_factor,
            self.transform_prior, self.noise_precision_factor,
        )

    def _noise_whitened(self):
        S = self.noise_precision_factor
        r = self.b - self.op.apply(self.x0)
        if S is None:
            return self.op, r
        return CompositeOperator(S, self.op), S.apply(r)


def whiten(model):
    """Standard-form model for a square prior precision factor.

    The operator is ``S A L^{-1}`` kept as a composite (``L^{-1}`` applied
    through a factorization, never formed); the back transform is
    ``x = L^{-1} xt + x0``.
    """
    if model.prior_precision_factor is None:
        raise ValueError("whiten needs a square prior precision factor; use transform_prior_model")
    L_inv = inverse_operator(model.prior_precision_factor)
    op, bt = _noise_whitened_checked(model)
    x0 = model.x0

    def back(xt):
        return _columnwise_add(L_inv.apply(xt), x0)

    return StandardFormModel(CompositeOperator(op, L_inv), bt, back)


def _noise_whitened_checked(model):
    S = model.noise_precision_factor
    if S is not None:
        # raises SingularOperatorError when S cannot be inverted
        inverse_operator(S)
    return model._noise_whitened()


def closed_form_posterior(model):
    """Dense posterior mean and covariance in both algebraic forms.

    Returns ``(mu, C, mu_alt, C_alt)``: the precision form
    ``C = (A^T Sigma^{-1} A + Gamma^{-1})^{-1}`` and the data-space form
    ``C = Gamma - Gamma A^T (A Gamma A^T + Sigma)^{-1} A Gamma``.
    Only for dense-sized models.
    """
    A = model.op.to_dense()
    m, n = A.shape
    if model.prior_precision_factor is not None:
        Lm = model.prior_precision_factor.to_dense()
    else:
        Lm = model.transform_prior.to_dense()
    prior_prec = Lm.T @ Lm
    S = np.eye(m) if model.noise_precision_factor is None else model.noise_precision_factor.to_dense()
    noise_prec = S.T @ S
    b, x0 = model.b, model.x0

    C = np.linalg.inv(A.T @ noise_prec @ A + prior_prec)
    mu = C @ (A.T @ noise_prec @ b + prior_prec @ x0)

    Gamma = np.linalg.inv(prior_prec)
    Sigma = np.linalg.inv(noise_prec)
    K = Gamma @ A.T @ np.linalg.inv(A @ Gamma @ A.T + Sigma)
    C_alt = Gamma - K @ A @ Gamma
    mu_alt = x0 + K @ (b - A @ x0)
    return mu, C, mu_alt, C_alt


class PinvOperator(LinearOperator):
    """Pseudoinverse ``L^+ = (L^T L)^{-1} L^T`` of a full-column-rank ``L``.

    The Gram matrix ``L^T L`` is factorized once.  As an operator it maps
    R^p to R^n.
    """

    kind = "composite"

    def __init__(self, L):
        L = as_operator(L)
        if L.rows < L.cols:
            raise DimensionError(f"pseudoinverse needs p >= n, got {L.shape}")
        super().__init__(L.cols, L.rows)
        self.L = L
        if hasattr(L, "matrix"):
            gram = L.matrix.T @ L.matrix
            gram = gram.toarray() if hasattr(gram, "toarray") else np.asarray(gram)
        else:
            Ld = L.to_dense()
            gram = Ld.T @ Ld
        # Cholesky failure here means L^T L is singular (rank-deficient L)
        self.gram_factor = cholesky_factor(gram)

    def _matvec(self, z):
        return solve_spd(self.gram_factor, self.L._rmatvec(z))

    def _rmatvec(self, y):
        return self.L._matvec(solve_spd(self.gram_factor, y))


def pinv_apply(P, z):
    return P.apply(z)


def pinv_transpose_apply(P, y):
    return P.apply_transpose(y)


def transform_prior_model(model, precompute=None):
    """Standard-form model in w-space for a transform prior.

    The operator is ``S A L^+``.  With ``precompute`` (default: when
    ``n <= 2000``) it is formed densely once as
    ``(((L^T L)^{-1} A^T)^T L^T)``; otherwise it stays a composite.
    The back transform is ``x = L^+ w + x0``.
    """
    if model.transform_prior is None:
        raise ValueError("model has no transform prior")
    P = PinvOperator(model.transform_prior)
    op, bt = _noise_whitened_checked(model)
    if precompute is None:
        precompute = model.op.cols <= DIRECT_CAP
    if precompute:
        At = op.to_dense()
        G = solve_spd(P.gram_factor, At.T)
        std_op = DenseOperator(P.L._matvec(G).T)
    else:
        std_op = CompositeOperator(op, P)
    x0 = model.x0

    def back(w):
        return _columnwise_add(P.apply(w), x0)

    return StandardFormModel(std_op, bt, back)


def sample_transform_prior(model, K, rng, strategy="auto", precompute=None, **kwargs):
    """Posterior draws in x-coordinates for a transform-prior model.

    Draws are made in w-space and mapped by the pseudoinverse; the part of
    each prior perturbation in null(L^T) is carried through w and removed by
    that final map, so no projection is applied beforehand.
    """
    std = transform_prior_model(model, precompute=precompute)
    return sample(std, K, rng, strategy=strategy, **kwargs)


def sample_general(model, K, rng, strategy="auto", **kwargs):
    """Dispatch on the prior form and return draws in original coordinates."""
    if model.prior_precision_factor is not None:
        return sample(whiten(model), K, rng, strategy=strategy, **kwargs)
    return sample_transform_prior(model, K, rng, strategy=strategy, **kwargs)
