"""Preconditioned Crank-Nicolson sampling around a Gaussian reference.

The target density is ``pi_G(gamma) * exp(-Phi(gamma))`` where ``pi_G`` is
Gaussian with mean ``gbar`` and covariance ``C``.  The proposal

    gamma* = gbar + sqrt(1 - h^2) (gamma - gbar) + h w,    w ~ N(0, C)

leaves ``pi_G`` invariant, so the acceptance ratio only involves ``Phi``.
Zero-mean draws from ``C`` come from the Gaussian sampler run with zero data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .matio import write_csv
from .sampler import as_rng
from .whitening import GeneralGaussianModel, sample_general

logger = logging.getLogger(__name__)


def _zero_data(model):
    if isinstance(model, GeneralGaussianModel):
        return model.with_data(np.zeros(model.op.rows), np.zeros(model.op.cols))
    raise TypeError("proposal draws need a GeneralGaussianModel")


def pregenerate_proposals(model, K, rng, **sample_kw):
    """``K`` draws ``w ~ N(0, C)``, ``C = (A^T S^T S A + L^T L)^{-1}``, as columns (n x K)."""
    return sample_general(_zero_data(model), K, rng, **sample_kw).draws


def pcn_proposal_draw(model, rng, **sample_kw):
    """A single zero-mean reference draw ``w ~ N(0, C)`` (draw 0 of ``rng``)."""
    return pregenerate_proposals(model, 1, rng, **sample_kw)[:, 0]


@dataclass
class PcnTarget:
    gbar: np.ndarray
    proposals: Union[np.ndarray, Callable[[int], np.ndarray]]
    phi: Callable[[np.ndarray], float]
    h: float

    def __post_init__(self):
        if not 0.0 < self.h < 1.0:
            raise ValueError(f"h must lie in (0, 1), got {self.h}")
        self.gbar = np.asarray(self.gbar, dtype=float)

    def proposal(self, k):
        """Reference draw ``w^k``; pre-generated columns are used in order."""
        if callable(self.proposals):
            return np.asarray(self.proposals(k), dtype=float)
        P = self.proposals
        if k >= P.shape[1]:
            raise IndexError(f"only {P.shape[1]} pre-generated proposals, step {k} needs more")
        return P[:, k]


def pcn_step(current, gbar, w, h, phi, rng, phi_current=None):
    """One pCN move.

    Returns ``(next, accepted, phi_next)``.  A uniform variate is consumed on
    every call.  A non-finite ``Phi`` at the proposal counts as a rejection.
    """
    if not 0.0 < h < 1.0:
        raise ValueError(f"h must lie in (0, 1), got {h}")
    current = np.asarray(current, dtype=float)
    phi_cur = phi(current) if phi_current is None else phi_current
    proposal = gbar + np.sqrt(1.0 - h * h) * (current - gbar) + h * w
    u = rng.random()
    phi_new = phi(proposal)
    if not np.isfinite(phi_new):
        logger.debug("non-finite Phi at proposal, rejecting")
        return current, False, phi_cur
    log_alpha = -phi_new + phi_cur
    if log_alpha >= 0.0 or u < np.exp(log_alpha):
        return proposal, True, phi_new
    return current, False, phi_cur


@dataclass
class PcnChain:
    states: np.ndarray  # (N + 1, n), row 0 is the initial state
    accepted: np.ndarray
    phi_values: np.ndarray
    seed: int
    accept_count: int = field(init=False)

    def __post_init__(self):
        self.accept_count = int(np.count_nonzero(self.accepted))

    @property
    def N(self):
        return len(self.accepted)

    @property
    def acceptance_rate(self):
        return self.accept_count / self.N

    def to_csv(self, path, thin=0):
        """``step, accepted, phi`` per step, plus the state every ``thin`` steps."""
        n = self.states.shape[1]
        header = ["step", "accepted", "phi"] + ([f"x{i}" for i in range(n)] if thin else [])

        def rows():
            for k in range(self.N):
                row = [k + 1, bool(self.accepted[k]), float(self.phi_values[k])]
                if thin:
                    row += list(self.states[k + 1]) if (k + 1) % thin == 0 else [""] * n
                yield row

        return write_csv(path, header, rows())


def pcn_chain(target, N, rng, x0=None):
    """Run ``N`` pCN steps starting from ``x0`` (default ``gbar``).

    Uniform acceptance variates come from the sequential stream of ``rng``;
    proposals come from ``target``.
    """
    N = int(N)
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = as_rng(rng)
    u_gen = rng.generator()
    x = target.gbar.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.empty((N + 1, x.size))
    states[0] = x
    accepted = np.zeros(N, dtype=bool)
    phis = np.empty(N)
    phi_cur = target.phi(x)
    for k in range(N):
        x, accepted[k], phi_cur = pcn_step(
            x, target.gbar, target.proposal(k), target.h, target.phi, u_gen, phi_current=phi_cur
        )
        states[k + 1] = x
        phis[k] = phi_cur
    return PcnChain(states, accepted, phis, rng.seed)


def linearization_phi(forward, A, r):
    """``Phi(g) = 0.5 ||M(g)||^2 + M(g)^T (A g - r)`` with ``M(g) = F(g) - A g``.

    For a forward map ``F`` with linearization ``A`` and whitened data ``r``,
    this is the part of ``0.5 ||F(g) - r||^2`` not captured by the Gaussian
    reference.
    """
    A = np.asarray(A, dtype=float)
    r = np.asarray(r, dtype=float)

    def phi(g):
        lin = A @ g
        M = forward(g) - lin
        return float(0.5 * (M @ M) + M @ (lin - r))

    return phi
