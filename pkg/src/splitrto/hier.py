"""Conditionally Gaussian block model with inverse-gamma hypervariances.

    b = sum_l A_l x_l + e,   e ~ N(0, sigma^2 I)
    x_l | theta_l ~ N(0, theta_l I_{n_l}),   theta_l ~ InvGamma(beta, vartheta_l)

Both the IAS MAP iteration and the block Gibbs sampler reduce the x-step to a
standard-form Gaussian problem by scaling block ``l`` by ``sqrt(theta_l)``
and the data by ``1/sigma``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import HStackOperator, ScaledOperator, as_operator
from .matio import write_csv
from .sampler import (
    StandardFormModel,
    as_rng,
    resolve_strategy,
    rto_draw_normal,
    solve_perturbed,
    split_draw_adjoint,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlockModel:
    blocks: tuple
    b: np.ndarray
    sigma: float
    beta: float
    vartheta: np.ndarray

    def __post_init__(self):
        blocks = tuple(as_operator(blk) for blk in self.blocks)
        if not blocks:
            raise ValueError("need at least one block")
        object.__setattr__(self, "blocks", blocks)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if any(blk.rows != b.size for blk in blocks):
            raise ValueError("every block must have as many rows as the data vector")
        object.__setattr__(self, "b", b)
        vt = np.broadcast_to(np.asarray(self.vartheta, dtype=float), (len(blocks),)).copy()
        if np.any(vt <= 0) or self.sigma <= 0 or self.beta <= 0:
            raise ValueError("sigma, beta and all vartheta must be positive")
        object.__setattr__(self, "vartheta", vt)
        object.__setattr__(self, "_op", HStackOperator(blocks))

    @property
    def op(self):
        return self._op

    @property
    def sizes(self):
        return np.array([blk.cols for blk in self.blocks])

    @property
    def n(self):
        return self._op.cols

    @property
    def m(self):
        return self.b.size

    @property
    def kappa(self):
        return self.beta + 1.0 + self.sizes / 2.0

    def expand(self, theta):
        """Per-coordinate copy of the block variances."""
        return np.repeat(np.asarray(theta, dtype=float), self.sizes)

    def block_norms_sq(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([x[lo:hi] @ x[lo:hi] for lo, hi in zip(self._op.offsets[:-1], self._op.offsets[1:])])

    def conditional_model(self, theta):
        """Standard-form model of x | theta; its back transform returns x."""
        scale = np.sqrt(self.expand(theta))
        op = ScaledOperator(self._op, 1.0 / self.sigma, scale)
        return StandardFormModel(op, self.b / self.sigma, lambda xt: _scale_cols(scale, xt))


def _scale_cols(scale, X):
    return scale * X if X.ndim == 1 else scale[:, None] * X


@dataclass
class HierState:
    x: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.theta) <= 0):
            raise ValueError("all theta must be strictly positive")


def objective(model, x, theta):
    """Negative log posterior of (x, theta), up to a constant."""
    r = model.b - model.op.apply(x)
    theta = np.asarray(theta, dtype=float)
    return float(
        0.5 * (r @ r) / model.sigma**2
        + 0.5 * np.sum(model.block_norms_sq(x) / theta)
        + np.sum(model.vartheta / theta)
        + np.sum(model.kappa * np.log(theta))
    )


def ias_x_update(model, theta, strategy="auto", solver="direct", ridge=0.0):
    """Minimizer of the x-part of the objective for fixed ``theta``.

    The unperturbed randomize-then-optimize solve of the theta-scaled
    standard-form model.
    """
    std = model.conditional_model(theta)
    strategy = resolve_strategy(std, strategy)
    eta, nu = np.zeros(std.m), np.zeros(std.n)
    if strategy == "adjoint":
        xt = split_draw_adjoint(std, eta, nu, solver=solver, ridge=ridge).x
    else:
        xt = rto_draw_normal(std, eta, nu, solver=solver)
    return std.to_original(xt)


def ias_theta_update(x, model):
    """Closed-form theta_l = (||x_l||^2 / 2 + vartheta_l) / (beta + 1 + n_l / 2)."""
    return (0.5 * model.block_norms_sq(x) + model.vartheta) / model.kappa


@dataclass
class IasResult:
    state: HierState
    converged: bool
    iterations: int
    objective: list = field(default_factory=list)

    @property
    def x(self):
        return self.state.x

    @property
    def theta(self):
        return self.state.theta


def ias_map(model, tol=1e-6, max_iter=200, **solver_kw):
    """Iterative alternating sequential MAP estimate starting from theta = vartheta.

    Stops when the relative change of the concatenated (x, theta) falls below
    ``tol``.  The objective is checked after every half-step and must not
    increase.
    """
    theta = model.vartheta.copy()
    x = np.zeros(model.n)
    obj = [objective(model, x, theta)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        old = np.concatenate([x, theta])
        x = ias_x_update(model, theta, **solver_kw)
        _check_descent(obj, objective(model, x, theta))
        theta = ias_theta_update(x, model)
        _check_descent(obj, objective(model, x, theta))
        new = np.concatenate([x, theta])
        if np.linalg.norm(new - old) <= tol * np.linalg.norm(new):
            converged = True
            break
    return IasResult(HierState(x, theta), converged, it, obj)


def _check_descent(history, value):
    prev = history[-1]
    if value > prev + 1e-10 * max(1.0, abs(prev)):
        raise RuntimeError(f"IAS objective increased from {prev!r} to {value!r}")
    history.append(value)


def draw_inverse_gamma(shape, scale, rng, size=None):
    """InverseGamma(shape, scale) draws, density proportional to t^(-shape-1) exp(-scale/t).

    ``rng`` is a numpy Generator (or an ``Rng``, whose sequential stream is used).
    """
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(shape <= 0) or np.any(scale <= 0):
        raise ValueError("shape and scale must be positive")
    gen = rng if isinstance(rng, np.random.Generator) else as_rng(rng).generator()
    return scale / gen.gamma(shape, 1.0, size=size)


@dataclass
class GibbsChain:
    theta: np.ndarray  # (T, L)
    x_snapshots: np.ndarray  # (n, number of kept snapshots)
    snapshot_iters: np.ndarray
    x_mean: np.ndarray
    seed: int
    burn_in: int = 0

    @property
    def T(self):
        return self.theta.shape[0]

    def theta_mean(self):
        return self.theta[self.burn_in:].mean(axis=0)

    def to_csv(self, path):
        L = self.theta.shape[1]
        rows = ([t] + list(self.theta[t]) for t in range(self.T))
        return write_csv(path, ["iteration"] + [f"theta{l}" for l in range(L)], rows)

    def snapshots_to_csv(self, path):
        n = self.x_snapshots.shape[0]
        rows = (
            [int(t)] + list(self.x_snapshots[:, k]) for k, t in enumerate(self.snapshot_iters)
        )
        return write_csv(path, ["iteration"] + [f"x{i}" for i in range(n)], rows)


def gibbs_sample(
    model, T, rng, burn_in=0, thin=0, strategy="auto", solver="direct", ridge=0.0, theta0=None
):
    """Block Gibbs sampler alternating x | theta and theta | x.

    Iteration ``t`` uses random stream ``t``: the Gaussian perturbations
    first, then one inverse-gamma draw per block with shape
    ``beta + n_l / 2`` and scale ``vartheta_l + ||x_l||^2 / 2``.  Every
    iteration builds and factorizes its own conditional model.

    ``thin > 0`` keeps every ``thin``-th x after burn-in; ``x_mean`` averages
    all post-burn-in x draws.
    """
    T = int(T)
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = as_rng(rng)
    theta = model.vartheta.copy() if theta0 is None else np.asarray(theta0, dtype=float).copy()
    shape = model.beta + model.sizes / 2.0
    thetas = np.empty((T, theta.size))
    snaps, snap_iters = [], []
    x_sum = np.zeros(model.n)
    for t in range(T):
        g = rng.stream(t)
        std = model.conditional_model(theta)
        nu = g.standard_normal(std.n)
        eta = g.standard_normal(std.m)
        xt, _ = solve_perturbed(std, eta[:, None], nu[:, None], strategy, solver, ridge)
        x = std.to_original(xt[:, 0])
        theta = draw_inverse_gamma(shape, model.vartheta + 0.5 * model.block_norms_sq(x), g)
        thetas[t] = theta
        if t >= burn_in:
            x_sum += x
            if thin and (t - burn_in) % thin == 0:
                snaps.append(x)
                snap_iters.append(t)
    kept = max(T - burn_in, 1)
    return GibbsChain(
        theta=thetas,
        x_snapshots=np.column_stack(snaps) if snaps else np.zeros((model.n, 0)),
        snapshot_iters=np.array(snap_iters, dtype=int),
        x_mean=x_sum / kept,
        seed=rng.seed,
        burn_in=int(burn_in),
    )
