"""Randomize-then-optimize sampling of standard-form Gaussian posteriors.

The model is ``b = A x + e`` with ``x ~ N(0, I_n)`` and ``e ~ N(0, I_m)``, so
the posterior is ``N(mu, C)`` with ``C = (A^T A + I)^{-1}`` and
``mu = C A^T b``.  A draw is obtained by perturbing data and prior mean,
``eta ~ N(0, I_m)``, ``nu ~ N(0, I_n)``, and solving

    (A^T A + I) x = A^T (b + eta) + nu                         (normal path)

When ``m < n`` the same ``x`` follows from two m x m systems (adjoint path):
split ``nu = A^T delta + h`` with ``A A^T delta = A nu`` and ``h`` in null(A),
solve ``(A A^T + I) z = b + eta + delta`` and set ``x = A^T z + h``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bidiag import KrylovConfig, solve_adjoint_krylov, solve_normal_krylov
from .linalg import (
    LinearOperator,
    NotPositiveDefiniteError,
    as_operator,
    cholesky_factor,
    solve_spd,
)
from .matio import write_csv, write_matrix

logger = logging.getLogger(__name__)

DIRECT_CAP = 2000
STRATEGIES = ("auto", "normal", "adjoint", "direct")
SOLVERS = ("direct", "krylov")


class SingularGramError(NotPositiveDefiniteError):
    """``A A^T`` could not be factorized; the operator is (numerically) row-rank deficient."""


@dataclass(frozen=True)
class StandardFormModel:
    op: LinearOperator
    b: np.ndarray
    back_transform: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "op", as_operator(self.op))
        b = np.array(self.b, dtype=float).reshape(-1)
        if b.shape != (self.op.rows,):
            raise ValueError(f"data vector has length {b.size}, operator has {self.op.rows} rows")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def m(self):
        return self.op.rows

    @property
    def n(self):
        return self.op.cols

    def to_original(self, x):
        """Map standard-form draws (vector or columns) to original coordinates."""
        return x if self.back_transform is None else self.back_transform(x)


@dataclass(frozen=True)
class Rng:
    """Seeded source of independent, reproducible random streams.

    ``stream(j)`` is the stream that feeds draw ``j``; it depends only on
    ``(seed, stream_id, j)``.
    """

    seed: int
    stream_id: int = 0

    def stream(self, index):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), int(index)))
        return np.random.Generator(np.random.PCG64(ss))

    def generator(self):
        """A single sequential stream, for chains and other one-off uses."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream_id):
        return Rng(self.seed, stream_id)


def as_rng(rng):
    return rng if isinstance(rng, Rng) else Rng(int(rng))


def draw_perturbations(rng, m, n, start, count):
    """Perturbations for draws ``start .. start+count-1``.

    Each draw takes ``nu`` (length n) and then ``eta`` (length m) from its own
    stream.  Returns ``(E, N)`` with shapes (m, count) and (n, count).
    """
    E = np.empty((m, count))
    N = np.empty((n, count))
    for j in range(count):
        g = rng.stream(start + j)
        N[:, j] = g.standard_normal(n)
        E[:, j] = g.standard_normal(m)
    return E, N


@dataclass
class SplitDraw:
    eta: np.ndarray
    nu: np.ndarray
    delta: np.ndarray
    h: np.ndarray
    z: np.ndarray
    x: np.ndarray


@dataclass
class DrawStats:
    index: int
    strategy: str
    solver: str
    steps: int = 0
    residual: float = float("nan")

    CSV_HEADER = ("draw", "strategy", "solver", "steps", "residual")

    def csv_row(self):
        return (self.index, self.strategy, self.solver, self.steps, float(self.residual))


@dataclass
class SampleBatch:
    """K posterior draws stored as the columns of ``draws`` (n x K)."""

    draws: np.ndarray
    seed: int
    strategy: str
    solver: str = "direct"
    per_draw_stats: list = field(default_factory=list)
    stream_id: int = 0

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[1] < 1:
            raise ValueError("a batch needs at least one draw")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("batch contains non-finite draws")

    @property
    def K(self):
        return self.draws.shape[1]

    @property
    def n(self):
        return self.draws.shape[0]

    def mean(self):
        return self.draws.mean(axis=1)

    def cov(self):
        return np.atleast_2d(np.cov(self.draws))

    def summary(self):
        """Per-coordinate mean, standard deviation and quartiles (linear interpolation)."""
        q = np.quantile(self.draws, [0.25, 0.5, 0.75], axis=1, method="linear")
        std = self.draws.std(axis=1, ddof=1) if self.K > 1 else np.zeros(self.n)
        return {"mean": self.mean(), "std": std, "q25": q[0], "q50": q[1], "q75": q[2]}

    def to_csv(self, path):
        """One draw per row: ``draw, x0, x1, ...``."""
        header = ["draw"] + [f"x{i}" for i in range(self.n)]
        rows = ([j] + list(self.draws[:, j]) for j in range(self.K))
        return write_csv(path, header, rows)

    def summary_to_csv(self, path):
        s = self.summary()
        keys = ("mean", "std", "q25", "q50", "q75")
        rows = ([i] + [s[k][i] for k in keys] for i in range(self.n))
        return write_csv(path, ["coordinate", *keys], rows)

    def stats_to_csv(self, path):
        return write_csv(path, DrawStats.CSV_HEADER, (s.csv_row() for s in self.per_draw_stats))

    def write_matrix(self, path, binary=None):
        return write_matrix(path, self.draws, binary=binary)


def _check_dims(model, eta, nu):
    eta = np.asarray(eta, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if eta.shape[0] != model.m or nu.shape[0] != model.n:
        raise ValueError(
            f"perturbations must have lengths ({model.m}, {model.n}), got ({eta.shape[0]}, {nu.shape[0]})"
        )
    return eta, nu


def _dense(model, cap=None):
    if cap is not None and model.n > cap:
        raise ValueError(f"n = {model.n} exceeds the dense cap of {cap}")
    return model.op.to_dense()


def _gram_factor(G, ridge):
    try:
        return cholesky_factor(G + ridge * np.eye(G.shape[0]) if ridge else G)
    except NotPositiveDefiniteError as exc:
        suggestion = 1e-12 * np.trace(G)
        raise SingularGramError(
            exc.pivot,
            f"A A^T is not positive definite (pivot {exc.pivot}); pass ridge > 0, "
            f"e.g. ridge={suggestion:.3g} (1e-12 * ||A||_F^2)",
        ) from exc


class _NormalDirect:
    def __init__(self, model):
        self.model = model
        A = _dense(model)
        self.A = A
        self.factor = cholesky_factor(A.T @ A + np.eye(model.n))

    def solve(self, E, N):
        rhs = self.A.T @ (self.model.b[:, None] + E) + N
        return solve_spd(self.factor, rhs), [(0, float("nan"))] * E.shape[1]


class _AdjointDirect:
    def __init__(self, model, ridge=0.0):
        if model.m > model.n:
            raise ValueError(f"adjoint splitting needs m <= n, got m={model.m}, n={model.n}")
        self.model = model
        A = _dense(model)
        self.A = A
        G = A @ A.T
        self.split_factor = _gram_factor(G, ridge)
        self.factor = cholesky_factor(G + np.eye(model.m))

    def split(self, N):
        D = solve_spd(self.split_factor, self.A @ N)
        return D, N - self.A.T @ D

    def solve(self, E, N):
        D = solve_spd(self.split_factor, self.A @ N)
        Z = solve_spd(self.factor, self.model.b[:, None] + E + D)
        # A^T z + h with h = nu - A^T delta, using one product with A^T
        return self.A.T @ (Z - D) + N, [(0, float("nan"))] * E.shape[1]


class _PosteriorDirect:
    def __init__(self, model, cap=DIRECT_CAP):
        self.model = model
        self.mu, self.factor = posterior_direct(model, cap)
        self.A = _dense(model)

    def solve(self, E, N):
        dev = solve_spd(self.factor, self.A.T @ E + N)
        return self.mu[:, None] + dev, [(0, float("nan"))] * E.shape[1]


def _adjoint_krylov_or_zero(op, rhs, mu, cfg):
    if not np.any(rhs):
        return np.zeros(op.rows), None
    return solve_adjoint_krylov(op, rhs, mu, cfg)


class _NormalKrylov:
    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg or KrylovConfig()

    def solve_one(self, eta, nu):
        # x = nu + x' where (A^T A + I) x' = A^T (b + eta - A nu)
        op = self.model.op
        rhs = self.model.b + eta - op._matvec(nu)
        if not np.any(rhs):
            return nu.copy(), (0, 0.0)
        xp, st = solve_normal_krylov(op, rhs, 1.0, self.cfg)
        return nu + xp, (st.steps, st.residual)

    def solve(self, E, N):
        out = np.empty_like(N)
        stats = []
        for j in range(E.shape[1]):
            out[:, j], s = self.solve_one(E[:, j], N[:, j])
            stats.append(s)
        return out, stats


class _AdjointKrylov(_NormalKrylov):
    def __init__(self, model, cfg, ridge=0.0):
        if model.m > model.n:
            raise ValueError(f"adjoint splitting needs m <= n, got m={model.m}, n={model.n}")
        super().__init__(model, cfg)
        self.ridge = ridge

    def split_one(self, nu):
        op = self.model.op
        delta, st = _adjoint_krylov_or_zero(op, op._matvec(nu), self.ridge, self.cfg)
        return delta, nu - op._rmatvec(delta), st

    def draw_one(self, eta, nu):
        op = self.model.op
        delta, h, st1 = self.split_one(nu)
        z, st2 = _adjoint_krylov_or_zero(op, self.model.b + eta + delta, 1.0, self.cfg)
        x = op._rmatvec(z) + h
        steps = sum(s.steps for s in (st1, st2) if s is not None)
        res = max([s.residual for s in (st1, st2) if s is not None], default=0.0)
        return SplitDraw(eta, nu, delta, h, z, x), (steps, res)

    def solve_one(self, eta, nu):
        d, s = self.draw_one(eta, nu)
        return d.x, s


def resolve_strategy(model, strategy):
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if strategy == "auto":
        return "adjoint" if model.m < model.n else "normal"
    return strategy


def _engine(model, strategy, solver, ridge=0.0, cfg=None, cap=DIRECT_CAP):
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    if strategy == "direct":
        return _PosteriorDirect(model, cap)
    if strategy == "normal":
        return _NormalDirect(model) if solver == "direct" else _NormalKrylov(model, cfg)
    if strategy == "adjoint":
        return _AdjointDirect(model, ridge) if solver == "direct" else _AdjointKrylov(model, cfg, ridge)
    raise ValueError(f"unresolved strategy {strategy!r}")


def posterior_direct(model, cap=DIRECT_CAP):
    """Posterior mean and Cholesky factor of the precision ``A^T A + I``.

    Dense oracle: only allowed for ``n <= cap``.
    """
    A = _dense(model, cap)
    factor = cholesky_factor(A.T @ A + np.eye(model.n))
    mu = solve_spd(factor, A.T @ model.b)
    return mu, factor


def posterior_covariance(model, cap=DIRECT_CAP):
    _, factor = posterior_direct(model, cap)
    return solve_spd(factor, np.eye(model.n))


def rto_draw_normal(model, eta, nu, solver="direct", cfg=None):
    """Solve ``(A^T A + I) x = A^T (b + eta) + nu`` for one perturbation pair."""
    eta, nu = _check_dims(model, eta, nu)
    X, _ = _engine(model, "normal", solver, cfg=cfg).solve(eta[:, None], nu[:, None])
    return X[:, 0]


def split_nu(model, nu, solver="direct", ridge=0.0, cfg=None):
    """Split ``nu = A^T delta + h`` with ``h`` in the null space of ``A``.

    ``delta`` solves ``(A A^T + ridge I) delta = A nu``.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (model.n,):
        raise ValueError(f"nu must have length {model.n}")
    if solver == "direct":
        D, H = _AdjointDirect(model, ridge).split(nu[:, None])
        return D[:, 0], H[:, 0]
    delta, h, _ = _AdjointKrylov(model, cfg, ridge).split_one(nu)
    return delta, h


def split_draw_adjoint(model, eta, nu, solver="direct", ridge=0.0, cfg=None):
    """One draw through the adjoint path, exposing every intermediate vector."""
    eta, nu = _check_dims(model, eta, nu)
    if solver == "krylov":
        draw, _ = _AdjointKrylov(model, cfg, ridge).draw_one(eta, nu)
        return draw
    eng = _AdjointDirect(model, ridge)
    D, H = eng.split(nu[:, None])
    delta, h = D[:, 0], H[:, 0]
    z = solve_spd(eng.factor, model.b + eta + delta)
    return SplitDraw(eta=eta, nu=nu, delta=delta, h=h, z=z, x=eng.A.T @ z + h)


def solve_perturbed(model, E, N, strategy="auto", solver="direct", ridge=0.0, cfg=None, cap=DIRECT_CAP):
    """Draws in standard-form coordinates for given perturbation columns.

    Builds (and factorizes, for direct solvers) once, then solves every column.
    Returns ``(X, stats)`` where ``stats`` holds ``(steps, residual)`` per column.
    """
    strategy = resolve_strategy(model, strategy)
    return _engine(model, strategy, solver, ridge, cfg, cap).solve(np.asarray(E), np.asarray(N))


def sample(
    model,
    K,
    rng,
    strategy="auto",
    solver="direct",
    ridge=0.0,
    cfg=None,
    workers=1,
    chunk_size=256,
    cap=DIRECT_CAP,
):
    """Draw ``K`` independent posterior samples.

    ``strategy="auto"`` takes the adjoint path when ``m < n`` and the normal
    path otherwise; ``"direct"`` uses the closed-form posterior oracle.
    Direct solvers factorize once and reuse the factors for every draw.

    Draws are processed in chunks of ``chunk_size``; each draw has its own
    random stream, so the output does not depend on ``workers``.
    """
    K = int(K)
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = as_rng(rng)
    strategy = resolve_strategy(model, strategy)
    engine = _engine(model, strategy, solver, ridge, cfg, cap)
    starts = list(range(0, K, int(chunk_size)))

    def run(start):
        count = min(int(chunk_size), K - start)
        E, N = draw_perturbations(rng, model.m, model.n, start, count)
        return engine.solve(E, N)

    if workers and workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]

    X = np.concatenate([r[0] for r in results], axis=1)
    raw_stats = [s for r in results for s in r[1]]
    stats = [DrawStats(j, strategy, solver, int(st), float(res)) for j, (st, res) in enumerate(raw_stats)]
    return SampleBatch(
        draws=np.asarray(model.to_original(X)),
        seed=rng.seed,
        strategy=strategy,
        solver=solver,
        per_draw_stats=stats,
        stream_id=rng.stream_id,
    )
