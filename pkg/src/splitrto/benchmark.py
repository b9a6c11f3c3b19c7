"""Normal-equation vs adjoint-splitting timing table.

For every sample size the same perturbations are fed to both direct
samplers.  A timed run covers building the Gram matrix, factorizing it and
solving for all draws; generating the perturbations and forming the dense
standard-form operator are shared setup and stay outside the clock.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .linalg import DenseOperator
from .matio import write_csv
from .sampler import StandardFormModel, _AdjointDirect, _NormalDirect, as_rng, draw_perturbations

EQUIV_RTOL = 1e-8


class EquivalenceError(AssertionError):
    """The two samplers disagree, so timing them would be meaningless."""


@dataclass(frozen=True)
class BenchmarkRow:
    K: int
    t_normal: float
    t_adjoint: float

    CSV_HEADER = ("K", "t_normal", "t_adjoint", "ratio_percent")

    @property
    def ratio(self):
        return 100.0 * self.t_adjoint / self.t_normal

    def csv_row(self):
        return (self.K, self.t_normal, self.t_adjoint, self.ratio)


def _timed(engine_cls, model, E, N, **kw):
    t0 = time.perf_counter()
    X, _ = engine_cls(model, **kw).solve(E, N)
    return X, time.perf_counter() - t0


def check_equivalence(model, E, N, ridge=0.0, rtol=EQUIV_RTOL):
    Xn, _ = _NormalDirect(model).solve(E, N)
    Xa, _ = _AdjointDirect(model, ridge).solve(E, N)
    err = np.linalg.norm(Xa - Xn) / np.linalg.norm(Xn)
    if not err <= rtol:
        raise EquivalenceError(f"adjoint and normal draws differ by {err:.3e} (relative), limit {rtol:.1e}")
    return err


def benchmark(model, sizes, seed=0, repeats=1, ridge=0.0):
    """Time both direct samplers for each K in ``sizes``; returns BenchmarkRows.

    Requires ``m < n``.  Each size is preceded by an equivalence check on its
    first draws, and the full outputs are compared before the row is kept.
    Times are the minimum over ``repeats``.
    """
    if model.m >= model.n:
        raise ValueError(f"benchmark needs an underdetermined problem (m < n), got m={model.m}, n={model.n}")
    # densify once: this is problem construction, not sampling
    model = StandardFormModel(DenseOperator(model.op.to_dense()), model.b)
    rng = as_rng(seed)
    rows = []
    for K in sizes:
        K = int(K)
        E, N = draw_perturbations(rng, model.m, model.n, 0, K)
        pilot = min(K, 32)
        check_equivalence(model, E[:, :pilot], N[:, :pilot], ridge)
        tn, ta = np.inf, np.inf
        for _ in range(int(repeats)):
            Xn, t = _timed(_NormalDirect, model, E, N)
            tn = min(tn, t)
            Xa, t = _timed(_AdjointDirect, model, E, N, ridge=ridge)
            ta = min(ta, t)
        err = np.linalg.norm(Xa - Xn) / np.linalg.norm(Xn)
        if not err <= EQUIV_RTOL:
            raise EquivalenceError(f"K={K}: draws differ by {err:.3e} (relative)")
        rows.append(BenchmarkRow(K, tn, ta))
    return rows


def rows_to_csv(path, rows):
    return write_csv(path, BenchmarkRow.CSV_HEADER, (r.csv_row() for r in rows))


def format_table(rows):
    lines = [f"{'K':>8} {'t_normal [s]':>14} {'t_adjoint [s]':>14} {'ratio [%]':>10}"]
    lines += [f"{r.K:>8d} {r.t_normal:>14.4f} {r.t_adjoint:>14.4f} {r.ratio:>10.1f}" for r in rows]
    return "\n".join(lines)
