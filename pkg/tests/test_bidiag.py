import numpy as np
import pytest

from splitrto.bidiag import KrylovConfig, KrylovStats, golub_kahan, solve_adjoint_krylov, solve_normal_krylov
from splitrto.linalg import DenseOperator, identity

TIGHT = KrylovConfig(max_steps=200, tol=1e-12)


def test_identity_breaks_down_after_one_step():
    F = golub_kahan(identity(2), np.array([1.0, 0.0]), 1)
    assert F.steps == 1
    assert F.alphas[0] == 1.0
    assert F.betas[1] == 0.0
    assert F.breakdown


def _recurrence_residuals(A, F):
    U, V, B = F.U, F.V, F.B
    r1 = np.linalg.norm(A @ V - U @ B)
    e = np.zeros(F.steps + 1)
    e[-1] = 1.0
    r2 = np.linalg.norm(A.T @ U - V @ B.T - F.alpha_next * np.outer(F.v_next, e))
    return r1, r2


def test_diagonal_recurrence():
    A = np.diag([2.0, 3.0])
    b = np.array([1.0, 1.0])
    F = golub_kahan(DenseOperator(A), b, 1)
    assert F.betas[0] == pytest.approx(np.sqrt(2.0))
    np.testing.assert_allclose(F.betas[0] * F.U[:, 0], b)
    r1, r2 = _recurrence_residuals(A, F)
    assert r1 <= 1e-12 and r2 <= 1e-12


def test_orthogonality_random(rng):
    A = rng.standard_normal((30, 50))
    F = golub_kahan(DenseOperator(A), rng.standard_normal(30), 15)
    assert F.steps == 15 and not F.breakdown
    assert np.linalg.norm(F.U.T @ F.U - np.eye(16)) <= 1e-10
    assert np.linalg.norm(F.V.T @ F.V - np.eye(15)) <= 1e-10
    r1, r2 = _recurrence_residuals(A, F)
    normA = np.linalg.norm(A, 2)
    assert r1 <= 1e-10 * normA and r2 <= 1e-10 * normA


def test_krylov_space_property(rng):
    A = rng.standard_normal((8, 12))
    b = rng.standard_normal(8)
    F = golub_kahan(DenseOperator(A), b, 5)
    G = A @ A.T
    K = np.column_stack([np.linalg.matrix_power(G, j) @ b for j in range(5)])
    Q, _ = np.linalg.qr(K)
    for j in range(5):
        u = F.U[:, j]
        assert np.linalg.norm(u - Q @ (Q.T @ u)) <= 1e-8


def test_step_range_and_seed_errors(rng):
    A = DenseOperator(rng.standard_normal((4, 6)))
    with pytest.raises(ValueError):
        golub_kahan(A, np.ones(4), 4)
    with pytest.raises(ValueError):
        golub_kahan(A, np.ones(4), 0)
    with pytest.raises(ValueError):
        golub_kahan(A, np.zeros(4), 2)


def test_config_validation():
    for bad in (dict(max_steps=0), dict(tol=0.0), dict(tol=1.0), dict(reorth="partial"), dict(storage="two-pass")):
        with pytest.raises(ValueError):
            KrylovConfig(**bad)


def test_adjoint_identity(rng):
    b = rng.standard_normal(5)
    z, st = solve_adjoint_krylov(identity(5), b, 1.0)
    np.testing.assert_allclose(z, b / 2, rtol=1e-14)
    assert st.converged


def test_normal_identity(rng):
    b = rng.standard_normal(5)
    x, st = solve_normal_krylov(identity(5), b, 1.0)
    np.testing.assert_allclose(x, b / 2, rtol=1e-14)


def test_adjoint_matches_dense(rng):
    A = rng.standard_normal((5, 12))
    b = rng.standard_normal(5)
    z, st = solve_adjoint_krylov(DenseOperator(A), b, 1.0, TIGHT)
    zd = np.linalg.solve(A @ A.T + np.eye(5), b)
    assert np.linalg.norm(z - zd) <= 1e-8 * np.linalg.norm(zd)
    assert st.steps <= 5


def test_normal_matches_dense(rng):
    A = rng.standard_normal((12, 5))
    b = rng.standard_normal(12)
    x, st = solve_normal_krylov(DenseOperator(A), b, 1.0, TIGHT)
    xd = np.linalg.solve(A.T @ A + np.eye(5), A.T @ b)
    assert np.linalg.norm(x - xd) <= 1e-8 * np.linalg.norm(xd)


@pytest.mark.parametrize("mu", [1.0, 0.1, 3.0])
def test_adjoint_normal_consistency(rng, mu):
    A = rng.standard_normal((4, 20))
    b = rng.standard_normal(4)
    z, _ = solve_adjoint_krylov(DenseOperator(A), b, mu, TIGHT)
    x, _ = solve_normal_krylov(DenseOperator(A), b, mu, TIGHT)
    assert np.linalg.norm(A.T @ z - x) <= 1e-8 * np.linalg.norm(x)


def test_monotone_residual(rng):
    A = rng.standard_normal((30, 60)) * np.logspace(0, -2, 60)
    b = rng.standard_normal(30)
    for solver in (solve_adjoint_krylov, solve_normal_krylov):
        _, st = solver(DenseOperator(A), b, 1.0, KrylovConfig(max_steps=25, tol=1e-14))
        h = np.array(st.history)
        assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_residual_is_true_residual(rng):
    A = rng.standard_normal((10, 30))
    b = rng.standard_normal(10)
    z, st = solve_adjoint_krylov(DenseOperator(A), b, 1.0, KrylovConfig(max_steps=4, tol=1e-14))
    true = np.linalg.norm((A @ A.T + np.eye(10)) @ z - b) / np.linalg.norm(b)
    assert st.residual == pytest.approx(true, rel=1e-6)
    x, st = solve_normal_krylov(DenseOperator(A), b, 1.0, KrylovConfig(max_steps=4, tol=1e-14))
    true = np.linalg.norm((A.T @ A + np.eye(30)) @ x - A.T @ b) / np.linalg.norm(A.T @ b)
    assert st.residual == pytest.approx(true, rel=1e-6)


def test_no_reorth_matches_full_for_short_runs(rng):
    A = rng.standard_normal((20, 40)) / 6 + np.eye(20, 40)
    b = rng.standard_normal(20)
    for solver in (solve_adjoint_krylov, solve_normal_krylov):
        a, _ = solver(DenseOperator(A), b, 1.0, KrylovConfig(max_steps=10, tol=1e-14, reorth="full"))
        c, _ = solver(DenseOperator(A), b, 1.0, KrylovConfig(max_steps=10, tol=1e-14, reorth="none"))
        assert np.linalg.norm(a - c) <= 1e-8 * np.linalg.norm(a)


def test_nonconvergence_is_reported(rng, caplog):
    A = rng.standard_normal((30, 60)) * 10
    z, st = solve_adjoint_krylov(DenseOperator(A), rng.standard_normal(30), 1.0, KrylovConfig(max_steps=2, tol=1e-12))
    assert not st.converged and st.steps == 2
    assert "stopped" in caplog.text


def test_stats_csv_row():
    st = KrylovStats(steps=3, residual=1e-9, converged=True, breakdown=False)
    assert st.csv_row() == (3, 1e-9, 0)
    assert KrylovStats.CSV_HEADER == ("steps", "residual", "breakdown")


def test_rank_deficient_operator_exhausts_cleanly(rng):
    # A A^T is singular: the solvers still terminate with an exact solution for mu > 0
    A = np.outer(rng.standard_normal(6), rng.standard_normal(9))
    b = rng.standard_normal(6)
    z, st = solve_adjoint_krylov(DenseOperator(A), b, 1.0, TIGHT)
    zd = np.linalg.solve(A @ A.T + np.eye(6), b)
    np.testing.assert_allclose(z, zd, rtol=1e-10, atol=1e-12)
    assert st.breakdown
