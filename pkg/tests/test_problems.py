import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from splitrto.problems import (
    GRAPH_ALPHA,
    PRESETS,
    PixelGrid,
    build_crossborehole,
    build_preset,
    crossborehole_paper,
    generate_data,
    graph_first_difference,
    pixel_graph_edges,
    pixel_graph_prior,
    second_difference,
    synthetic_blocks,
    trace_ray,
    whittle_matern,
)
from splitrto.linalg import DenseOperator


def march(grid, p0, p1, step=1e-4):
    """Brute-force oracle: sample the chord at fine steps and bin by pixel."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    total = np.linalg.norm(p1 - p0)
    k = int(np.ceil(total / step))
    t = (np.arange(k) + 0.5) / k
    pts = p0 + t[:, None] * (p1 - p0)
    iy = np.clip((pts[:, 0] / grid.dy).astype(int), 0, grid.ny - 1)
    iz = np.clip((pts[:, 1] / grid.dz).astype(int), 0, grid.nz - 1)
    out = np.zeros(grid.n)
    np.add.at(out, grid.index(iy, iz), total / k)
    return out


def test_single_pixel_ray():
    grid = PixelGrid(1, 1, 1.5, 1.0)
    op, rays = build_crossborehole(grid, 1, 1)
    A = op.to_dense()
    assert A.shape == (1, 1)
    assert A[0, 0] == pytest.approx(1.5, rel=1e-14)


def test_center_ray_against_marcher():
    grid = PixelGrid(2, 2, 1.0, 1.0)
    op, _ = build_crossborehole(grid, 1, 1)
    row = op.to_dense()[0]
    # a ray along a grid line touches two pixel rows; either side is a valid attribution
    assert np.count_nonzero(row) == 2
    np.testing.assert_allclose(np.sort(row[row > 0]), [0.5, 0.5], rtol=1e-12)
    # off the grid line the marcher is unambiguous
    pix, lens = trace_ray(grid, (0.0, 0.5 + 1e-3), (1.0, 0.5 + 1e-3))
    dense = np.zeros(grid.n)
    dense[pix] = lens
    np.testing.assert_allclose(dense, march(grid, (0.0, 0.5 + 1e-3), (1.0, 0.5 + 1e-3)), atol=2e-4)


@pytest.mark.parametrize("p0,p1", [((0, 0.13), (1, 1.71)), ((0, 1.9), (1, 0.05)), ((0, 0.5), (1, 0.5))])
def test_oblique_rays_against_marcher(p0, p1):
    grid = PixelGrid(7, 11, 1.0, 2.0)
    pix, lens = trace_ray(grid, p0, p1)
    dense = np.zeros(grid.n)
    dense[pix] = lens
    np.testing.assert_allclose(dense, march(grid, p0, p1), atol=5e-4)


def test_row_sums_and_sign():
    grid = PixelGrid(13, 17, 1.0, 2.0)
    op, rays = build_crossborehole(grid, 6, 5)
    A = op.to_dense()
    assert A.shape == (30, grid.n)
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=1), rays.chord_lengths, rtol=1e-9)
    # row ordering: source-major
    np.testing.assert_array_equal(rays.sources[7], rays.sources[5])
    assert rays.receivers[7][1] == rays.receivers[2][1]


def test_paper_scale_dimensions():
    p = crossborehole_paper()
    assert p.model.op.shape == (400, 20000)
    assert p.model.op.rows / p.model.op.cols == pytest.approx(0.02)
    prior = p.extras["prior"]
    assert (prior.lam_y, prior.lam_z, prior.gamma) == (20.0, 10.0, 70.0)


def test_desk_preset_shape():
    p = build_preset("crossborehole-desk")
    assert p.model.op.shape == (64, 800)
    assert p.grid.ny == 20 and p.grid.nz == 40


def test_second_difference_limit():
    grid = PixelGrid(3, 3)
    prior = whittle_matern(grid, np.inf, np.inf, 1.0)
    D = np.diag([2.0] * 3) - np.eye(3, k=1) - np.eye(3, k=-1)
    np.testing.assert_array_equal(prior.operator.to_dense(), np.kron(D, D))
    shifted = second_difference(4, 2.0).toarray()
    np.testing.assert_allclose(np.diag(shifted), 2.25)


def test_prior_factors_spd():
    prior = whittle_matern(PixelGrid(5, 6), 3.0, 1.5, 2.0)
    for M in (prior.L_hor, prior.L_vert):
        assert np.all(np.linalg.eigvalsh(M.toarray()) > 0)
    with pytest.raises(ValueError):
        whittle_matern(PixelGrid(2, 2), 0.0, 1.0, 1.0)


def test_marginal_std_matches_dense():
    prior = whittle_matern(PixelGrid(4, 5), 2.0, 1.0, 3.0)
    L = prior.operator.to_dense()
    cov = prior.gamma**2 * np.linalg.inv(L.T @ L)
    np.testing.assert_allclose(prior.marginal_std(), np.sqrt(np.diag(cov)), rtol=1e-10)


def lag_corr(images, axis, lag):
    a = np.take(images, np.arange(images.shape[axis] - lag), axis=axis)
    b = np.take(images, np.arange(lag, images.shape[axis]), axis=axis)
    return np.mean(a * b) / np.sqrt(np.mean(a * a) * np.mean(b * b))


def test_prior_draw_anisotropy(rng):
    grid = PixelGrid(30, 30)
    prior = whittle_matern(grid, 8.0, 2.0, 1.0)
    X = prior.draw(400, rng)
    imgs = X.reshape(grid.ny, grid.nz, -1, order="F")
    assert lag_corr(imgs, 0, 5) > lag_corr(imgs, 1, 5) + 0.1
    std = prior.marginal_std()
    assert np.all(np.abs(X.mean(axis=1)) < 5 * std / np.sqrt(400))


def test_graph_path_example():
    # node 0 interior, boundary ids 1 and 2
    L = graph_first_difference([(1, 0), (0, 2)], 1).to_dense()
    assert sorted(L.ravel()) == [-1.0, 1.0]
    np.testing.assert_array_equal(L.T @ L, [[2.0]])


def test_graph_cycle_nullspace():
    L = graph_first_difference([(0, 1), (1, 2), (2, 3), (3, 0)], 4).to_dense()
    assert L.shape == (4, 4)
    s = np.linalg.svd(L, compute_uv=False)
    assert np.sum(s < 1e-12) == 1
    np.testing.assert_allclose(L @ np.ones(4), 0)


def test_graph_gram_is_laplacian(rng):
    n = 9
    edges = sorted({tuple(sorted(e)) for e in rng.integers(0, n + 3, (25, 2)) if e[0] != e[1]})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        L = graph_first_difference(edges, n, alpha=0.7).to_dense()
    lap = np.zeros((n, n))
    for i, j in edges:
        if i < n:
            lap[i, i] += 1
        if j < n:
            lap[j, j] += 1
        if i < n and j < n:
            lap[i, j] -= 1
            lap[j, i] -= 1
    np.testing.assert_allclose(L.T @ L, 0.49 * lap, atol=1e-14)


def test_graph_isolated_warning_and_validation():
    with pytest.warns(RuntimeWarning, match="interior nodes"):
        graph_first_difference([(0, 1)], 3)
    with pytest.raises(ValueError):
        graph_first_difference([(2, 2)], 3)


def test_pixel_graph_prior_is_full_rank():
    grid = PixelGrid(4, 3)
    L = pixel_graph_prior(grid)
    assert GRAPH_ALPHA == 0.05
    D = L.to_dense()
    assert set(np.unique(np.abs(D))) == {0.0, 0.05}
    assert np.linalg.matrix_rank(D) == grid.n
    edges, n_int = pixel_graph_edges(grid)
    assert n_int == grid.n and len(edges) == D.shape[0]


def test_synthetic_blocks(rng):
    model, x = synthetic_blocks(6, 4, 15, 2, rng, noise_pct=0.0)
    xs = x.reshape(6, 4)
    assert np.all(np.abs(xs[2]) >= 0.5) and np.all(xs[[0, 1, 3, 4, 5]] == 0)
    np.testing.assert_allclose(model.b, sum(B @ xb for B, xb in zip(model.blocks, xs)), rtol=1e-12)
    with pytest.raises(ValueError):
        synthetic_blocks(3, 2, 4, 3, rng)


def test_generate_data_noise(rng):
    A = DenseOperator(rng.standard_normal((5, 3)))
    x = rng.standard_normal(3)
    b, s = generate_data(A, x, 0.0, rng)
    assert s == 0.0
    np.testing.assert_array_equal(b, A.apply(x))
    b1, s1 = generate_data(A, x, 0.005, np.random.default_rng(4))
    b2, _ = generate_data(A, x, 0.005, np.random.default_rng(4))
    np.testing.assert_array_equal(b1, b2)
    assert s1 == pytest.approx(0.005 * np.max(np.abs(A.apply(x))))
    g = np.random.default_rng(9)
    res = np.array([generate_data(A, x, 0.005, g)[0] - A.apply(x) for _ in range(20_000)])
    assert res.std() == pytest.approx(s1, rel=0.01)
    with pytest.raises(ValueError):
        generate_data(A, x, -0.1, rng)


def test_presets_build_deterministically():
    for name in PRESETS:
        if name == "crossborehole-paper":
            continue
        a, b = build_preset(name, seed=3), build_preset(name, seed=3)
        np.testing.assert_array_equal(np.asarray(a.model.b), np.asarray(b.model.b))
    with pytest.raises(KeyError):
        build_preset("nope")


def test_meg_toy_active_block():
    p = build_preset("blocks-meg-toy", seed=1)
    k = p.extras["active"]
    xs = p.x_true.reshape(10, 5)
    assert np.all(xs[k] != 0) and np.count_nonzero(xs) == 5
