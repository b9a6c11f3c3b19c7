"""Desk-scale test problems.

Pixel images are stored as arrays of shape (ny, nz) (horizontal index first)
and vectorized column-major, so pixel ``(iy, iz)`` has index ``iy + ny * iz``.
With that ordering the operator ``L_vert kron L_hor`` acts as
``X -> L_hor X L_vert^T``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .hier import BlockModel
from .linalg import KroneckerOperator, SparseOperator, identity, inverse_operator
from .sampler import Rng, as_rng
from .whitening import GeneralGaussianModel

logger = logging.getLogger(__name__)


def _generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return as_rng(rng).generator()


@dataclass(frozen=True)
class PixelGrid:
    ny: int
    nz: int
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if self.ny < 1 or self.nz < 1:
            raise ValueError("grid needs at least one pixel in each direction")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid extent must be positive")

    @property
    def n(self):
        return self.ny * self.nz

    @property
    def dy(self):
        return self.width / self.ny

    @property
    def dz(self):
        return self.height / self.nz

    def index(self, iy, iz):
        return iy + self.ny * iz

    def centers(self):
        """Pixel-centre coordinates (y, z), each of length n in vector order."""
        y = (np.arange(self.ny) + 0.5) * self.dy
        z = (np.arange(self.nz) + 0.5) * self.dz
        Y, Z = np.meshgrid(y, z, indexing="ij")
        return Y.ravel(order="F"), Z.ravel(order="F")

    def to_image(self, x):
        return np.asarray(x).reshape(self.ny, self.nz, order="F")


@dataclass
class RaySet:
    sources: np.ndarray  # (m, 2)
    receivers: np.ndarray  # (m, 2)
    pixels: list = field(repr=False)
    lengths: list = field(repr=False)

    @property
    def m(self):
        return len(self.sources)

    @property
    def chord_lengths(self):
        return np.linalg.norm(self.receivers - self.sources, axis=1)


def _crossings(p0, d, spacing, count):
    if d == 0.0:
        return np.empty(0)
    t = (np.arange(count + 1) * spacing - p0) / d
    return t[(t > 0.0) & (t < 1.0)]


def trace_ray(grid, p0, p1):
    """Exact intersection lengths of the segment p0 -> p1 with the pixels.

    Parametric slab traversal: the segment is cut at every grid line it
    crosses and each piece is attributed to the pixel containing its
    midpoint.  Pieces outside the grid are dropped.
    Returns ``(pixel_indices, lengths)`` with unique, sorted indices.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    total = float(np.hypot(*d))
    if total == 0.0:
        return np.empty(0, dtype=int), np.empty(0)
    t = np.concatenate(
        [[0.0, 1.0], _crossings(p0[0], d[0], grid.dy, grid.ny), _crossings(p0[1], d[1], grid.dz, grid.nz)]
    )
    t = np.unique(t)
    ta, tb = t[:-1], t[1:]
    mid = p0[None, :] + 0.5 * (ta + tb)[:, None] * d[None, :]
    seg = (tb - ta) * total
    inside = (
        (mid[:, 0] >= 0) & (mid[:, 0] <= grid.width) & (mid[:, 1] >= 0) & (mid[:, 1] <= grid.height) & (seg > 0)
    )
    mid, seg = mid[inside], seg[inside]
    iy = np.clip(np.floor(mid[:, 0] / grid.dy).astype(int), 0, grid.ny - 1)
    iz = np.clip(np.floor(mid[:, 1] / grid.dz).astype(int), 0, grid.nz - 1)
    idx = grid.index(iy, iz)
    pix, inv = np.unique(idx, return_inverse=True)
    lengths = np.zeros(pix.size)
    np.add.at(lengths, inv, seg)
    return pix, lengths


def build_crossborehole(grid, n_src, n_rcv):
    """Straight-ray cross-borehole operator.

    Sources sit on the left edge (y = 0) and receivers on the right edge
    (y = width), equally spaced at heights ``(k + 0.5) * height / count``.
    Row ``s * n_rcv + r`` holds the ray from source ``s`` to receiver ``r``.
    """
    if n_src < 1 or n_rcv < 1:
        raise ValueError("need at least one source and one receiver")
    zs = (np.arange(n_src) + 0.5) * grid.height / n_src
    zr = (np.arange(n_rcv) + 0.5) * grid.height / n_rcv
    src = np.array([(0.0, z) for z in zs for _ in zr])
    rcv = np.array([(grid.width, z) for _ in zs for z in zr])
    rows, cols, vals, pix_list, len_list = [], [], [], [], []
    for k in range(len(src)):
        pix, lens = trace_ray(grid, src[k], rcv[k])
        rows.append(np.full(pix.size, k))
        cols.append(pix)
        vals.append(lens)
        pix_list.append(pix)
        len_list.append(lens)
    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(src), grid.n)
    )
    return SparseOperator(A), RaySet(src, rcv, pix_list, len_list)


def second_difference(n, lam=np.inf):
    """``tridiag(-1, 2, -1) + lam^{-2} I`` (Dirichlet closure), sparse n x n."""
    shift = 0.0 if np.isinf(lam) else lam**-2.0
    return sp.diags(
        [-np.ones(n - 1), (2.0 + shift) * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csc"
    )


@dataclass(frozen=True)
class WhittleMaternPrior:
    """Prior ``L X = W``, ``W ~ N(0, gamma^2 I)`` with ``L = L_vert kron L_hor``."""

    grid: PixelGrid
    lam_y: float
    lam_z: float
    gamma: float

    def __post_init__(self):
        if min(self.lam_y, self.lam_z, self.gamma) <= 0:
            raise ValueError("correlation lengths and gamma must be positive")

    @property
    def L_hor(self):
        return second_difference(self.grid.ny, self.lam_y)

    @property
    def L_vert(self):
        return second_difference(self.grid.nz, self.lam_z)

    @property
    def operator(self):
        return KroneckerOperator(SparseOperator(self.L_vert), SparseOperator(self.L_hor))

    @property
    def precision_factor(self):
        """``L / gamma``, so that the prior precision is ``L^T L / gamma^2``."""
        return KroneckerOperator(SparseOperator(self.L_vert / self.gamma), SparseOperator(self.L_hor))

    def marginal_std(self):
        """Prior standard deviation of every pixel, from the factor-wise inverse Gram matrices."""
        dv = np.diag(np.linalg.inv((self.L_vert.T @ self.L_vert).toarray()))
        dh = np.diag(np.linalg.inv((self.L_hor.T @ self.L_hor).toarray()))
        return self.gamma * np.sqrt(np.kron(dv, dh))

    def draw(self, K, rng):
        """``K`` prior draws as columns (n x K)."""
        W = _generator(rng).standard_normal((self.grid.n, int(K)))
        return inverse_operator(self.operator).apply(self.gamma * W)


def whittle_matern(grid, lam_y, lam_z, gamma):
    return WhittleMaternPrior(grid, float(lam_y), float(lam_z), float(gamma))


def graph_first_difference(edges, n_interior, alpha=1.0):
    """Scaled first-difference matrix of a graph, one row per edge.

    Node ids ``< n_interior`` are unknowns; larger ids are boundary nodes
    with known value zero.  An interior-interior edge (i, j) gives the row
    ``alpha (e_i - e_j)``; an edge with one boundary end gives a single
    ``+-alpha`` entry; boundary-boundary edges are dropped.
    """
    rows, cols, vals = [], [], []
    p = 0
    for i, j in edges:
        i, j = int(i), int(j)
        if i < 0 or j < 0 or i == j:
            raise ValueError(f"invalid edge ({i}, {j})")
        ii, ji = i < n_interior, j < n_interior
        if not (ii or ji):
            continue
        if ii:
            rows.append(p), cols.append(i), vals.append(alpha)
        if ji:
            rows.append(p), cols.append(j), vals.append(-alpha)
        p += 1
    L = sp.csc_matrix((vals, (rows, cols)), shape=(p, n_interior))
    isolated = np.flatnonzero(np.diff(L.indptr) == 0)
    if isolated.size:
        warnings.warn(
            f"interior nodes {isolated.tolist()} touch no edge; L^T L is singular", RuntimeWarning, stacklevel=2
        )
    return SparseOperator(L)


def pixel_graph_edges(grid):
    """4-neighbour adjacency of the pixels plus one boundary node per outside face.

    Returns ``(edges, n_interior)`` for :func:`graph_first_difference`.
    """
    edges = []
    nxt = grid.n
    for iz in range(grid.nz):
        for iy in range(grid.ny):
            k = grid.index(iy, iz)
            if iy + 1 < grid.ny:
                edges.append((k, grid.index(iy + 1, iz)))
            if iz + 1 < grid.nz:
                edges.append((k, grid.index(iy, iz + 1)))
            faces = (iy == 0) + (iy == grid.ny - 1) + (iz == 0) + (iz == grid.nz - 1)
            for _ in range(faces):
                edges.append((k, nxt))
                nxt += 1
    return edges, grid.n


GRAPH_ALPHA = 0.05


def pixel_graph_prior(grid, alpha=GRAPH_ALPHA):
    """Graph first-difference prior factor on the pixel adjacency graph."""
    edges, n_interior = pixel_graph_edges(grid)
    return graph_first_difference(edges, n_interior, alpha)


def generate_data(op, x_true, noise_pct, rng):
    """Noisy data ``b = A x + e`` with ``std(e) = noise_pct * max |A x|``.

    Returns ``(b, sigma)``.
    """
    if noise_pct < 0:
        raise ValueError("noise_pct must be non-negative")
    clean = op.apply(np.asarray(x_true, dtype=float))
    sigma = float(noise_pct * np.max(np.abs(clean))) if clean.size else 0.0
    if sigma == 0.0:
        return clean, 0.0
    return clean + sigma * _generator(rng).standard_normal(clean.size), sigma


def synthetic_blocks(
    n_blocks, block_size, m, active, rng, noise_pct=0.005, beta=3.0, vartheta=1e-3, sigma_factor=1.0
):
    """Random dense lead-field blocks with one active block.

    Amplitudes in the active block are uniform on (-1, -0.5) u (0.5, 1) so
    they are clearly nonzero; every other block is exactly zero.  Returns
    ``(BlockModel, x_true)``; the model's ``sigma`` is the generative noise
    level times ``sigma_factor``.
    """
    if not 0 <= active < n_blocks:
        raise ValueError(f"active block {active} out of range for {n_blocks} blocks")
    g = _generator(rng)
    blocks = [g.standard_normal((m, block_size)) / np.sqrt(m) for _ in range(n_blocks)]
    x_true = np.zeros(n_blocks * block_size)
    amp = g.uniform(0.5, 1.0, block_size) * g.choice([-1.0, 1.0], block_size)
    x_true[active * block_size:(active + 1) * block_size] = amp
    A = np.hstack(blocks)
    b, sigma = generate_data(SparseOperator(sp.csc_matrix(A)), x_true, noise_pct, g)
    sigma = max(sigma, 1e-12) * sigma_factor
    return BlockModel(tuple(blocks), b, sigma, beta, vartheta), x_true


def crossborehole_truth(grid):
    """Layered medium with a smooth lateral trend and an inclined interface."""
    y, z = grid.centers()
    y = y / grid.width
    z = z / grid.height
    x = 0.3 * np.sin(2 * np.pi * y) * np.cos(np.pi * z)
    x += 1.0 * (z > 0.35 + 0.1 * y)
    x -= 0.6 * ((z > 0.65 - 0.05 * y) & (z < 0.8))
    return x


def quadratic_forward(A, Q, strength):
    """``F(g) = A g + strength * (Q g)^2`` (elementwise square)."""

    def forward(g):
        return A @ g + strength * (Q @ g) ** 2

    return forward


@dataclass
class Problem:
    name: str
    kind: str  # "gaussian", "hierarchical" or "pcn"
    model: object
    x_true: Optional[np.ndarray] = None
    grid: Optional[PixelGrid] = None
    sigma: Optional[float] = None
    extras: dict = field(default_factory=dict)
    forward: Optional[Callable] = None


def _crossborehole_problem(name, grid, n_src, n_rcv, lam_y, lam_z, gamma, seed, noise_pct, sigma_factor):
    A, rays = build_crossborehole(grid, n_src, n_rcv)
    prior = whittle_matern(grid, lam_y, lam_z, gamma)
    x_true = crossborehole_truth(grid) * float(np.mean(prior.marginal_std()))
    b, sigma = generate_data(A, x_true, noise_pct, Rng(seed, 1).generator())
    sigma = sigma * sigma_factor
    S = SparseOperator(sp.identity(A.rows, format="csc") / sigma)
    model = GeneralGaussianModel(A, b, prior_precision_factor=prior.precision_factor, noise_precision_factor=S)
    return Problem(name, "gaussian", model, x_true, grid, sigma, {"rays": rays, "prior": prior})


def crossborehole_paper(seed=0, noise_pct=0.005, sigma_factor=1.0):
    return _crossborehole_problem(
        "crossborehole-paper", PixelGrid(100, 200, 1.0, 2.0), 20, 20, 20.0, 10.0, 70.0, seed, noise_pct, sigma_factor
    )


def crossborehole_desk(seed=0, noise_pct=0.005, sigma_factor=1.0, n_rays=8):
    return _crossborehole_problem(
        "crossborehole-desk", PixelGrid(20, 40, 1.0, 2.0), n_rays, n_rays, 4.0, 2.0, 1.0, seed, noise_pct, sigma_factor
    )


def blocks_meg_toy(seed=0, active=None, noise_pct=0.005, beta=3.0, vartheta=1e-3, sigma_factor=1.0):
    g = Rng(seed, 2).generator()
    if active is None:
        active = int(g.integers(10))
    model, x_true = synthetic_blocks(10, 5, 20, active, g, noise_pct, beta, vartheta, sigma_factor)
    return Problem("blocks-meg-toy", "hierarchical", model, x_true, sigma=model.sigma, extras={"active": active})


def scalar(seed=0):
    """``b = x + e`` with ``b = 2``: posterior N(1, 1/2)."""
    model = GeneralGaussianModel(np.ones((1, 1)), [2.0], prior_precision_factor=identity(1))
    return Problem("scalar", "gaussian", model, np.array([1.0]))


def pcn_toy(seed=0, n=50, m=20, strength=0.2, noise_pct=0.01):
    """Quadratic perturbation of a random linear model with a 1-D smoothness prior.

    The Gaussian reference is the linearized posterior; ``Phi`` is the
    linearization error term.
    """
    g = Rng(seed, 3).generator()
    A = g.standard_normal((m, n)) / np.sqrt(n)
    Q = g.standard_normal((m, n)) / np.sqrt(n)
    forward = quadratic_forward(A, Q, strength)
    t = np.linspace(0, 1, n)
    x_true = np.sin(2 * np.pi * t) + 0.5 * np.cos(6 * np.pi * t)
    clean = forward(x_true)
    sigma = noise_pct * float(np.max(np.abs(clean)))
    b = clean + sigma * g.standard_normal(m)
    L = second_difference(n, lam=np.sqrt(n)) * n / 10.0
    model = GeneralGaussianModel(A / sigma, b / sigma, prior_precision_factor=SparseOperator(L))
    return Problem(
        "pcn-toy", "pcn", model, x_true, sigma=sigma,
        extras={"A": A / sigma, "r": b / sigma}, forward=lambda x: forward(x) / sigma,
    )


PRESETS = {
    "crossborehole-paper": crossborehole_paper,
    "crossborehole-desk": crossborehole_desk,
    "blocks-meg-toy": blocks_meg_toy,
    "scalar": scalar,
    "pcn-toy": pcn_toy,
}


def build_preset(name, seed=0, **kwargs):
    try:
        builder = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
    return builder(seed=seed, **kwargs)
