"""Randomize-then-optimize sampling of Gaussian linear inverse problems.

When the data space is much smaller than the unknown space, the sampler
splits the prior perturbation into a range(A^T) part and a null(A) part and
solves only m x m systems.
"""

__version__ = "0.1.0"

from .bidiag import KrylovConfig, KrylovStats, golub_kahan, solve_adjoint_krylov, solve_normal_krylov
from .hier import BlockModel, HierState, draw_inverse_gamma, gibbs_sample, ias_map, ias_theta_update, ias_x_update
from .linalg import (
    CompositeOperator,
    DenseOperator,
    DimensionError,
    KroneckerOperator,
    LinearOperator,
    NotPositiveDefiniteError,
    RankDeficientError,
    SingularOperatorError,
    SparseOperator,
    as_operator,
    cholesky_factor,
    dense_lstsq,
    identity,
    solve_spd,
)
from .mcmc import PcnChain, PcnTarget, pcn_chain, pcn_proposal_draw, pcn_step
from .sampler import (
    Rng,
    SampleBatch,
    StandardFormModel,
    posterior_covariance,
    posterior_direct,
    rto_draw_normal,
    sample,
    split_draw_adjoint,
    split_nu,
)
from .whitening import GeneralGaussianModel, closed_form_posterior, sample_general, transform_prior_model, whiten

__all__ = [name for name in dir() if not name.startswith("_")]
