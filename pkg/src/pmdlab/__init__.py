"""Poisson multinomial distributions: exact oracles, structural
decomposition into a block discretized Gaussian plus a small residual sum,
parameter covers, robust moment estimation, hypothesis selection, and
sample-based learners for the multivariate and integer-valued cases."""

from ._backend import BACKEND
from .core import (
    BlockGaussian,
    DecompositionConfig,
    ExactPmdHypothesis,
    GaussianBlock,
    GaussianPlusSparseHypothesis,
    GmdParams,
    Hypothesis,
    ParamMatrix,
    PmdError,
    SingularCovarianceError,
    SiirvFormHypothesis,
    SparsePmf,
    StructuralDecomposition,
    SupportCapError,
    TabulatedHypothesis,
    block_gaussian_pmf,
    block_gaussian_sample,
    block_gaussian_table,
    convolve,
    crv_covariance,
    discretized_gaussian_pmf,
    gmd_pmf_exact,
    hybrid_pmf_at,
    hybrid_pmf_table,
    kolmogorov_distance_1d,
    pmd_pmf_exact,
    pmd_sample,
    siirv_pmf_exact,
    tv_distance,
)
from .covers import (
    grid_cover_gaussian,
    grid_cover_sparse_pmd,
    moment_matching_cover,
    moment_profile,
    roos_approximator_pmf,
)
from .decomposition import TvLedger, decompose
from .estimation import (
    EmpiricalMoments,
    PsdCoverSpec,
    directional_error_check,
    empirical_moments,
    psd_cover,
)
from .learn import (
    LearnConfig,
    empirical_cdf_check,
    learn_heavy,
    learn_pmd,
    learn_siirv,
    learn_sparse,
    median_iqr_fit,
)
from .rounding import round_parameters
from .selection import (
    TOURNAMENT_FAILURE,
    fast_tournament,
    scheffe_compare,
    tournament_budget,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
