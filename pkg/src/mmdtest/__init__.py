"""Kernel (MMD) test of multivariate normality with a Gaussian kernel."""

__version__ = "0.1.0"

from .kernel_core import (
    EmbeddingContext,
    GaussianParams,
    KernelConfig,
    b_matrix,
    embed_gaussian,
    embedding_norm_sq,
    f_gram,
    f_inner,
    gaussian_kernel,
)
from .normality import kernel_normality_test
from .null_approx import (
    ChiSqFit,
    MomentPair,
    SpectralEstimate,
    approx_ii_fit,
    asymptotic_mean,
    asymptotic_variance,
    chisq_quantile,
    fit_chisq,
    gram_spectrum,
    monte_carlo_null,
    p_value,
    spec_quantile,
)
from .statistic import (
    Dataset,
    TestResult,
    bandwidth_dim_power,
    bandwidth_median,
    mmd_sq_statistic,
    sample_moments,
)
