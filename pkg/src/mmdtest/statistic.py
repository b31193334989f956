"""The MMD normality statistic and kernel-scale rules."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy import linalg

from .kernel_core import GaussianParams, InternalInvariantError


class DegenerateDataError(ValueError):
    pass


ENGINES = ("moment_chisq", "gram_chisq", "spec_sum", "monte_carlo")


@dataclass(frozen=True)
class Dataset:
    """n x d observation matrix, rows are samples."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        if vals.ndim != 2:
            raise ValueError(f"data must be a 2-D array, got shape {vals.shape}")
        if vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"data must have at least one row and column, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("data contains NaN or infinite entries")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def _as_matrix(data) -> np.ndarray:
    return data.values if isinstance(data, Dataset) else Dataset(data).values


@dataclass(frozen=True)
class TestResult:
    statistic: float
    delta_sq: float
    n: int
    d: int
    sigma: float
    engine: str
    critical_value: float
    alpha: float
    p_value: float
    reject: bool
    seed: int | None = None

    __test__ = False  # keep pytest from collecting this

    def to_dict(self):
        return asdict(self)


def sample_moments(data) -> GaussianParams:
    """Sample mean and covariance with the 1/n divisor."""
    y = _as_matrix(data)
    mean = y.mean(axis=0)
    centred = y - mean
    cov = centred.T @ centred / y.shape[0]
    return GaussianParams(mean, cov, check=False)


def _chol_logdet(mat):
    try:
        chol = linalg.cholesky(mat, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise InternalInvariantError("I + c * covariance failed to factor") from exc
    return chol, 2.0 * np.sum(np.log(np.diag(chol)))


def pairwise_sq_dists(y: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", y, y)
    dist = sq[:, None] + sq[None, :] - 2.0 * (y @ y.T)
    np.maximum(dist, 0.0, out=dist)
    np.fill_diagonal(dist, 0.0)
    return dist


def raw_statistic(y: np.ndarray, sigma: float) -> float:
    """Unclamped Delta^2 for a validated (n, d) array."""
    n, d = y.shape
    mean = y.mean(axis=0)
    centred = y - mean
    # Distances from centred rows give the same kernel sum with less cancellation.
    kern_sum = np.exp(-sigma * pairwise_sq_dists(centred)).sum()
    cov = centred.T @ centred / n
    eye = np.eye(d)
    chol_v, logdet_v = _chol_logdet(eye + 2.0 * sigma * cov)
    _, logdet_w = _chol_logdet(eye + 4.0 * sigma * cov)
    z = linalg.solve_triangular(chol_v, centred.T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", z, z)
    embed_sum = np.exp(-sigma * maha).sum()
    return (
        kern_sum / (n * n)
        - 2.0 * np.exp(-0.5 * logdet_v) * embed_sum / n
        + np.exp(-0.5 * logdet_w)
    )


def mmd_sq_statistic(data, sigma: float) -> float:
    """Squared MMD between the empirical law and N(m_hat, S_hat), clamped at 0."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    y = _as_matrix(data)
    return max(float(raw_statistic(y, sigma)), 0.0)


def scaled_statistic(data, sigma: float) -> float:
    """n * Delta^2."""
    y = _as_matrix(data)
    return y.shape[0] * mmd_sq_statistic(y, sigma)


def bandwidth_median(data) -> float:
    """sigma = 1 / median of squared pairwise distances (lower-middle for even counts)."""
    y = _as_matrix(data)
    n = y.shape[0]
    if n < 2:
        raise DegenerateDataError("median heuristic needs at least two observations")
    dist = pairwise_sq_dists(y)[np.triu_indices(n, k=1)]
    k = (dist.size - 1) // 2
    med = np.partition(dist, k)[k]
    if med <= 0:
        raise DegenerateDataError("median pairwise distance is zero; data are (mostly) identical")
    return 1.0 / float(med)


def bandwidth_dim_power(d: int, exponent: float) -> float:
    """sigma = d ** -exponent."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return float(d) ** (-float(exponent))
