"""Approximations to the asymptotic null law of n * Delta^2.

Under H0 the scaled statistic converges to Z = sum_l lambda_l Z_l^2. This
module provides:

* closed-form E[Z] and V[Z] for a Gaussian reference (``asymptotic_mean``,
  ``asymptotic_variance``) and the two-cumulant c * chi2_r fit;
* the Gram-matrix estimate of the lambda_l (``gram_spectrum``), used both
  for a second c * chi2_r fit and for direct simulation of sum lambda_l Z_l^2;
* the parametric-bootstrap Monte-Carlo null (``monte_carlo_null``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal, localcontext

import numpy as np
from scipy import linalg

from . import _special
from .kernel_core import EmbeddingContext, GaussianParams, InternalInvariantError, f_gram
from .statistic import raw_statistic


class NumericError(ArithmeticError):
    pass


DEFAULT_L_GRAM = 1000
DEFAULT_L_SPEC = 500
DEFAULT_SPEC_DRAWS = 10_000


@dataclass(frozen=True)
class MomentPair:
    e_z: float
    v_z: float


@dataclass(frozen=True)
class ChiSqFit:
    """c * chi2_r, i.e. Gamma(shape r/2, scale 2c)."""

    c: float
    r: float

    @property
    def mean(self) -> float:
        return self.c * self.r

    @property
    def variance(self) -> float:
        return 2.0 * self.c * self.c * self.r


@dataclass(frozen=True)
class SpectralEstimate:
    eigenvalues: np.ndarray  # descending, clamped at 0
    gram_trace: float
    gram_sq_trace: float
    l: int


# --------------------------------------------------------------------------
# seeding


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        raise ValueError("an explicit seed is required for reproducible simulation")
    return np.random.SeedSequence(int(seed))


def child_seed(seed, index: int) -> np.random.SeedSequence:
    """Deterministic substream ``index`` of ``seed`` (independent of spawn history)."""
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (int(index),))


def child_rng(seed, index: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, index))


def _parallel_map(fn, count, threads):
    if threads is None or threads <= 1 or count < 2:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


# --------------------------------------------------------------------------
# closed-form moments


def _solve_spd(mat, rhs, what):
    try:
        factor = linalg.cho_factor(mat, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise InternalInvariantError(f"Cholesky of {what} failed") from exc
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return linalg.cho_solve(factor, rhs, check_finite=False), logdet


def _logdet_spd(mat, what):
    try:
        chol = linalg.cholesky(mat, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise InternalInvariantError(f"Cholesky of {what} failed") from exc
    return 2.0 * np.sum(np.log(np.diag(chol)))


def _tr_prod(a, b):
    # tr(A B) without forming the product
    return float(np.sum(a * b.T))


def asymptotic_mean(params: GaussianParams, sigma: float) -> float:
    """E[Z] = sum of the null eigenvalues, in closed form."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    s0 = params.cov
    eye = np.eye(params.d)
    # V + 2 sigma S = 2V - I = I + 4 sigma S
    a, logdet_w = _solve_spd(eye + 4.0 * sigma * s0, s0, "I + 4 sigma S")
    t = float(np.trace(a))
    brace = 1.0 + 2.0 * sigma * t + 2.0 * sigma**2 * t * t + 4.0 * sigma**2 * _tr_prod(a, a)
    e_z = 1.0 - math.exp(-0.5 * logdet_w) * brace
    if e_z < _EXACT_BELOW:
        return _spectral_moments(params, sigma)[0]
    return e_z


def asymptotic_variance(params: GaussianParams, sigma: float) -> float:
    """V[Z] = 2 * sum of squared null eigenvalues, in closed form."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    s0 = params.cov
    eye = np.eye(params.d)
    s = sigma
    a_v, logdet_v = _solve_spd(eye + 2.0 * s * s0, s0, "V")
    a_6, logdet_6 = _solve_spd(eye + 6.0 * s * s0, s0, "V + 4 sigma S")
    a_w, logdet_w = _solve_spd(eye + 4.0 * s * s0, s0, "V + 2 sigma S")
    logdet_8 = _logdet_spd(eye + 8.0 * s * s0, "I + 8 sigma S")

    t_v = float(np.trace(a_v))
    t_6 = float(np.trace(a_6))
    a_w2 = a_w @ a_w
    t_w2 = float(np.trace(a_w2))
    t_w4 = _tr_prod(a_w2, a_w2)

    first = 2.0 * math.exp(-0.5 * logdet_8)
    brace_mid = (
        1.0
        + 0.5 * s**2 * t_v**2
        + s**2 * _tr_prod(a_v, a_v)
        + 0.5 * s**2 * t_6**2
        + s**2 * _tr_prod(a_6, a_6)
        + s * t_v
        - s * t_6
        - s**2 * t_v * t_6
    )
    middle = 4.0 * math.exp(-0.5 * (logdet_v + logdet_6)) * brace_mid
    brace_last = 1.0 + 8.0 * s**2 * t_w2 + 12.0 * s**4 * t_w2**2 + 24.0 * s**4 * t_w4
    last = 2.0 * math.exp(-logdet_w) * brace_last
    v_z = first - middle + last
    if v_z < _EXACT_BELOW:
        return _spectral_moments(params, sigma)[1]
    return v_z


# As sigma * ||S|| -> 0 both forms are O(1) terms cancelling down to
# E[Z] ~ (sigma lam)^3 and V[Z] ~ (sigma lam)^6. Small results are redone in
# the eigenbasis with enough decimal digits to absorb the cancellation.
_EXACT_BELOW = 1e-4


def _spectral_moments(params: GaussianParams, sigma: float) -> tuple[float, float]:
    lam = np.clip(np.linalg.eigvalsh(params.cov), 0.0, None)
    top = sigma * float(lam.max(initial=0.0))
    if top == 0.0:
        return 0.0, 0.0
    if top < 1e-50:
        # V[Z] ~ top^6 would underflow a double
        raise NumericError(f"sigma * ||S|| = {top:.3g} is too small to represent the null moments")
    digits = 30 + math.ceil(6.0 * max(0.0, -math.log10(top)))
    with localcontext() as ctx:
        ctx.prec = digits
        s = Decimal(sigma)
        ls = [Decimal(float(x)) for x in lam]
        one = Decimal(1)

        def det(c):
            out = one
            for x in ls:
                out *= one + c * s * x
            return out

        def traces(c):
            r = [x / (one + c * s * x) for x in ls]
            return sum(r), sum(x * x for x in r), sum(x**4 for x in r)

        tv, tv2, _ = traces(2)
        t6, t62, _ = traces(6)
        tw, tw2, tw4 = traces(4)
        d4 = det(4)
        e_z = one - (1 + 2 * s * tw + 2 * s * s * tw * tw + 4 * s * s * tw2) / d4.sqrt()
        mid = (
            one
            + s * s * (tv * tv / 2 + tv2 + t62 + t6 * t6 / 2 - tv * t6)
            + s * (tv - t6)
        )
        last = one + 8 * s * s * tw2 + 12 * s**4 * tw2 * tw2 + 24 * s**4 * tw4
        v_z = 2 / det(8).sqrt() - 4 * mid / (det(2) * det(6)).sqrt() + 2 * last / d4
        return float(e_z), float(v_z)


def null_moments(params: GaussianParams, sigma: float) -> MomentPair:
    if not np.any(params.cov):
        return MomentPair(0.0, 0.0)
    e_z = asymptotic_mean(params, sigma)
    v_z = asymptotic_variance(params, sigma)
    # Cauchy-Schwarz for nonnegative eigenvalues; small slack for roundoff.
    if v_z > 2.0 * e_z * e_z * (1.0 + 1e-9) + 1e-12:
        raise NumericError(f"moment pair violates V[Z] <= 2 E[Z]^2 (E={e_z}, V={v_z})")
    return MomentPair(e_z, v_z)


# --------------------------------------------------------------------------
# c * chi2_r


def fit_chisq(moments: MomentPair) -> ChiSqFit:
    """Match mean and variance of c * chi2_r to (E[Z], V[Z])."""
    e_z, v_z = moments.e_z, moments.v_z
    if not (e_z > 0 and v_z > 0):
        raise ValueError(f"moments must be positive, got E={e_z}, V={v_z}")
    return ChiSqFit(c=v_z / (2.0 * e_z), r=2.0 * e_z * e_z / v_z)


def chisq_quantile(fit: ChiSqFit, alpha: float) -> float:
    """Upper-alpha point t with P(c * chi2_r >= t) = alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    try:
        x = _special.gammainc_upper_inv(0.5 * fit.r, alpha)
    except _special.ConvergenceError as exc:
        raise NumericError(str(exc)) from exc
    return 2.0 * fit.c * x


def p_value(fit: ChiSqFit, statistic: float) -> float:
    """Upper tail of c * chi2_r at ``statistic``."""
    if not math.isfinite(statistic):
        raise ValueError("statistic must be finite")
    if statistic <= 0:
        return 1.0
    return _special.gammainc_upper(0.5 * fit.r, statistic / (2.0 * fit.c))


def moment_fit(params: GaussianParams, sigma: float) -> ChiSqFit:
    """Moment fit: c * chi2_r matched to the closed-form E[Z] and V[Z]."""
    return fit_chisq(null_moments(params, sigma))


# --------------------------------------------------------------------------
# Gram-matrix spectrum


def sample_gaussian(params: GaussianParams, n: int, rng: np.random.Generator) -> np.ndarray:
    return params.mean + rng.standard_normal((n, params.d)) @ cov_root(params.cov).T


def cov_root(cov: np.ndarray) -> np.ndarray:
    """A factor L with L L^T = cov; Cholesky, or the PSD square root if singular."""
    try:
        return linalg.cholesky(cov, lower=True, check_finite=False)
    except linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def gram_spectrum(reference: GaussianParams, sigma: float, l: int, rng: np.random.Generator) -> SpectralEstimate:
    """Eigenvalues, trace and trace of the square of G_L = [<f(X_i), f(X_j)>] / L."""
    if l < 2:
        raise ValueError(f"l must be >= 2, got {l}")
    xs = sample_gaussian(reference, l, rng)
    ctx = EmbeddingContext.build(reference, sigma)
    gram = f_gram(ctx, xs) / l
    trace = float(np.trace(gram))
    sq_trace = float(np.sum(gram * gram))
    eig = np.linalg.eigvalsh(gram)[::-1]
    top = max(eig[0], 0.0)
    if eig[-1] < -1e-8 * top:
        raise NumericError(f"Gram matrix has eigenvalue {eig[-1]:.3g} below the PSD audit threshold")
    if not math.isclose(float(eig.sum()), trace, rel_tol=1e-9, abs_tol=1e-12):
        raise NumericError("Gram eigenvalues do not sum to its trace")
    return SpectralEstimate(np.clip(eig, 0.0, None), trace, sq_trace, l)


def approx_ii_fit(spec: SpectralEstimate) -> ChiSqFit:
    """Gram fit: c * chi2_r matched to tr G_L and 2 tr G_L^2."""
    return fit_chisq(MomentPair(spec.gram_trace, 2.0 * spec.gram_sq_trace))


def upper_quantile(sorted_values: np.ndarray, alpha: float) -> float:
    """Order statistic at 1-based index ceil((1 - alpha) N) of a sorted sample."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = len(sorted_values)
    # round() guards against (1 - alpha) * n landing a hair above an integer
    idx = math.ceil(round((1.0 - alpha) * n, 9))
    return float(sorted_values[min(max(idx, 1), n) - 1])


def spec_draws(spec: SpectralEstimate, draws: int, rng: np.random.Generator, chunk: int = 2000) -> np.ndarray:
    """Sorted draws of sum_l lambda_l Z_l^2."""
    lam = np.asarray(spec.eigenvalues, dtype=float)
    out = np.empty(draws)
    for start in range(0, draws, chunk):
        stop = min(start + chunk, draws)
        z = rng.standard_normal((stop - start, lam.size))
        out[start:stop] = (z * z) @ lam
    out.sort()
    return out


def spec_quantile(spec: SpectralEstimate, alpha: float, draws: int, rng: np.random.Generator) -> float:
    """Empirical upper-alpha point of sum_l lambda_l Z_l^2."""
    if draws < 1000:
        raise ValueError(f"draws must be >= 1000, got {draws}")
    return upper_quantile(spec_draws(spec, draws, rng), alpha)


# --------------------------------------------------------------------------
# Monte-Carlo null


def monte_carlo_null(
    reference: GaussianParams,
    n: int,
    sigma: float,
    iterations: int,
    seed,
    threads: int = 1,
) -> np.ndarray:
    """Sorted parametric-bootstrap draws of n * Delta^2 under N(m, S).

    Replication ``i`` uses substream ``i`` of ``seed``, so the result does
    not depend on ``threads``.
    """
    if iterations < 100:
        raise ValueError(f"iterations must be >= 100, got {iterations}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    root = cov_root(reference.cov)
    mean = reference.mean

    def one(i):
        z = child_rng(seed, i).standard_normal((n, reference.d))
        return n * max(float(raw_statistic(mean + z @ root.T, sigma)), 0.0)

    values = np.array(_parallel_map(one, iterations, threads))
    values.sort()
    return values


def empirical_p_value(sorted_values: np.ndarray, statistic: float) -> float:
    """(1 + #{sims >= stat}) / (N + 1)."""
    count = len(sorted_values) - np.searchsorted(sorted_values, statistic, side="left")
    return (1.0 + count) / (len(sorted_values) + 1.0)
