"""Data generators and the accuracy / power experiment harness."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import null_approx as na
from .kernel_core import GaussianParams
from .statistic import Dataset, raw_statistic, sample_moments

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "uniform_std", "exponential_std")
CORRELATIONS = ("independent", "banded_geometric")
ALPHAS = (0.1, 0.05, 0.01)
APPROX_ENGINES = ("moment_chisq", "gram_chisq", "spec_sum")


@dataclass(frozen=True)
class AlternativeSpec:
    family: str
    d: int
    correlation: str = "independent"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.correlation not in CORRELATIONS:
            raise ValueError(f"unknown correlation {self.correlation!r}; choose from {CORRELATIONS}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")


@dataclass
class AccuracyReport:
    d: int
    n: int
    sigma: float
    iterations: int
    reference: dict[float, float]
    quantiles: dict[str, dict[float, float]] = field(default_factory=dict)
    d_metric: dict[str, float] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)

    def to_dict(self, timing=False):
        out = {
            "d": self.d,
            "n": self.n,
            "sigma": self.sigma,
            "iterations": self.iterations,
            "alphas": list(ALPHAS),
            "reference": {str(a): v for a, v in self.reference.items()},
            "quantiles": {e: {str(a): v for a, v in q.items()} for e, q in self.quantiles.items()},
            "d_metric": dict(self.d_metric),
        }
        if timing:
            out["timing"] = dict(self.timing)
        return out


@dataclass
class PowerReport:
    family: str
    correlation: str
    d: int
    n: int
    sigma: float
    rejections: int
    replications: int
    threshold: float
    threshold_source: str
    sigma_rule: str = "explicit"

    @property
    def power(self) -> float:
        return self.rejections / self.replications

    def to_dict(self):
        return {
            "family": self.family,
            "correlation": self.correlation,
            "d": self.d,
            "n": self.n,
            "sigma": self.sigma,
            "sigma_rule": self.sigma_rule,
            "rejections": self.rejections,
            "replications": self.replications,
            "power": self.power,
            "threshold": self.threshold,
            "threshold_source": self.threshold_source,
        }


# --------------------------------------------------------------------------
# generators


def sample_mvn(params: GaussianParams, n: int, rng: np.random.Generator) -> Dataset:
    """n rows of m + L z, L L^T = cov (PSD root when cov is singular)."""
    return Dataset(na.sample_gaussian(params, n, rng))


def banded_correlation(d: int, decay: float = 0.5, bandwidth: int = 5) -> np.ndarray:
    """R_ij = decay^|i-j| for |i-j| <= bandwidth, else 0."""
    lag = np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
    return np.where(lag <= bandwidth, decay**lag, 0.0)


_ROOT_CACHE: dict[int, np.ndarray] = {}


def banded_root(d: int) -> np.ndarray:
    """Symmetric square root of the banded correlation matrix."""
    if d not in _ROOT_CACHE:
        r = banded_correlation(d)
        vals, vecs = np.linalg.eigh(r)
        if vals[0] < 0:
            log.warning("banded correlation for d=%d is indefinite (min eig %.3g); clamping", d, vals[0])
            vals = np.clip(vals, 0.0, None)
            r = (vecs * vals) @ vecs.T
            scale = 1.0 / np.sqrt(np.diag(r))
            r = r * np.outer(scale, scale)
            vals, vecs = np.linalg.eigh(r)
            vals = np.clip(vals, 0.0, None)
        _ROOT_CACHE[d] = (vecs * np.sqrt(vals)) @ vecs.T
    return _ROOT_CACHE[d]


def _standardized(family, shape, rng):
    if family == "gaussian":
        return rng.standard_normal(shape)
    if family == "uniform_std":
        return (rng.random(shape) - 0.5) * math.sqrt(12.0)
    return rng.standard_exponential(shape) - 1.0


def sample_alternative(spec: AlternativeSpec, n: int, rng: np.random.Generator) -> Dataset:
    """n draws with mean 0 and covariance I (independent) or R (banded)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    z = _standardized(spec.family, (n, spec.d), rng)
    if spec.correlation == "banded_geometric":
        z = z @ banded_root(spec.d).T
    return Dataset(z)


# --------------------------------------------------------------------------
# experiments


def _median_time(fn, repeats=3):
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, float(np.median(times))


def engine_quantiles(engine, params, sigma, alphas, seed, l_ii, l_spec, spec_draws):
    """Critical points of one approximation engine for reference N(m, S)."""
    if engine == "moment_chisq":
        fit = na.moment_fit(params, sigma)
        return {a: na.chisq_quantile(fit, a) for a in alphas}
    if engine == "gram_chisq":
        spec = na.gram_spectrum(params, sigma, l_ii, na.child_rng(seed, 0))
        fit = na.approx_ii_fit(spec)
        return {a: na.chisq_quantile(fit, a) for a in alphas}
    if engine == "spec_sum":
        spec = na.gram_spectrum(params, sigma, l_spec, na.child_rng(seed, 0))
        draws = na.spec_draws(spec, spec_draws, na.child_rng(seed, 1))
        return {a: na.upper_quantile(draws, a) for a in alphas}
    raise ValueError(f"unknown approximation engine {engine!r}; choose from {APPROX_ENGINES}")


def accuracy_experiment(
    d: int,
    n: int,
    sigma: float,
    engines=APPROX_ENGINES,
    iterations: int = 2000,
    l_ii: int = na.DEFAULT_L_GRAM,
    l_spec: int = na.DEFAULT_L_SPEC,
    seed=0,
    spec_draws: int = na.DEFAULT_SPEC_DRAWS,
    threads: int = 1,
    timing_repeats: int = 3,
) -> AccuracyReport:
    """Compare approximate critical points against the Monte-Carlo null.

    The reference quantiles come from ``iterations`` draws of n * Delta^2 under
    N(0, I_d). A single N(0, I_d) sample of size n supplies (m_hat, S_hat) for
    every approximation engine.
    """
    if iterations < 500:
        raise ValueError(f"iterations must be >= 500, got {iterations}")
    unknown = [e for e in engines if e not in APPROX_ENGINES]
    if unknown:
        raise ValueError(f"unknown approximation engine(s) {unknown}; choose from {APPROX_ENGINES}")
    null = na.monte_carlo_null(GaussianParams.standard(d), n, sigma, iterations, na.child_seed(seed, 0), threads)
    report = AccuracyReport(d, n, sigma, iterations, {a: na.upper_quantile(null, a) for a in ALPHAS})

    data = na.child_rng(seed, 1).standard_normal((n, d))
    params = sample_moments(data)
    for engine in engines:
        engine_seed = na.child_seed(seed, 2 + APPROX_ENGINES.index(engine))

        def run(engine=engine, engine_seed=engine_seed):
            return engine_quantiles(engine, params, sigma, ALPHAS, engine_seed, l_ii, l_spec, spec_draws)

        qs, elapsed = _median_time(run, timing_repeats)
        report.quantiles[engine] = qs
        report.d_metric[engine] = sum(abs(qs[a] - report.reference[a]) for a in ALPHAS)
        report.timing[engine] = elapsed
    return report


def null_threshold(d: int, n: int, sigma: float, iterations: int, seed, alpha: float = 0.05, threads: int = 1) -> float:
    """Monte-Carlo upper-alpha point of n * Delta^2 under N(0, I_d)."""
    null = na.monte_carlo_null(GaussianParams.standard(d), n, sigma, iterations, seed, threads)
    return na.upper_quantile(null, alpha)


def power_experiment(
    spec: AlternativeSpec,
    n: int,
    sigma: float,
    replications: int = 200,
    null_iterations: int = 2000,
    seed=0,
    alpha: float = 0.05,
    threshold: float | str | None = None,
    threads: int = 1,
    sigma_rule: str = "explicit",
) -> PowerReport:
    """Rejection rate of n * Delta^2 >= t_alpha over datasets from ``spec``.

    ``threshold`` may be a precomputed critical value, ``None`` for the
    Monte-Carlo null under N(0, I_d), or ``"moment_chisq"`` to recompute the
    c * chi2_r critical value from each replication's own S_hat.
    """
    if replications < 100:
        raise ValueError(f"replications must be >= 100, got {replications}")
    per_replication = threshold == "moment_chisq"
    if per_replication:
        source, t_alpha = "moment_chisq", float("nan")
    elif threshold is None:
        source = "monte_carlo"
        t_alpha = null_threshold(spec.d, n, sigma, null_iterations, na.child_seed(seed, 0), alpha, threads)
    elif isinstance(threshold, str):
        raise ValueError(f"unknown threshold source {threshold!r}")
    else:
        source, t_alpha = "given", float(threshold)

    def one(i):
        y = sample_alternative(spec, n, na.child_rng(na.child_seed(seed, 1), i)).values
        stat = n * max(float(raw_statistic(y, sigma)), 0.0)
        crit = na.chisq_quantile(na.moment_fit(sample_moments(y), sigma), alpha) if per_replication else t_alpha
        return stat >= crit

    hits = na._parallel_map(one, replications, threads)
    return PowerReport(
        spec.family, spec.correlation, spec.d, n, sigma, int(sum(hits)), replications, t_alpha, source, sigma_rule
    )
