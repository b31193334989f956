import math

import numpy as np
import pytest

from mmdtest.kernel_core import GaussianParams
from mmdtest.null_approx import child_rng, chisq_quantile, moment_fit
from mmdtest.simulation import (
    ALPHAS,
    AlternativeSpec,
    accuracy_experiment,
    banded_correlation,
    banded_root,
    engine_quantiles,
    power_experiment,
    sample_alternative,
    sample_mvn,
)


class TestGenerators:
    def test_uniform_support_and_moments(self):
        z = sample_alternative(AlternativeSpec("uniform_std", 4), 200_000, np.random.default_rng(0)).values
        assert np.all(np.abs(z) <= math.sqrt(3) + 1e-12)
        assert np.abs(z.mean(axis=0)).max() < 0.01
        assert np.abs(z.var(axis=0) - 1).max() < 0.02

    def test_exponential_support_and_moments(self):
        z = sample_alternative(AlternativeSpec("exponential_std", 3), 200_000, np.random.default_rng(1)).values
        assert z.min() >= -1.0
        assert np.abs(z.mean(axis=0)).max() < 0.01
        assert np.abs(z.var(axis=0) - 1).max() < 0.03
        # third central moment of Exp(1) is 2
        assert np.abs((z**3).mean(axis=0) - 2).max() < 0.15

    def test_gaussian_moments(self):
        z = sample_alternative(AlternativeSpec("gaussian", 5), 100_000, np.random.default_rng(2)).values
        assert np.abs(np.cov(z.T) - np.eye(5)).max() < 0.02

    def test_banded_matrix(self):
        r = banded_correlation(12)
        assert r[0, 0] == 1.0
        assert r[0, 3] == 0.125
        assert r[0, 5] == 0.5**5
        assert r[0, 6] == 0.0
        assert np.array_equal(r, r.T)
        assert np.linalg.eigvalsh(r).min() > 0

    def test_banded_root(self):
        root = banded_root(30)
        assert np.allclose(root, root.T)
        assert np.allclose(root @ root, banded_correlation(30), atol=1e-12)

    def test_banded_covariance(self):
        spec = AlternativeSpec("exponential_std", 8, "banded_geometric")
        z = sample_alternative(spec, 200_000, np.random.default_rng(3)).values
        assert np.abs(np.cov(z.T) - banded_correlation(8)).max() < 0.03

    def test_mvn_singular(self):
        p = GaussianParams(np.zeros(3), np.diag([1.0, 0.0, 2.0]))
        z = sample_mvn(p, 1000, np.random.default_rng(4)).values
        assert np.all(z[:, 1] == 0)

    def test_reproducible(self):
        spec = AlternativeSpec("uniform_std", 6, "banded_geometric")
        a = sample_alternative(spec, 50, child_rng(9, 1))
        b = sample_alternative(spec, 50, child_rng(9, 1))
        assert np.array_equal(a.values, b.values)

    @pytest.mark.parametrize("kw", [{"family": "cauchy"}, {"correlation": "ar1"}, {"d": 0}])
    def test_spec_validation(self, kw):
        args = {"family": "gaussian", "d": 2, "correlation": "independent"} | kw
        with pytest.raises(ValueError):
            AlternativeSpec(**args)


class TestEngineQuantiles:
    def test_moment_matches_direct(self):
        p = GaussianParams.standard(4)
        qs = engine_quantiles("moment_chisq", p, 0.3, ALPHAS, 0, 100, 100, 1000)
        fit = moment_fit(p, 0.3)
        assert qs == {a: chisq_quantile(fit, a) for a in ALPHAS}

    def test_ordering(self):
        p = GaussianParams.standard(4)
        for engine in ("moment_chisq", "gram_chisq", "spec_sum"):
            qs = engine_quantiles(engine, p, 0.3, ALPHAS, 0, 200, 200, 2000)
            assert qs[0.1] <= qs[0.05] <= qs[0.01]

    def test_unknown(self):
        with pytest.raises(ValueError):
            engine_quantiles("monte_carlo", GaussianParams.standard(2), 1.0, ALPHAS, 0, 10, 10, 1000)


class TestAccuracy:
    def test_report(self):
        rep = accuracy_experiment(2, 50, 0.5, iterations=500, l_ii=100, l_spec=100, spec_draws=2000, seed=3)
        assert set(rep.quantiles) == {"moment_chisq", "gram_chisq", "spec_sum"}
        for e, qs in rep.quantiles.items():
            assert rep.d_metric[e] == pytest.approx(sum(abs(qs[a] - rep.reference[a]) for a in ALPHAS))
        assert "timing" not in rep.to_dict()
        assert set(rep.to_dict(timing=True)["timing"]) == set(rep.quantiles)

    def test_deterministic(self):
        kw = dict(iterations=500, l_ii=80, l_spec=80, spec_draws=1000, seed=11, timing_repeats=1)
        a = accuracy_experiment(3, 40, 0.3, **kw).to_dict()
        b = accuracy_experiment(3, 40, 0.3, threads=4, **kw).to_dict()
        assert a == b

    def test_empty_engines(self):
        rep = accuracy_experiment(2, 30, 0.5, engines=(), iterations=500, seed=0)
        assert rep.quantiles == {} and rep.d_metric == {}
        assert set(rep.reference) == set(ALPHAS)

    def test_validation(self):
        with pytest.raises(ValueError):
            accuracy_experiment(2, 30, 0.5, iterations=499)
        with pytest.raises(ValueError):
            accuracy_experiment(2, 30, 0.5, engines=("bogus",), iterations=500)


class TestPower:
    def test_size_under_null(self):
        # Gaussian data against its own Monte-Carlo null: power is the size.
        rep = power_experiment(AlternativeSpec("gaussian", 3), 100, 1 / 3, replications=400, null_iterations=1000, seed=5)
        se = math.sqrt(0.05 * 0.95 / 400)
        assert abs(rep.power - 0.05) < 3 * se
        assert rep.threshold_source == "monte_carlo"

    def test_threshold_given(self):
        spec = AlternativeSpec("exponential_std", 2)
        assert power_experiment(spec, 30, 0.5, replications=100, threshold=0.0).power == 1.0
        assert power_experiment(spec, 30, 0.5, replications=100, threshold=1e9).power == 0.0

    def test_per_replication_threshold(self):
        rep = power_experiment(AlternativeSpec("exponential_std", 5), 100, 0.2, replications=100, threshold="moment_chisq")
        assert rep.threshold_source == "moment_chisq"
        assert math.isnan(rep.threshold)
        assert rep.power > 0.5

    def test_thread_invariant(self):
        spec = AlternativeSpec("uniform_std", 4, "banded_geometric")
        kw = dict(replications=100, null_iterations=200, seed=8)
        assert power_experiment(spec, 60, 0.25, **kw).to_dict() == power_experiment(spec, 60, 0.25, threads=3, **kw).to_dict()

    def test_validation(self):
        spec = AlternativeSpec("gaussian", 2)
        with pytest.raises(ValueError):
            power_experiment(spec, 30, 0.5, replications=99)
        with pytest.raises(ValueError):
            power_experiment(spec, 30, 0.5, replications=100, threshold="bogus")

    @pytest.mark.slow
    def test_power_nondecreasing_in_n(self):
        spec = AlternativeSpec("exponential_std", 10)
        sigma = 10**-0.75
        powers = [power_experiment(spec, n, sigma, replications=200, null_iterations=500, seed=1).power for n in (20, 40, 80)]
        slack = 2 * math.sqrt(0.25 / 200)
        assert all(b >= a - slack for a, b in zip(powers, powers[1:]))
