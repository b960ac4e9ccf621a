import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sst

from powertail.distributions import ParetoTail, StandardNormal, SymmetricPowerLaw
from powertail.errors import ConfigError, DomainError
from powertail.montecarlo import SimulationPlan, envelope_violations
from powertail.orderstats import (
    EnvelopeParams,
    Glptj,
    ParetoClosed,
    Productiones,
    Quadrature,
    Replacio,
    binomial_chernoff,
    glptj_bound,
    orderstat_envelope,
    pareto_closed_bound,
    renyi_sample,
    subexp_sum_bound,
    trimmed_sum_bound,
)
from powertail.special import xi_inverse

# (np/s)^s ((n-np)/(n-s))^(n-s) evaluated with mpmath
CHERNOFF_10_05_9 = 0.025206785075324204
CHERNOFF_100_01_20 = 0.011792391322207904
BOTTOM_100_50_T2 = 0.7476548345085909


class TestChernoff:
    def test_at_mean(self):
        assert binomial_chernoff(10, 0.3, 3.0) == pytest.approx(1.0, rel=1e-14)

    def test_examples(self):
        assert binomial_chernoff(10, 0.5, 9) == pytest.approx(CHERNOFF_10_05_9, rel=1e-13)
        assert binomial_chernoff(10, 0.5, 9) >= 11 / 1024
        assert binomial_chernoff(100, 0.1, 20) == pytest.approx(CHERNOFF_100_01_20, rel=1e-13)

    def test_zero_power(self):
        # s = 0 requires np <= 0, impossible; s just below n keeps the second factor finite
        assert 0 < binomial_chernoff(5, 0.2, 4.999) < 1

    def test_domain(self):
        with pytest.raises(DomainError):
            binomial_chernoff(10, 0.5, 4)
        with pytest.raises(DomainError):
            binomial_chernoff(10, 0.5, 10)

    @given(st.integers(1, 400), st.floats(0.01, 0.99), st.floats(0, 1))
    def test_dominates_exact_tail(self, n, p, frac):
        s = math.ceil(n * p) + frac * (n - 1 - math.ceil(n * p))
        if not n * p <= s < n:
            return
        exact = sst.binom.sf(math.ceil(s) - 1, n, p)
        assert binomial_chernoff(n, p, s) >= exact * (1 - 1e-10)


class TestRenyiSample:
    def test_shape_and_sorted(self):
        g = renyi_sample(50, np.random.default_rng(1))
        assert g.shape == (50,)
        assert np.all(np.diff(g) >= 0)
        assert renyi_sample(5, np.random.default_rng(1), size=7).shape == (7, 5)

    def test_single_uniform(self):
        g = renyi_sample(1, np.random.default_rng(2), size=1_000_000)[:, 0]
        assert abs(g.mean() - 0.5) <= 3 * math.sqrt(1 / 12 / g.size)

    def test_beta_marginals(self):
        n, R = 10, 100_000
        g = renyi_sample(n, np.random.default_rng(3), size=R)
        k = np.arange(1, n + 1)
        mean = k / (n + 1)
        var = k * (n - k + 1) / ((n + 1) ** 2 * (n + 2))
        assert np.all(np.abs(g.mean(axis=0) - mean) <= 4 * np.sqrt(var / R))
        # second moment E g^2 = k(k+1)/((n+1)(n+2))
        m2 = k * (k + 1) / ((n + 1) * (n + 2))
        sd2 = (g**2).std(axis=0)
        assert np.all(np.abs((g**2).mean(axis=0) - m2) <= 4 * sd2 / math.sqrt(R))

    def test_deterministic_given_stream(self):
        a = renyi_sample(8, np.random.default_rng(9), size=3)
        b = renyi_sample(8, np.random.default_rng(9), size=3)
        np.testing.assert_array_equal(a, b)


class TestEnvelope:
    def test_single_rank_clamped(self):
        env = orderstat_envelope(EnvelopeParams(1, 2.0))
        assert env.top[0] == 1.0
        assert 0.5 * (1 + xi_inverse("xi2", math.exp(-2.0))) == pytest.approx(2.2526207478964417, rel=1e-12)

    def test_bottom_example(self):
        env = orderstat_envelope(EnvelopeParams(100, 2.0))
        assert env.bottom[49] == pytest.approx(BOTTOM_100_50_T2, rel=1e-12)

    @pytest.mark.parametrize("t", [1.0, 3.0, 5.0])
    def test_bottom_below_one(self, t):
        env = orderstat_envelope(EnvelopeParams(200, t))
        assert np.all(env.bottom[:-1] < 1)

    def test_clamped_and_monotone_in_t(self):
        lo = orderstat_envelope(EnvelopeParams(300, 2.0))
        hi = orderstat_envelope(EnvelopeParams(300, 4.0))
        for a, b in [(lo.top, hi.top), (lo.bottom, hi.bottom), (lo.renyi, hi.renyi)]:
            assert np.all((0 <= a) & (a <= 1))
            assert np.all(a <= b + 1e-15)

    def test_envelopes_above_mean(self):
        env = orderstat_envelope(EnvelopeParams(500, 2.0))
        k = np.arange(1, 501)
        assert np.all(env.combined >= k / 501)

    def test_closed_form_is_weaker(self):
        p = EnvelopeParams(400, 3.0)
        exact, closed = orderstat_envelope(p), orderstat_envelope(p, closed_form=True)
        assert np.all(closed.top >= exact.top - 1e-9)
        assert np.all(closed.bottom >= exact.bottom - 1e-9)

    def test_probabilities(self):
        env = orderstat_envelope(EnvelopeParams(10, 3.0, renyi_C=4.0))
        assert env.joint_probability == pytest.approx(math.pi**2 / 3 * math.exp(-4.5))
        assert env.renyi_probability == pytest.approx(4 * math.exp(-4.5))

    def test_params_validation(self):
        with pytest.raises(DomainError):
            EnvelopeParams(0, 1.0)
        with pytest.raises(DomainError):
            EnvelopeParams(5, 1.0, renyi_c=0)

    def test_violation_frequency_small_n(self):
        env = orderstat_envelope(EnvelopeParams(100, 2.5))
        est = envelope_violations(env.combined, SimulationPlan(seed=4, replications=50_000))
        assert est.p_hat <= env.joint_probability + 3 * est.half_width


class TestSubexp:
    def test_examples(self):
        assert subexp_sum_bound([1.0], 1e-12) == pytest.approx(2.0)
        assert subexp_sum_bound([1.0], 1.0) == pytest.approx(2 * math.exp(-1 / 8))
        assert subexp_sum_bound(np.ones(100) / 10, 5.0) == pytest.approx(2 * math.exp(-25 / 8))

    def test_monte_carlo(self):
        rng = np.random.default_rng(8)
        a = np.ones(100) / 10
        s = (rng.exponential(size=(200_000, 100)) - 1) @ a
        assert np.mean(np.abs(s) > 5.0) <= subexp_sum_bound(a, 5.0)

    def test_zero_vector(self):
        with pytest.raises(DomainError):
            subexp_sum_bound(np.zeros(3), 1.0)


class TestTrimmed:
    model = ParetoTail(3.0)

    def test_pareto_closed_example(self):
        expected = 1500 + (1 + 1 / 3) * 10 * math.exp(1.5)
        assert trimmed_sum_bound(self.model, 1000, 0, 999, 3.0, ParetoClosed()) == pytest.approx(expected, rel=1e-14)
        assert pareto_closed_bound(3, 1000, 0, 3.0, C=2.0) == pytest.approx(2 * expected, rel=1e-14)

    def test_glptj_example(self):
        thr, prob = glptj_bound(3, 1000, 5, 2.0)
        assert thr == pytest.approx(18 * (2 * math.e) ** (1 / 3) * 1000, rel=1e-14)
        assert thr == pytest.approx(31650.5, abs=0.1)
        assert prob == 1 / 32
        lam = math.sqrt(2 * 5 * math.log(2.0))
        thr2, prob2 = trimmed_sum_bound(self.model, 1000, 0, 5, lam, Glptj())
        assert thr2 == pytest.approx(thr, rel=1e-12) and prob2 == pytest.approx(prob, rel=1e-12)

    def test_quadrature_single_term(self):
        n, j, lam = 1000, 3, 3.0
        y = math.exp((-lam**2 - 4 * math.log(j + 1)) / (2 * (j + 1)))
        x = (j + 1) / (n + 1) * (1 - xi_inverse("xi1", y, 1e-15))
        got = trimmed_sum_bound(self.model, n, j, j, lam, Quadrature())
        assert got == pytest.approx(x ** (-1 / 3), rel=1e-10)

    @pytest.mark.parametrize("variant", [Quadrature(), Replacio(), Productiones(3.0)], ids=lambda v: type(v).__name__)
    def test_monotone(self, variant):
        grid = np.array([[trimmed_sum_bound(self.model, 1000, j, 999, lam, variant) for j in (0, 2, 5, 10)]
                         for lam in (2.0, 3.0, 4.0)])
        assert np.all(np.diff(grid, axis=1) <= 1e-9 * grid[:, 1:])
        assert np.all(np.diff(grid, axis=0) >= -1e-9 * grid[1:])

    def test_replacio_explicit_c0(self):
        a = trimmed_sum_bound(self.model, 500, 1, 400, 3.0, Replacio())
        b = trimmed_sum_bound(self.model, 500, 1, 400, 3.0, Replacio(c0=2.0))
        assert b > a

    def test_errors(self):
        with pytest.raises(ConfigError):
            trimmed_sum_bound(SymmetricPowerLaw(4), 100, 0, 50, 3.0, Quadrature())
        with pytest.raises(ConfigError):
            trimmed_sum_bound(StandardNormal(), 100, 0, 50, 3.0, ParetoClosed())
        with pytest.raises(DomainError):
            trimmed_sum_bound(self.model, 100, 5, 4, 3.0, Quadrature())
        with pytest.raises(DomainError):
            trimmed_sum_bound(self.model, 100, 0, 4, 1.5, Quadrature())
        with pytest.raises(ConfigError):
            trimmed_sum_bound(self.model, 100, 0, 4, 3.0, Productiones(3.0, T=0.5))

    def test_growth_condition_checked(self):
        # (dx)^{-1/3} >= d^{-1/p} x^{-1/3} for all d in (0, 1) exactly when p >= 3
        trimmed_sum_bound(self.model, 100, 0, 50, 3.0, Productiones(6.0))
        with pytest.raises(ConfigError):
            trimmed_sum_bound(self.model, 100, 0, 50, 3.0, Productiones(2.0))

    def test_quadrature_upper_bounds_monte_carlo_quantile(self):
        # the integral form with constant 1 already bounds the simulated (1 - e^{-lam^2/2}) quantile
        from powertail.montecarlo import iid_top_sums

        n, j, lam = 200, 2, 3.0
        tot, tops = iid_top_sums(self.model, n, j, SimulationPlan(seed=3, replications=40_000))
        q = np.quantile(tot - tops[:, j - 1], 1 - math.exp(-lam**2 / 2))
        assert trimmed_sum_bound(self.model, n, j, n - 1, lam, Quadrature()) >= q
