import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powertail.distributions import Empirical, ParetoTail, StandardNormal, UEnvelope
from powertail.errors import ConfigError, DomainError
from powertail.norms import (
    LP,
    Analytic,
    DirectMC,
    MonteCarlo,
    PoissonNormParams,
    Quadrature,
    RQParams,
    SignFormula,
    dual_norm_rq,
    norm_quantile_comparison,
    poisson_hull_norm,
    primal_norm_rq,
    sandwich_report,
)


def brute_primal_2d(x, params, angles=2_000_000):
    """sup <x, y> over the dual unit ball, by scanning its boundary in the plane."""
    th = np.linspace(0, 2 * np.pi, angles, endpoint=False)
    y = np.stack([np.cos(th), np.sin(th)], axis=1)
    s = -np.sort(-np.abs(y), axis=1)
    dual = np.max(np.cumsum(s, axis=1) / params.weights(), axis=1)
    return float(np.max(y @ x / dual))


class TestDual:
    def test_examples(self):
        p = RQParams(2, 2, 4)
        assert dual_norm_rq([1, 0, 0, 0], p) == pytest.approx(0.5)
        assert dual_norm_rq(np.ones(4), p) == pytest.approx(1.0)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(1e-3, 1e3))
    def test_homogeneous(self, y, lam):
        y = np.array(y)
        if not np.any(y):
            return
        p = RQParams(1.7, 3.0, y.size)
        assert dual_norm_rq(lam * y, p) == pytest.approx(lam * dual_norm_rq(y, p), rel=1e-12)

    def test_factor_two(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 80))
            p = RQParams(float(rng.uniform(1, 20)), float(rng.uniform(1.1, 8)), n)
            y = rng.standard_normal(n) * rng.pareto(1.0, n)
            full, res = dual_norm_rq(y, p), dual_norm_rq(y, p, restricted=True)
            assert full <= 2 * res * (1 + 1e-12)
            assert res <= full * (1 + 1e-12)

    def test_zero(self):
        with pytest.raises(DomainError):
            dual_norm_rq(np.zeros(3), RQParams(2, 2, 3))

    def test_params(self):
        with pytest.raises(DomainError):
            RQParams(0.5, 2, 3)
        with pytest.raises(DomainError):
            RQParams(2, 1.0, 3)


class TestPrimal:
    def test_examples(self):
        assert primal_norm_rq([1, 0, 0], RQParams(3, 2, 3)) == pytest.approx(3.0, abs=1e-9)
        x = np.array([1, 1, 1, 0, 0])
        p = RQParams(2, 2, 5)
        assert primal_norm_rq(x, p, SignFormula) == pytest.approx(2 * math.sqrt(3), rel=1e-15)
        assert primal_norm_rq(x, p, LP) == pytest.approx(2 * math.sqrt(3), abs=1e-9)

    def test_sign_formula_domain(self):
        with pytest.raises(DomainError):
            primal_norm_rq([0.5, 1], RQParams(2, 2, 2), SignFormula)
        with pytest.raises(DomainError):
            primal_norm_rq([0, 0], RQParams(2, 2, 2))

    @pytest.mark.parametrize("x", [[1.0, 0.3], [-2.0, 5.0], [1.0, 1.0]])
    def test_brute_force_plane(self, x):
        p = RQParams(1.5, 2.5, 2)
        lp, brute = primal_norm_rq(np.array(x), p), brute_primal_2d(np.array(x), p)
        # the scan approaches the supremum from below at first order in the angle step
        assert brute <= lp * (1 + 1e-12)
        assert lp == pytest.approx(brute, rel=1e-5)

    def test_norm_axioms(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = int(rng.integers(1, 65))
            p = RQParams(float(rng.uniform(1, 6)), float(rng.uniform(1.2, 6)), n)
            x, z = rng.standard_normal(n), rng.standard_normal(n)
            nx, nz, nxz = (primal_norm_rq(v, p) for v in (x, z, x + z))
            assert nxz <= nx + nz + 1e-9 * (nx + nz)
            lam = float(rng.uniform(0.1, 10))
            assert primal_norm_rq(lam * x, p) == pytest.approx(lam * nx, rel=1e-9)
            y = rng.standard_normal(n)
            assert x @ y <= nx * dual_norm_rq(y, p) * (1 + 1e-9) + 1e-12

    def test_sign_vectors_exhaustive_small(self):
        p = RQParams(2.5, 3.0, 6)
        for code in range(1, 3**6):
            x = np.array([(code // 3**i) % 3 - 1 for i in range(6)], dtype=float)
            if not np.any(x):
                continue
            assert primal_norm_rq(x, p, LP) == pytest.approx(primal_norm_rq(x, p, SignFormula), abs=1e-9)


class TestSandwich:
    def test_basic_vectors(self):
        r, q, n = 3.0, 2.0, 50
        p = RQParams(r, q, n)
        e1 = np.zeros(n)
        e1[0] = 1
        assert primal_norm_rq(e1, p) / (1 + r) == pytest.approx(max(1, r) / (1 + r), abs=1e-9)
        ones = np.ones(n)
        denom = n + r * np.sum(np.arange(1, n + 1) ** (-1 + 1 / q))
        assert primal_norm_rq(ones, p) == pytest.approx(max(n, r * n ** (1 / q)), abs=1e-8)
        assert 0 < max(n, r * n ** (1 / q)) / denom < 1

    def test_ratios_bounded(self):
        for n in (4, 32, 128):
            rep = sandwich_report(RQParams(3.0, 2.0, n), 100, np.random.default_rng(n))
            assert 0.2 < rep.min_ratio <= rep.max_ratio <= 1.0 + 1e-9
            assert rep.window_low == pytest.approx(1 / 8) and rep.window_high == pytest.approx(2.0)

    def test_sample_floor(self):
        with pytest.raises(DomainError):
            sandwich_report(RQParams(3.0, 2.0, 4), 10, np.random.default_rng(0))


class TestPoissonNorm:
    def test_constant_model(self):
        for delta in (0.1, 0.4):
            p = PoissonNormParams(delta, [1.0], Empirical(np.array([2.0])))
            assert poisson_hull_norm(p) == pytest.approx(2 * (1 - math.exp(-1 / delta)), rel=1e-9)
            est = poisson_hull_norm(p, DirectMC(20_000, seed=1), with_error=True)
            assert est.value == pytest.approx(2 * (1 - math.exp(-1 / delta)), abs=4 * est.stderr + 1e-12)

    def test_analytic_needs_one_coordinate(self):
        p = PoissonNormParams(0.1, [1.0, 1.0], StandardNormal())
        with pytest.raises(ConfigError):
            poisson_hull_norm(p)

    def test_analytic_vs_empirical_quantile(self):
        a = PoissonNormParams(0.05, [1.5], StandardNormal())
        m = PoissonNormParams(0.05, [1.5], StandardNormal(), MonteCarlo(400_000, seed=3))
        ea = poisson_hull_norm(a)
        em = poisson_hull_norm(m, with_error=True)
        assert abs(ea - em.value) <= 4 * em.stderr

    @pytest.mark.parametrize("n,delta", [(1, 0.05), (8, 0.05)])
    def test_quadrature_vs_direct(self, n, delta):
        w = np.ones(n)
        src = Analytic() if n == 1 else MonteCarlo(200_000, seed=4)
        p = PoissonNormParams(delta, w, UEnvelope(8.0), src)
        quad = poisson_hull_norm(p, Quadrature(), with_error=True)
        mc = poisson_hull_norm(p, DirectMC(40_000, seed=5), with_error=True)
        assert abs(quad.value - mc.value) <= 3 * (quad.half_width + mc.half_width)

    def test_triangle_inequality_common_seed(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            a, b = rng.uniform(-1, 2, 4), rng.uniform(-1, 2, 4)
            method = DirectMC(3000, seed=8)

            def norm(w):
                return poisson_hull_norm(PoissonNormParams(0.2, np.abs(w) + 0.0, StandardNormal()), method)

            # nonnegative weights keep the parameter valid; the path-wise inequality is exact
            assert norm(a + b) <= norm(a) + norm(b) + 1e-12

    def test_monotone_in_weights(self):
        method = DirectMC(5000, seed=9)
        base = np.array([1.0, 0.5, 0.2])
        v0 = poisson_hull_norm(PoissonNormParams(0.1, base, ParetoTail(3.0)), method)
        bumped = base.copy()
        bumped[1] += 0.7
        v1 = poisson_hull_norm(PoissonNormParams(0.1, bumped, ParetoTail(3.0)), method)
        assert v1 >= v0

    def test_params_validation(self):
        with pytest.raises(DomainError):
            PoissonNormParams(0.6, [1.0], StandardNormal())
        with pytest.raises(DomainError):
            PoissonNormParams(0.1, [0.0, 0.0], StandardNormal())
        with pytest.raises(DomainError):
            PoissonNormParams(0.1, [1.0, -1.0], StandardNormal())


class TestQuantileComparison:
    def test_constant_model(self):
        p = PoissonNormParams(0.1, [1.0], Empirical(np.array([3.0])))
        rep = norm_quantile_comparison(p, 10_000, seed=1)
        assert rep.p_upper.successes == 0

    def test_gaussian_sum(self):
        p = PoissonNormParams(0.05, np.ones(4), StandardNormal(), MonteCarlo(100_000, seed=2))
        rep = norm_quantile_comparison(p, 100_000, seed=3)
        assert rep.p_upper.p_hat <= rep.upper_budget + 3 * rep.p_upper.half_width
        assert rep.p_lower.p_hat >= rep.lower_budget - 3 * rep.p_lower.half_width
        assert rep.ratio_R > 0

    def test_sample_floor(self):
        with pytest.raises(DomainError):
            norm_quantile_comparison(PoissonNormParams(0.1, [1.0], StandardNormal()), 100, seed=1)
