"""Two norm constructions.

The E_{r,q} norm: its dual is an explicit supremum over prefix sums of the
nonincreasing rearrangement, and the primal is computed as a linear program
over the sorted cone. The Poisson-hull norm [a]_delta is the expected
maximum of the origin and the values <a, X^(j)> over a Poisson number of
i.i.d. points, evaluated by quadrature against a quantile function or by
direct simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.optimize import linprog

from . import _kernels as K
from . import streams
from .distributions import QuantileModel, gauss_legendre
from .errors import ConfigError, DomainError, NumericalError
from .montecarlo import SimulationPlan, linear_sum_samples, run_chunks
from .stats import TailEstimate, normal_half_width

__all__ = [
    "RQParams",
    "dual_norm_rq",
    "primal_norm_rq",
    "LP",
    "SignFormula",
    "SandwichReport",
    "sandwich_report",
    "MonteCarlo",
    "Analytic",
    "Quadrature",
    "DirectMC",
    "PoissonNormParams",
    "NormEstimate",
    "poisson_hull_norm",
    "QuantileComparison",
    "norm_quantile_comparison",
]


@dataclass(frozen=True)
class RQParams:
    r: float
    q: float
    n: int

    def __post_init__(self):
        if not self.r >= 1:
            raise DomainError("r must be at least 1")
        if not self.q > 1:
            raise DomainError("q must exceed 1")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        if not math.isfinite(self.crossover):
            raise DomainError("r^{q/(q-1)} must be finite")

    @property
    def crossover(self) -> float:
        return self.r ** (self.q / (self.q - 1.0))

    def weights(self) -> np.ndarray:
        """max{k, r k^{1/q}} for k = 1..n."""
        k = np.arange(1, int(self.n) + 1, dtype=float)
        return np.maximum(k, self.r * k ** (1.0 / self.q))


def _rearranged(v, n):
    v = np.asarray(v, dtype=float).ravel()
    if v.size != n:
        raise DomainError(f"vector length {v.size} does not match n = {n}")
    s = np.sort(np.abs(v))[::-1]
    if s[0] == 0:
        raise DomainError("vector must be nonzero")
    return s


def dual_norm_rq(y, params: RQParams, restricted: bool = False) -> float:
    """Dual norm sup_k max{k, r k^{1/q}}^{-1} sum_{i<=k} y_[i].

    With ``restricted`` the supremum of r^{-1} k^{-1/q} sum_{i<=k} y_[i] over
    k <= min{r^{q/(q-1)}, n}; the two differ by at most a factor 2.
    """
    n = int(params.n)
    prefix = np.cumsum(_rearranged(y, n))
    if not restricted:
        return float(np.max(prefix / params.weights()))
    # guard against r^{q/(q-1)} landing an ulp below an integer
    k0 = max(1, min(n, int(math.floor(params.crossover * (1.0 + 1e-12)))))
    k = np.arange(1, k0 + 1, dtype=float)
    return float(np.max(prefix[:k0] / (params.r * k ** (1.0 / params.q))))


class LP:
    """Linear program over the sorted cone."""


class SignFormula:
    """max{|x|_1, r |x|_q}, valid for x with entries in {0, 1, -1}."""


def _lp_primal(s, params):
    n = s.size
    # y_1 >= ... >= y_n >= 0 and sum_{i<=k} y_i <= max{k, r k^{1/q}}
    prefix = np.tril(np.ones((n, n)))
    order = np.zeros((max(n - 1, 0), n))
    idx = np.arange(n - 1)
    order[idx, idx] = -1.0
    order[idx, idx + 1] = 1.0
    res = linprog(
        -s,
        A_ub=np.vstack([prefix, order]),
        b_ub=np.concatenate([params.weights(), np.zeros(n - 1)]),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise NumericalError(f"linear program failed: {res.message}")
    return float(-res.fun)


def primal_norm_rq(x, params: RQParams, method=LP) -> float:
    """The E_{r,q} norm of x, the gauge dual to :func:`dual_norm_rq`."""
    s = _rearranged(x, int(params.n))
    if method is SignFormula or isinstance(method, SignFormula):
        if not np.all((s == 0) | (s == 1)):
            raise DomainError("SignFormula needs entries in {0, 1, -1}")
        k = float(np.count_nonzero(s))
        return max(k, params.r * k ** (1.0 / params.q))
    if method is LP or isinstance(method, LP):
        return _lp_primal(s, params)
    raise ConfigError(f"unknown method {method!r}")


class SandwichReport(NamedTuple):
    min_ratio: float
    max_ratio: float
    window_low: float
    window_high: float
    inside_window: bool


def _sandwich_denominator(s, params):
    i = np.arange(1, s.size + 1, dtype=float)
    return float(np.sum(s) + params.r * np.sum(i ** (-1.0 + 1.0 / params.q) * s))


def _random_profiles(n, samples, rng):
    for j in range(samples):
        kind = j % 4
        if kind == 0:
            x = rng.standard_normal(n)
        elif kind == 1:
            x = rng.pareto(1.5, n) + 1.0
        else:
            support = max(1, int(rng.integers(1, n + 1)) // (1 if kind == 2 else max(1, n // 4)))
            x = np.zeros(n)
            pos = rng.choice(n, size=min(support, n), replace=False)
            x[pos] = rng.standard_normal(pos.size) if kind == 2 else 1.0
        if not np.any(x):
            x[0] = 1.0
        yield x


def sandwich_report(params: RQParams, samples: int, rng: np.random.Generator) -> SandwichReport:
    """Extremes of |x|_{r,q} / (|x|_1 + r sum i^{-1+1/q} x_[i]) over random x.

    The sampled vectors mix dense Gaussian, heavy Pareto, sparse and 0/1
    profiles. The window [1/(4q), 4/q] is the pair of constants the ratio is
    compared against; it is reported, not enforced.
    """
    if samples < 100:
        raise DomainError("need at least 100 samples")
    n = int(params.n)
    ratios = []
    for x in _random_profiles(n, int(samples), rng):
        s = np.sort(np.abs(x))[::-1]
        ratios.append(_lp_primal(s, params) / _sandwich_denominator(s, params))
    lo, hi = float(min(ratios)), float(max(ratios))
    w_lo, w_hi = 1.0 / (4.0 * params.q), 4.0 / params.q
    return SandwichReport(lo, hi, w_lo, w_hi, bool(w_lo <= lo and hi <= w_hi))


# ---------------------------------------------------------------------------
# Poisson-hull norm


@dataclass(frozen=True)
class MonteCarlo:
    """Empirical quantile of S from R simulated draws."""

    R: int
    seed: int

    def __post_init__(self):
        if int(self.R) != self.R or self.R < 100:
            raise ConfigError("MonteCarlo quantile source needs R >= 100")
        streams.check_seed(self.seed)


@dataclass(frozen=True)
class Analytic:
    """Exact quantile of a single weighted coordinate."""


@dataclass(frozen=True)
class Quadrature:
    """delta^{-1} int_0^1 max{F_S^{-1}(1-s), 0} e^{-s/delta} ds."""


@dataclass(frozen=True)
class DirectMC:
    """Mean of max{0, S^(1), ..., S^(N)} with N ~ Poisson(1/delta), over R2 replications."""

    R2: int
    seed: int
    chunk_size: int = 1 << 12
    worker_hint: int = 1

    def __post_init__(self):
        if int(self.R2) != self.R2 or self.R2 < 2:
            raise ConfigError("DirectMC needs R2 >= 2")
        streams.check_seed(self.seed)


@dataclass(frozen=True, eq=False)
class PoissonNormParams:
    delta: float
    weights: np.ndarray
    model: QuantileModel
    quantile_source: object = Analytic()

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if not 0 < self.delta < 0.5:
            raise DomainError("delta must lie in (0, 1/2)")
        if w.size == 0 or np.any(w < 0) or not np.any(w > 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite, nonnegative and not all zero")
        if not isinstance(self.quantile_source, (MonteCarlo, Analytic)):
            raise ConfigError("quantile_source must be MonteCarlo or Analytic")

    @property
    def n(self) -> int:
        return int(self.weights.size)


class NormEstimate(NamedTuple):
    value: float
    stderr: float

    @property
    def half_width(self) -> float:
        return normal_half_width(self.stderr)


def _w_limit(delta):
    return min(40.0, 1.0 / delta)


def _analytic_norm(params: PoissonNormParams) -> float:
    if params.n != 1:
        raise ConfigError("the Analytic quantile source needs n = 1")
    a, d = float(params.weights[0]), params.delta
    m = params.model

    def f(w):
        s = d * w
        if s >= 1.0:
            return 0.0
        return max(a * float(m.tail_quantile(s)), 0.0) * math.exp(-w)

    # split at the zero crossing and in decades of w to help the integrator
    hi = _w_limit(d)
    edges = sorted({x for x in (1e-12, 1e-8, 1e-4, 1e-2, 1.0, 10.0, hi) if x <= hi} | {hi})
    total, prev = 0.0, 0.0
    for e in edges:
        val, _ = integrate.quad(f, prev, e, limit=400, epsabs=1e-13, epsrel=1e-11)
        total += val
        prev = e
    return total


def _empirical_norm(sorted_s: np.ndarray, delta: float) -> float:
    """delta^{-1} int_0^1 max{Q(1-s), 0} e^{-s/delta} ds for a piecewise-linear Q.

    Q interpolates the sorted draws at levels (i - 1/2)/R and is constant
    beyond the extreme levels. Each linear piece is integrated in closed form
    after inserting the zero crossing.
    """
    R = sorted_s.size
    # in terms of s = 1 - level: s_i = 1 - (i - 1/2)/R decreasing with i
    levels = 1.0 - (np.arange(R, 0, -1) - 0.5) / R  # s for sorted_s[::-1]
    vals = sorted_s[::-1]
    # clip the integration range to s <= delta * min(40, 1/delta)
    s_max = min(1.0, delta * _w_limit(delta))
    nodes_s = np.concatenate([[0.0], levels, [1.0]])
    nodes_v = np.concatenate([[vals[0]], vals, [vals[-1]]])
    keep = nodes_s <= s_max
    last = int(np.count_nonzero(keep))
    s_nodes = np.append(nodes_s[:last], s_max)
    v_nodes = np.append(nodes_v[:last], np.interp(s_max, nodes_s, nodes_v))

    s0, s1 = s_nodes[:-1], s_nodes[1:]
    v0, v1 = v_nodes[:-1], v_nodes[1:]
    # split pieces that cross zero
    cross = (v0 * v1 < 0) & (s1 > s0)
    sc = np.where(cross, s0 + (s1 - s0) * v0 / np.where(cross, v0 - v1, 1.0), s1)
    a_s = np.concatenate([s0, sc[cross]])
    b_s = np.concatenate([np.where(cross, sc, s1), s1[cross]])
    a_v = np.concatenate([v0, np.zeros(cross.sum())])
    b_v = np.concatenate([np.where(cross, 0.0, v1), v1[cross]])
    a_v, b_v = np.maximum(a_v, 0.0), np.maximum(b_v, 0.0)
    return float(np.sum(_linear_exp_integral(a_s, b_s, a_v, b_v, delta)))


def _linear_exp_integral(a, b, va, vb, delta):
    """delta^{-1} int_a^b L(s) e^{-s/delta} ds with L linear from va at a to vb at b."""
    h = b - a
    out = np.zeros_like(a)
    live = h > 0
    a, h, va, vb = a[live], h[live], va[live], vb[live]
    x = h / delta
    ea = np.exp(-a / delta)
    e1 = -np.expm1(-x)  # 1 - e^{-x}
    # int_0^1 e^{-x u} du = e1/x, int_0^1 u e^{-x u} du = (e1 - x e^{-x})/x^2
    small = x < 1e-6
    xs = np.where(small, 1.0, x)
    m0 = np.where(small, 1.0 - x / 2.0, e1 / xs)
    m1 = np.where(small, 0.5 - x / 3.0, (e1 - xs * np.exp(-xs)) / (xs * xs))
    out[live] = ea * x * (va * m0 + (vb - va) * m1)
    return out


def _mc_quantile_norm(params: PoissonNormParams, groups: int = 10) -> NormEstimate:
    src = params.quantile_source
    plan = SimulationPlan(src.seed, src.R)
    s = linear_sum_samples(params.model, params.weights, plan, streams.AUX)
    value = _empirical_norm(np.sort(s), params.delta)
    size = s.size // groups
    parts = [_empirical_norm(np.sort(s[g * size:(g + 1) * size]), params.delta) for g in range(groups)]
    stderr = float(np.std(parts, ddof=1) / math.sqrt(groups))
    return NormEstimate(value, stderr)


def _direct_mc(params: PoissonNormParams, method: DirectMC) -> NormEstimate:
    layout = K.SumLayout([params.model] * params.n, params.weights)
    lam = 1.0 / params.delta
    plan = SimulationPlan(method.seed, method.R2, method.chunk_size, method.worker_hint)

    def chunk(c, rows):
        gen = streams.generator(method.seed, streams.POISSON, c)
        counts = gen.poisson(lam, size=rows)
        key = int(gen.bit_generator.random_raw())
        total = int(counts.sum())
        out = np.zeros(rows)
        if total == 0:
            return out
        sums = K.linear_sum(key, 0, total, layout)
        live = counts > 0
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[live]
        out[live] = np.maximum(np.maximum.reduceat(sums, starts), 0.0)
        return out

    m = np.concatenate(run_chunks(plan, chunk))
    return NormEstimate(float(np.mean(m)), float(np.std(m, ddof=1) / math.sqrt(m.size)))


def poisson_hull_norm(params: PoissonNormParams, method=Quadrature(), with_error: bool = False):
    """[a]_delta = E max{0, <a, X^(1)>, ..., <a, X^(N)>}, N ~ Poisson(1/delta).

    ``Quadrature`` integrates the quantile of S = sum a_i X_i against the
    exponential kernel; the quantile is exact (``Analytic``, n = 1) or
    empirical (``MonteCarlo``). ``DirectMC`` simulates the definition. With
    ``with_error`` a :class:`NormEstimate` with a standard error is returned.
    """
    if isinstance(method, DirectMC):
        est = _direct_mc(params, method)
    elif isinstance(method, Quadrature) or method is Quadrature:
        if isinstance(params.quantile_source, Analytic):
            est = NormEstimate(_analytic_norm(params), 0.0)
        else:
            est = _mc_quantile_norm(params)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return est if with_error else est.value


class QuantileComparison(NamedTuple):
    norm: float
    ratio_R: float
    p_upper: TailEstimate
    upper_budget: float
    p_lower: TailEstimate
    lower_budget: float


def _ratio_R(params: PoissonNormParams) -> float:
    d = params.delta
    if isinstance(params.quantile_source, Analytic):
        if params.n != 1:
            raise ConfigError("the Analytic quantile source needs n = 1")
        a, m = float(params.weights[0]), params.model
        v, w = gauss_legendre(2048)
        # s = delta * x^4 flattens the endpoint singularity of the tail quantile
        x = 0.5 * (1.0 + v)
        s = d * x**4
        mean = a * float(np.sum(0.5 * w * 4.0 * x**3 * m.tail_quantile(s)))
        return mean / (a * float(m.tail_quantile(d)))
    src = params.quantile_source
    s = np.sort(linear_sum_samples(params.model, params.weights, SimulationPlan(src.seed, src.R), streams.AUX))
    k = max(1, int(round(d * s.size)))
    q = float(np.quantile(s, 1.0 - d))
    return float(np.mean(s[-k:])) / q


def norm_quantile_comparison(params: PoissonNormParams, R: int, seed: int) -> QuantileComparison:
    """Compare the tail of S with [a]_delta.

    Estimates P{S > 2[a]_delta}, to be set against delta log 2, and
    P{S >= [a]_delta / (1 + R)}, to be set against delta, where
    R = delta^{-1} int_{1-delta}^1 F^{-1}(t) dt / F^{-1}(1 - delta).
    """
    if int(R) != R or R < 10**4:
        raise DomainError("need R >= 10^4")
    norm = poisson_hull_norm(params, Quadrature())
    ratio = _ratio_R(params)
    s = np.sort(linear_sum_samples(params.model, params.weights, SimulationPlan(seed, int(R)), streams.VERIFY))
    upper = int(s.size - np.searchsorted(s, 2.0 * norm, side="right"))
    lower = int(s.size - np.searchsorted(s, norm / (1.0 + ratio), side="left"))
    d = params.delta
    return QuantileComparison(
        norm=norm,
        ratio_R=ratio,
        p_upper=TailEstimate.from_counts(upper, s.size),
        upper_budget=d * math.log(2.0),
        p_lower=TailEstimate.from_counts(lower, s.size),
        lower_budget=d,
    )
