"""Order statistics of uniform samples and upper bounds for trimmed sums.

Contents: the Chernoff bound for binomial tails, a sampler for sorted uniform
samples built from exponential spacings, three per-rank envelopes for uniform
order statistics, and a ladder of upper bounds for sums of the smallest order
statistics of an i.i.d. non-negative sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .distributions import ParetoTail, QuantileModel
from .errors import ConfigError, DomainError, NumericalError
from .special import XiKind, adaptive_simpson, c0_constant, xi1_complement, xi_inverse, xi_inverse_bound

__all__ = [
    "binomial_chernoff",
    "renyi_sample",
    "EnvelopeParams",
    "Envelope",
    "orderstat_envelope",
    "subexp_sum_bound",
    "Quadrature",
    "Replacio",
    "Productiones",
    "ParetoClosed",
    "Glptj",
    "trimmed_sum_bound",
    "glptj_bound",
    "pareto_closed_bound",
]

_SHIFT = 1.0 + 2.0 / math.e  # e^{-1-2/e} appears in every substituted form


def binomial_chernoff(n: int, p: float, s: float) -> float:
    """(np/s)^s ((n-np)/(n-s))^(n-s), an upper bound for P{Bin(n,p) >= s}.

    Requires np <= s < n. Evaluated in logs; 0^0 is taken as 1.
    """
    n = int(n)
    if n < 1 or not 0 < p < 1:
        raise DomainError("need n >= 1 and p in (0, 1)")
    mu = n * p
    if not (mu <= s < n):
        raise DomainError("need np <= s < n")
    log_b = 0.0
    if s > 0:
        log_b += s * math.log(mu / s)
    if n - s > 0:
        log_b += (n - s) * math.log((n - mu) / (n - s))
    return math.exp(min(log_b, 0.0))


def renyi_sample(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Sorted uniform order statistics via -log(1 - g_(k)) = sum_{j<=k} E_j/(n-j+1).

    Returns shape (n,) or (size, n). No sorting step is involved.
    """
    n = int(n)
    if n < 1:
        raise DomainError("n must be positive")
    rows = 1 if size is None else int(size)
    key = int(rng.bit_generator.random_raw())
    out = K.renyi_order_stats(key, 0, rows, n)
    return out[0] if size is None else out


@dataclass(frozen=True)
class EnvelopeParams:
    n: int
    t: float
    renyi_C: float = 4.0
    renyi_c: float = 0.125

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        if not self.t > 0:
            raise DomainError("t must be positive")
        if not self.renyi_C >= 1:
            raise DomainError("renyi_C must be at least 1")
        if not 0 < self.renyi_c <= 1:
            raise DomainError("renyi_c must lie in (0, 1]")


@dataclass(frozen=True)
class Envelope:
    """Per-rank upper envelopes (index k-1 holds rank k), clamped to [0, 1]."""

    top: np.ndarray
    bottom: np.ndarray
    renyi: np.ndarray
    renyi_linear: np.ndarray
    joint_probability: float
    renyi_probability: float

    @property
    def combined(self) -> np.ndarray:
        return np.minimum(self.top, self.bottom)


def orderstat_envelope(params: EnvelopeParams, closed_form: bool = False) -> Envelope:
    """Upper envelopes for the order statistics of n uniforms at deviation level t.

    ``top`` and ``bottom`` hold jointly for all k except on an event of
    probability at most (pi^2/3) e^{-t^2/2}. ``renyi`` and its linearization
    ``renyi_linear`` hold except with probability renyi_C e^{-t^2/2}, where
    renyi_C is a modelling constant. With ``closed_form`` the closed-form
    inverse bounds replace the exact numeric xi-inverses.
    """
    n, t = int(params.n), float(params.t)
    k = np.arange(1, n + 1, dtype=float)
    m = n - k + 1.0
    y_top = np.exp((-t * t - 4.0 * np.log(k)) / (2.0 * k))
    y_bot = np.exp((-t * t - 4.0 * np.log(m)) / (2.0 * m))
    if closed_form:
        inv2 = xi_inverse_bound(XiKind.XI2, y_top)
        comp1 = 1.0 - xi_inverse_bound(XiKind.XI1, y_bot)
    else:
        inv2 = xi_inverse(XiKind.XI2, y_top, 1e-12)
        comp1 = xi1_complement(y_bot)
    top = k / (n + 1.0) * (1.0 + inv2)
    bottom = 1.0 - m / (n + 1.0) * comp1

    c = params.renyi_c
    with np.errstate(divide="ignore", invalid="ignore"):
        lk = np.log(k)
        spread = np.maximum(
            (t + np.sqrt(lk)) * np.sqrt(k) / np.sqrt(n * m),
            (t * t + lk) / m,
        )
    renyi = 1.0 - (n - k) / n * np.exp(-c * spread)
    renyi_linear = k / n + c * (n - k) / n * spread

    def clamp(a):
        return np.clip(np.asarray(a, dtype=float), 0.0, 1.0)

    prob = math.exp(-0.5 * t * t)
    return Envelope(
        top=clamp(top),
        bottom=clamp(bottom),
        renyi=clamp(renyi),
        renyi_linear=clamp(renyi_linear),
        joint_probability=math.pi**2 / 3.0 * prob,
        renyi_probability=params.renyi_C * prob,
    )


def subexp_sum_bound(a, r: float, c: float = 0.125) -> float:
    """2 exp(-c min{(r/|a|_2)^2, r/|a|_inf}) for P{|sum a_j (E_j - 1)| > r}."""
    a = np.asarray(a, dtype=float)
    norm_inf = float(np.max(np.abs(a))) if a.size else 0.0
    if norm_inf == 0.0:
        raise DomainError("coefficient vector must be nonzero")
    if not r > 0:
        raise DomainError("r must be positive")
    norm2 = float(np.linalg.norm(a))
    return 2.0 * math.exp(-c * min((r / norm2) ** 2, r / norm_inf))


# ---------------------------------------------------------------------------
# trimmed sums


@dataclass(frozen=True)
class Quadrature:
    """Quantile integral form, evaluated numerically."""


@dataclass(frozen=True)
class Replacio:
    """Substituted integral form; ``c0`` defaults to the computed C_0."""

    c0: float | None = None


@dataclass(frozen=True)
class Productiones:
    """Three-term bound for quantiles obeying H*(dx) >= T^-1 d^{-1/p} H*(x)."""

    p: float
    T: float = 1.0


@dataclass(frozen=True)
class ParetoClosed:
    """Closed form for Pareto tails with a single multiplicative constant C."""

    C: float = 1.0


@dataclass(frozen=True)
class Glptj:
    """Explicit threshold/probability pair with no free constants."""


def _check_indices(n, j, k):
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if not (0 <= j <= k < n):
        raise DomainError("need 0 <= j <= k < n")


def _check_nonneg(model: QuantileModel):
    if model.lower_quantile(1e-12) < 0:
        raise ConfigError("trimmed-sum bounds need a non-negative model")


def _log_integral(f, a, b, rel_tol=1e-9):
    """Integral of f over [a, b] (0 < a <= b) computed in the variable log x."""
    if b <= a:
        return 0.0
    return adaptive_simpson(lambda u: f(math.exp(u)) * math.exp(u), math.log(a), math.log(b),
                            abs_tol=1e-12, rel_tol=rel_tol)


def _quadrature_bound(model, n, j, k, lam):
    lam2 = lam * lam
    y0 = math.exp((-lam2 - 4.0 * math.log(j + 1.0)) / (2.0 * (j + 1.0)))
    first = model.tail_quantile((j + 1.0) / (n + 1.0) * xi1_complement(y0))
    if k == j:
        return float(first)

    def integrand(t):
        m = (n + 1.0) * t
        y = math.exp((-lam2 - 4.0 * math.log(m)) / (2.0 * m))
        return float(model.tail_quantile(t * xi1_complement(y)))

    integral = _log_integral(integrand, (j + 1.0) / (n + 1.0), (k + 1.0) / (n + 1.0))
    return float(first) + (n + 1.0) * integral


def _replacio_bound(model, n, j, k, lam, c0):
    lam2 = lam * lam
    first = model.tail_quantile(
        (j + 1.0) / (n + 1.0) * math.exp(-1.0 + (-lam2 - 4.0 * math.log(j + 1.0)) / (2.0 * (j + 1.0)))
    )
    if k == j:
        return float(first)

    def zeta(m):
        return 2.0 * m / lam2 * math.exp(-lam2 / (2.0 * m))

    scale = math.exp(-_SHIFT) * lam2 / (2.0 * (n + 1.0))

    def integrand(z):
        weight = 1.0 + 1.0 / (z * math.log(math.e + 1.0 / z) ** 2)
        return float(model.tail_quantile(scale * z)) * weight

    integral = _log_integral(integrand, zeta(j + 1.0), zeta(k + 1.0))
    return float(first) + 0.5 * lam2 * c0 * integral


def _check_growth(model, p, T):
    d = np.logspace(-12, -1e-9, 60)
    x = np.logspace(-12, -1e-9, 60)
    dd, xx = np.meshgrid(d, x)
    lhs = model.tail_quantile(dd * xx)
    rhs = model.tail_quantile(xx) * dd ** (-1.0 / p) / T
    if np.any(lhs < rhs * (1.0 - 1e-9)):
        raise ConfigError("model violates the growth condition H*(dx) >= T^-1 d^{-1/p} H*(x)")


def productiones_A(n, j, k, lam, p):
    """The correction factor A of the three-term bound (all constants set to 1)."""
    lam2 = lam * lam
    if lam2 / 2.0 <= j + 1:
        return 0.0
    kk = min(lam2 / 2.0, k + 1.0)
    first = min(p, lam2 * (1.0 / (j + 1.0) - 1.0 / kk)) * (p + 1.0 + lam2 / (j + 1.0)) ** -2
    a = lam2 / (2.0 * (j + 1.0))
    second = (
        min(1.0, math.log(min(k + 1.0, lam2 / 2.0) / (j + 1.0)))
        * (a * math.exp(a)) ** (-1.0 / p)
        / (1.0 + lam2 / (k + 1.0))
    )
    return first + second


def _productiones_bound(model, n, j, k, lam, p, T):
    lam2 = lam * lam
    A = productiones_A(n, j, k, lam, p)
    head = (1.0 + T * lam2 * A) * model.tail_quantile(
        math.exp(-_SHIFT) * (j + 1.0) / (n + 1.0) * math.exp(-lam2 / (2.0 * (j + 1.0)))
    )

    def edge(m):
        return m / (n + 1.0) * math.exp(-lam2 / (2.0 * m) - _SHIFT)

    integral = _log_integral(lambda x: float(model.tail_quantile(x)), edge(j + 1.0), edge(k + 1.0))
    return float(head) + n * integral


def pareto_closed_bound(p: float, n: int, j: int, lam: float, C: float = 1.0) -> float:
    """C [pn/(p-1) + (1 + (j+1) min{b^2, 1/b}) (n/(j+1))^{1/p} e^{lam^2/(2p(j+1))}], b = lam^2/(p(j+1))."""
    if not p > 1:
        raise DomainError("need p > 1")
    j1 = j + 1.0
    b = lam * lam / (p * j1)
    heavy = (1.0 + j1 * min(b * b, 1.0 / b)) * (n / j1) ** (1.0 / p) * math.exp(lam * lam / (2.0 * p * j1))
    return C * (p * n / (p - 1.0) + heavy)


def glptj_bound(p: float, n: int, k: int, s: float):
    """(threshold, probability) = (12 p (e s)^{1/p} n / (p-1), s^-k) for s > 1."""
    if not p > 1 or not s > 1 or k < 1:
        raise DomainError("need p > 1, s > 1 and k >= 1")
    return 12.0 * p * (math.e * s) ** (1.0 / p) * n / (p - 1.0), s ** (-float(k))


def trimmed_sum_bound(model: QuantileModel, n: int, j: int, k: int, lam: float, variant):
    """Upper bound for sum_{i=n-k}^{n-j} Y_(i) holding with probability about 1 - C e^{-lam^2/2}.

    ``Glptj`` returns a (threshold, probability) pair with s = exp(lam^2/(2k));
    every other variant returns a single number. ``ParetoClosed`` and
    ``Glptj`` bound the sum of the n-j smallest values, so ``k`` is ignored
    for the former (it is n-1 implicitly) and plays the role of j+1 in the latter.
    """
    n, j, k = int(n), int(j), int(k)
    if isinstance(variant, (ParetoClosed, Glptj)):
        if not isinstance(model, ParetoTail):
            raise ConfigError(f"{type(variant).__name__} needs a ParetoTail model")
        if isinstance(variant, ParetoClosed):
            if not 0 <= j < n:
                raise DomainError("need 0 <= j < n")
            return pareto_closed_bound(model.p, n, j, lam, variant.C)
        if k < 1:
            raise DomainError("Glptj needs k >= 1")
        return glptj_bound(model.p, n, k, math.exp(lam * lam / (2.0 * k)))

    _check_indices(n, j, k)
    if not lam >= 2:
        raise DomainError("lambda must be at least 2")
    _check_nonneg(model)
    try:
        if isinstance(variant, Quadrature):
            return _quadrature_bound(model, n, j, k, lam)
        if isinstance(variant, Replacio):
            c0 = c0_constant() if variant.c0 is None else float(variant.c0)
            return _replacio_bound(model, n, j, k, lam, c0)
        if isinstance(variant, Productiones):
            if not (variant.p > 0 and variant.T >= 1):
                raise ConfigError("Productiones needs p > 0 and T >= 1")
            _check_growth(model, variant.p, variant.T)
            return _productiones_bound(model, n, j, k, lam, variant.p, variant.T)
    except (OverflowError, ZeroDivisionError) as exc:
        raise NumericalError(str(exc)) from exc
    raise ConfigError(f"unknown trimmed-sum variant {variant!r}")
