"""Reference bounds that the deviation certificates are compared against.

Latala's moment functional |X|_(p), the optimized Markov envelope
min_p t^{-p} E|X|^p, a nonuniform Berry-Esseen envelope and the
Barthe-Cattiaux-Roberto deviation bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sp

from .distributions import PureParetoH, QuantileModel, StandardNormal
from .errors import ConfigError, DomainError

__all__ = [
    "latala_norm",
    "MomentTable",
    "default_p_grid",
    "markov_envelope",
    "berry_esseen_nonuniform",
    "bcr_bound",
    "bcr_comparison",
    "w_mixture_moment",
    "LATALA_LOWER",
    "LATALA_UPPER",
]

LATALA_LOWER = (math.e - 1.0) / (2.0 * math.e**2)
LATALA_UPPER = math.e
_LATALA_NODES = 10_000


def _latala_phi(groups, t, p):
    total = 0.0
    for model, count in groups:
        def f(x):
            y = x / t
            return 0.5 * (np.abs(1.0 + y) ** p + np.abs(1.0 - y) ** p)

        val = model.expectation(f, p_hint=p, nodes=_LATALA_NODES)
        if not (val > 0 and math.isfinite(val)):
            return math.inf
        total += count * math.log(val)
    return total


def latala_norm(models, p: float, tol: float = 1e-8) -> float:
    """inf{t > 0 : sum_i ln E (|1 + X_i/t|^p + |1 - X_i/t|^p)/2 <= p}.

    The left side decreases in t, so the infimum is found by bisection in
    log t. Returns +inf when some p-th moment is infinite.
    """
    if isinstance(models, QuantileModel):
        models = [models]
    models = list(models)
    if not models:
        raise DomainError("need at least one model")
    if not p >= 2:
        raise DomainError("p must be at least 2")
    for m in models:
        if not m.symmetric:
            raise ConfigError(f"{type(m).__name__} is not symmetric about 0")
    if any(p >= m.tail_exponent for m in models):
        return math.inf
    groups = {}
    for m in models:
        groups[m] = groups.get(m, 0) + 1
    groups = list(groups.items())

    def phi(t):
        return _latala_phi(groups, t, p)

    hi = 1.0
    while phi(hi) > p:
        hi *= 2.0
        if hi > 1e300:
            raise DomainError("no finite t satisfies the moment condition")
    lo = hi
    while phi(lo) <= p:
        lo *= 0.5
        if lo < 1e-300:
            return 0.0
    while hi - lo > tol * hi:
        mid = math.sqrt(lo * hi)
        if phi(mid) <= p:
            hi = mid
        else:
            lo = mid
    return hi


def default_p_grid(alpha: float, p_min: float = 2.0, points: int = 400) -> np.ndarray:
    """p-grid on [p_min, alpha) refined geometrically toward alpha.

    For infinite alpha the grid is geometric on [p_min, 64].
    """
    if not math.isfinite(alpha):
        return np.geomspace(p_min, 64.0, points)
    if not alpha > p_min:
        raise DomainError("need a tail exponent above p_min")
    gap = alpha - p_min
    return alpha - gap * np.geomspace(1.0, 1e-6, points)


@dataclass(frozen=True, eq=False)
class MomentTable:
    """E|X|^p for a model on a fixed p-grid (+inf at or beyond the tail exponent)."""

    model: QuantileModel
    p_grid: np.ndarray = None
    moments: np.ndarray = field(init=False)

    def __post_init__(self):
        grid = default_p_grid(self.model.tail_exponent) if self.p_grid is None else self.p_grid
        grid = np.array(grid, dtype=float).ravel()
        if grid.size == 0 or np.any(grid < 1):
            raise DomainError("p-grid must be nonempty with entries >= 1")
        grid.setflags(write=False)
        mom = np.array([self.model.moment(p) for p in grid])
        mom.setflags(write=False)
        object.__setattr__(self, "p_grid", grid)
        object.__setattr__(self, "moments", mom)

    def envelope(self, t: float) -> float:
        if not t > 1:
            raise DomainError("t must exceed 1")
        with np.errstate(over="ignore", invalid="ignore"):
            vals = np.exp(np.log(self.moments) - self.p_grid * math.log(t))
        return float(np.nanmin(vals))


def markov_envelope(model: QuantileModel, t: float, p_grid=None) -> float:
    """min over the p-grid of t^{-p} E|X|^p, a Markov bound for P{|X| > t}."""
    if isinstance(model, MomentTable):
        return model.envelope(t)
    return MomentTable(model, p_grid).envelope(t)


def berry_esseen_nonuniform(r: float, n: int, x: float, m3: float, mr: float, Cr: float = 1.0) -> float:
    """Cr (1 + |x|)^{-r} (n^{-1/2} m3 + n^{-(r-2)/2} mr)."""
    if not r >= 3:
        raise DomainError("r must be at least 3")
    if not (m3 > 0 and mr > 0 and Cr > 0) or n < 1:
        raise DomainError("moments, Cr and n must be positive")
    return Cr * (1.0 + abs(x)) ** (-r) * (n**-0.5 * m3 + n ** (-(r - 2.0) / 2.0) * mr)


def bcr_bound(alpha: float, n: int, t: float, C_alpha: float = 1.0):
    """(t n^{1/alpha}, C_alpha (log t / t)^alpha) for t > e."""
    if not alpha > 0 or n < 1:
        raise DomainError("need alpha > 0 and n >= 1")
    if not t > math.e:
        raise DomainError("t must exceed e")
    return t * n ** (1.0 / alpha), C_alpha * (math.log(t) / t) ** alpha


def bcr_comparison(q: float, n: int, t: float, C: float = 1.0, Cq: float = 1.0):
    """Linear-functional form (C q^{-1} t^2 e^{t^2/(2q)} n^{1/q}, Cq e^{-t^2/2})."""
    if not q > 0 or n < 1 or not t > 0:
        raise DomainError("need q > 0, n >= 1 and t > 0")
    dev = C / q * t * t * math.exp(t * t / (2.0 * q)) * n ** (1.0 / q)
    return dev, Cq * math.exp(-0.5 * t * t)


def w_mixture_moment(p: float, eps: float, exponent: float = 10.0):
    """(E|W|^p)^{1/p} for W = Z + U H and its ratio to 1 + eps^{1/p} / (exponent - p)^{1/p}.

    Z standard normal, U Bernoulli(eps), H symmetric with P{|H| > t} = t^{-exponent}
    for t >= 1, all independent. E|Z + h|^p uses the confluent hypergeometric
    closed form for moderate h and Gauss-Hermite (whose nodes then stay clear
    of the kink at z = -h) for large h; the result is integrated over |H|.
    """
    if not 1 <= p < exponent or not 0 <= eps <= 1:
        raise DomainError("need 1 <= p < exponent and eps in [0, 1]")
    z, wz = np.polynomial.hermite_e.hermegauss(160)
    wz = wz / math.sqrt(2.0 * math.pi)
    lead = 2.0 ** (p / 2.0) * sp.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)

    def g(h):
        h = np.abs(np.asarray(h, dtype=float))
        small = h <= 30.0
        hs = np.where(small, h, 0.0)
        closed = lead * sp.hyp1f1(-p / 2.0, 0.5, -0.5 * hs * hs)
        hb = np.where(small, 31.0, h)
        quad = np.sum(wz * np.abs(z + hb[..., None]) ** p, axis=-1)
        return np.where(small, closed, quad)

    ez = StandardNormal().moment(p)
    eh = PureParetoH(exponent).expectation(g, p_hint=p)
    value = ((1.0 - eps) * ez + eps * eh) ** (1.0 / p)
    return value, value / (1.0 + eps ** (1.0 / p) / (exponent - p) ** (1.0 / p))
