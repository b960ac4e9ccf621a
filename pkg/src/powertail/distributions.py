"""One-dimensional distribution models exposed through their quantile functions.

Every model provides the lower quantile ``quantile(u) = F^{-1}(u)`` and the
upper-tail quantile ``tail_quantile(x) = F^{-1}(1 - x)``, each accurate for
arguments close to 0, so heavy tails can be integrated and sampled without
cancellation. Models are immutable and safe to share between threads.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sp

from . import _kernels as K
from .errors import ConfigError, DomainError, NumericalError
from .streams import raw_to_uniform

__all__ = [
    "QuantileModel",
    "StandardNormal",
    "ParetoTail",
    "SymmetricPowerLaw",
    "UEnvelope",
    "PureParetoH",
    "Empirical",
    "model_from_dict",
    "gaussian_transform_sample",
    "normal_cdf",
    "normal_quantile",
    "gauss_legendre",
]


def normal_cdf(z):
    return sp.ndtr(z)


def normal_quantile(u):
    """Standard normal quantile: rational approximation plus one Halley step."""
    return K.ndtri(u)


@functools.lru_cache(maxsize=8)
def gauss_legendre(nodes: int):
    """Cached Gauss-Legendre nodes and weights on [-1, 1] (read-only arrays)."""
    x, w = sp.roots_legendre(int(nodes))
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _as_u(u):
    arr = np.asarray(u, dtype=float)
    if np.any(~(arr > 0)) or np.any(~(arr < 1)):
        raise DomainError("quantile argument must lie in the open interval (0, 1)")
    return arr


def _out(arr):
    arr = np.asarray(arr, dtype=float)
    return float(arr) if arr.ndim == 0 else arr


@dataclass(frozen=True)
class QuantileModel:
    """Base class. Subclasses implement ``_lower``, ``_upper`` and ``_cdf``."""

    kernel_code = -1

    # -- quantiles -------------------------------------------------------
    def quantile(self, u):
        """Generalized inverse F^{-1}(u) = inf{t : F(t) >= u} for u in (0, 1)."""
        u = _as_u(u)
        hi = u > 0.5
        out = np.where(hi, self._upper(np.where(hi, 1.0 - u, 0.5)), self._lower(np.where(hi, 0.5, u)))
        return _out(out)

    def tail_quantile(self, x):
        """F^{-1}(1 - x), accurate for small x."""
        x = _as_u(x)
        return _out(self._upper(x))

    def lower_quantile(self, x):
        """F^{-1}(x), accurate for small x (same as ``quantile``)."""
        x = _as_u(x)
        return _out(self._lower(x))

    def cdf(self, t):
        return _out(self._cdf(np.asarray(t, dtype=float)))

    # -- descriptors -----------------------------------------------------
    @property
    def tail_exponent(self) -> float:
        return math.inf

    @property
    def symmetric(self) -> bool:
        return False

    @property
    def kernel_par(self) -> float:
        return 0.0

    @property
    def kernel_table(self) -> np.ndarray:
        return np.zeros(1)

    # -- sampling --------------------------------------------------------
    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Inverse-transform sample driven by the raw words of ``rng``."""
        size = tuple(np.atleast_1d(size).astype(int))
        raw = rng.bit_generator.random_raw(int(np.prod(size))).reshape(size)
        return self._from_uniform(raw_to_uniform(raw))

    def _from_uniform(self, u):
        return K.quantile_np(self.kernel_code, self.kernel_par, u, self.kernel_table)

    # -- integrals -------------------------------------------------------
    def expectation(self, f, p_hint: float = 1.0, nodes: int = 4096) -> float:
        """E f(X) by Gauss-Legendre on the quantile scale.

        Each half of (0, 1) is mapped to v in (-1, 1) by x = (1/2)((1+v)/2)^kappa,
        which flattens the endpoint singularity when |f(x)| grows like |x|^p_hint.
        """
        v, w = gauss_legendre(nodes)
        alpha = self.tail_exponent
        ratio = p_hint / alpha if math.isfinite(alpha) else 0.0
        kappa = max(2.0, 4.0 / (1.0 - ratio)) if ratio < 1 else 8.0
        s = 0.5 * (1.0 + v)
        x = 0.5 * s**kappa
        jac = 0.25 * kappa * s ** (kappa - 1.0)
        x = np.clip(x, 1e-300, 0.5)
        with np.errstate(over="ignore", invalid="ignore"):
            vals = f(self._lower(x)) + f(self._upper(x))
            total = float(np.sum(w * jac * vals))
        if not math.isfinite(total):
            raise NumericalError("non-finite expectation")
        return total

    def moment(self, p: float) -> float:
        """E|X|^p, or +inf when p reaches the tail exponent."""
        if not p >= 1:
            raise DomainError("moment order must be at least 1")
        if p >= self.tail_exponent:
            return math.inf
        return self.expectation(lambda x: np.abs(x) ** p, p_hint=p)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        raise NotImplementedError

    def kernel_spec(self):
        return self.kernel_code, self.kernel_par, self.kernel_table


@dataclass(frozen=True)
class StandardNormal(QuantileModel):
    kernel_code = K.STANDARD_NORMAL

    def _lower(self, x):
        return K.ndtri(x)

    def _upper(self, x):
        return -K.ndtri(x)

    def _cdf(self, t):
        return sp.ndtr(t)

    @property
    def symmetric(self):
        return True

    def to_dict(self):
        return {"kind": "standard_normal"}


@dataclass(frozen=True)
class ParetoTail(QuantileModel):
    """Survival P{Y > t} = min(1, t^-p); upper-tail quantile H*(x) = x^{-1/p}."""

    p: float = 3.0
    kernel_code = K.PARETO_TAIL

    def __post_init__(self):
        if not self.p > 1:
            raise DomainError("ParetoTail needs p > 1")

    def _lower(self, x):
        return np.exp(-np.log1p(-x) / self.p)

    def _upper(self, x):
        return np.exp(-np.log(x) / self.p)

    def _cdf(self, t):
        with np.errstate(divide="ignore"):
            return np.where(t >= 1.0, -np.expm1(-self.p * np.log(np.maximum(t, 1.0))), 0.0)

    @property
    def tail_exponent(self):
        return float(self.p)

    @property
    def kernel_par(self):
        return float(self.p)

    def to_dict(self):
        return {"kind": "pareto_tail", "p": float(self.p)}


@dataclass(frozen=True)
class SymmetricPowerLaw(QuantileModel):
    """Symmetric law with P{|Y| > t} = (1 + t)^-q."""

    q: float = 4.0
    kernel_code = K.SYMMETRIC_POWER_LAW

    def __post_init__(self):
        if not self.q > 0:
            raise DomainError("SymmetricPowerLaw needs q > 0")

    def _upper(self, x):
        return np.expm1(-np.log(2.0 * x) / self.q)

    def _lower(self, x):
        return -self._upper(x)

    def _cdf(self, t):
        half = 0.5 * (1.0 + np.abs(t)) ** (-self.q)
        return np.where(t < 0, half, 1.0 - half)

    @property
    def tail_exponent(self):
        return float(self.q)

    @property
    def symmetric(self):
        return True

    @property
    def kernel_par(self):
        return float(self.q)

    def to_dict(self):
        return {"kind": "symmetric_power_law", "q": float(self.q)}


@dataclass(frozen=True)
class UEnvelope(QuantileModel):
    """Quantile G^{-1}(t) = ((1-t)/2)^{-2/q} log(2/(1-t)); tail exponent q/2."""

    q: float = 4.0
    kernel_code = K.U_ENVELOPE

    def __post_init__(self):
        if not self.q > 0:
            raise DomainError("UEnvelope needs q > 0")

    def _g(self, m):
        return m ** (-2.0 / self.q) * np.log(1.0 / m)

    def _upper(self, x):
        return self._g(0.5 * x)

    def _lower(self, x):
        return self._g(0.5 * (1.0 - x))

    def _cdf(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        live = t > self._g(0.5)
        if np.any(live):
            # bisection on log m, where g is decreasing in m on (0, 1/2]
            lo = np.full(live.sum(), -745.0)
            hi = np.full(live.sum(), math.log(0.5))
            target = t[live]
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                big = self._g(np.exp(mid)) > target
                lo = np.where(big, mid, lo)
                hi = np.where(big, hi, mid)
            out[live] = 1.0 - 2.0 * np.exp(0.5 * (lo + hi))
        return out if out.size > 1 else out[0]

    @property
    def tail_exponent(self):
        return 0.5 * float(self.q)

    @property
    def kernel_par(self):
        return float(self.q)

    def to_dict(self):
        return {"kind": "u_envelope", "q": float(self.q)}


@dataclass(frozen=True)
class PureParetoH(QuantileModel):
    """Symmetric law with P{|H| > t} = t^-exponent for t >= 1."""

    exponent: float = 10.0
    kernel_code = K.PURE_PARETO_H

    def __post_init__(self):
        if not self.exponent > 0:
            raise DomainError("PureParetoH needs exponent > 0")

    def _upper(self, x):
        return np.exp(-np.log(2.0 * x) / self.exponent)

    def _lower(self, x):
        return -self._upper(x)

    def _cdf(self, t):
        a = np.abs(t)
        half = 0.5 * np.where(a >= 1.0, a, 1.0) ** (-self.exponent)
        return np.where(t < 0, half, 1.0 - half)

    @property
    def tail_exponent(self):
        return float(self.exponent)

    @property
    def symmetric(self):
        return True

    @property
    def kernel_par(self):
        return float(self.exponent)

    def to_dict(self):
        return {"kind": "pure_pareto_h", "exponent": float(self.exponent)}


@dataclass(frozen=True, eq=False)
class Empirical(QuantileModel):
    """Distribution of a finite sample.

    ``interpolation="midpoint"`` places the i-th order statistic at level
    (i + 1/2)/n and interpolates linearly (constant beyond the ends).
    ``interpolation="step"`` is the exact generalized inverse of the
    empirical CDF, the right choice for genuinely discrete laws.
    """

    values: np.ndarray = field(default_factory=lambda: np.zeros(1))
    interpolation: str = "midpoint"

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise DomainError("Empirical needs a nonempty finite sample")
        if self.interpolation not in ("midpoint", "step"):
            raise DomainError("interpolation must be 'midpoint' or 'step'")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def rademacher(cls) -> "Empirical":
        return cls(np.array([-1.0, 1.0]), interpolation="step")

    @property
    def kernel_code(self):
        return K.EMPIRICAL_STEP if self.interpolation == "step" else K.EMPIRICAL_MIDPOINT

    @property
    def kernel_table(self):
        return self.values

    def _lower(self, x):
        return K.quantile_np(self.kernel_code, 0.0, x, self.values)

    def _upper(self, x):
        n = self.values.size
        x = np.asarray(x, dtype=float)
        if self.interpolation == "step":
            # ceil((1-x) n) - 1 = n - floor(x n) - 1, without forming 1-x
            k = n - np.floor(x * n).astype(np.int64) - 1
            return self.values[np.clip(k, 0, n - 1)]
        return K.quantile_np(self.kernel_code, 0.0, 1.0 - x, self.values)

    def _cdf(self, t):
        n = self.values.size
        if self.interpolation == "step":
            return np.searchsorted(self.values, t, side="right") / n
        pos = (np.arange(n) + 0.5) / n
        left = np.where(t < self.values[0], 0.0, pos[0])
        inner = np.interp(t, self.values, pos)
        return np.where(t < self.values[0], left, np.where(t >= self.values[-1], 1.0, inner))

    @property
    def symmetric(self):
        return bool(np.allclose(self.values, -self.values[::-1], rtol=0, atol=1e-12))

    def expectation(self, f, p_hint: float = 1.0, nodes: int = 4096) -> float:
        if self.interpolation == "step":
            return float(np.mean(f(self.values)))
        return super().expectation(f, p_hint, nodes)

    def to_dict(self):
        return {"kind": "empirical", "values": self.values.tolist(), "interpolation": self.interpolation}

    def __eq__(self, other):
        return (
            isinstance(other, Empirical)
            and self.interpolation == other.interpolation
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.interpolation, self.values.tobytes()))


_KINDS = {
    "standard_normal": (StandardNormal, ()),
    "pareto_tail": (ParetoTail, ("p",)),
    "symmetric_power_law": (SymmetricPowerLaw, ("q",)),
    "u_envelope": (UEnvelope, ("q",)),
    "pure_pareto_h": (PureParetoH, ("exponent",)),
}


def model_from_dict(spec: dict) -> QuantileModel:
    """Build a model from its JSON form, e.g. {"kind": "symmetric_power_law", "q": 4.0}."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("model spec needs a 'kind' key")
    kind = spec["kind"]
    rest = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "rademacher":
        if rest:
            raise ConfigError(f"unexpected key {sorted(rest)[0]!r} for rademacher")
        return Empirical.rademacher()
    if kind == "empirical":
        unknown = set(rest) - {"values", "interpolation"}
        if unknown or "values" not in rest:
            raise ConfigError(f"bad key {sorted(unknown)[0] if unknown else 'values'!r} for empirical")
        return Empirical(np.asarray(rest["values"], dtype=float), rest.get("interpolation", "midpoint"))
    if kind not in _KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    cls, keys = _KINDS[kind]
    unknown = set(rest) - set(keys)
    if unknown:
        raise ConfigError(f"unexpected key {sorted(unknown)[0]!r} for {kind}")
    missing = [k for k in keys if k not in rest]
    if missing:
        raise ConfigError(f"missing key {missing[0]!r} for {kind}")
    return cls(**{k: float(rest[k]) for k in keys})


def gaussian_transform_sample(models, z) -> np.ndarray:
    """Coordinatewise quantile transform (F_i^{-1}(Phi(z_i)))_i of a Gaussian vector.

    Positive z_i go through the upper-tail quantile at Phi(-z_i) so that
    no precision is lost in the upper tail.
    """
    z = np.asarray(z, dtype=float)
    models = list(models)
    if z.shape[-1] != len(models):
        raise DomainError("need one model per coordinate")
    out = np.empty_like(z)
    lower = normal_cdf(-np.abs(z))
    for i, m in enumerate(models):
        zi = z[..., i]
        li = np.clip(lower[..., i], 1e-300, 0.5)
        out[..., i] = np.where(zi > 0, m._upper(li), m._lower(li))
    return out


def lipschitz_envelope(model: QuantileModel, q: float, grid: int = 2000):
    """Check Lip(F^{-1}, s) <= C_q min(s, 1-s)^{-1-1/q} by finite differences.

    The grid is log-spaced in m = min(s, 1-s) over [1e-9, 1/2] on both sides.
    Returns ``(passes, smallest_cq)`` where ``smallest_cq`` is the largest
    observed ratio Lip / m^{-1-1/q}. The check passes when that ratio does not
    keep growing toward either endpoint: on m <= 1e-3 its log-log slope in m
    must be at least -0.02 on both sides.
    """
    if grid < 1000:
        raise DomainError("grid must be at least 1000")
    if not q > 0:
        raise DomainError("q must be positive")
    m = np.logspace(-9.0, math.log10(0.5), int(grid))
    h = 1e-3 * m
    with np.errstate(all="ignore"):
        lo = (model._lower(m + h) - model._lower(m - h)) / (2.0 * h)
        up = (model._upper(m - h) - model._upper(m + h)) / (2.0 * h)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
        raise NumericalError("non-finite quantile values")
    scale = m ** (1.0 + 1.0 / q)
    r_lo, r_up = lo * scale, up * scale
    cq = float(max(r_lo.max(), r_up.max()))

    def slope(r):
        sel = (m <= 1e-3) & (r > 0)
        if sel.sum() < 2:
            return 0.0
        return float(np.polyfit(np.log(m[sel]), np.log(r[sel]), 1)[0])

    passes = slope(r_lo) >= -0.02 and slope(r_up) >= -0.02
    return bool(passes), cq
