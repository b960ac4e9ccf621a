"""Deviation certificates for weighted sums of independent power-tailed variables.

A certificate pairs a coefficient vector ``a`` with a bound t -> B(t) and the
claim P{|sum a_i X_i - median| > B(t)} <= c_prob exp(-t^2/2). The deviation
multiplier ``c_dev`` and ``c_prob`` are left free and measured by
:func:`powertail.montecarlo.calibrate`.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import special as sp

from .errors import ConfigError, DomainError
from .special import ln_star

__all__ = [
    "CertKind",
    "DeviationCertificate",
    "lorentz_weight",
    "bound_at",
    "gradient_envelope",
    "dyadic_compress",
    "DyadicResult",
    "all_directions_coefficient",
    "generate_coefficients",
]


class CertKind(enum.Enum):
    MAIN = "main"
    SPECIAL_DIRECTION = "special_direction"
    ALL_DIRECTIONS = "all_directions"

    @classmethod
    def coerce(cls, kind) -> "CertKind":
        if isinstance(kind, cls):
            return kind
        name = str(kind).lower().replace("-", "_")
        aliases = {"special": "special_direction", "all": "all_directions"}
        try:
            return cls(aliases.get(name, name))
        except ValueError:
            raise ConfigError(f"unknown certificate kind {kind!r}") from None


def _rearranged(a) -> np.ndarray:
    return np.sort(np.abs(np.asarray(a, dtype=float)).ravel())[::-1]


def lorentz_weight(a, q: float) -> float:
    """sum_i i^{-1+2/q} a_[i]^2 over the nonincreasing rearrangement of |a|."""
    if not q > 2:
        raise DomainError("q must exceed 2")
    s = _rearranged(a)
    i = np.arange(1, s.size + 1, dtype=float)
    return float(np.sum(i ** (-1.0 + 2.0 / q) * s * s))


def all_directions_coefficient(n: int, q: float, cq: float) -> float:
    """cq^{1 + (1 - 2/q) ln*(n, cq)}."""
    if not q > 2 or not cq > 1:
        raise DomainError("need q > 2 and cq > 1")
    return cq ** (1.0 + (1.0 - 2.0 / q) * ln_star(n, cq))


_GEN = re.compile(r"^(unit|uniform|e1|critical)(?:\(([^)]*)\))?:(\d+)$")


def generate_coefficients(tag: str, q: float | None = None) -> np.ndarray:
    """Coefficient vectors by name.

    ``unit:n`` is n^{-1/2}(1,...,1), ``uniform:n`` is (1,...,1), ``e1:n`` the first
    basis vector, ``critical:n`` or ``critical(q):n`` the vector (i^{-1/q})_i.
    """
    m = _GEN.match(str(tag).strip())
    if not m:
        raise ConfigError(f"bad coefficient generator {tag!r}")
    name, arg, n = m.group(1), m.group(2), int(m.group(3))
    if n < 1:
        raise ConfigError("coefficient dimension must be positive")
    if name == "unit":
        return np.full(n, n**-0.5)
    if name == "uniform":
        return np.ones(n)
    if name == "e1":
        a = np.zeros(n)
        a[0] = 1.0
        return a
    qq = float(arg) if arg else q
    if qq is None:
        raise ConfigError("critical coefficients need q")
    return np.arange(1, n + 1, dtype=float) ** (-1.0 / qq)


@dataclass(frozen=True, eq=False)
class DeviationCertificate:
    kind: CertKind
    q: float
    a: np.ndarray
    c_dev: float = 1.0
    c_prob: float = 1.0
    iter_base: float = 2.0
    generator: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", CertKind.coerce(self.kind))
        a = np.array(self.a, dtype=float).ravel()
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        if not self.q > 2:
            raise DomainError("certificates need q > 2")
        if a.size == 0 or not np.any(a != 0) or not np.all(np.isfinite(a)):
            raise DomainError("coefficient vector must be finite and nonzero")
        if not self.c_dev >= 0 or not self.c_prob > 0:
            raise DomainError("need c_dev >= 0 and c_prob > 0")
        if self.kind is CertKind.ALL_DIRECTIONS and not self.iter_base > 1:
            raise DomainError("iter_base must exceed 1")
        if self.kind is CertKind.SPECIAL_DIRECTION:
            ref = np.arange(1, a.size + 1, dtype=float) ** (-1.0 / self.q)
            if not np.allclose(a, ref, rtol=1e-12, atol=0.0):
                raise ConfigError("special-direction certificates need a_i = i^(-1/q)")

    @property
    def n(self) -> int:
        return int(self.a.size)

    @cached_property
    def rearranged(self) -> np.ndarray:
        return _rearranged(self.a)

    @cached_property
    def norm2(self) -> float:
        return float(np.linalg.norm(self.a))

    @cached_property
    def norm_q(self) -> float:
        return float(np.sum(np.abs(self.a) ** self.q) ** (1.0 / self.q))

    @cached_property
    def lorentz(self) -> float:
        return lorentz_weight(self.a, self.q)

    @property
    def exponent(self) -> float:
        """Power of c_dev in the bound (1 except for the all-directions form)."""
        if self.kind is CertKind.ALL_DIRECTIONS:
            return 1.0 + (1.0 - 2.0 / self.q) * ln_star(self.n, self.iter_base)
        return 1.0

    def shape(self, t):
        """The bound with its constant removed."""
        t = np.asarray(t, dtype=float)
        heavy = np.exp(t * t / (2.0 * self.q))
        if self.kind is CertKind.MAIN:
            out = t * (self.norm2 + heavy * math.sqrt(self.lorentz))
        elif self.kind is CertKind.SPECIAL_DIRECTION:
            n = self.n
            out = t * (n ** (0.5 - 1.0 / self.q) + heavy * math.log(n) ** (1.0 / self.q))
        else:
            out = t * (self.norm2 + heavy * self.norm_q)
        return float(out) if out.ndim == 0 else out

    def multiplier(self, c_dev: float | None = None) -> float:
        c = self.c_dev if c_dev is None else c_dev
        return c ** self.exponent if c > 0 else 0.0

    def bound_at(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(~(t_arr > 0)):
            raise DomainError("t must be positive")
        return self.multiplier() * self.shape(t)

    def probability(self, t):
        t = np.asarray(t, dtype=float)
        out = self.c_prob * np.exp(-0.5 * t * t)
        return float(out) if out.ndim == 0 else out

    def with_constants(self, c_dev: float | None = None, c_prob: float | None = None):
        return replace(
            self,
            c_dev=self.c_dev if c_dev is None else float(c_dev),
            c_prob=self.c_prob if c_prob is None else float(c_prob),
        )

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "q": float(self.q), "n": self.n,
               "c_dev": float(self.c_dev), "c_prob": float(self.c_prob)}
        if self.kind is CertKind.ALL_DIRECTIONS:
            out["iter_base"] = float(self.iter_base)
        if self.generator is not None:
            out["generator"] = self.generator
        else:
            out["a"] = self.a.tolist()
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "DeviationCertificate":
        allowed = {"kind", "q", "n", "c_dev", "c_prob", "iter_base", "a", "generator"}
        unknown = set(spec) - allowed
        if unknown:
            raise ConfigError(f"unexpected certificate key {sorted(unknown)[0]!r}")
        for key in ("kind", "q"):
            if key not in spec:
                raise ConfigError(f"certificate needs {key!r}")
        if ("a" in spec) == ("generator" in spec):
            raise ConfigError("certificate needs exactly one of 'a' or 'generator'")
        q = float(spec["q"])
        if "generator" in spec:
            a = generate_coefficients(spec["generator"], q)
        else:
            a = np.asarray(spec["a"], dtype=float)
        if "n" in spec and int(spec["n"]) != a.size:
            raise ConfigError("'n' does not match the coefficient length")
        return cls(
            kind=spec["kind"], q=q, a=a,
            c_dev=float(spec.get("c_dev", 1.0)), c_prob=float(spec.get("c_prob", 1.0)),
            iter_base=float(spec.get("iter_base", 2.0)), generator=spec.get("generator"),
        )


def bound_at(cert: DeviationCertificate, t):
    """Deviation bound B(t) of a certificate (see :class:`DeviationCertificate`)."""
    return cert.bound_at(t)


def gradient_envelope(a, q: float, z) -> float:
    """(sum_i a_i^2 U_i(z_i))^{1/2} with U(z) = m^{-2/q} log(1/m), m = min(Phi(z), 1 - Phi(z)).

    Also accepts a matrix ``z`` of shape (R, n), returning one value per row.
    """
    a = np.asarray(a, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != a.size:
        raise DomainError("a and z must have the same length")
    m = sp.ndtr(-np.abs(z))
    u = m ** (-2.0 / q) * -np.log(m)
    out = np.sqrt(np.sum(a * a * u, axis=-1))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DyadicResult:
    levels: list
    iterations: int
    l1_accumulated: float
    terminal: np.ndarray


def dyadic_compress(x, q: float, min_dim: int = 1) -> DyadicResult:
    """Repeated level-set compression of a nonnegative vector.

    A stage maps v (m nonzero entries, largest v_1) to w with
    w_j = (sum_{i in E_j} v_i^{q/2})^{2/q} over E_j = {2^-j v_1 < v_i <= 2^{1-j} v_1},
    j = 1..ceil(log2 m); entries at or below 2^-J v_1 join level J. Zero entries
    and empty levels are dropped. Stages repeat until at most ``min_dim``
    entries remain. ``levels`` lists every stage from the input to the
    terminal vector, and ``l1_accumulated`` is the sum of their l1 norms.
    """
    v = np.asarray(x, dtype=float).ravel()
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise DomainError("dyadic_compress needs a finite nonnegative vector")
    if not np.any(v > 0):
        raise DomainError("dyadic_compress needs a nonzero vector")
    if not q > 2 or min_dim < 1:
        raise DomainError("need q > 2 and min_dim >= 1")
    half = 0.5 * q
    v = np.sort(v[v > 0])[::-1]
    levels = [v]
    iterations = 0
    while v.size > min_dim:
        m = v.size
        J = math.ceil(math.log2(m))
        # level index j with 2^-j v1 < v_i <= 2^{1-j} v1, i.e. j = floor(log2(v1/v_i)) + 1
        j = np.floor(np.log2(v[0] / v)).astype(np.int64) + 1
        j = np.clip(j, 1, J)
        sums = np.bincount(j - 1, weights=v**half, minlength=J)
        w = sums[sums > 0] ** (1.0 / half)
        v = np.sort(w)[::-1]
        levels.append(v)
        iterations += 1
    return DyadicResult(
        levels=levels,
        iterations=iterations,
        l1_accumulated=float(sum(np.sum(s) for s in levels)),
        terminal=v,
    )
