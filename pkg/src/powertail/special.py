"""Scalar special functions: the deviation functions xi_1, xi_2 and their
inverses, the constant C_0, iterated logarithms and two elementary integral
estimates.
"""

from __future__ import annotations

import enum
import math
from typing import Callable

import numpy as np
from scipy.special import lambertw

from .errors import DomainError, NumericalError, RangeError

__all__ = [
    "XiKind",
    "xi_eval",
    "xi_inverse",
    "xi_inverse_bound",
    "xi1_complement",
    "c0_constant",
    "c0_integrand",
    "ln_star",
    "adaptive_simpson",
    "integral_bound_pair",
]

TWO_OVER_E = 2.0 / math.e


class XiKind(enum.Enum):
    XI1 = "xi1"
    XI2 = "xi2"

    @classmethod
    def coerce(cls, kind) -> "XiKind":
        if isinstance(kind, cls):
            return kind
        try:
            return cls(str(kind).lower())
        except ValueError:
            raise DomainError(f"unknown xi kind {kind!r}") from None


def _xi1(t):
    return np.exp(t) * (1.0 - t)


def _xi2(t):
    return np.exp(-t) * (1.0 + t)


def xi_eval(kind, t):
    """Evaluate xi_1(t) = e^t (1-t) on [0, 1] or xi_2(t) = e^-t (1+t) on [0, inf)."""
    kind = XiKind.coerce(kind)
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError("xi functions are defined for t >= 0")
    if kind is XiKind.XI1:
        if np.any(arr > 1):
            raise DomainError("xi_1 is defined on [0, 1]")
        out = _xi1(arr)
    else:
        out = _xi2(arr)
    return float(out) if out.ndim == 0 else out


def xi_inverse(kind, y, tol: float = 1e-12):
    """Numerically invert xi_1 or xi_2 by monotone bisection.

    Both functions are strictly decreasing. The bracket is [0, 1] for xi_1 and
    [0, 2 log(1/y) + 2] for xi_2; the returned value is the midpoint of a final
    bracket of width at most ``tol``. Accepts scalars or arrays.
    """
    kind = XiKind.coerce(kind)
    if not tol > 0:
        raise DomainError("tol must be positive")
    y_arr = np.asarray(y, dtype=float)
    if np.any(np.isnan(y_arr)) or np.any(y_arr > 1) or np.any(y_arr < 0):
        raise RangeError("target outside the range of the xi function")
    if kind is XiKind.XI2 and np.any(y_arr <= 0):
        raise RangeError("xi_2 never attains 0")

    y1 = np.atleast_1d(y_arr)
    lo = np.zeros_like(y1)
    if kind is XiKind.XI1:
        f = _xi1
        hi = np.ones_like(y1)
    else:
        f = _xi2
        hi = 2.0 * np.log(1.0 / y1) + 2.0
    width = float(np.max(hi - lo))
    steps = max(1, math.ceil(math.log2(width / tol))) if width > tol else 0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        above = f(mid) > y1
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    out = 0.5 * (lo + hi)
    return float(out[0]) if y_arr.ndim == 0 else out


def xi_inverse_bound(kind, y):
    """Closed-form upper bounds for the inverses of xi_1 and xi_2.

    xi_1^{-1}(y) <= min(sqrt(2(1-y)), 1 - y/e) on [0, 1].
    xi_2^{-1}(y) <= log(1/y) + log(1 + 4 log(1/y))        for 0 < y <= 2/e,
                    sqrt(2 log(1/y) + 10 log(1/y)^{3/2})  for 2/e <= y <= 1.
    At y = 2/e the second branch is used.
    """
    kind = XiKind.coerce(kind)
    y_arr = np.asarray(y, dtype=float)
    if np.any(np.isnan(y_arr)) or np.any(y_arr > 1) or np.any(y_arr < 0):
        raise DomainError("y must lie in [0, 1]")
    if kind is XiKind.XI1:
        out = np.minimum(np.sqrt(2.0 * (1.0 - y_arr)), 1.0 - y_arr / math.e)
    else:
        if np.any(y_arr <= 0):
            raise DomainError("xi_2 bound requires y > 0")
        z = np.log(1.0 / y_arr)
        small = z + np.log1p(4.0 * z)
        large = np.sqrt(2.0 * z + 10.0 * z**1.5)
        out = np.where(y_arr < TWO_OVER_E, small, large)
    return float(out) if out.ndim == 0 else out


def xi1_complement(y):
    """1 - xi_1^{-1}(y) for y in [0, 1], accurate when the result is tiny.

    With w = 1 - t the equation e^t (1 - t) = y reads w e^{-w} = y/e, so
    w = -W_0(-y/e) on the principal branch of the Lambert W function.
    """
    y_arr = np.asarray(y, dtype=float)
    if np.any(np.isnan(y_arr)) or np.any(y_arr > 1) or np.any(y_arr < 0):
        raise RangeError("target outside the range of xi_1")
    # the branch point -1/e itself returns nan, so nudge inside
    arg = np.maximum(-y_arr / math.e, np.nextafter(-math.exp(-1.0), 0.0))
    out = np.clip(-np.real(lambertw(arg, 0)), 0.0, 1.0)
    # W loses half its digits next to the branch point; bisection is exact there
    near = y_arr > 0.999
    if np.any(near):
        out = np.where(near, 1.0 - xi_inverse(XiKind.XI1, np.where(near, y_arr, 1.0), 1e-15), out)
    return float(out) if out.ndim == 0 else out


def c0_integrand(s):
    """The function whose supremum over s > 0 defines C_0.

    Equal to (e^s/(1+s)) / (1 + s e^s / log(e + s e^s)^2), rewritten as
    1 / ((1+s) e^-s + s (1+s) / log(e + s e^s)^2) so it does not overflow.
    """
    s = np.asarray(s, dtype=float)
    ell = np.logaddexp(1.0, s + np.log(s))
    return 1.0 / ((1.0 + s) * np.exp(-s) + s * (1.0 + s) / ell**2)


def c0_constant(grid: int = 4096, refine_tol: float = 1e-10) -> float:
    """Compute C_0 by a log-spaced scan on [1e-6, 1e3] plus golden-section refinement."""
    if grid < 1000:
        raise DomainError("grid must be at least 1000")
    s = np.logspace(-6.0, 3.0, int(grid))
    vals = c0_integrand(s)
    i = int(np.argmax(vals))
    a = s[max(i - 1, 0)]
    b = s[min(i + 1, s.size - 1)]

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = float(c0_integrand(c)), float(c0_integrand(d))
    while b - a > refine_tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = float(c0_integrand(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = float(c0_integrand(d))
    return max(fc, fd, float(vals[i]))


def ln_star(n: float, cq: float) -> int:
    """Number of applications of x -> max(ln x, 1) needed to bring n to at most cq.

    Returns 0 when n <= cq already.
    """
    if not n >= 1:
        raise DomainError("ln_star requires n >= 1")
    if not cq >= 1:
        raise DomainError("ln_star requires cq >= 1")
    x = float(n)
    j = 0
    while x > cq:
        x = max(math.log(x), 1.0)
        j += 1
    return j


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    abs_tol: float = 1e-10,
    rel_tol: float = 1e-12,
    max_intervals: int = 10**6,
) -> float:
    """Adaptive Simpson quadrature of a scalar function on [a, b].

    The acceptance tolerance is ``max(abs_tol, rel_tol * |first estimate|)`` so
    integrals of very large magnitude still terminate. Raises NumericalError
    when more than ``max_intervals`` subintervals would be needed.
    """
    if a == b:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    tol = max(abs_tol, rel_tol * abs(whole))
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    intervals = 1
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        delta = left + right - est
        if abs(delta) <= 15.0 * eps or depth >= 60:
            total += left + right + delta / 15.0
            continue
        intervals += 1
        if intervals > max_intervals:
            raise NumericalError("adaptive Simpson exceeded the interval cap")
        stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
        stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
    if not math.isfinite(total):
        raise NumericalError("non-finite quadrature result")
    return total


def _inv_or_inf(x: float) -> float:
    return math.inf if x == 0 else 1.0 / x


def integral_bound_pair(a: float, b: float, r: float, weighted: bool = False):
    """Return (upper-bound expression with C = 1, quadrature value) for

        unweighted:  int_a^b x^-r dx
                     <= min(|1-r|^-1, log(b/a)) (a^{1-r} + b^{1-r})
        weighted:    int_a^b x^-r log(1/x)^-2 dx, 0 < a <= b < 1/e, r > 1
                     <= min(1, log(log(1/a)/log(1/b))) / log(1/b)
                        + min((r-1)^-1, log(b/a)) ((r-1)^-1 + log(1/a))^-2 a^{1-r}

    Quadrature runs in the variable u = log x, where both integrands are smooth.
    """
    if not (0 < a <= b):
        raise DomainError("need 0 < a <= b")
    la, lb = math.log(a), math.log(b)
    if not weighted:
        upper = min(_inv_or_inf(abs(1.0 - r)), lb - la) * (a ** (1.0 - r) + b ** (1.0 - r))
        quad = adaptive_simpson(lambda u: math.exp((1.0 - r) * u), la, lb)
        return upper, quad
    if not (b < math.exp(-1.0) and r > 1):
        raise DomainError("weighted form needs b < 1/e and r > 1")
    La, Lb = -la, -lb
    upper = min(1.0, math.log(La / Lb)) / Lb + min(1.0 / (r - 1.0), lb - la) * (
        1.0 / (r - 1.0) + La
    ) ** -2 * a ** (1.0 - r)
    quad = adaptive_simpson(lambda u: math.exp((1.0 - r) * u) / (u * u), la, lb)
    return upper, quad
