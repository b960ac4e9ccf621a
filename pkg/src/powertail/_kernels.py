"""Hot inner loops of the Monte Carlo harness.

Each kernel has a numba implementation and a pure-numpy implementation with
the same signature. The numba path is used when numba imports and the
environment variable ``POWERTAIL_NO_NUMBA`` is unset (or "0"); otherwise the
numpy path is used. Both paths can also be called explicitly through the
``backend`` argument, which the tests and the benchmark rely on.

Randomness is generated inside the kernels by a counter-based hash: the
uniform for counter c of stream ``key`` is a SplitMix64 finalizer applied to
key + (c+1)*gamma. Any block of rows can therefore be produced on its own, and
both backends see exactly the same uniforms. Sums agree to rounding across
backends, and each backend is bit-reproducible on its own. Stream keys come
from :func:`powertail.streams.block_key`.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy import special as _sp

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("POWERTAIL_NO_NUMBA", "") in ("", "0")
BACKEND = "numba" if USE_NUMBA else "numpy"

# model codes understood by the kernels
STANDARD_NORMAL = 0
PARETO_TAIL = 1
SYMMETRIC_POWER_LAW = 2
U_ENVELOPE = 3
PURE_PARETO_H = 4
EMPIRICAL_MIDPOINT = 5
EMPIRICAL_STEP = 6

_TWO53 = 9007199254740992.0
# fast-math without nnan/ninf: several kernels compare against +-inf
FASTMATH = {"nsz", "arcp", "contract", "afn", "reassoc"}


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(nogil=True, cache=True, fastmath=FASTMATH)(fn)


# ---------------------------------------------------------------------------
# standard normal quantile: Acklam's rational approximation + one Halley step

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def _ndtri_py(p):
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    upper = p > 0.5
    pm = 1.0 - p if upper else p
    if pm < _P_LOW:
        q = math.sqrt(-2.0 * math.log(pm))
        x = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
        e = 0.5 * math.erfc(-x / _SQRT2) - pm
    else:
        q = pm - 0.5
        r = q * q
        x = ((((( _A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        e = 0.5 * math.erf(x / _SQRT2) - q
    u = e * _SQRT2PI * math.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    return -x if upper else x


ndtri_scalar = _njit(_ndtri_py)


def ndtri(p):
    """Vectorised standard normal quantile (same algorithm as the kernels)."""
    p = np.asarray(p, dtype=float)
    upper = p > 0.5
    pm = np.where(upper, 1.0 - p, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = pm < _P_LOW
        q = np.sqrt(-2.0 * np.log(np.where(tail, pm, 0.5)))
        xt = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
        qc = pm - 0.5
        r = qc * qc
        xc = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * qc / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        x = np.where(tail, xt, xc)
        e = np.where(tail, 0.5 * _sp.erfc(-x / _SQRT2) - pm, 0.5 * _sp.erf(x / _SQRT2) - qc)
        u = e * _SQRT2PI * np.exp(0.5 * x * x)
        x = x - u / (1.0 + 0.5 * x * u)
    x = np.where(upper, -x, x)
    x = np.where(p <= 0.0, -np.inf, np.where(p >= 1.0, np.inf, x))
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# counter-based words: word(key, c) = mix64(key + (c + 1) * GAMMA)

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_ONE = np.uint64(1)


def _mix_py(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


_mix = numba.njit(inline="always")(_mix_py) if HAVE_NUMBA else _mix_py


def _uniform_py(key, c):
    w = _mix(key + (np.uint64(c) + _ONE) * _GAMMA)
    return (float(w >> _S11) + 0.5) * (1.0 / _TWO53)


_uniform = numba.njit(inline="always")(_uniform_py) if HAVE_NUMBA else _uniform_py


def words(key, start, count) -> np.ndarray:
    """The 64-bit words for counters start, ..., start+count-1 of stream ``key``."""
    c = np.arange(int(start), int(start) + int(count), dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix_py(np.uint64(key) + (c + _ONE) * _GAMMA)


def uniforms(key, start, count) -> np.ndarray:
    """Open (0, 1) uniforms for a counter range; identical on both backends."""
    return ((words(key, start, count) >> _S11).astype(np.float64) + 0.5) * (1.0 / _TWO53)


# ---------------------------------------------------------------------------
# quantile functions


def _quantile_py(code, par, u, tab, off, ln):
    if code == SYMMETRIC_POWER_LAW:
        m = min(u, 1.0 - u)
        v = math.exp(-math.log(2.0 * m) / par) - 1.0
        return v if u >= 0.5 else -v
    if code == PARETO_TAIL:
        return math.exp(-math.log(1.0 - u) / par)
    if code == U_ENVELOPE:
        m = 0.5 * (1.0 - u)
        return math.exp(-2.0 * math.log(m) / par) * (-math.log(m))
    if code == STANDARD_NORMAL:
        return ndtri_scalar(u)
    if code == PURE_PARETO_H:
        m = min(u, 1.0 - u)
        v = math.exp(-math.log(2.0 * m) / par)
        return v if u > 0.5 else -v
    if code == EMPIRICAL_STEP:
        k = int(math.ceil(u * ln)) - 1
        if k < 0:
            k = 0
        if k > ln - 1:
            k = ln - 1
        return tab[off + k]
    # EMPIRICAL_MIDPOINT
    pos = u * ln - 0.5
    if pos <= 0.0:
        return tab[off]
    if pos >= ln - 1:
        return tab[off + ln - 1]
    k = int(pos)
    frac = pos - k
    return tab[off + k] + frac * (tab[off + k + 1] - tab[off + k])


_quantile = _njit(_quantile_py)


def quantile_np(code, par, u, table):
    """Vectorised counterpart of the kernel quantile for one model."""
    u = np.asarray(u, dtype=float)
    if code == SYMMETRIC_POWER_LAW:
        m = np.minimum(u, 1.0 - u)
        mag = np.exp(-np.log(2.0 * m) / par) - 1.0
        return np.where(u >= 0.5, mag, -mag)
    if code == PARETO_TAIL:
        return np.exp(-np.log(1.0 - u) / par)
    if code == U_ENVELOPE:
        m = 0.5 * (1.0 - u)
        return np.exp(-2.0 * np.log(m) / par) * (-np.log(m))
    if code == STANDARD_NORMAL:
        return ndtri(u)
    if code == PURE_PARETO_H:
        m = np.minimum(u, 1.0 - u)
        mag = np.exp(-np.log(2.0 * m) / par)
        return np.where(u > 0.5, mag, -mag)
    table = np.asarray(table, dtype=float)
    ln = table.size
    if code == EMPIRICAL_STEP:
        k = np.clip(np.ceil(u * ln).astype(np.int64) - 1, 0, ln - 1)
        return table[k]
    pos = (np.arange(ln) + 0.5) / ln
    return np.interp(u, pos, table)


def _group_sum_py(code, par, tab, off, ln, coeff, buf, start, end):
    # the hot loop; common heavy-tailed codes get branch-light bodies
    s = 0.0
    if code == SYMMETRIC_POWER_LAW:
        e = -1.0 / par
        for i in range(start, end):
            u = buf[i]
            v = math.exp(math.log(2.0 * min(u, 1.0 - u)) * e) - 1.0
            s += coeff[i] * (v if u >= 0.5 else -v)
    elif code == PURE_PARETO_H:
        e = -1.0 / par
        for i in range(start, end):
            u = buf[i]
            v = math.exp(math.log(2.0 * min(u, 1.0 - u)) * e)
            s += coeff[i] * (v if u > 0.5 else -v)
    elif code == PARETO_TAIL:
        e = -1.0 / par
        for i in range(start, end):
            s += coeff[i] * math.exp(math.log(1.0 - buf[i]) * e)
    else:
        for i in range(start, end):
            s += coeff[i] * _quantile(code, par, buf[i], tab, off, ln)
    return s


_group_sum = _njit(_group_sum_py)


# ---------------------------------------------------------------------------
# linear sums  S_r = sum_i coeff_i Q_i(u_ri), coordinates grouped by model


def _linear_sum_nb_py(key, row0, rows, coeff, g_code, g_par, g_off, g_len, g_start, g_end, tab, out):
    m = coeff.size
    buf = np.empty(m)
    for r in range(rows):
        base = (row0 + r) * m
        for i in range(m):
            buf[i] = _uniform(key, base + i)
        s = 0.0
        for g in range(g_code.size):
            s += _group_sum(g_code[g], g_par[g], tab, g_off[g], g_len[g], coeff, buf, g_start[g], g_end[g])
        out[r] = s


_linear_sum_nb = _njit(_linear_sum_nb_py)

_NP_BATCH_WORDS = 1 << 21


def _linear_sum_np(key, row0, rows, coeff, g_code, g_par, g_off, g_len, g_start, g_end, tab, out):
    m = coeff.size
    step = max(1, _NP_BATCH_WORDS // m)
    for r0 in range(0, rows, step):
        nr = min(step, rows - r0)
        u = uniforms(key, (row0 + r0) * m, nr * m).reshape(nr, m)
        s = np.zeros(nr)
        for g in range(g_code.size):
            a, b = int(g_start[g]), int(g_end[g])
            table = tab[g_off[g]:g_off[g] + g_len[g]]
            x = quantile_np(int(g_code[g]), float(g_par[g]), u[:, a:b], table)
            s += (x * coeff[a:b]).sum(axis=1)
        out[r0:r0 + nr] = s


class SumLayout:
    """Coefficients regrouped so that each model occupies a contiguous block.

    ``models`` is a sequence of objects with ``kernel_code``, ``kernel_par`` and
    ``kernel_table``; coordinates with equal models share one block.
    """

    def __init__(self, models, coeff):
        coeff = np.asarray(coeff, dtype=float)
        order, groups, tables = [], [], []
        index = {}
        for i, mdl in enumerate(models):
            key = id(mdl)
            if key not in index:
                index[key] = len(groups)
                groups.append((mdl, []))
            groups[index[key]][1].append(i)
        g_code, g_par, g_off, g_len, g_start, g_end = [], [], [], [], [], []
        off = 0
        pos = 0
        for mdl, idx in groups:
            table = np.asarray(mdl.kernel_table, dtype=float)
            tables.append(table)
            g_code.append(int(mdl.kernel_code))
            g_par.append(float(mdl.kernel_par))
            g_off.append(off)
            g_len.append(table.size)
            g_start.append(pos)
            pos += len(idx)
            g_end.append(pos)
            off += table.size
            order.extend(idx)
        self.order = np.asarray(order, dtype=np.int64)
        self.coeff = np.ascontiguousarray(coeff[self.order])
        self.g_code = np.asarray(g_code, dtype=np.int64)
        self.g_par = np.asarray(g_par, dtype=float)
        self.g_off = np.asarray(g_off, dtype=np.int64)
        self.g_len = np.asarray(g_len, dtype=np.int64)
        self.g_start = np.asarray(g_start, dtype=np.int64)
        self.g_end = np.asarray(g_end, dtype=np.int64)
        self.tab = np.ascontiguousarray(np.concatenate(tables))

    @property
    def width(self) -> int:
        return int(self.coeff.size)


def linear_sum(key, row0, rows, layout: SumLayout, backend=None) -> np.ndarray:
    """Weighted sums for rows row0, ..., row0+rows-1 of stream ``key``."""
    out = np.empty(int(rows))
    args = (np.uint64(key), int(row0), int(rows), layout.coeff, layout.g_code, layout.g_par,
            layout.g_off, layout.g_len, layout.g_start, layout.g_end, layout.tab, out)
    if _resolve(backend) == "numba":
        _linear_sum_nb(*args)
    else:
        _linear_sum_np(*args)
    return out


# ---------------------------------------------------------------------------
# Renyi representation: -log(1 - g_(k)) = sum_{j<=k} E_j / (n - j + 1)


def _renyi_violations_nb_py(key, row0, rows, n, limits, out):
    for r in range(rows):
        base = (row0 + r) * n
        cum = 0.0
        hit = False
        for j in range(n):
            cum += -math.log(_uniform(key, base + j)) / (n - j)
            if cum > limits[j]:
                hit = True
                break
        out[r] = hit


_renyi_violations_nb = _njit(_renyi_violations_nb_py)


def _renyi_cum_np(key, row0, rows, n):
    u = uniforms(key, row0 * n, rows * n).reshape(rows, n)
    return np.cumsum(-np.log(u) / (n - np.arange(n)), axis=1)


def renyi_violations(key, row0, rows, limits, backend=None) -> np.ndarray:
    """Flag rows where some uniform order statistic exceeds its envelope.

    ``limits[k-1] = -log(1 - envelope_k)``, with +inf where the envelope is 1.
    """
    limits = np.ascontiguousarray(limits, dtype=float)
    n = limits.size
    out = np.empty(int(rows), dtype=np.bool_)
    if _resolve(backend) == "numba":
        _renyi_violations_nb(np.uint64(key), int(row0), int(rows), n, limits, out)
    else:
        step = max(1, _NP_BATCH_WORDS // n)
        for r0 in range(0, int(rows), step):
            nr = min(step, int(rows) - r0)
            out[r0:r0 + nr] = np.any(_renyi_cum_np(key, row0 + r0, nr, n) > limits, axis=1)
    return out


def _renyi_order_nb_py(key, row0, rows, n, out):
    for r in range(rows):
        base = (row0 + r) * n
        cum = 0.0
        for j in range(n):
            cum += -math.log(_uniform(key, base + j)) / (n - j)
            out[r, j] = -math.expm1(-cum)


_renyi_order_nb = _njit(_renyi_order_nb_py)


def renyi_order_stats(key, row0, rows, n, backend=None) -> np.ndarray:
    """Sorted uniform samples, one per row, built from exponential spacings."""
    out = np.empty((int(rows), int(n)))
    if _resolve(backend) == "numba":
        _renyi_order_nb(np.uint64(key), int(row0), int(rows), int(n), out)
    else:
        out[:] = -np.expm1(-_renyi_cum_np(key, int(row0), int(rows), int(n)))
    return out


# ---------------------------------------------------------------------------
# i.i.d. sums with the largest terms removed


def _top_sums_nb_py(key, row0, rows, n, code, par, tab, kmax, totals, tops):
    ln = tab.size
    best = np.empty(max(kmax, 1))
    for r in range(rows):
        base = (row0 + r) * n
        for j in range(kmax):
            best[j] = -math.inf
        s = 0.0
        for i in range(n):
            y = _quantile(code, par, _uniform(key, base + i), tab, 0, ln)
            s += y
            if kmax > 0 and y > best[kmax - 1]:
                j = kmax - 1
                while j > 0 and best[j - 1] < y:
                    best[j] = best[j - 1]
                    j -= 1
                best[j] = y
        totals[r] = s
        acc = 0.0
        for j in range(kmax):
            acc += best[j]
            tops[r, j] = acc


_top_sums_nb = _njit(_top_sums_nb_py)


def top_sums(key, row0, rows, n, code, par, tab, kmax, backend=None):
    """Row totals of n i.i.d. draws and cumulative sums of the ``kmax`` largest.

    ``tops[r, j]`` is the sum of the j+1 largest values in row r, so the sum
    of all but the top j values is ``totals - tops[:, j-1]``.
    """
    rows, n, kmax = int(rows), int(n), int(kmax)
    if not 0 <= kmax <= n:
        raise ValueError("kmax must lie in [0, n]")
    totals = np.empty(rows)
    tops = np.zeros((rows, kmax))
    tab = np.ascontiguousarray(tab, dtype=float)
    if _resolve(backend) == "numba":
        _top_sums_nb(np.uint64(key), int(row0), rows, n, int(code), float(par), tab, kmax, totals, tops)
    else:
        step = max(1, _NP_BATCH_WORDS // n)
        for r0 in range(0, rows, step):
            nr = min(step, rows - r0)
            y = quantile_np(int(code), float(par), uniforms(key, (row0 + r0) * n, nr * n).reshape(nr, n), tab)
            totals[r0:r0 + nr] = y.sum(axis=1)
            if kmax:
                part = np.partition(y, n - kmax, axis=1)[:, n - kmax:]
                tops[r0:r0 + nr] = np.cumsum(-np.sort(-part, axis=1), axis=1)
    return totals, tops


def _resolve(backend):
    if backend is None:
        return BACKEND
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    return backend
