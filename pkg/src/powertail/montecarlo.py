"""Deterministic Monte Carlo harness for linear sums and deviation certificates.

Replications are split into chunks of ``chunk_size`` rows. Chunk c of stream
``tag`` is driven by the counter key ``block_key(seed, tag, c)``, so every
chunk is reproducible on its own and results never depend on how many worker
threads ran them. Tail probabilities are reported with exact Clopper-Pearson
intervals.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import streams
from .certificates import DeviationCertificate
from .distributions import QuantileModel
from .errors import ConfigError, DomainError
from .stats import TailEstimate

__all__ = [
    "SimulationPlan",
    "Side",
    "LinearSumSummary",
    "QuantileSketch",
    "CalibrationResult",
    "GridPoint",
    "VerificationRow",
    "VerificationReport",
    "run_chunks",
    "linear_sum_samples",
    "simulate_linear_sum",
    "tail_estimate",
    "calibrate",
    "verify_certificate",
    "REPORT_COLUMNS",
    "envelope_violations",
    "iid_top_sums",
]

FULL_STORAGE_MAX = 10**7
_C_LO, _C_HI = 1e-6, 1e6


@dataclass(frozen=True)
class SimulationPlan:
    """Seed, replication count and chunking of a run. ``worker_hint`` only sets the thread count."""

    seed: int
    replications: int
    chunk_size: int = 1 << 14
    worker_hint: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seed", streams.check_seed(self.seed))
        for name in ("replications", "chunk_size", "worker_hint"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name!r} must be a positive integer")
            object.__setattr__(self, name, int(value))

    @property
    def chunks(self) -> int:
        return -(-self.replications // self.chunk_size)

    def chunk_rows(self, c: int) -> int:
        return min(self.chunk_size, self.replications - c * self.chunk_size)

    def with_seed(self, seed: int) -> "SimulationPlan":
        return SimulationPlan(seed, self.replications, self.chunk_size, self.worker_hint)

    def with_replications(self, replications: int) -> "SimulationPlan":
        return SimulationPlan(self.seed, replications, self.chunk_size, self.worker_hint)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "replications": self.replications,
                "chunk_size": self.chunk_size, "worker_hint": self.worker_hint}


def run_chunks(plan: SimulationPlan, fn):
    """[fn(c, rows) for each chunk c], in chunk order, on ``plan.worker_hint`` threads."""
    jobs = [(c, plan.chunk_rows(c)) for c in range(plan.chunks)]
    if plan.worker_hint == 1 or len(jobs) == 1:
        return [fn(c, rows) for c, rows in jobs]
    with ThreadPoolExecutor(max_workers=plan.worker_hint) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def _coordinates(models, a):
    a = np.asarray(a, dtype=float).ravel()
    if isinstance(models, QuantileModel):
        models = [models] * a.size
    models = list(models)
    if len(models) != a.size:
        raise DomainError("need one model per coefficient")
    if a.size == 0 or not np.all(np.isfinite(a)):
        raise DomainError("coefficients must be finite and nonempty")
    return models, a


def _layout(models, a, drop_zeros=True) -> K.SumLayout:
    models, a = _coordinates(models, a)
    if drop_zeros:
        keep = np.flatnonzero(a != 0.0)
        if keep.size == 0:
            keep = np.array([0])
        models = [models[i] for i in keep]
        a = a[keep]
    return K.SumLayout(models, a)


def linear_sum_samples(models, a, plan: SimulationPlan, tag: int = streams.MAIN,
                       drop_zeros: bool = True, backend=None) -> np.ndarray:
    """R draws of S = sum_i a_i F_i^{-1}(U_i), in replication order.

    ``models`` is a list with one model per coordinate or a single model used
    for every coordinate. Zero coefficients are skipped unless ``drop_zeros``
    is False, in which case every coordinate keeps its own counter slot (this
    couples runs with equal seeds across different coefficient vectors).
    """
    layout = _layout(models, a, drop_zeros)

    def chunk(c, rows):
        return K.linear_sum(streams.block_key(plan.seed, tag, c), 0, rows, layout, backend)

    return np.concatenate(run_chunks(plan, chunk))


class Side(enum.Enum):
    TWO_SIDED_ABOUT_MEDIAN = "two_sided"
    UPPER_ONLY = "upper"

    @classmethod
    def coerce(cls, side) -> "Side":
        if isinstance(side, cls):
            return side
        name = str(side).lower()
        aliases = {"twosidedaboutmedian": "two_sided", "two_sided_about_median": "two_sided",
                   "upperonly": "upper", "upper_only": "upper"}
        try:
            return cls(aliases.get(name, name))
        except ValueError:
            raise ConfigError(f"unknown side {side!r}") from None


class QuantileSketch:
    """Mergeable rank summary with exact storage of the largest values.

    A hierarchy of compactors: level h holds points of weight 2^h, and a full
    level is sorted and halved into the next one (alternating offsets keep it
    deterministic). Rank error is at most levels/capacity of the stream size.
    The ``tail`` largest values are also kept exactly, so threshold counts
    in the far upper tail are exact.
    """

    def __init__(self, capacity: int = 1 << 15, tail: int = 1 << 17):
        self.capacity = int(capacity)
        self.tail_size = int(tail)
        self.levels: list[np.ndarray] = [np.empty(0)]
        self.flips: list[int] = [0]
        self.count = 0
        self.top = np.empty(0)
        self.seen_min_top = -math.inf

    def update(self, values):
        values = np.asarray(values, dtype=float).ravel()
        self.count += values.size
        merged = np.concatenate([self.top, values])
        if merged.size > self.tail_size:
            cut = merged.size - self.tail_size
            part = np.partition(merged, cut)
            self.seen_min_top = max(self.seen_min_top, float(part[cut - 1]))
            merged = part[cut:]
        self.top = merged
        self.levels[0] = np.concatenate([self.levels[0], values])
        h = 0
        while self.levels[h].size >= self.capacity:
            buf = np.sort(self.levels[h])
            keep = buf.size - buf.size % 2
            promoted = buf[self.flips[h]:keep:2]
            self.flips[h] ^= 1
            self.levels[h] = buf[keep:]
            if h + 1 == len(self.levels):
                self.levels.append(np.empty(0))
                self.flips.append(0)
            self.levels[h + 1] = np.concatenate([self.levels[h + 1], promoted])
            h += 1

    def _weighted(self):
        vals = np.concatenate(self.levels)
        wts = np.concatenate([np.full(lv.size, 2.0**h) for h, lv in enumerate(self.levels)])
        order = np.argsort(vals, kind="stable")
        return vals[order], wts[order]

    def count_above(self, threshold: float) -> int:
        """Number of values > threshold; exact once threshold is inside the kept tail."""
        if threshold >= self.seen_min_top:
            return int(np.count_nonzero(self.top > threshold))
        vals, wts = self._weighted()
        above = float(np.sum(wts[vals > threshold]))
        return int(min(self.count, round(above * self.count / np.sum(wts))))

    def quantile(self, u: float) -> float:
        vals, wts = self._weighted()
        cum = np.cumsum(wts)
        idx = int(np.searchsorted(cum, u * cum[-1], side="left"))
        return float(vals[min(idx, vals.size - 1)])


@dataclass(frozen=True, eq=False)
class LinearSumSummary:
    """Result of :func:`simulate_linear_sum`.

    ``median`` is the empirical median of the main run; ``center`` is the
    median of an independent pilot run and is the reference point for
    two-sided deviations. With full storage, ``sorted_values`` and
    ``sorted_deviations`` (|S - center|) are kept; otherwise sketches are.
    """

    replications: int
    median: float
    center: float
    sorted_values: np.ndarray | None = None
    sorted_deviations: np.ndarray | None = None
    value_sketch: QuantileSketch | None = field(default=None, repr=False)
    deviation_sketch: QuantileSketch | None = field(default=None, repr=False)

    @property
    def exact(self) -> bool:
        return self.sorted_values is not None

    def quantile(self, u: float) -> float:
        if not 0 <= u <= 1:
            raise DomainError("u must lie in [0, 1]")
        if self.exact:
            return float(np.quantile(self.sorted_values, u))
        return self.value_sketch.quantile(u)

    def count_above(self, threshold: float, side=Side.TWO_SIDED_ABOUT_MEDIAN) -> int:
        side = Side.coerce(side)
        if self.exact:
            arr = self.sorted_deviations if side is Side.TWO_SIDED_ABOUT_MEDIAN else self.sorted_values
            return int(arr.size - np.searchsorted(arr, threshold, side="right"))
        sk = self.deviation_sketch if side is Side.TWO_SIDED_ABOUT_MEDIAN else self.value_sketch
        return sk.count_above(threshold)


def _median_of(models, a, plan, tag, full_limit):
    if plan.replications <= full_limit:
        return float(np.median(linear_sum_samples(models, a, plan, tag)))
    sk = QuantileSketch()
    layout = _layout(models, a)
    for c in range(plan.chunks):
        sk.update(K.linear_sum(streams.block_key(plan.seed, tag, c), 0, plan.chunk_rows(c), layout))
    return sk.quantile(0.5)


def simulate_linear_sum(models, a, plan: SimulationPlan, full_storage_max: int = FULL_STORAGE_MAX) -> LinearSumSummary:
    """Simulate S = sum a_i X_i and summarize it for tail counting.

    A pilot run of R/10 replications on a separate stream fixes the center
    used for two-sided deviations. Up to ``full_storage_max`` replications
    are stored sorted; beyond that, quantile sketches are built chunk by
    chunk in chunk order.
    """
    if plan.replications < 10:
        raise DomainError("need at least 10 replications")
    pilot = plan.with_replications(max(1, plan.replications // 10))
    center = _median_of(models, a, pilot, streams.PILOT, full_storage_max)
    if plan.replications <= full_storage_max:
        s = np.sort(linear_sum_samples(models, a, plan, streams.MAIN))
        d = np.sort(np.abs(s - center))
        return LinearSumSummary(plan.replications, float(np.median(s)), center, s, d)

    layout = _layout(models, a)
    vs, ds = QuantileSketch(), QuantileSketch()
    batch = max(1, plan.worker_hint)
    for c0 in range(0, plan.chunks, batch):
        ids = range(c0, min(c0 + batch, plan.chunks))

        def chunk(c):
            return K.linear_sum(streams.block_key(plan.seed, streams.MAIN, c), 0, plan.chunk_rows(c), layout)

        if batch == 1:
            parts = [chunk(c) for c in ids]
        else:
            with ThreadPoolExecutor(max_workers=batch) as pool:
                parts = list(pool.map(chunk, ids))
        for s in parts:
            vs.update(s)
            ds.update(np.abs(s - center))
    return LinearSumSummary(plan.replications, vs.quantile(0.5), center,
                            value_sketch=vs, deviation_sketch=ds)


def tail_estimate(summary: LinearSumSummary, threshold: float, side=Side.TWO_SIDED_ABOUT_MEDIAN) -> TailEstimate:
    """Estimate P{|S - center| > threshold} (two-sided) or P{S > threshold} (upper)."""
    side = Side.coerce(side)
    if not threshold >= 0 and side is Side.TWO_SIDED_ABOUT_MEDIAN:
        raise DomainError("threshold must be nonnegative")
    return TailEstimate.from_counts(summary.count_above(float(threshold), side), summary.replications)


# ---------------------------------------------------------------------------
# calibration and verification


@dataclass(frozen=True)
class GridPoint:
    t: float
    threshold: float
    estimate: TailEstimate


@dataclass(frozen=True)
class CalibrationResult:
    c_dev: float
    c_prob: float
    grid: list
    feasible: bool

    def certificate(self, cert: DeviationCertificate) -> DeviationCertificate:
        return cert.with_constants(c_dev=self.c_dev, c_prob=self.c_prob)


def _check_grid(t_grid):
    t = [float(x) for x in t_grid]
    if not t or any(not x > 0 for x in t) or any(b <= a for a, b in zip(t, t[1:])):
        raise DomainError("t_grid must be a nonempty increasing list of positive values")
    return t


def _grid(cert, summary, t_grid, c_dev):
    out = []
    for t in t_grid:
        thr = float(cert.multiplier(c_dev) * cert.shape(t))
        out.append(GridPoint(t, thr, tail_estimate(summary, thr)))
    return out


def _ok(grid, c_prob):
    return all(g.estimate.ci_high <= c_prob * math.exp(-0.5 * g.t * g.t) for g in grid)


def calibrate(cert: DeviationCertificate, models, plan: SimulationPlan, t_grid, c_prob_target: float,
              summary: LinearSumSummary | None = None, rel_tol: float = 0.01) -> CalibrationResult:
    """Smallest c_dev (to ``rel_tol``) whose bounds pass every grid point at c_prob_target.

    The pass condition at t is ci_high <= c_prob_target e^{-t^2/2}. The search
    is a bisection in log c_dev over [1e-6, 1e6]. A precomputed ``summary``
    of the same sum may be passed to reuse one simulation for several
    certificates.
    """
    t_grid = _check_grid(t_grid)
    if not c_prob_target > 0:
        raise DomainError("c_prob_target must be positive")
    if summary is None:
        summary = simulate_linear_sum(models, cert.a, plan)
    if not _ok(_grid(cert, summary, t_grid, _C_HI), c_prob_target):
        return CalibrationResult(_C_HI, float(c_prob_target), _grid(cert, summary, t_grid, _C_HI), False)
    lo, hi = _C_LO, _C_HI
    if _ok(_grid(cert, summary, t_grid, lo), c_prob_target):
        hi = lo
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if _ok(_grid(cert, summary, t_grid, mid), c_prob_target):
            hi = mid
        else:
            lo = mid
    return CalibrationResult(hi, float(c_prob_target), _grid(cert, summary, t_grid, hi), True)


REPORT_COLUMNS = ("t", "threshold", "successes", "trials", "p_hat", "ci_low", "ci_high", "budget", "pass")


@dataclass(frozen=True)
class VerificationRow:
    t: float
    threshold: float
    successes: int
    trials: int
    p_hat: float
    ci_low: float
    ci_high: float
    budget: float
    passed: bool

    def as_record(self) -> dict:
        rec = {k: getattr(self, k) for k in REPORT_COLUMNS[:-1]}
        rec["pass"] = self.passed
        return rec


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass(frozen=True)
class VerificationReport:
    rows: list
    certificate: dict
    seed: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def records(self) -> list:
        return [r.as_record() for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rec in self.records():
            w.writerow([_fmt(rec[k]) for k in REPORT_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"certificate": self.certificate, "seed": self.seed,
                           "pass": self.passed, "rows": self.records()}, indent=2)

    @staticmethod
    def parse_csv(text: str) -> list:
        """Rows of a CSV report as typed records (inverse of :meth:`to_csv`)."""
        out = []
        for rec in csv.DictReader(io.StringIO(text)):
            row = {}
            for k in REPORT_COLUMNS:
                if k == "pass":
                    row[k] = rec[k] == "true"
                elif k in ("successes", "trials"):
                    row[k] = int(rec[k])
                else:
                    row[k] = float(rec[k])
            out.append(row)
        return out


def verify_certificate(cert: DeviationCertificate, models, plan: SimulationPlan, t_grid,
                       summary: LinearSumSummary | None = None) -> VerificationReport:
    """Check P{|S - center| > B(t)} <= c_prob e^{-t^2/2} on a grid of t.

    A grid point passes unless the data contradict the claim, that is when
    ci_low <= c_prob e^{-t^2/2}.
    """
    t_grid = _check_grid(t_grid)
    if summary is None:
        summary = simulate_linear_sum(models, cert.a, plan)
    rows = []
    for g in _grid(cert, summary, t_grid, cert.c_dev):
        e = g.estimate
        budget = cert.probability(g.t)
        rows.append(VerificationRow(g.t, g.threshold, e.successes, e.trials, e.p_hat,
                                    e.ci_low, e.ci_high, budget, bool(e.ci_low <= budget)))
    return VerificationReport(rows, cert.to_dict(), plan.seed)


# ---------------------------------------------------------------------------
# order statistics and trimmed sums


def envelope_violations(envelope, plan: SimulationPlan, backend=None) -> TailEstimate:
    """Frequency of samples where some uniform order statistic exceeds ``envelope``.

    ``envelope[k-1]`` bounds the k-th smallest of n uniforms; the samples come
    from the exponential-spacings representation, n exponentials per row.
    """
    env = np.asarray(envelope, dtype=float)
    with np.errstate(divide="ignore"):
        limits = np.where(env >= 1.0, np.inf, -np.log1p(-np.minimum(env, 1.0)))

    def chunk(c, rows):
        key = streams.block_key(plan.seed, streams.MAIN, c)
        return int(np.count_nonzero(K.renyi_violations(key, 0, rows, limits, backend)))

    return TailEstimate.from_counts(sum(run_chunks(plan, chunk)), plan.replications)


def iid_top_sums(model: QuantileModel, n: int, kmax: int, plan: SimulationPlan, backend=None):
    """Totals of n i.i.d. draws per replication and cumulative sums of the kmax largest.

    Returns ``(totals, tops)`` with ``tops[:, j-1]`` the sum of the j largest,
    so ``totals - tops[:, j-1]`` is the sum of the n-j smallest values.
    """
    code, par, tab = model.kernel_spec()

    def chunk(c, rows):
        key = streams.block_key(plan.seed, streams.MAIN, c)
        return K.top_sums(key, 0, rows, int(n), code, par, tab, int(kmax), backend)

    parts = run_chunks(plan, chunk)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
