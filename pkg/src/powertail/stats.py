"""Binomial tail estimates with exact (Clopper-Pearson) confidence intervals."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from scipy import stats as _st

from .errors import DomainError

CONFIDENCE = 1.0 - 1e-3


def clopper_pearson(successes: int, trials: int, confidence: float = CONFIDENCE):
    """Exact two-sided binomial interval (ci_low, ci_high)."""
    k, n = int(successes), int(trials)
    if n < 1 or not 0 <= k <= n:
        raise DomainError("need 0 <= successes <= trials and trials >= 1")
    alpha = 1.0 - confidence
    low = 0.0 if k == 0 else float(_st.beta.ppf(alpha / 2.0, k, n - k + 1))
    high = 1.0 if k == n else float(_st.beta.ppf(1.0 - alpha / 2.0, k + 1, n - k))
    return low, high


@dataclass(frozen=True)
class TailEstimate:
    successes: int
    trials: int
    p_hat: float
    ci_low: float
    ci_high: float
    confidence: float = CONFIDENCE

    @classmethod
    def from_counts(cls, successes: int, trials: int, confidence: float = CONFIDENCE) -> "TailEstimate":
        low, high = clopper_pearson(successes, trials, confidence)
        p_hat = successes / trials
        # beta quantiles can land an ulp on the wrong side of p_hat
        return cls(int(successes), int(trials), p_hat, min(low, p_hat), max(high, p_hat), confidence)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def to_dict(self) -> dict:
        return asdict(self)


def normal_half_width(stderr: float, confidence: float = CONFIDENCE) -> float:
    """Half-width of a normal-theory interval at the harness-wide confidence level."""
    return float(_st.norm.ppf(0.5 + confidence / 2.0)) * stderr

