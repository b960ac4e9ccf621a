"""Deviation bounds for linear combinations of power-tailed random variables.

Submodules:

- ``special``: the xi functions, their inverses, C_0 and helpers.
- ``distributions``: quantile-function models.
- ``orderstats``: uniform order-statistic envelopes and trimmed-sum bounds.
- ``norms``: the E_{r,q} norm and the Poisson-hull norm.
- ``certificates``: deviation certificates and dyadic compression.
- ``baselines``: Latala, Markov, Berry-Esseen and BCR comparisons.
- ``montecarlo``: the deterministic parallel simulation harness.
- ``cli``: the ``powertail`` command.
"""

from . import baselines, certificates, distributions, montecarlo, norms, orderstats, special, streams
from ._kernels import BACKEND
from .errors import ConfigError, DomainError, NumericalError, PowertailError, RangeError

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DomainError",
    "NumericalError",
    "PowertailError",
    "RangeError",
    "baselines",
    "certificates",
    "distributions",
    "montecarlo",
    "norms",
    "orderstats",
    "special",
    "streams",
]
