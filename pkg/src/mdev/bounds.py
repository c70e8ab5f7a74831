"""Normal-law primitives and the closed-form sides of the efficiency bounds.

Every formula here works on log-probabilities when asked (``log=True``):
at moderate-deviation scales the tail probabilities quickly drop below
anything a ratio of doubles can hold (``Phi(-40)`` is ~1e-350).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

_SQRT2 = math.sqrt(2.0)
_LOG2 = math.log(2.0)

THEOREMS = ("T1", "T2", "T3", "T4", "T5")


def normal_cdf(x):
    """Standard normal CDF through ``erfc`` (no cancellation in the lower tail)."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def log_normal_cdf(x):
    """``log Phi(x)``, finite for every real ``x``.

    The lower tail uses the scaled complementary error function so that
    ``exp(-x**2/2)`` never has to be formed.
    """
    x = np.asarray(x, dtype=float)
    z = -x / _SQRT2
    out = np.empty_like(z)
    lower = z > 0
    # Phi(x) = erfc(z)/2 = erfcx(z) exp(-z^2) / 2
    out[lower] = np.log(special.erfcx(z[lower])) - z[lower] ** 2 - _LOG2
    out[~lower] = np.log1p(-0.5 * special.erfc(-z[~lower]))
    return out[()] if out.ndim == 0 else out


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def normal_quantile(alpha):
    """Return ``x`` with ``Phi(x) = alpha`` (so ``x < 0`` for ``alpha < 1/2``).

    ``ndtri`` gives the starting point; one Newton step on ``log Phi``
    polishes it to near machine precision in both tails.
    """
    a = np.asarray(alpha, dtype=float)
    if np.any(~((a > 0.0) & (a < 1.0))):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    x = special.ndtri(a)
    # d/dx log Phi(x) = phi(x)/Phi(x)
    lphi = log_normal_cdf(x)
    step = (lphi - np.log(a)) / np.exp(-0.5 * x * x - 0.5 * math.log(2 * math.pi) - lphi)
    x = x - step
    return x[()] if np.ndim(x) == 0 else x


def _separation(epsilon: float, u_eps: float, info: float) -> float:
    if epsilon <= 0 or info <= 0:
        raise ValueError("epsilon and Fisher information must be positive")
    return u_eps * math.sqrt(info) / epsilon


def theorem1_log_ratio(alpha, beta, epsilon, u_eps, info, log=False):
    """(sqrt|2 ln alpha| + sqrt|2 ln beta|) / (u_eps sqrt(info) / epsilon).

    With ``log=True`` the first two arguments are already natural logs,
    which is how rare-event estimates should be passed in.
    """
    if log:
        la, lb = float(alpha), float(beta)
    else:
        if not (0 < alpha < 1 and 0 < beta < 1):
            raise ValueError("alpha and beta must lie in (0, 1); pass logs with log=True")
        la, lb = math.log(alpha), math.log(beta)
    x = _separation(epsilon, u_eps, info)
    return (math.sqrt(abs(2.0 * la)) + math.sqrt(abs(2.0 * lb))) / x


def theorem2_scaled_log(miss_log, epsilon, u_eps, info):
    """epsilon^2 u_eps^-2 info^-1 * ln P(miss); the bound is -1/2 in the limit."""
    if not miss_log < 0:
        raise ValueError("miss_log must be negative")
    return float(miss_log) / _separation(epsilon, u_eps, info) ** 2


def theorem3_sharp_beta(alpha, epsilon, u_eps, info, log=False):
    """Smallest attainable type II error of a level-``alpha`` test.

    ``Phi(z - x)`` with ``z`` the upper ``alpha`` point ``-normal_quantile(alpha)``
    and ``x = u_eps sqrt(info) / epsilon``. This is the Neyman-Pearson value,
    so at ``x = 0`` it returns ``1 - alpha``.
    """
    z = -normal_quantile(alpha)
    arg = z - u_eps * math.sqrt(info) / epsilon
    return float(log_normal_cdf(arg)) if log else float(normal_cdf(arg))


def theorem4_denominator(epsilon, u_eps, info, log=False):
    """2 Phi(-u_eps sqrt(info) / epsilon)."""
    x = u_eps * math.sqrt(info) / epsilon
    if log:
        return _LOG2 + float(log_normal_cdf(-x))
    return 2.0 * float(normal_cdf(-x))


def theorem5_ratio(miss_prob, exceed) -> float:
    """Miss probability over the Gaussian exceedance ``P(zeta not in r*Omega)``.

    ``miss_prob`` may be a float or anything with a ``p_hat`` attribute.
    """
    p = getattr(miss_prob, "p_hat", miss_prob)
    if not exceed.p_hat > 10 * np.finfo(float).eps:
        raise ValueError(f"exceedance probability {exceed.p_hat!r} too small to divide by")
    return float(p) / exceed.p_hat


@dataclass
class BoundReport:
    """One (theorem, epsilon) cell: what was measured next to what the bound says."""

    theorem: str
    epsilon: float
    u_eps: float
    x: float
    alpha_target: float | None = None
    empirical: dict = field(default_factory=dict)
    theoretical: dict = field(default_factory=dict)
    ratio_or_gap: float = math.nan
    se_combined: float = math.nan
    meets_bound: bool = True
    error: str | None = None

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ValueError(f"unknown theorem {self.theorem!r}")
