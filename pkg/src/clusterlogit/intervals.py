"""Confidence intervals: symmetric and studentized bootstrap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NonPositiveSE, TooFewReplications

__all__ = ["Interval", "ci_symmetric", "ci_studentized", "t_quantile"]


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    level: float
    method: str = ""

    def __iter__(self):
        yield self.lower
        yield self.upper

    def contains(self, value) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self):
        return self.upper - self.lower


def t_quantile(p, dof=np.inf) -> float:
    """Student t quantile; ``dof=inf`` gives the standard normal one."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if dof is None or np.isinf(dof):
        return float(stats.norm.ppf(p))
    if dof <= 0:
        raise ValueError("dof must be positive")
    return float(stats.t.ppf(p, dof))


def _check_level(level):
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")


def ci_symmetric(beta_j, se, level=0.95, dof=np.inf, method="") -> Interval:
    """``beta_j +/- c se`` with ``c`` the ``1 - alpha/2`` quantile of t(dof).

    Pass ``dof=G - 1`` for the usual cluster-robust reference distribution and
    ``dof=np.inf`` for the normal.
    """
    _check_level(level)
    if not se > 0:
        raise NonPositiveSE(f"standard error must be positive, got {se}")
    c = t_quantile(1 - (1 - level) / 2, dof)
    return Interval(beta_j - c * se, beta_j + c * se, level, method)


def ci_studentized(beta_j, se1, t_star, level=0.95, method="studentized") -> Interval:
    """Studentized (percentile-t) bootstrap interval.

    ``[beta_j - c*(1 - alpha/2) se1, beta_j - c*(alpha/2) se1]`` where ``c*(q)``
    is the empirical quantile of ``t_star`` at position ``(B + 1) q`` in the
    sorted list, interpolating linearly when that position is fractional.
    With ``B = 999`` and 95% these are order statistics 25 and 975.
    """
    _check_level(level)
    if not se1 > 0:
        raise NonPositiveSE(f"standard error must be positive, got {se1}")
    t = np.asarray(t_star, dtype=float)
    B = t.size
    alpha = 1 - level
    if B < 1 or (B + 1) * alpha / 2 < 1:
        raise TooFewReplications(f"{B} replications are too few for a {level:.0%} interval")
    lo_q, hi_q = np.quantile(t, [alpha / 2, 1 - alpha / 2], method="weibull")
    return Interval(beta_j - hi_q * se1, beta_j - lo_q * se1, level, method)
