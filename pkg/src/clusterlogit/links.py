"""Symmetric binary-response link families (logit and probit).

Each family supplies F, f and f' plus the per-observation pieces used by the
estimator: the score weight, the information weight and the Hessian weight.
All evaluators are vectorized over ``x``.
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["LinkFamily", "Logit", "Probit", "LOGIT", "PROBIT", "get_family"]


class LinkFamily:
    """Base class. Subclasses define ``cdf``, ``pdf``, ``dpdf`` and ``log_cdf``.

    The generic formulas assume a symmetric density, so that
    ``F(-x) = 1 - F(x)``.
    """

    kind = "generic"

    def cdf(self, x):
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def dpdf(self, x):
        raise NotImplementedError

    def log_cdf(self, x):
        return np.log(np.clip(self.cdf(x), 1e-300, 1.0))

    def upsilon(self, x):
        """Information weight f(x)^2 / (F(x) F(-x))."""
        x = np.asarray(x, dtype=float)
        return self.pdf(x) ** 2 / (self.cdf(x) * self.cdf(-x))

    def score_weight(self, x, y):
        """Multiplier of the regressor row in the score contribution."""
        x = np.asarray(x, dtype=float)
        return (y - self.cdf(x)) * self.pdf(x) / (self.cdf(x) * self.cdf(-x))

    def hessian_weight(self, x, y):
        """Multiplier of the row outer product in the Hessian contribution."""
        x = np.asarray(x, dtype=float)
        F, f, fp = self.cdf(x), self.pdf(x), self.dpdf(x)
        Fm, fm, fpm = self.cdf(-x), self.pdf(-x), self.dpdf(-x)
        h1 = (fp * F - f**2) / F**2
        h0 = (fpm * Fm - fm**2) / Fm**2
        return np.where(np.asarray(y) == 1, h1, h0)

    def loglik_obs(self, x, y):
        """Per-observation log-likelihood y log F(x) + (1-y) log F(-x)."""
        x = np.asarray(x, dtype=float)
        return np.where(np.asarray(y) == 1, self.log_cdf(x), self.log_cdf(-x))

    # row-level helpers

    def score_contrib(self, x, y, row):
        return self.score_weight(x, y) * np.asarray(row, dtype=float)

    def hessian_contrib(self, x, y, row):
        row = np.asarray(row, dtype=float)
        return self.hessian_weight(x, y) * np.outer(row, row)

    def info_contrib(self, x, row):
        row = np.asarray(row, dtype=float)
        return self.upsilon(x) * np.outer(row, row)

    def start_intercept(self, ybar):
        """Intercept giving F(b) = ybar, used as a Newton starting value."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Logit(LinkFamily):
    kind = "logit"

    def cdf(self, x):
        return special.expit(x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return special.expit(x) * special.expit(-x)

    def dpdf(self, x):
        x = np.asarray(x, dtype=float)
        return self.pdf(x) * (1.0 - 2.0 * special.expit(x))

    def log_cdf(self, x):
        return special.log_expit(x)

    def upsilon(self, x):
        x = np.asarray(x, dtype=float)
        return special.expit(x) * special.expit(-x)

    def score_weight(self, x, y):
        # y - F(x), written so y=1 with large x does not cancel
        x = np.asarray(x, dtype=float)
        return np.where(np.asarray(y) == 1, special.expit(-x), -special.expit(x))

    def hessian_weight(self, x, y):
        return -self.upsilon(x) + 0.0 * np.asarray(y)

    def start_intercept(self, ybar):
        return float(special.logit(ybar))


class Probit(LinkFamily):
    kind = "probit"

    def cdf(self, x):
        return special.ndtr(x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)

    def dpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -x * self.pdf(x)

    def log_cdf(self, x):
        return special.log_ndtr(x)

    def _log_pdf(self, x):
        return -0.5 * x * x - 0.5 * np.log(2 * np.pi)

    def _mills(self, x):
        # f(x)/F(x), stable far into the left tail
        return np.exp(self._log_pdf(x) - special.log_ndtr(x))

    def upsilon(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(2 * self._log_pdf(x) - special.log_ndtr(x) - special.log_ndtr(-x))

    def score_weight(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.where(np.asarray(y) == 1, self._mills(x), -self._mills(-x))

    def hessian_weight(self, x, y):
        x = np.asarray(x, dtype=float)
        lp, lm = self._mills(x), self._mills(-x)
        return np.where(np.asarray(y) == 1, -lp * (x + lp), -lm * (lm - x))

    def start_intercept(self, ybar):
        return float(special.ndtri(ybar))


LOGIT = Logit()
PROBIT = Probit()


def get_family(name) -> LinkFamily:
    if isinstance(name, LinkFamily):
        return name
    try:
        return {"logit": LOGIT, "probit": PROBIT}[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; use 'logit' or 'probit'") from None
