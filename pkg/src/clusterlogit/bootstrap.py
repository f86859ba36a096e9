"""Wild cluster linearized bootstrap.

The engine only sees per-cluster score vectors and information blocks, so
the same code serves the logit bootstraps (WCLR/WCLU) and the linear
probability model (WCR/WCU).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .crve import cv1, cv1_factor, delete_one_linearized, t_stat
from .data import Restriction
from .errors import (
    DegenerateReplicationWarning,
    RestrictedOrigin,
    SingularInformation,
    SingularSubsampleInformation,
    TooFewReplications,
    UnsupportedRestriction,
)
from .estimator import fit_lpm, fit_mle, fit_restricted, solve_gram
from .links import LOGIT, get_family
from .rng import substream

__all__ = [
    "ScoreContributions",
    "WeightDistribution",
    "RADEMACHER",
    "WEBB",
    "BootstrapResult",
    "contributions",
    "transform_scores_unrestricted",
    "transform_scores_restricted",
    "draw_weights",
    "default_distribution",
    "run_bootstrap",
    "p_symmetric",
    "p_equal_tail",
    "boot_se",
    "wild_bootstrap",
    "METHODS",
]

BLOCK = 512


@dataclass(frozen=True, eq=False)
class ScoreContributions:
    """What the bootstrap needs: ``s_g``, ``J_g`` and their totals.

    ``origin`` is one of ``logit_restricted``, ``logit_unrestricted``,
    ``lpm_restricted``, ``lpm_unrestricted``; ``transformed`` marks the
    jackknife-adjusted ("-S") scores.
    """

    scores: np.ndarray
    blocks: np.ndarray
    J_total: np.ndarray
    origin: str
    N: float
    transformed: bool = False
    mode: str = "exact"

    @property
    def G(self):
        return self.scores.shape[0]

    @property
    def k(self):
        return self.scores.shape[1]

    @property
    def restricted(self):
        return self.origin.endswith("_restricted")


def _origin(fit, restricted):
    base = "lpm" if not hasattr(fit, "family") else "logit"
    return f"{base}_{'restricted' if restricted else 'unrestricted'}"


def contributions(fit) -> ScoreContributions:
    """Classic (untransformed) contributions of a fitted model."""
    restricted = fit.restriction is not None
    return ScoreContributions(fit.cluster_scores, fit.cluster_info, fit.info_total,
                              _origin(fit, restricted), float(fit.data.N),
                              mode=getattr(fit, "mode", "exact"))


def transform_scores_unrestricted(fit, mode=None) -> ScoreContributions:
    """``s_g - J_g b_g`` with ``b_g`` the linearized delete-one change."""
    if fit.restriction is not None:
        raise ValueError("expected an unrestricted fit")
    b = delete_one_linearized(fit, mode)
    S = fit.cluster_scores - np.einsum("gij,gj->gi", fit.cluster_info, b)
    return ScoreContributions(S, fit.cluster_info, fit.info_total, _origin(fit, False),
                              float(fit.data.N), True, getattr(fit, "mode", "exact"))


def transform_scores_restricted(rfit, mode=None) -> ScoreContributions:
    """``s_g - J_g[:, free] b_g`` for a fit with ``beta_j = r`` imposed.

    ``b_g`` is the linearized delete-one change of the free coefficients in
    the restricted model, ``(J_ff - J_ff,g)^-1 (s_f - s_f,g)``.
    """
    if rfit.restriction is None:
        raise UnsupportedRestriction("expected a fit with one coefficient restricted")
    mode = mode or getattr(rfit, "mode", "exact")
    j = rfit.restriction[0]
    k = rfit.k
    free = np.array([i for i in range(k) if i != j], dtype=int)
    S = rfit.cluster_scores.copy()
    if free.size:
        Jb = rfit.cluster_info
        Jff = rfit.info_total[np.ix_(free, free)]
        Sf = rfit.cluster_scores[:, free]
        sf = Sf.sum(axis=0)
        for g in range(rfit.G):
            bg = solve_gram(Jff - Jb[g][np.ix_(free, free)], sf - Sf[g], mode,
                            SingularSubsampleInformation)
            S[g] -= Jb[g][:, free] @ bg
    return ScoreContributions(S, rfit.cluster_info, rfit.info_total, _origin(rfit, True),
                              float(rfit.data.N), True, mode)


@dataclass(frozen=True)
class WeightDistribution:
    kind: str
    atoms: tuple
    probs: tuple

    def sample(self, rng, size):
        if self.kind == "rademacher":
            return 2.0 * rng.integers(0, 2, size=size) - 1.0
        idx = rng.integers(0, len(self.atoms), size=size)
        return np.asarray(self.atoms)[idx]


RADEMACHER = WeightDistribution("rademacher", (-1.0, 1.0), (0.5, 0.5))
WEBB = WeightDistribution(
    "webb6",
    (-np.sqrt(1.5), -1.0, -np.sqrt(0.5), np.sqrt(0.5), 1.0, np.sqrt(1.5)),
    (1 / 6,) * 6,
)


def get_distribution(dist, G=None) -> WeightDistribution:
    if isinstance(dist, WeightDistribution):
        return dist
    if dist is None or dist == "auto":
        return default_distribution(G)
    name = str(dist).lower()
    if name.startswith("rad"):
        return RADEMACHER
    if name.startswith("webb"):
        return WEBB
    raise ValueError(f"unknown weight distribution {dist!r}")


def default_distribution(G) -> WeightDistribution:
    """Rademacher with 13 or more clusters, the six-point rule otherwise."""
    return RADEMACHER if G >= 13 else WEBB


def draw_weights(G, dist=RADEMACHER, stream=None, size=None):
    """Draw i.i.d. cluster weights; ``stream`` is a numpy Generator or a seed."""
    if G < 2:
        raise ValueError("need at least two clusters")
    rng = stream if isinstance(stream, np.random.Generator) else np.random.default_rng(stream)
    shape = G if size is None else (size, G)
    return get_distribution(dist, G).sample(rng, shape)


def _enumeration(G):
    codes = np.arange(2**G, dtype=np.int64)[:, None]
    bits = (codes >> np.arange(G - 1, -1, -1)) & 1
    return 1.0 - 2.0 * bits


def p_symmetric(t_obs, t_star) -> float:
    """Share of ``|t*|`` strictly above ``|t_obs|``."""
    t_star = np.asarray(t_star, dtype=float)
    return float(np.mean(np.abs(t_star) > abs(t_obs)))


def p_equal_tail(t_obs, t_star) -> float:
    """``2/B min(#{t* > t}, #{t* <= t})``, capped at 1."""
    t_star = np.asarray(t_star, dtype=float)
    B = t_star.size
    above = int(np.sum(t_star > t_obs))
    return float(min(1.0, 2.0 / B * min(above, B - above)))


def boot_se(beta_star_a) -> float:
    """Standard deviation (divisor ``B - 1``) of the bootstrap estimates."""
    x = np.asarray(beta_star_a, dtype=float)
    if x.size < 2:
        raise TooFewReplications("need at least two bootstrap estimates")
    return float(np.std(x, ddof=1))


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    t_obs: float
    t_star: np.ndarray
    beta_star_a: np.ndarray
    B: int
    enumeration: bool
    origin: str
    dist: str
    n_degenerate: int = 0
    transformed: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def restricted(self):
        return self.origin.endswith("_restricted")

    @property
    def p_sym(self):
        return p_symmetric(self.t_obs, self.t_star)

    @property
    def p_et(self):
        return p_equal_tail(self.t_obs, self.t_star)

    @property
    def boot_se(self):
        if self.restricted:
            raise RestrictedOrigin("bootstrap standard errors need a DGP that does not impose the null")
        return boot_se(self.beta_star_a)


def _engine_block(V, S, Jg, Jinv, a, factor):
    # t* for each row of V (b x G); returns (t*, a'b*, den^2)
    c = Jinv @ a
    q = S @ c
    M = Jg @ c  # (G, k); J_g is symmetric
    SV = V @ S
    bstar = SV @ Jinv
    num = bstar @ a
    proj = V * q - bstar @ M.T
    den2 = factor * np.einsum("bg,bg->b", proj, proj)
    return num, den2


def _block_job(args):
    seed, blk, n, G, dist, S, Jg, Jinv, a, factor = args
    V = dist.sample(substream(seed, "wild", blk), (n, G))
    return _engine_block(V, S, Jg, Jinv, a, factor)


def run_bootstrap(c: ScoreContributions, a, t_obs, B=999, dist=None, seed=0,
                  workers=1, enumerate_small=True) -> BootstrapResult:
    """Wild cluster bootstrap of ``t = a'b / (a'V a)^1/2``.

    Each replication multiplies every cluster's score by a weight ``v_g``,
    re-solves ``b* = J^-1 sum v_g s_g``, forms the CV1-type bootstrap
    variance from ``v_g s_g - J_g b*`` and records ``t*`` and ``a'b*``. When
    Rademacher weights are used and ``2^G <= B`` all sign vectors are
    enumerated instead.

    Weights are drawn in fixed blocks of replications, each from its own
    keyed random stream, so results do not depend on ``workers``.
    Replications with zero bootstrap variance are dropped with a
    :class:`DegenerateReplicationWarning`.
    """
    a = np.asarray(a, dtype=float)
    if not np.any(a):
        raise ValueError("a must be nonzero")
    G, k = c.G, c.k
    dist = get_distribution(dist, G)
    Jinv = solve_gram(c.J_total, np.eye(k), c.mode, SingularInformation)
    factor = cv1_factor(G, c.N, k, "full")
    S, Jg = c.scores, c.blocks
    enum = enumerate_small and dist.kind == "rademacher" and G < 63 and 2**G <= B
    if enum:
        parts = [_engine_block(_enumeration(G), S, Jg, Jinv, a, factor)]
        B_eff = 2**G
    else:
        if B < 1:
            raise TooFewReplications("B must be positive")
        jobs = [(seed, i, min(BLOCK, B - i * BLOCK), G, dist, S, Jg, Jinv, a, factor)
                for i in range(-(-B // BLOCK))]
        if workers and workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(_block_job, jobs))
        else:
            parts = [_block_job(j) for j in jobs]
        B_eff = B
    num = np.concatenate([p[0] for p in parts])
    den2 = np.concatenate([p[1] for p in parts])
    scale = factor * float(np.sum((S @ (Jinv @ a)) ** 2))
    ok = den2 > 1e-28 * max(scale, 1e-300)
    n_bad = int(np.sum(~ok))
    if n_bad:
        warnings.warn(f"{n_bad} bootstrap replications had zero variance and were excluded",
                      DegenerateReplicationWarning, stacklevel=2)
    t_star = num[ok] / np.sqrt(den2[ok])
    return BootstrapResult(float(t_obs), t_star, num[ok], B_eff, enum, c.origin, dist.kind,
                           n_bad, c.transformed)


METHODS = ("WCLR-C", "WCLR-S", "WCLU-C", "WCLU-S", "WCR-C", "WCR-S", "WCU-C", "WCU-S")


def wild_bootstrap(d, method="WCLR-C", restr: Restriction | None = None, family=LOGIT,
                   B=999, dist=None, seed=0, workers=1, fit=None, rfit=None,
                   mode="exact") -> BootstrapResult:
    """Fit what is needed and run one of the named bootstrap methods.

    ``WCLR``/``WCLU`` use the logit (or probit) scores with the null imposed or
    not; ``WCR``/``WCU`` use the linear probability model. The suffix ``-C``
    uses the scores as they are, ``-S`` the jackknife-transformed ones. The
    observed statistic is the CV1 t statistic of the corresponding model.
    """
    method = method.upper()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    restr = restr or Restriction()
    if restr.R is not None:
        raise UnsupportedRestriction("bootstrap tests support beta_j = r only")
    j = restr.position(d.k, d.names)
    a = np.zeros(d.k)
    a[j] = 1.0
    family = get_family(family)
    restricted = method[-3] == "R"
    transformed = method.endswith("-S")
    lpm = not method.startswith("WCL")
    if lpm:
        ufit = fit if fit is not None else fit_lpm(d)
        if restricted:
            rfit = rfit if rfit is not None else fit_lpm(d, restr)
    else:
        ufit = fit if fit is not None else fit_mle(d, family, mode=mode)
        if restricted:
            rfit = rfit if rfit is not None else fit_restricted(d, family, restr, mode=mode)
    t_obs = t_stat(ufit.beta, cv1(ufit), restr).statistic
    src = rfit if restricted else ufit
    if transformed:
        c = transform_scores_restricted(src) if restricted else transform_scores_unrestricted(src)
    else:
        c = contributions(src)
    res = run_bootstrap(c, a, t_obs, B, dist, seed, workers)
    res.extra["method"] = method
    return res
