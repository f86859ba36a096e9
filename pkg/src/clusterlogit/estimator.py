"""Pseudo-ML fitting for binary response models and OLS for the LPM.

The fitted objects carry the per-cluster score vectors ``s_g`` and
information blocks ``J_g`` evaluated at the estimate; these are all that the
variance estimators and the bootstrap need.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CoefVector, Dataset, Restriction
from .errors import (
    NonConvergence,
    RankDeficient,
    Separation,
    SingularMatrix,
    UnsupportedRestriction,
)
from .links import LOGIT, LinkFamily, get_family

__all__ = [
    "FitResult",
    "LpmFitResult",
    "SeparationVerdict",
    "fit_mle",
    "fit_restricted",
    "fit_arrays",
    "fit_lpm",
    "detect_separation",
    "solve_gram",
    "cluster_contributions",
]

ETA_MAX = 30.0
PROB_FLOOR = 1e-8
_ETA_PROBE = 18.0
_EIG_RTOL = 1e-10


def solve_gram(J, v, mode="exact", error=SingularMatrix):
    """Solve ``J x = v`` for a symmetric positive semidefinite ``J``.

    Parameters
    ----------
    J : (k, k) array
    v : (k,) or (k, m) array
    mode : {"exact", "pseudo"}
        ``exact`` raises ``error`` when ``J`` is numerically singular.
        ``pseudo`` returns the Moore-Penrose solution, whose components in the
        null space of ``J`` are zero.
    error : exception class raised in exact mode
    """
    J = np.asarray(J, dtype=float)
    v = np.asarray(v, dtype=float)
    if mode not in ("exact", "pseudo"):
        raise ValueError("mode must be 'exact' or 'pseudo'")
    # equilibrate first so that badly scaled regressors are not mistaken
    # for rank deficiency
    diag = np.diag(J).copy()
    live = diag > 0
    scale = np.zeros_like(diag)
    scale[live] = 1.0 / np.sqrt(diag[live])
    Js = scale[:, None] * J * scale[None, :]
    lam, Q = np.linalg.eigh(0.5 * (Js + Js.T))
    top = lam[-1] if lam.size else 0.0
    good = lam > _EIG_RTOL * max(top, 0.0)
    if mode == "exact":
        if top <= 0 or not good.all() or not live.all():
            raise error("matrix is singular or not positive definite")
        return np.linalg.solve(J, v)
    if top <= 0:
        return np.zeros_like(v)
    Qg = Q[:, good]
    vs = v * (scale if v.ndim == 1 else scale[:, None])
    w = Qg.T @ vs
    w = w / (lam[good] if w.ndim == 1 else lam[good][:, None])
    x = Qg @ w
    return x * (scale if x.ndim == 1 else scale[:, None])


def _gram_inverse(J, mode="exact", error=SingularMatrix):
    return solve_gram(J, np.eye(J.shape[0]), mode, error)


@dataclass(frozen=True)
class SeparationVerdict:
    separated: bool
    direction: np.ndarray | None = None
    reason: str = ""

    def __bool__(self):
        return self.separated


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    return v / n if n > 0 else None


def _certify(y, X, candidates):
    # a direction u certifies separation when (2y-1) x'u >= 0 for every row
    # (up to rounding) and > 0 for at least one
    sgn = 2.0 * np.asarray(y) - 1.0
    scale = np.sqrt((X**2).sum(axis=1))
    for u in candidates:
        u = _unit(u)
        if u is None:
            continue
        m = sgn * (X @ u)
        if np.all(m >= -1e-6 * scale) and np.any(m > 1e-6 * scale):
            return u
    return None


def _observed_prob_floor(eta, y, family):
    # smallest fitted probability of the outcome actually observed
    lp = family.loglik_obs(eta, y)
    return float(np.exp(lp.min()))


def detect_separation(d, family=LOGIT, trajectory=None, logliks=None) -> SeparationVerdict:
    """Decide whether a fit diverged because some direction classifies perfectly.

    Parameters
    ----------
    d : Dataset
    family : LinkFamily
    trajectory : sequence of coefficient vectors visited by the optimizer.
        When omitted the model is fitted here and the verdict of that fit is
        returned.
    logliks : matching log-likelihood values, if known

    Returns
    -------
    SeparationVerdict
        ``direction`` is the normalized change of the coefficients along the
        trajectory, which points (approximately) along a separating vector.
    """
    family = get_family(family)
    if trajectory is None:
        try:
            fit_mle(d, family)
        except Separation as exc:
            return SeparationVerdict(True, exc.direction, str(exc))
        return SeparationVerdict(False)
    traj = [np.asarray(b, dtype=float) for b in trajectory]
    last = traj[-1]
    eta = d.X @ last
    if logliks is None:
        w = d.weights
        logliks = [float(w @ family.loglik_obs(d.X @ b, d.y)) for b in traj[-2:]]
    increasing = len(logliks) < 2 or logliks[-1] >= logliks[-2]
    direction = _unit(last - traj[0]) if len(traj) > 1 else None
    if np.max(np.abs(eta)) > ETA_MAX and increasing:
        cands = ([last - traj[-2]] if len(traj) > 1 else []) + [last - traj[0]]
        u = _certify(d.y, d.X, cands)
        if u is not None:
            return SeparationVerdict(True, u, "linear index diverging")
    if _observed_prob_floor(eta, d.y, family) > 1 - PROB_FLOOR:
        return SeparationVerdict(True, direction, "every outcome predicted perfectly")
    return SeparationVerdict(False)


def _loglik(y, eta, w, family):
    return float(w @ family.loglik_obs(eta, y))


def _grad_hess(y, X, w, eta, family):
    sw = w * family.score_weight(eta, y)
    g = X.T @ sw
    hw = w * family.hessian_weight(eta, y)
    negH = -(X.T * hw) @ X
    floor = 64 * np.finfo(float).eps * float(np.max(np.abs(sw) @ np.abs(X)))
    return g, negH, floor


def _check_rank(X, w):
    Xw = X * np.sqrt(w)[:, None]
    norms = np.sqrt((Xw**2).sum(axis=0))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        return zero
    s = np.linalg.svd(Xw / norms, compute_uv=False)
    if s[-1] <= 1e-7 * s[0]:
        return np.arange(X.shape[1])[-1:]
    return np.array([], dtype=int)


@dataclass
class _NewtonOut:
    beta: np.ndarray
    loglik: float
    iterations: int
    grad_inf: float
    converged: bool


def fit_arrays(y, X, w=None, family=LOGIT, beta0=None, offset=None, tol=1e-10,
               max_iter=100, mode="exact", check_separation=True, trace=None) -> _NewtonOut:
    """Newton-Raphson with step-halving on raw arrays.

    Used directly by the jackknife refits. Raises :class:`Separation` or
    :class:`NonConvergence`; returns the optimum otherwise. The gradient
    criterion is ``max|g| <= tol``, relaxed to a rounding floor proportional
    to the magnitude of the summed terms when ``tol`` is below what double
    precision can resolve.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if beta0 is None:
        beta = np.zeros(k)
        const = np.flatnonzero(np.all(X == 1.0, axis=0))
        if const.size:
            ybar = np.clip((w @ y) / w.sum(), 1e-6, 1 - 1e-6)
            beta[const[0]] = family.start_intercept(ybar)
    else:
        beta = np.array(beta0, dtype=float)
    start = beta.copy()
    traj = trace if trace is not None else []
    traj.append(beta.copy())
    eta = X @ beta + off
    ll = _loglik(y, eta, w, family)

    def separated(msg):
        return Separation(msg, _unit(beta - start))

    def certified(b_prev):
        return _certify(y, X, (beta - b_prev, beta - start))

    for it in range(1, max_iter + 1):
        g, negH, floor = _grad_hess(y, X, w, eta, family)
        gi = float(np.max(np.abs(g))) if k else 0.0
        if gi <= max(tol, floor):
            if check_separation and np.max(np.abs(eta)) > _ETA_PROBE:
                _probe(y, X, w, off, beta, start, family, mode)
            return _NewtonOut(beta, ll, it - 1, gi, True)
        step = solve_gram(negH, g, mode, RankDeficient)
        t = 1.0
        for _ in range(60):
            b_new = beta + t * step
            eta_new = X @ b_new + off
            ll_new = _loglik(y, eta_new, w, family)
            if ll_new >= ll - 1e-13 * abs(ll):
                break
            t *= 0.5
        else:
            if gi <= 1e3 * max(tol, floor):
                return _NewtonOut(beta, ll, it, gi, True)
            raise NonConvergence(f"line search failed at iteration {it} (|g| = {gi:.3g})")
        increased = ll_new > ll
        b_prev = beta
        beta, eta, ll = b_new, eta_new, ll_new
        traj.append(beta.copy())
        if check_separation:
            if np.max(np.abs(eta)) > ETA_MAX and increased:
                u = certified(b_prev)
                if u is not None:
                    raise Separation("perfect classifier: linear index diverging", u)
            if _observed_prob_floor(eta, y, family) > 1 - PROB_FLOOR:
                raise separated("perfect classifier: every outcome predicted perfectly")
    g, _, floor = _grad_hess(y, X, w, eta, family)
    gi = float(np.max(np.abs(g)))
    if gi <= max(tol, floor):
        return _NewtonOut(beta, ll, max_iter, gi, True)
    raise NonConvergence(f"no convergence after {max_iter} iterations (|g| = {gi:.3g})")


def _probe(y, X, w, off, beta, start, family, mode):
    # Tiny gradients can hide a quasi-separated fit that is still drifting
    # off to infinity; keep stepping and see whether the index keeps growing.
    b = beta.copy()
    eta = X @ b + off
    ll = _loglik(y, eta, w, family)
    for _ in range(50):
        g, negH, _ = _grad_hess(y, X, w, eta, family)
        if not np.any(g):
            return
        step = solve_gram(negH, g, "pseudo")
        b_new = b + step
        eta_new = X @ b_new + off
        ll_new = _loglik(y, eta_new, w, family)
        if not ll_new > ll:
            return
        b, eta, ll = b_new, eta_new, ll_new
        if np.max(np.abs(eta)) > ETA_MAX:
            u = _certify(y, X, (step, b - start))
            if u is not None:
                raise Separation("perfect classifier: linear index diverging", u)


def cluster_contributions(d: Dataset, beta, family=LOGIT):
    """Per-cluster scores ``s_g`` (G, k) and information blocks ``J_g`` (G, k, k)."""
    X, y, w = d.X, d.y, d.weights
    eta = X @ beta
    s = (w * family.score_weight(eta, y))[:, None] * X
    starts = d.starts[:-1]
    scores = np.add.reduceat(s, starts, axis=0)
    uw = w * family.upsilon(eta)
    info = _blocks(X, uw, d)
    return scores, info


def _blocks(X, weights, d):
    n, k = X.shape
    if n * k * k <= 4_000_000:
        outer = (weights[:, None] * X)[:, :, None] * X[:, None, :]
        return np.add.reduceat(outer, d.starts[:-1], axis=0)
    out = np.empty((d.G, k, k))
    for g in range(d.G):
        sl = d.cluster_rows(g)
        Xg = X[sl]
        out[g] = (Xg.T * weights[sl]) @ Xg
    return out


@dataclass(frozen=True, eq=False)
class FitResult:
    """A fitted binary response model.

    ``cluster_scores`` and ``cluster_info`` are evaluated at ``beta``; for a
    restricted fit they are the full ``k``-dimensional restricted quantities.
    """

    beta: np.ndarray
    names: tuple
    loglik: float
    converged: bool
    iterations: int
    cluster_scores: np.ndarray
    cluster_info: np.ndarray
    info_total: np.ndarray
    hessian_total: np.ndarray
    gradient_inf_norm: float
    family: LinkFamily
    data: Dataset = field(repr=False)
    rank_deficient_columns: tuple = ()
    restriction: tuple | None = None
    mode: str = "exact"

    @property
    def beta_hat(self) -> CoefVector:
        return CoefVector(self.beta, self.names)

    @property
    def G(self):
        return self.cluster_scores.shape[0]

    @property
    def k(self):
        return self.beta.shape[0]

    @property
    def N(self):
        return self.data.N

    @property
    def score_total(self):
        return self.cluster_scores.sum(axis=0)


def _assemble(d, beta, ll, out, family, mode, restriction=None, rank_cols=()):
    scores, info = cluster_contributions(d, beta, family)
    J = info.sum(axis=0)
    if family.kind == "logit":
        H = -J
    else:
        eta = d.X @ beta
        hw = d.weights * family.hessian_weight(eta, d.y)
        H = (d.X.T * hw) @ d.X
    return FitResult(beta=beta, names=d.names, loglik=ll, converged=out.converged,
                     iterations=out.iterations, cluster_scores=scores, cluster_info=info,
                     info_total=J, hessian_total=H, gradient_inf_norm=out.grad_inf,
                     family=family, data=d, rank_deficient_columns=tuple(rank_cols),
                     restriction=restriction, mode=mode)


def fit_mle(d: Dataset, family=LOGIT, tol=1e-10, max_iter=100, mode="exact",
            beta0=None) -> FitResult:
    """Maximize the (pseudo) log-likelihood of a binary response model.

    Parameters
    ----------
    d : Dataset
    family : LinkFamily or {"logit", "probit"}
    tol : float
        Convergence tolerance on the infinity norm of the gradient.
    max_iter : int
    mode : {"exact", "pseudo"}
        ``pseudo`` allows a rank-deficient design (e.g. a fixed effect with no
        variation left) and solves with a generalized inverse, so
        unidentified directions stay at their starting values.
    beta0 : optional starting values

    Raises
    ------
    Separation, NonConvergence, RankDeficient
    """
    family = get_family(family)
    rank_cols = _check_rank(d.X, d.weights)
    if rank_cols.size and mode == "exact":
        raise RankDeficient(f"design matrix is rank deficient (columns {list(rank_cols)})")
    out = fit_arrays(d.y, d.X, d.weights, family, beta0=beta0, tol=tol,
                     max_iter=max_iter, mode=mode)
    return _assemble(d, out.beta, out.loglik, out, family, mode, rank_cols=rank_cols)


def fit_restricted(d: Dataset, family=LOGIT, restr: Restriction | None = None,
                   tol=1e-10, max_iter=100, mode="exact") -> FitResult:
    """Fit subject to ``beta[j] == r``.

    The free coefficients are estimated with ``r * X[:, j]`` as an offset; the
    returned scores and information blocks are the full ``k``-dimensional
    ones evaluated at the restricted estimate.
    """
    family = get_family(family)
    restr = restr or Restriction()
    if restr.R is not None and not restr.is_single:
        raise UnsupportedRestriction("restricted estimation supports one restriction")
    if restr.R is not None:
        R, r = restr.matrix(d.k, d.names)
        nz = np.flatnonzero(R[0])
        if nz.size != 1:
            raise UnsupportedRestriction("restricted estimation supports beta_j = r only")
        j, value = int(nz[0]), float(r[0] / R[0, nz[0]])
    else:
        j, value = restr.position(d.k, d.names), float(restr.value)
    free = np.array([i for i in range(d.k) if i != j], dtype=int)
    Xf = d.X[:, free]
    offset = value * d.X[:, j]
    beta = np.zeros(d.k)
    beta[j] = value
    if free.size:
        rank_cols = _check_rank(Xf, d.weights)
        if rank_cols.size and mode == "exact":
            raise RankDeficient("restricted design matrix is rank deficient")
        out = fit_arrays(d.y, Xf, d.weights, family, offset=offset, tol=tol,
                         max_iter=max_iter, mode=mode)
        beta[free] = out.beta
        rank_cols = free[rank_cols]
    else:
        ll = _loglik(d.y, offset, d.weights, family)
        out = _NewtonOut(np.zeros(0), ll, 0, 0.0, True)
        rank_cols = np.array([], dtype=int)
    return _assemble(d, beta, out.loglik, out, family, mode, restriction=(j, value),
                     rank_cols=rank_cols)


@dataclass(frozen=True, eq=False)
class LpmFitResult:
    """OLS fit of the linear probability model, laid out like :class:`FitResult`."""

    beta: np.ndarray
    names: tuple
    residuals: np.ndarray
    cluster_scores: np.ndarray
    cluster_info: np.ndarray
    info_total: np.ndarray
    data: Dataset = field(repr=False)
    restriction: tuple | None = None

    @property
    def delta_hat(self) -> CoefVector:
        return CoefVector(self.beta, self.names)

    @property
    def G(self):
        return self.cluster_scores.shape[0]

    @property
    def k(self):
        return self.beta.shape[0]

    @property
    def N(self):
        return self.data.N


def fit_lpm(d: Dataset, restr: Restriction | None = None) -> LpmFitResult:
    """OLS of the 0/1 outcome on X, optionally with ``delta[j] = r`` imposed."""
    X, y, w = d.X, d.y, d.weights
    k = d.k
    delta = np.zeros(k)
    restriction = None
    free = np.arange(k)
    target = y
    if restr is not None:
        j, value = restr.position(k, d.names), float(restr.value)
        free = np.array([i for i in range(k) if i != j], dtype=int)
        delta[j] = value
        target = y - value * X[:, j]
        restriction = (j, value)
    if free.size:
        Xf = X[:, free]
        if _check_rank(Xf, w).size:
            raise RankDeficient("design matrix is rank deficient")
        XtX = (Xf.T * w) @ Xf
        delta[free] = np.linalg.solve(XtX, Xf.T @ (w * target))
    u = y - X @ delta
    scores = np.add.reduceat((w * u)[:, None] * X, d.starts[:-1], axis=0)
    info = _blocks(X, w, d)
    return LpmFitResult(beta=delta, names=d.names, residuals=u, cluster_scores=scores,
                        cluster_info=info, info_total=info.sum(axis=0), data=d,
                        restriction=restriction)
