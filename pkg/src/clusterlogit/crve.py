"""Cluster-robust variance matrices and Wald / t statistics."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import CoefVector, Restriction
from .errors import (
    EstimationError,
    NonPDAdjustment,
    Separation,
    SingularHessian,
    SingularInformation,
    SingularRVR,
    SingularSubsampleInformation,
    TooManyDropped,
    ZeroVariance,
)
from .estimator import fit_arrays, solve_gram

__all__ = [
    "VarianceMatrix",
    "TestResult",
    "cv1",
    "cv1h",
    "cv3",
    "cv3l",
    "cv2l",
    "delete_one_linearized",
    "delete_one_refits",
    "sym_power",
    "wald",
    "t_stat",
]

MAX_DROPPED_SHARE = 0.10


@dataclass(frozen=True, eq=False)
class VarianceMatrix:
    """A ``k x k`` covariance estimate tagged with how it was computed.

    ``dof_reference`` is ``"t"`` (Student t with ``G - 1`` degrees of freedom)
    or ``"normal"``.
    """

    V: np.ndarray
    kind: str
    G: int
    dof_reference: str = "t"
    dropped_clusters: tuple = ()
    names: tuple = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.V), 0.0, None))

    @property
    def dof(self) -> float:
        return float(self.G - 1) if self.dof_reference == "t" else np.inf

    def with_reference(self, dof_reference):
        return VarianceMatrix(self.V, self.kind, self.G, dof_reference,
                              self.dropped_clusters, self.names)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: float
    p_value: float
    kind: str
    df_num: int = 1

    __test__ = False  # not a pytest class


def _sym(M):
    return 0.5 * (M + M.T)


def sym_power(M, p, error=NonPDAdjustment, pseudo=False):
    """``M**p`` for a symmetric PSD matrix via its eigendecomposition.

    Eigenvalues are floored at zero. A negative power of a singular matrix
    raises ``error``, or with ``pseudo=True`` inverts only the nonzero
    eigenvalues.
    """
    lam, Q = np.linalg.eigh(_sym(np.asarray(M, dtype=float)))
    top = max(lam[-1], 0.0)
    lam = np.clip(lam, 0.0, None)
    if p < 0:
        small = lam <= 1e-12 * top
        if top == 0 or (small.any() and not pseudo):
            raise error("matrix is singular")
        lam = np.where(small, 0.0, lam)
        powered = np.zeros_like(lam)
        powered[~small] = lam[~small] ** p
        return (Q * powered) @ Q.T
    return (Q * lam**p) @ Q.T


def _names(fit):
    return tuple(getattr(fit, "names", ()))


def _mode(fit):
    return getattr(fit, "mode", "exact")


def _n_obs(fit):
    return float(fit.data.N)


def cv1_factor(G, N, k, dof_style="full"):
    f = G / (G - 1)
    if dof_style == "full":
        f *= (N - 1) / (N - k)
    elif dof_style != "stata":
        raise ValueError("dof_style must be 'full' or 'stata'")
    return f


def _sandwich(bread, S, factor):
    meat = S.T @ S
    return _sym(factor * bread @ meat @ bread)


def cv1(fit, dof_style="full") -> VarianceMatrix:
    """CV1: ``G/(G-1) (N-1)/(N-k) J^-1 (sum s_g s_g') J^-1``.

    ``dof_style="stata"`` drops the ``(N-1)/(N-k)`` factor. Works for any
    object exposing ``cluster_scores`` and ``info_total`` (including LPM fits).
    """
    G, k = fit.G, fit.k
    Jinv = solve_gram(fit.info_total, np.eye(k), _mode(fit), SingularInformation)
    f = cv1_factor(G, _n_obs(fit), k, dof_style)
    return VarianceMatrix(_sandwich(Jinv, fit.cluster_scores, f), "CV1", G, names=_names(fit))


def cv1h(fit, dof_style="full") -> VarianceMatrix:
    """Like :func:`cv1` but with the inverse Hessian as the bread."""
    G, k = fit.G, fit.k
    Hinv = solve_gram(-fit.hessian_total, np.eye(k), _mode(fit), SingularHessian)
    f = cv1_factor(G, _n_obs(fit), k, dof_style)
    return VarianceMatrix(_sandwich(Hinv, fit.cluster_scores, f), "CV1H", G, names=_names(fit))


def _refit_chunk(args):
    d, family, beta, gs, tol, max_iter, mode = args
    out = []
    for g in gs:
        y, X, w = d.without_cluster(g)
        try:
            r = fit_arrays(y, X, w, family, beta0=beta, tol=tol, max_iter=max_iter, mode=mode)
        except Separation:
            out.append((g, None))
        except EstimationError as exc:
            if mode == "exact":
                raise SingularSubsampleInformation(
                    f"refit without cluster {g} failed: {exc}") from exc
            raise
        else:
            out.append((g, r.beta))
    return out


def delete_one_refits(fit, workers=1, tol=1e-10, max_iter=100, warm_start=True, mode=None):
    """Re-estimate the model once per omitted cluster.

    Returns
    -------
    betas : (G, k) array, rows of separated subsamples are NaN
    dropped : tuple of omitted cluster indices
    """
    d, G = fit.data, fit.G
    beta0 = fit.beta if warm_start else None
    mode = mode or _mode(fit)
    if workers is None or workers <= 1 or G < 4:
        chunks = [(d, fit.family, beta0, range(G), tol, max_iter, mode)]
        results = [_refit_chunk(c) for c in chunks]
    else:
        parts = np.array_split(np.arange(G), workers)
        chunks = [(d, fit.family, beta0, list(p), tol, max_iter, mode) for p in parts if p.size]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_refit_chunk, chunks))
    betas = np.full((G, fit.k), np.nan)
    dropped = []
    for chunk in results:
        for g, b in chunk:
            if b is None:
                dropped.append(g)
            else:
                betas[g] = b
    return betas, tuple(sorted(dropped))


def cv3(fit, center="mle", workers=1, tol=1e-10, max_iter=100, warm_start=True,
        refits=None, mode=None) -> VarianceMatrix:
    """Delete-one-cluster jackknife from explicit refits.

    ``center="mle"`` gives CV3 (deviations from the full-sample estimate),
    ``center="mean"`` gives CV3J (deviations from the mean of the delete-one
    estimates). Both use the factor ``(G-1)/G``. Subsamples whose refit is
    separated are left out of the sum without rescaling and reported in
    ``dropped_clusters``; more than 10% dropped raises
    :class:`TooManyDropped`. ``mode="pseudo"`` lets refits proceed when
    omitting a cluster leaves a coefficient unidentified.
    """
    if refits is None:
        refits = delete_one_refits(fit, workers, tol, max_iter, warm_start, mode)
    betas, dropped = refits
    G = fit.G
    if len(dropped) > MAX_DROPPED_SHARE * G:
        raise TooManyDropped(f"{len(dropped)} of {G} delete-one subsamples are separated")
    kept = betas[~np.isnan(betas).any(axis=1)]
    if center == "mle":
        c, kind = fit.beta, "CV3"
    elif center == "mean":
        c, kind = kept.mean(axis=0), "CV3J"
    else:
        raise ValueError("center must be 'mle' or 'mean'")
    D = kept - c
    V = _sym((G - 1) / G * D.T @ D)
    return VarianceMatrix(V, kind, G, dropped_clusters=dropped, names=_names(fit))


def delete_one_linearized(fit, mode=None) -> np.ndarray:
    """Linearized delete-one changes ``b_g = (J - J_g)^-1 (s - s_g)``.

    Returns a ``(G, k)`` array. ``mode="pseudo"`` uses a generalized inverse so
    coefficients that are unidentified without cluster ``g`` get a zero change.
    """
    mode = mode or _mode(fit)
    S = fit.cluster_scores
    J = fit.info_total
    s = S.sum(axis=0)
    out = np.empty_like(S)
    for g in range(fit.G):
        out[g] = solve_gram(J - fit.cluster_info[g], s - S[g], mode, SingularSubsampleInformation)
    return out


def cv3l(fit, center="zero", mode=None, b=None) -> VarianceMatrix:
    """Linearized jackknife ``(G-1)/G sum b_g b_g'``.

    With ``center="mean"`` the deviations are taken from the mean of the
    ``b_g`` (the linearized analogue of CV3J).
    """
    if b is None:
        b = delete_one_linearized(fit, mode)
    G = fit.G
    kind = "CV3L"
    if center == "mean":
        b = b - b.mean(axis=0)
        kind = "CV3LJ"
    elif center != "zero":
        raise ValueError("center must be 'zero' or 'mean'")
    return VarianceMatrix(_sym((G - 1) / G * b.T @ b), kind, G, names=_names(fit))


def cv2l(fit, form="information", mode=None) -> VarianceMatrix:
    """Linearized bias-reduced CRVE.

    ``form="information"`` builds ``A_g = J^-1/2 J_g J^-1/2``, rescales each
    score by ``J^1/2 (I - A_g)^-1/2 J^-1/2`` and sandwiches with ``J^-1``.
    Square roots are symmetric eigendecomposition roots.
    ``form="literal"`` uses ``J'J`` and ``J_g'J_g`` in place of ``J`` and
    ``J_g`` throughout. No leading scalar factor is applied.

    With ``mode="pseudo"`` (the default for fits with fixed effects) a
    singular ``I - A_g``, as produced by a cluster-level dummy, is handled by
    leaving its null space out of the rescaling.
    """
    pseudo = (mode or _mode(fit)) == "pseudo"
    J = fit.info_total
    k = fit.k
    if form == "information":
        M = J
        blocks = fit.cluster_info
    elif form == "literal":
        M = J.T @ J
        blocks = np.einsum("gji,gjl->gil", fit.cluster_info, fit.cluster_info)
    else:
        raise ValueError("form must be 'information' or 'literal'")
    # M = L L' with L = D Ms^1/2, Ms the equilibrated M; the rescaling
    # L f(L^-1 B L^-T) L^-1 equals f(B M^-1) for any such factor, so the
    # equilibration changes nothing but the conditioning.
    dm = np.sqrt(np.diag(M))
    if np.any(dm <= 0) and not pseudo:
        raise SingularInformation("information matrix has a zero diagonal entry")
    dinv = np.where(dm > 0, 1.0 / np.where(dm > 0, dm, 1.0), 0.0)
    Ms = dinv[:, None] * M * dinv[None, :]
    L = dm[:, None] * sym_power(Ms, 0.5)
    Linv = sym_power(Ms, -0.5, SingularInformation, pseudo) * dinv[None, :]
    I = np.eye(k)
    S2 = np.empty_like(fit.cluster_scores)
    for g in range(fit.G):
        A = _sym(Linv @ blocks[g] @ Linv.T)
        adj = sym_power(I - A, -0.5, NonPDAdjustment, pseudo)
        S2[g] = L @ adj @ Linv @ fit.cluster_scores[g]
    Minv = solve_gram(M, I, "pseudo" if pseudo else "exact", SingularInformation)
    return VarianceMatrix(_sandwich(Minv, S2, 1.0), "CV2L", fit.G, names=_names(fit))


def _as_array(beta):
    return np.asarray(beta.beta if isinstance(beta, CoefVector) else beta, dtype=float)


def wald(beta, V: VarianceMatrix, restr: Restriction) -> TestResult:
    """``W = (R b - r)' (R V R')^-1 (R b - r)`` with a chi-squared P value."""
    b = _as_array(beta)
    names = getattr(beta, "labels", None) or V.names or None
    R, r = restr.matrix(b.size, names)
    diff = R @ b - r
    RVR = R @ np.asarray(V.V if isinstance(V, VarianceMatrix) else V) @ R.T
    W = float(diff @ solve_gram(RVR, diff, "exact", SingularRVR))
    q = R.shape[0]
    return TestResult(W, np.inf, float(stats.chi2.sf(W, q)), "wald", q)


def t_stat(beta, V: VarianceMatrix, restr: Restriction | None = None,
           dof_reference=None) -> TestResult:
    """t statistic for one linear restriction, two-sided P value.

    The reference distribution is Student t with ``G - 1`` degrees of freedom
    unless ``dof_reference="normal"``; by default the one attached to ``V``.
    """
    restr = restr or Restriction()
    b = _as_array(beta)
    names = getattr(beta, "labels", None) or V.names or None
    R, r = restr.matrix(b.size, names)
    if R.shape[0] != 1:
        raise ValueError("t statistic needs a single restriction")
    a = R[0]
    var = float(a @ V.V @ a)
    if not var > 0:
        raise ZeroVariance("a'Va is not positive")
    t = float((a @ b - r[0]) / np.sqrt(var))
    ref = dof_reference or V.dof_reference
    if ref == "t":
        dof = float(V.G - 1)
        p = 2 * stats.t.sf(abs(t), dof)
    elif ref == "normal":
        dof = np.inf
        p = 2 * stats.norm.sf(abs(t))
    else:
        raise ValueError("dof_reference must be 't' or 'normal'")
    return TestResult(t, dof, float(min(p, 1.0)), "t")
