import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from clusterlogit import (
    RADEMACHER,
    WEBB,
    Restriction,
    RestrictedOrigin,
    contributions,
    draw_weights,
    fit_lpm,
    fit_mle,
    fit_restricted,
    p_equal_tail,
    p_symmetric,
    run_bootstrap,
    transform_scores_restricted,
    transform_scores_unrestricted,
    wild_bootstrap,
)
from clusterlogit.bootstrap import _enumeration

from conftest import make_clustered


def _ols_t(X, y, groups, j, r):
    # CV1 t statistic for OLS, computed from scratch
    n, k = X.shape
    XtX_inv = np.linalg.inv(X.T @ X)
    b = XtX_inv @ X.T @ y
    u = y - X @ b
    G = np.unique(groups).size
    meat = np.zeros((k, k))
    for g in np.unique(groups):
        s = X[groups == g].T @ u[groups == g]
        meat += np.outer(s, s)
    V = G / (G - 1) * (n - 1) / (n - k) * XtX_inv @ meat @ XtX_inv
    return (b[j] - r) / np.sqrt(V[j, j]), b


def _textbook_wild(d, j, restricted, signs):
    # regenerate y*, refit OLS, recompute the t statistic for every sign vector
    X, y, g = d.X, d.y, d.groups
    if restricted:
        free = [i for i in range(d.k) if i != j]
        bf = np.linalg.lstsq(X[:, free], y, rcond=None)[0]
        fitted = X[:, free] @ bf
        centre = 0.0
    else:
        b = np.linalg.lstsq(X, y, rcond=None)[0]
        fitted = X @ b
        centre = b[j]
    u = y - fitted
    return np.array([_ols_t(X, fitted + v[g] * u, g, j, centre)[0] for v in signs])


@pytest.mark.parametrize("method,restricted", [("WCR-C", True), ("WCU-C", False)])
def test_lpm_bootstrap_matches_textbook_refits(method, restricted):
    d = make_clustered(7, G=6, per=(8, 15))
    signs = _enumeration(d.G)
    ref = _textbook_wild(d, 2, restricted, signs)
    res = wild_bootstrap(d, method, Restriction(index=2), B=999, dist="rademacher")
    assert res.enumeration and res.B == 64
    assert_allclose(res.t_star, ref, rtol=1e-9, atol=1e-12)


def test_lpm_transformed_scores_are_jackknife_residual_scores(clustered):
    lpm = fit_lpm(clustered)
    c = transform_scores_unrestricted(lpm)
    X, y, g = clustered.X, clustered.y, clustered.groups
    for c_ in range(clustered.G):
        keep = g != c_
        b = np.linalg.lstsq(X[keep], y[keep], rcond=None)[0]
        ref = X[~keep].T @ (y[~keep] - X[~keep] @ b)
        assert_allclose(c.scores[c_], ref, atol=1e-11)


def test_restricted_transform_by_hand(clustered):
    rfit = fit_restricted(clustered, restr=Restriction(index=1, value=0.0))
    c = transform_scores_restricted(rfit)
    S, Jg, J = rfit.cluster_scores, rfit.cluster_info, rfit.info_total
    f = [0, 2]
    for g in range(clustered.G):
        Jff = J[np.ix_(f, f)] - Jg[g][np.ix_(f, f)]
        bg = np.linalg.solve(Jff, S[:, f].sum(axis=0) - S[g, f])
        assert_allclose(c.scores[g], S[g] - Jg[g][:, f] @ bg, rtol=1e-10, atol=1e-13)


def _direct_enumeration(S, Jg, J, G, N, k, j):
    # one sign vector at a time, written out from the defining formulas
    f = G / (G - 1) * (N - 1) / (N - k)
    Jinv = np.linalg.inv(J)
    out = []
    for bits in range(2**G):
        v = np.array([1.0 if (bits >> (G - 1 - i)) & 1 == 0 else -1.0 for i in range(G)])
        b = Jinv @ (v @ S)
        meat = np.zeros((k, k))
        for g in range(G):
            sg = v[g] * S[g] - Jg[g] @ b
            meat += np.outer(sg, sg)
        V = f * Jinv @ meat @ Jinv
        out.append(b[j] / np.sqrt(V[j, j]))
    return np.array(out)


@pytest.mark.parametrize("method", ["WCLR-C", "WCLU-C", "WCLR-S", "WCLU-S"])
def test_logit_enumeration_against_direct_loop(method):
    d = make_clustered(9, G=7, per=(15, 30))
    res = wild_bootstrap(d, method, Restriction(index=1), B=999, dist="rademacher")
    restr = Restriction(index=1)
    if method[3] == "R":
        src = fit_restricted(d, restr=restr)
        c = transform_scores_restricted(src) if method.endswith("S") else contributions(src)
    else:
        src = fit_mle(d)
        c = transform_scores_unrestricted(src) if method.endswith("S") else contributions(src)
    ref = _direct_enumeration(c.scores, c.blocks, c.J_total, d.G, d.N, d.k, 1)
    assert_allclose(res.t_star, ref, rtol=1e-9, atol=1e-12)
    assert res.p_sym == np.mean(np.abs(ref) > abs(res.t_obs))


def test_sign_flip_antisymmetry(clustered):
    res = wild_bootstrap(clustered, "WCLR-C", Restriction(index=2), B=999, dist="rademacher")
    t = res.t_star
    assert_allclose(t, -t[::-1], rtol=1e-10, atol=1e-12)


def test_worker_count_does_not_change_draws():
    d = make_clustered(5, G=14, per=(10, 20))
    a = wild_bootstrap(d, "WCLU-S", B=1500, seed=42, workers=1)
    b = wild_bootstrap(d, "WCLU-S", B=1500, seed=42, workers=2)
    assert not a.enumeration
    assert_array_equal(a.t_star, b.t_star)
    c = wild_bootstrap(d, "WCLU-S", B=1500, seed=43)
    assert not np.array_equal(a.t_star, c.t_star)


def test_weight_distributions():
    rng = np.random.default_rng(0)
    w = WEBB.sample(rng, 600000)
    assert set(np.round(w**2, 12)) == {0.5, 1.0, 1.5}
    assert abs(w.mean()) < 0.005 and abs(w.var() - 1) < 0.005
    r = draw_weights(10, RADEMACHER, 3, size=5)
    assert r.shape == (5, 10) and set(np.unique(r)) <= {-1.0, 1.0}
    assert_array_equal(r, draw_weights(10, RADEMACHER, 3, size=5))


def test_p_values_by_hand():
    t_star = np.array([-3.0, -1.0, 0.5, 2.0, 2.5])
    assert p_symmetric(2.0, t_star) == 0.4
    assert p_symmetric(-2.0, t_star) == 0.4
    assert p_equal_tail(2.0, t_star) == 2 / 5 * 1
    assert p_equal_tail(-2.0, t_star) == 2 / 5 * 1
    assert p_equal_tail(0.0, t_star) == 2 / 5 * 2
    assert p_equal_tail(-5.0, t_star) == 0.0


def test_bootstrap_se_only_for_unrestricted(clustered):
    r = wild_bootstrap(clustered, "WCLR-C", B=99, dist="webb")
    with pytest.raises(RestrictedOrigin):
        r.boot_se
    u = wild_bootstrap(clustered, "WCLU-C", B=99, dist="webb")
    assert u.boot_se == pytest.approx(np.std(u.beta_star_a, ddof=1))


def test_run_bootstrap_requires_direction(clustered):
    c = contributions(fit_mle(clustered))
    with pytest.raises(ValueError):
        run_bootstrap(c, np.zeros(3), 0.0)
