import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import linalg, special, stats

from clusterlogit import (
    Dataset,
    FixedEffectSpec,
    Restriction,
    TooManyDropped,
    ZeroVariance,
    cv1,
    cv1h,
    cv2l,
    cv3,
    cv3l,
    delete_one_linearized,
    expand_fixed_effects,
    fit_lpm,
    fit_mle,
    t_stat,
    wald,
)
from clusterlogit.crve import VarianceMatrix, delete_one_refits, sym_power

from conftest import make_clustered


def test_cv1_by_hand(clustered):
    fit = fit_mle(clustered)
    X, y, g = clustered.X, clustered.y, clustered.groups
    p = special.expit(X @ fit.beta)
    J = (X.T * (p * (1 - p))) @ X
    meat = np.zeros((3, 3))
    for c in range(clustered.G):
        s = X[g == c].T @ (y[g == c] - p[g == c])
        meat += np.outer(s, s)
    G, N, k = clustered.G, clustered.N, clustered.k
    Jinv = np.linalg.inv(J)
    V = G / (G - 1) * (N - 1) / (N - k) * Jinv @ meat @ Jinv
    assert_allclose(cv1(fit).V, V, rtol=1e-9)
    assert_allclose(cv1(fit, "stata").V, V * (N - k) / (N - 1), rtol=1e-9)
    assert_allclose(cv1h(fit).V, V, rtol=1e-9)


def _drop_fit(d, g):
    keep = d.groups != g
    return fit_mle(Dataset.from_arrays(d.y[keep], d.X[keep], d.groups[keep])).beta


def test_cv3_and_cv3j_relation(clustered):
    fit = fit_mle(clustered)
    a, b = cv3(fit), cv3(fit, center="mean")
    betas = np.array([_drop_fit(clustered, g) for g in range(clustered.G)])
    G = clustered.G
    diff = betas.mean(axis=0) - fit.beta
    assert_allclose(a.V - b.V, (G - 1) * np.outer(diff, diff), atol=1e-12)
    assert np.linalg.eigvalsh(a.V - b.V).min() >= -1e-14


def test_cv3_workers_and_cold_start_agree(clustered):
    fit = fit_mle(clustered)
    assert_allclose(cv3(fit, workers=2).V, cv3(fit).V, rtol=1e-10)
    assert_allclose(cv3(fit, warm_start=False).V, cv3(fit).V, rtol=1e-7)


def test_linearized_changes_by_hand(clustered):
    fit = fit_mle(clustered)
    b = delete_one_linearized(fit)
    S, Jg = fit.cluster_scores, fit.cluster_info
    for g in range(clustered.G):
        ref = np.linalg.solve(fit.info_total - Jg[g], S.sum(axis=0) - S[g])
        assert_allclose(b[g], ref, rtol=1e-10, atol=1e-14)
    G = clustered.G
    assert_allclose(cv3l(fit).V, (G - 1) / G * b.T @ b, rtol=1e-12)
    bc = b - b.mean(axis=0)
    assert_allclose(cv3l(fit, center="mean").V, (G - 1) / G * bc.T @ bc, rtol=1e-12)


def test_linearized_close_to_exact_with_large_clusters():
    d = make_clustered(11, G=10, per=(400, 600), phi=0.1)
    fit = fit_mle(d)
    exact, _ = delete_one_refits(fit)
    lin = delete_one_linearized(fit)
    rel = np.linalg.norm(lin - (exact - fit.beta), axis=1) / np.linalg.norm(exact - fit.beta, axis=1)
    assert rel.max() < 0.05
    assert_allclose(cv3l(fit).se, cv3(fit).se, rtol=0.05)


def _cr2_textbook(X, u, groups):
    # CR2 for OLS with residual adjustments (I - H_gg)^-1/2 in observation space
    Jinv = np.linalg.inv(X.T @ X)
    meat = np.zeros((X.shape[1],) * 2)
    for g in np.unique(groups):
        Xg = X[groups == g]
        Hgg = Xg @ Jinv @ Xg.T
        lam, Q = np.linalg.eigh(np.eye(len(Xg)) - Hgg)
        adj = (Q / np.sqrt(lam)) @ Q.T
        s = Xg.T @ adj @ u[groups == g]
        meat += np.outer(s, s)
    return Jinv @ meat @ Jinv


def test_cv2l_equals_cr2_for_linear_model(clustered):
    lpm = fit_lpm(clustered)
    ref = _cr2_textbook(clustered.X, lpm.residuals, clustered.groups)
    assert_allclose(cv2l(lpm).V, ref, rtol=1e-9)


def test_cv2l_invariant_to_regressor_scale(clustered):
    fit = fit_mle(clustered)
    D = np.diag([1.0, 1e3, 1e-2])
    d2 = clustered.with_columns(clustered.X @ D, clustered.names)
    fit2 = fit_mle(d2)
    assert_allclose(D @ cv2l(fit2).V @ D, cv2l(fit).V, rtol=1e-7)


def test_cv2l_literal_form_runs(clustered):
    V = cv2l(fit_mle(clustered), form="literal").V
    assert np.all(np.linalg.eigvalsh(V) > 0)


def test_cluster_fixed_effects_need_pseudo_mode():
    d = make_clustered(4, G=6, per=(40, 60))
    fe = expand_fixed_effects(d, FixedEffectSpec.from_dataset(d, "cluster"))
    fit = fit_mle(fe, mode="pseudo")
    assert fit.converged
    V = cv2l(fit)
    assert np.isfinite(V.se[0]) and V.se[0] > 0
    V3 = cv3l(fit)
    assert np.isfinite(V3.se[0])
    assert_allclose(fit.beta[:2], fit_mle(fe, mode="pseudo").beta[:2])


def test_sym_power():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    M = A @ A.T + np.eye(4)
    assert_allclose(sym_power(M, 0.5) @ sym_power(M, 0.5), M, rtol=1e-10)
    assert_allclose(sym_power(M, -0.5), linalg.inv(linalg.sqrtm(M)).real, rtol=1e-8)


def test_wald_and_t_agree(clustered):
    fit = fit_mle(clustered)
    V = cv1(fit)
    r = Restriction(index=1, value=0.3)
    t = t_stat(fit.beta, V, r)
    w = wald(fit.beta, V, r)
    assert_allclose(w.statistic, t.statistic**2, rtol=1e-12)
    se = np.sqrt(V.V[1, 1])
    assert_allclose(t.statistic, (fit.beta[1] - 0.3) / se)
    assert_allclose(t.p_value, 2 * stats.t.sf(abs(t.statistic), clustered.G - 1))
    tn = t_stat(fit.beta, V, r, dof_reference="normal")
    assert_allclose(tn.p_value, 2 * stats.norm.sf(abs(t.statistic)))
    assert_allclose(w.p_value, stats.chi2.sf(w.statistic, 1))


def test_joint_wald(clustered):
    fit = fit_mle(clustered)
    V = cv1(fit)
    R = np.array([[0, 1.0, 0], [0, 0, 1.0]])
    w = wald(fit.beta, V, Restriction(R=R, r=np.zeros(2)))
    b = fit.beta[1:]
    assert_allclose(w.statistic, b @ np.linalg.solve(V.V[1:, 1:], b), rtol=1e-10)
    assert w.df_num == 2


def test_zero_variance_rejected():
    V = VarianceMatrix(np.zeros((2, 2)), "CV1", 5)
    with pytest.raises(ZeroVariance):
        t_stat(np.ones(2), V)


def test_dropped_subsamples():
    d = make_clustered(2, G=20, per=(10, 20))
    fit = fit_mle(d)
    G = d.G
    betas = np.tile(fit.beta, (G, 1)) + 0.01
    betas[[3, 4, 5]] = np.nan
    V = cv3(fit, refits=(betas, (3, 4)))
    assert V.dropped_clusters == (3, 4)
    assert_allclose(V.V, (G - 1) / G * (G - 3) * np.full((3, 3), 1e-4))
    with pytest.raises(TooManyDropped):
        cv3(fit, refits=(betas, (3, 4, 5)))
