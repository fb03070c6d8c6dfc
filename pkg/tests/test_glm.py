import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from amattack.glm import (
    AttackTarget,
    GlmFamily,
    SingularHessianError,
    audit_metric,
    constrained_target,
    fit_glm,
    glm_score,
    grad_and_hessian,
    irls_fit,
    kl_distance,
    kl_gradient,
    normal_sf2,
    wald_inference,
)

GAUSS = GlmFamily("gaussian")
BERN = GlmFamily("bernoulli")


def design(n=60, p=3, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.normal(size=(n, p - 1)), np.ones(n)])


def test_gaussian_irls_one_step_is_normal_equations():
    X = design(seed=1)
    rng = np.random.default_rng(1)
    y = X @ [0.7, -1.2, 0.4] + rng.normal(size=len(X))
    fit = irls_fit(X, y, np.ones(len(X)), GAUSS, max_iter=1)
    np.testing.assert_allclose(fit.theta, np.linalg.solve(X.T @ X, X.T @ y), rtol=0, atol=1e-10)


def test_bernoulli_matches_direct_optimizer():
    X = design(200, seed=2)
    rng = np.random.default_rng(2)
    y = (rng.random(200) < expit(X @ [1.0, -0.5, 0.2])).astype(float)
    fit = irls_fit(X, y, np.ones(200), BERN)
    assert fit.converged

    def nll(t):
        return -np.sum(glm_score(X, y, t, BERN))

    ref = minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(fit.theta, ref, atol=1e-5)


def test_separable_needs_ridge():
    X = np.column_stack([np.arange(-3.0, 3.0), np.ones(6)])
    y = (X[:, 0] > 0).astype(float)
    with pytest.raises(SingularHessianError, match="ridge"):
        irls_fit(X, y, np.ones(6), BERN)
    assert irls_fit(X, y, np.ones(6), BERN, ridge=0.1).converged


def test_score_and_derivatives():
    x = np.array([0.5, -1.0, 1.0])
    theta = np.array([0.3, 0.2, -0.1])
    eta = x @ theta
    assert glm_score(x, 1.2, theta, GAUSS) == pytest.approx(1.2 * eta - eta**2 / 2)
    assert glm_score(x, 1.0, theta, BERN) == pytest.approx(np.log(expit(eta)))
    with pytest.raises(ValueError):
        glm_score(x, np.nan, theta, GAUSS)
    X = design(20, seed=3)
    y = np.random.default_rng(3).random(20)
    w = np.random.default_rng(4).random(20)
    g, H = grad_and_hessian(X, y, theta, w, BERN)
    h = 1e-6
    num_g = np.array([(np.dot(w, glm_score(X, y, theta + h * e, BERN)) - np.dot(w, glm_score(X, y, theta - h * e, BERN)))
                      / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(g, num_g, atol=1e-8)
    np.testing.assert_allclose(H, H.T)
    assert np.all(np.linalg.eigvalsh(H) < 0)


def test_wald_gaussian_matches_textbook():
    X = design(80, seed=5)
    rng = np.random.default_rng(5)
    y = X @ [0.1, 2.0, 1.0] + rng.normal(size=80)
    fit = fit_glm(X, y, GAUSS)
    resid = y - X @ fit.theta
    s2 = resid @ resid / (80 - 3)
    cov = s2 * np.linalg.inv(X.T @ X)
    np.testing.assert_allclose(fit.covariance, cov, rtol=1e-8)
    z = fit.theta / np.sqrt(np.diag(cov))
    np.testing.assert_allclose(fit.p_values, normal_sf2(z), rtol=1e-8)
    assert fit.p_values[1] < 1e-10


def test_wald_zero_coefficient_and_small_n():
    X = design(10, seed=6)
    y = np.arange(10.0)
    _, p = wald_inference(X, y, GAUSS, np.array([0.0, 1.0, 1.0]))
    assert p[0] == 1.0
    with pytest.raises(ValueError):
        wald_inference(X[:3], y[:3], GAUSS, np.zeros(3))


def test_constrained_target_zero_and_reduced_fit():
    X = design(100, 4, seed=7)
    rng = np.random.default_rng(7)
    y = X @ [1.0, 0.5, -0.3, 0.2] + rng.normal(size=100)
    t = constrained_target(X, y, GAUSS, 1)
    assert t.theta_alpha[1] == 0.0
    keep = [0, 2, 3]
    np.testing.assert_allclose(t.theta_alpha[keep], np.linalg.lstsq(X[:, keep], y, rcond=None)[0], atol=1e-10)
    np.testing.assert_allclose(t.theta_complete, np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-10)
    assert AttackTarget.from_dict(t.to_dict()).target_index == 1
    with pytest.raises(ValueError):
        AttackTarget(np.array([1.0, 0.0]), 0, (0,))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["gaussian", "bernoulli"]))
def test_kl_properties(seed, kind):
    fam = GlmFamily(kind)
    rng = np.random.default_rng(seed)
    X = design(30, seed=seed)
    a = rng.normal(size=3)
    t = rng.normal(size=3)
    assert kl_distance(a, a, X, fam) == pytest.approx(0.0, abs=1e-14)
    assert kl_distance(t, a, X, fam) >= 0.0
    h = 1e-6
    num = np.array([(kl_distance(t + h * e, a, X, fam) - kl_distance(t - h * e, a, X, fam)) / (2 * h)
                    for e in np.eye(3)])
    np.testing.assert_allclose(kl_gradient(t, a, X, fam), num, atol=1e-7)


def test_kl_gaussian_ignores_sigma():
    X = design(20, seed=8)
    a, t = np.array([1.0, 0.0, 0.5]), np.array([0.5, 0.2, 0.0])
    assert kl_distance(t, a, X, GlmFamily("gaussian", 3.0)) == kl_distance(t, a, X, GAUSS)


def test_kl_bernoulli_saturation_warns():
    X = design(5, seed=9)
    with pytest.warns(RuntimeWarning):
        kl_distance(np.array([0.0, 0.0, 60.0]), np.zeros(3), X, BERN)


def test_audit_metric():
    X = np.column_stack([np.array([-1.0, 1.0, 2.0, -2.0]), np.ones(4)])
    y = np.array([0.0, 1.0, 1.0, 1.0])
    assert audit_metric(X, y, np.array([1.0, 0.0]), BERN) == 0.75
    yr = np.array([1.0, 2.0, 3.0, 4.0])
    assert audit_metric(X, yr, np.zeros(2), GAUSS) == pytest.approx(np.mean(yr**2) / yr.var())


def test_bernoulli_sigma_must_be_one():
    with pytest.raises(ValueError):
        GlmFamily("bernoulli", 2.0)
