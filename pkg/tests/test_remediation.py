import numpy as np
import pytest
from conftest import binary_response_dataset, regression_dataset, small_problem
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import mc_cca_objective, mc_observed_mean, sampled_masks

from amattack.glm import GlmFamily, fit_glm, glm_score
from amattack.mechanism import MaskDistribution, MechanismNet, mechanism_forward
from amattack.remediation import (
    AttackData,
    RemediationKind,
    Surrogate,
    approx_objective,
    build_imputed_batch,
    cca_objective,
    conditional_mean,
    imputation_objective,
    imputed_row,
    observe_prob_pi,
    probs_adjoint,
    regression_coeffs,
    weighted_ls_coeffs,
)

GAUSS = GlmFamily("gaussian")


def trained_like(ds, masked, seed=0):
    data = AttackData.from_dataset(ds, masked)
    net = MechanismNet.init(data.masked, data.net_input.shape[1], 8, seed)
    return data, mechanism_forward(net, data.net_input)


def test_conditional_mean_monte_carlo():
    ds = regression_dataset(n=40, seed=1)
    data, dist = trained_like(ds, [0, 1])
    bits = sampled_masks(dist, ds.schema.n_columns, 10_000, seed=2)
    for j in (0, 1):
        mc, se = mc_observed_mean(data.column_values(j), bits[:, :, j])
        assert abs(conditional_mean(data, dist, j) - mc) <= 2 * se


def test_cca_objective_monte_carlo():
    ds = regression_dataset(n=40, seed=3)
    data, dist = trained_like(ds, [0, 2])
    theta = np.array([0.5, -0.2, 0.1, 1.0])
    bits = sampled_masks(dist, ds.schema.n_columns, 10_000, seed=4)
    complete = bits.min(axis=2)
    mc, se = mc_cca_objective(data.X, data.y, theta, GAUSS, complete)
    assert abs(cca_objective(data, theta, dist, GAUSS) - mc) <= 2 * se


def test_uniform_weights_give_ols():
    rng = np.random.default_rng(0)
    A = np.column_stack([rng.normal(size=(30, 2)), np.ones(30)])
    b = rng.normal(size=30)
    ref = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(weighted_ls_coeffs(A, b, np.full(30, 0.37)), ref, rtol=0, atol=1e-10)


def test_regression_coeffs_always_observed_is_ols():
    ds = regression_dataset(n=50, seed=5)
    data = AttackData.from_dataset(ds, [0])
    dist = MaskDistribution.always_observe(50, data.masked)
    ref = np.linalg.lstsq(data.regressors, data.column_values(0), rcond=None)[0]
    np.testing.assert_allclose(regression_coeffs(data, dist, 0), ref, atol=1e-10)


@pytest.mark.parametrize("kind", ["cca", "mean", "linear"])
def test_always_observe_equals_complete_score(kind):
    ds = regression_dataset(n=30, seed=6)
    data = AttackData.from_dataset(ds, [0, 1])
    dist = MaskDistribution.always_observe(30, data.masked)
    theta = np.array([0.3, 0.1, -0.4, 0.9])
    full = np.mean(glm_score(data.X, data.y, theta, GAUSS))
    assert approx_objective(data, theta, dist, kind, GAUSS) == pytest.approx(full, abs=1e-12)


def test_imputation_objective_rejects_cca():
    ds = regression_dataset(n=20)
    data, dist = trained_like(ds, [0])
    with pytest.raises(ValueError):
        imputation_objective(data, np.zeros(4), dist, "cca", GAUSS)


def test_imputed_row():
    x = np.array([1.0, 2.0, 3.0])
    out = imputed_row(x, [True, False, True], "mean", means={1: 9.0})
    np.testing.assert_array_equal(out, [1.0, 9.0, 3.0])
    out = imputed_row(x, [False, True, True], "linear", coeffs={0: np.array([2.0, 1.0])},
                      regressors=np.array([3.0, 1.0]))
    np.testing.assert_array_equal(out, [7.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        imputed_row(x, [False, True, True], "cca")


def test_batch_structure():
    ds = regression_dataset(n=20)
    data, dist = trained_like(ds, [0, 1])
    cca = build_imputed_batch(data, dist, "cca")
    assert cca.mask_ids == (3,)
    mean = build_imputed_batch(data, dist, "mean")
    assert mean.mask_ids == (0, 1, 2, 3)
    assert mean.provenance[0] == {0: "mean", 1: "mean"}
    assert mean.provenance[2] == {1: "mean"}
    np.testing.assert_allclose(mean.X_hat[1][:, 0], mean.estimators.means[0])


def test_linear_rejects_binary_masked_column():
    ds = binary_response_dataset()
    data = AttackData.from_dataset(ds, ["s"])
    dist = MaskDistribution.always_observe(ds.n_rows, data.masked)
    with pytest.raises(ValueError, match="continuous"):
        build_imputed_batch(data, dist, "linear")
    build_imputed_batch(data, dist, "cca")


def test_never_observed_column_raises():
    ds = regression_dataset(n=10)
    data = AttackData.from_dataset(ds, [0])
    probs = np.zeros((10, 2))
    probs[:, 0] = 1.0
    dist = MaskDistribution(probs, (0,))
    with pytest.raises(ZeroDivisionError):
        observe_prob_pi(dist, 0)
    with pytest.raises(ZeroDivisionError):
        conditional_mean(data, dist, 0)
    assert observe_prob_pi(dist, 2) == 1.0


def test_response_and_intercept_not_maskable():
    ds = regression_dataset(n=10)
    with pytest.raises(ValueError):
        AttackData.from_dataset(ds, ["y"])
    with pytest.raises(ValueError):
        AttackData.from_dataset(ds, ["intercept"])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["cca", "mean", "linear"]),
       st.sampled_from(["gaussian", "bernoulli"]), st.booleans())
def test_probs_adjoint_matches_finite_differences(seed, kind, family, use_direction):
    _, data, _, net = small_problem(seed % 50, family, n=10, n_masked=2)
    fam = GlmFamily(family)
    rng = np.random.default_rng(seed)
    theta = 0.5 * rng.normal(size=data.X.shape[1])
    direction = rng.normal(size=theta.size) if use_direction else None
    dist = mechanism_forward(net, data.net_input)

    def value(P):
        sur = Surrogate(data, net, kind, fam, dist=MaskDistribution(P, data.masked))
        if direction is None:
            return sur.objective(theta)
        return float(sur.gradient(theta) @ direction)

    batch = build_imputed_batch(data, dist, kind)
    dP = probs_adjoint(data, batch, dist.probs, theta, fam, direction)
    h = 1e-6
    for i, k in [(0, 0), (3, 1), (7, 3), (9, 2)]:
        Pp, Pm = dist.probs.copy(), dist.probs.copy()
        Pp[i, k] += h
        Pm[i, k] -= h
        assert dP[i, k] == pytest.approx((value(Pp) - value(Pm)) / (2 * h), abs=1e-7)


def test_surrogate_always_observe_inner_fit():
    ds = regression_dataset(n=40, seed=8)
    data = AttackData.from_dataset(ds, [0])
    dist = MaskDistribution.always_observe(40, data.masked)
    net = MechanismNet.init(data.masked, data.net_input.shape[1], 4)
    sur = Surrogate(data, net, RemediationKind.MEAN, GAUSS, dist=dist)
    theta = fit_glm(ds.X, ds.y, GAUSS).theta
    assert np.linalg.norm(sur.gradient(theta)) < 1e-10
