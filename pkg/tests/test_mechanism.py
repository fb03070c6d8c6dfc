import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amattack.mechanism import (
    MAX_MASKED,
    MaskDistribution,
    MechanismNet,
    expected_missing_fraction,
    expected_missing_fraction_grad,
    gamma,
    hidden_counts,
    mask_bits,
    mcar_baseline,
    mechanism_backward,
    mechanism_forward,
    sample_masks,
)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_gamma_round_trip(n):
    table = mask_bits(n)
    assert [gamma(row) for row in table] == list(range(2**n))
    assert gamma(np.ones(n)) == 2**n - 1
    np.testing.assert_array_equal(hidden_counts(n), n - table.sum(axis=1))


def test_gamma_first_bit_most_significant():
    assert gamma([1, 0]) == 2
    assert gamma([0, 1]) == 1
    with pytest.raises(ValueError):
        gamma([2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_forward_is_distribution(seed, n_masked):
    rng = np.random.default_rng(seed)
    net = MechanismNet.init(tuple(range(n_masked)), 4, 6, seed)
    dist = mechanism_forward(net, 3.0 * rng.normal(size=(9, 4)))
    assert dist.probs.shape == (9, 2**n_masked)
    assert np.all(dist.probs >= 0)
    np.testing.assert_allclose(dist.probs.sum(axis=1), 1.0, atol=1e-12)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = MechanismNet.init((0, 2), 5, 7, seed=3)
    Z = rng.normal(size=(6, 5))
    U = rng.normal(size=(6, 4))
    g = mechanism_backward(net, Z, U)
    v = net.flat()
    h = 1e-6
    for i in rng.choice(v.size, 25, replace=False):
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        fp = np.sum(U * mechanism_forward(net.with_flat(vp), Z).probs)
        fm = np.sum(U * mechanism_forward(net.with_flat(vm), Z).probs)
        assert g[i] == pytest.approx((fp - fm) / (2 * h), abs=1e-8)


def test_flat_and_serialization_round_trip(tmp_path):
    net = MechanismNet.init((1,), 4, 3, seed=1)
    again = net.with_flat(net.flat())
    np.testing.assert_array_equal(again.flat(), net.flat())
    net.save(tmp_path / "m.json", extra={"note": 1})
    loaded = MechanismNet.load(tmp_path / "m.json")
    np.testing.assert_array_equal(loaded.flat(), net.flat())
    assert loaded.masked == (1,)
    doc = net.to_dict()
    doc["format_version"] = 99
    with pytest.raises(ValueError, match="version"):
        MechanismNet.from_dict(doc)
    with pytest.raises(ValueError):
        net.with_flat(np.zeros(3))


def test_net_validation():
    with pytest.raises(ValueError):
        MechanismNet.init((), 3)
    with pytest.raises(ValueError):
        MechanismNet.init(tuple(range(MAX_MASKED + 1)), 12)
    with pytest.raises(ValueError):
        MechanismNet.init((1, 1), 3)
    net = MechanismNet.init((0,), 3, 4)
    with pytest.raises(ValueError):
        mechanism_forward(net, np.zeros((2, 5)))


def test_sample_masks_frequencies_and_unmasked_columns():
    probs = np.array([[0.1, 0.2, 0.3, 0.4]] * 20000)
    dist = MaskDistribution(probs, (1, 3))
    m = sample_masks(dist, 5, seed=0)
    assert np.all(m.bits[:, [0, 2, 4]] == 1)
    idx = 2 * m.bits[:, 1].astype(int) + m.bits[:, 3]
    freq = np.bincount(idx, minlength=4) / 20000
    np.testing.assert_allclose(freq, probs[0], atol=0.015)
    again = sample_masks(dist, 5, seed=0)
    np.testing.assert_array_equal(again.bits, m.bits)


def test_zero_probability_masks_never_drawn():
    probs = np.array([[0.0, 1.0], [1.0, 0.0]] * 500)
    m = sample_masks(MaskDistribution(probs, (0,)), 2, seed=1)
    np.testing.assert_array_equal(m.bits[:, 0], np.tile([1, 0], 500))


def test_missing_fraction_and_gradient():
    probs = np.array([[0.5, 0.0, 0.0, 0.5], [0.0, 1.0, 0.0, 0.0]])
    dist = MaskDistribution(probs, (0, 1))
    # row 0 hides 2 cells half the time, row 1 hides 1 cell
    assert expected_missing_fraction(dist, 4) == pytest.approx((1.0 + 1.0) / 2 / 4)
    g = expected_missing_fraction_grad(dist, 4)
    np.testing.assert_allclose(np.sum(g * probs), expected_missing_fraction(dist, 4))
    always = MaskDistribution.always_observe(3, (0,))
    assert expected_missing_fraction(always, 3) == 0.0
    np.testing.assert_allclose(mcar_baseline(dist), [0.25, 0.5, 0.0, 0.25])
