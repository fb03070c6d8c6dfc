import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amattack import _kernels

needs_numba = pytest.mark.skipif(_kernels.grad_hess_numba is None, reason="numba backend unavailable")


def grad_hess_case(seed, n=25, p=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, p)), rng.normal(size=n), rng.random(n), rng.random(n) * (rng.random(n) > 0.2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_grad_hess_loop_matches_numpy(seed):
    args = grad_hess_case(seed)
    g0, H0 = _kernels.grad_hess_numpy(*args)
    g1, H1 = _kernels._grad_hess_loop(*args)
    np.testing.assert_allclose(g1, g0, atol=1e-12)
    np.testing.assert_allclose(H1, H0, atol=1e-12)


@needs_numba
def test_grad_hess_numba_matches_numpy():
    args = grad_hess_case(1, n=200, p=6)
    g0, H0 = _kernels.grad_hess_numpy(*args)
    g1, H1 = _kernels.grad_hess_numba(*args)
    np.testing.assert_allclose(g1, g0, atol=1e-11)
    np.testing.assert_allclose(H1, H0, atol=1e-11)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_knn_shapley_loop_matches_numpy(seed, k):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 20))
    order = np.argsort(rng.random((4, n)), axis=1)
    utils = rng.random((4, n))
    np.testing.assert_allclose(_kernels._knn_shapley_loop(order, utils, k),
                               _kernels.knn_shapley_numpy(order, utils, k), atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_categorical_paths_agree(seed):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(5), size=50)
    probs[::7, 2] = 0.0
    probs /= probs.sum(axis=1, keepdims=True)
    u = 1.0 - rng.random(50)
    ref = _kernels.sample_categorical_numpy(probs, u)
    np.testing.assert_array_equal(_kernels._sample_categorical_loop(probs, u), ref)
    if _kernels.sample_categorical_numba is not None:
        np.testing.assert_array_equal(_kernels.sample_categorical_numba(probs, u), ref)
    assert np.all(probs[np.arange(50), ref] > 0)


def test_categorical_boundary_u_one_picks_last_supported():
    rng = np.random.default_rng(0)
    probs = np.zeros((200, 4))
    probs[:, :3] = rng.dirichlet(np.ones(3), size=200)  # cumulative sums round below or above 1
    u = np.ones(200)
    for sampler in (_kernels.sample_categorical_numpy, _kernels._sample_categorical_loop):
        np.testing.assert_array_equal(sampler(probs, u), 2)


def test_env_flag_forces_numpy():
    env = dict(os.environ, AMATTACK_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import amattack; print(amattack.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
