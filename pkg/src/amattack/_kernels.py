"""Inner loops that dominate runtime, each with a numba and a numpy path.

The numba path is used when numba imports and ``AMATTACK_DISABLE_NUMBA`` is
unset (or ``0``). Set ``AMATTACK_DISABLE_NUMBA=1`` to force pure numpy. Both
paths are exposed (``*_numpy`` / ``*_numba``) so tests can compare them.
"""

import os

import numpy as np

_FLAG = os.environ.get("AMATTACK_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError("numba disabled by AMATTACK_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# --- weighted score gradient / Hessian -------------------------------------


def grad_hess_numpy(X, resid, curv, w):
    """g = X^T (w * resid), H = -X^T diag(w * curv) X."""
    g = X.T @ (w * resid)
    H = -(X.T * (w * curv)) @ X
    return g, H


def _grad_hess_loop(X, resid, curv, w):
    n, p = X.shape
    g = np.zeros(p)
    H = np.zeros((p, p))
    for i in range(n):
        wi = w[i]
        if wi == 0.0:
            continue
        a = wi * resid[i]
        c = wi * curv[i]
        for j in range(p):
            xij = X[i, j]
            g[j] += a * xij
            cx = c * xij
            for l in range(j + 1):
                H[j, l] -= cx * X[i, l]
    for j in range(p):
        for l in range(j):
            H[l, j] = H[j, l]
    return g, H


# --- KNN-Shapley backward recursion ----------------------------------------


def knn_shapley_numpy(order, utils, k):
    """Average exact KNN-Shapley values over validation points.

    ``order[v]`` lists training rows sorted nearest-first for validation point
    ``v``; ``utils[v, i]`` is the utility of training row ``order[v, i]``.
    """
    n_val, n = utils.shape
    k = min(k, n)
    rank = np.arange(1, n, dtype=np.float64)
    coef = np.minimum(k, rank) / (k * rank)
    diffs = (utils[:, :-1] - utils[:, 1:]) * coef
    sorted_vals = np.empty_like(utils)
    sorted_vals[:, -1] = utils[:, -1] / n
    if n > 1:
        tail = np.cumsum(diffs[:, ::-1], axis=1)[:, ::-1]
        sorted_vals[:, :-1] = sorted_vals[:, -1:] + tail
    values = np.zeros(n)
    for v in range(n_val):
        values[order[v]] += sorted_vals[v]
    return values / n_val


def _knn_shapley_loop(order, utils, k):
    n_val, n = utils.shape
    if k > n:
        k = n
    values = np.zeros(n)
    for v in range(n_val):
        s = utils[v, n - 1] / n
        values[order[v, n - 1]] += s
        for i in range(n - 2, -1, -1):
            rank = i + 1
            s = s + (utils[v, i] - utils[v, i + 1]) * min(k, rank) / (k * rank)
            values[order[v, i]] += s
    return values / n_val


# --- inverse-CDF categorical sampling --------------------------------------


# u is scaled by the row total so rounding in the cumulative sum can never
# select a trailing zero-probability category


def sample_categorical_numpy(probs, u):
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _sample_categorical_loop(probs, u):
    n, K = probs.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        total = 0.0
        for j in range(K):
            total += probs[i, j]
        target = u[i] * total
        acc = 0.0
        j = 0
        while j < K - 1:
            acc += probs[i, j]
            if acc >= target:
                break
            j += 1
        out[i] = j
    return out


if HAVE_NUMBA:
    grad_hess_numba = njit(cache=True)(_grad_hess_loop)
    knn_shapley_numba = njit(cache=True)(_knn_shapley_loop)
    sample_categorical_numba = njit(cache=True)(_sample_categorical_loop)

    def grad_hess(X, resid, curv, w):
        return grad_hess_numba(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(resid, dtype=np.float64),
            np.ascontiguousarray(curv, dtype=np.float64),
            np.ascontiguousarray(w, dtype=np.float64),
        )

    def knn_shapley(order, utils, k):
        return knn_shapley_numba(
            np.ascontiguousarray(order, dtype=np.int64),
            np.ascontiguousarray(utils, dtype=np.float64),
            int(k),
        )

    def sample_categorical(probs, u):
        return sample_categorical_numba(
            np.ascontiguousarray(probs, dtype=np.float64),
            np.ascontiguousarray(u, dtype=np.float64),
        )

else:
    grad_hess_numba = knn_shapley_numba = sample_categorical_numba = None
    grad_hess = grad_hess_numpy
    knn_shapley = knn_shapley_numpy
    sample_categorical = sample_categorical_numpy
