"""Pinned synthetic datasets used by the demo and the acceptance runs."""

from __future__ import annotations

import numpy as np

from .data import BINARY, CONTINUOUS, INTERCEPT, RESPONSE, ColumnSchema, Dataset

# two anisotropic Gaussian classes; x carries a little signal beyond y-axis
FIG1_PARAMS = {
    "n": 1000,
    "class_mean": (0.41, 0.958),
    "class_sd": (2.0, 1.0),
    "seed": 1,
}

SURROGATE_PARAMS = {
    "n": 5000,
    "n_features": 6,
    "coef": (0.5, 0.4, -0.3, 0.15, 0.0, 0.1),
    "target_corr": (0.6, -0.3, 0.2, 0.0, 0.0),
    "intercept": 2.0,
    "noise_sd": 1.0,
    "seed": 3,
}


def make_fig1(n: int | None = None, seed: int | None = None, class_mean=None, class_sd=None) -> Dataset:
    """Balanced two-class problem in the plane with columns (x, y, label, intercept)."""
    p = FIG1_PARAMS
    n = p["n"] if n is None else n
    seed = p["seed"] if seed is None else seed
    mx, my = p["class_mean"] if class_mean is None else class_mean
    sx, sy = p["class_sd"] if class_sd is None else class_sd
    rng = np.random.default_rng(seed)
    label = np.zeros(n)
    label[n // 2:] = 1.0
    sign = 2.0 * label - 1.0
    x = sign * mx + sx * rng.standard_normal(n)
    y = sign * my + sy * rng.standard_normal(n)
    order = rng.permutation(n)
    values = np.column_stack([x, y, label, np.ones(n)])[order]
    schema = ColumnSchema(("x", "y", "label", "intercept"), 2, (CONTINUOUS, CONTINUOUS, RESPONSE, INTERCEPT), True)
    return Dataset(values, schema)


def make_regression_surrogate(n: int | None = None, seed: int | None = None) -> Dataset:
    """Linear-regression stand-in for ca-housing: one dominant feature ``f0``
    correlated with the others so the constrained fit can absorb part of it."""
    p = SURROGATE_PARAMS
    n = p["n"] if n is None else n
    seed = p["seed"] if seed is None else seed
    rng = np.random.default_rng(seed)
    k = p["n_features"]
    others = rng.standard_normal((n, k - 1))
    rho = np.asarray(p["target_corr"])
    resid_sd = np.sqrt(max(1.0 - float(rho @ rho), 1e-6))
    f0 = others @ rho + resid_sd * rng.standard_normal(n)
    F = np.column_stack([f0, others])
    y = p["intercept"] + F @ np.asarray(p["coef"]) + p["noise_sd"] * rng.standard_normal(n)
    names = tuple(f"f{j}" for j in range(k)) + ("target", "intercept")
    kinds = (CONTINUOUS,) * k + (RESPONSE, INTERCEPT)
    values = np.column_stack([F, y, np.ones(n)])
    return Dataset(values, ColumnSchema(names, k, kinds, True))


def make_binary_feature_dataset(n: int = 200, seed: int = 0) -> Dataset:
    """Small regression set with one binary feature (for CCA-only targets)."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    s = (rng.random(n) < 0.5).astype(float)
    y = 1.0 + 0.8 * a + 0.6 * s + 0.5 * rng.standard_normal(n)
    schema = ColumnSchema(("a", "sex", "y", "intercept"), 2, (CONTINUOUS, BINARY, RESPONSE, INTERCEPT), True)
    return Dataset(np.column_stack([a, s, y, np.ones(n)]), schema)
