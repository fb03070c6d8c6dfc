"""KNN-Shapley data valuation and the discard-lowest-valued refit sweep."""

from __future__ import annotations

import csv
from itertools import combinations
from math import comb
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from . import _kernels
from .data import INTERCEPT, RESPONSE, Dataset, PartialDataset, ScalerParams, default_scaling_exclusions, fit_scaler
from .glm import AttackTarget, GlmFamily, fit_glm
from .victim import VictimReport, remediate, report_from_fit

DEFAULT_K = 10


@dataclass(frozen=True)
class ValuationResult:
    values: np.ndarray
    k_neighbors: int
    validation_size: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("valuation produced non-finite values")


def _features(ds: Dataset, scaler: ScalerParams) -> np.ndarray:
    cols = [j for j, kind in enumerate(ds.schema.feature_kinds) if kind not in (RESPONSE, INTERCEPT)]
    return scaler.transform(ds.values)[:, cols]


def knn_utilities(y_train, y_val, classification: bool) -> np.ndarray:
    """(n_val, N) agreement between each validation label and each training label."""
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if classification:
        return (y_val[:, None] == y_train[None, :]).astype(np.float64)
    var = y_val.var()
    if not var > 0.0:
        raise ValueError("validation responses have zero variance; regression utility is undefined")
    return 1.0 - np.minimum(1.0, (y_train[None, :] - y_val[:, None]) ** 2 / var)


def knn_shapley_from_features(F_train, y_train, F_val, y_val, k: int = DEFAULT_K,
                              classification: bool = False) -> ValuationResult:
    """Exact KNN-Shapley values on precomputed feature matrices."""
    if k < 1:
        raise ValueError("k must be at least 1")
    F_val = np.atleast_2d(np.asarray(F_val, dtype=np.float64))
    if len(y_val) == 0 or F_val.shape[0] == 0:
        raise ValueError("the validation set is empty")
    F_train = np.asarray(F_train, dtype=np.float64)
    if F_train.shape[0] == 0:
        raise ValueError("the training set is empty")
    dist = cdist(F_val, F_train)
    # stable sort: equal distances keep row-index order
    order = np.argsort(dist, axis=1, kind="stable")
    utils = knn_utilities(y_train, y_val, classification)
    sorted_utils = np.take_along_axis(utils, order, axis=1)
    values = _kernels.knn_shapley(order, sorted_utils, k)
    return ValuationResult(np.asarray(values, dtype=np.float64), int(k), int(F_val.shape[0]))


def knn_shapley_values(train: Dataset, validation: Dataset, k: int = DEFAULT_K, classification: bool | None = None,
                       scaler: ScalerParams | None = None) -> ValuationResult:
    """Value each training row by its KNN-Shapley contribution on ``validation``.

    Features exclude the response and intercept and are standardized with one
    scaler (fitted on ``train`` unless given) shared by both sets.
    ``classification`` defaults to True when every response is 0 or 1.
    """
    if validation.n_rows == 0:
        raise ValueError("the validation set is empty")
    if train.schema.column_names != validation.schema.column_names:
        raise ValueError("train and validation schemas differ")
    if scaler is None:
        scaler = fit_scaler(train.values, default_scaling_exclusions(train.schema), train.column_names)
    if classification is None:
        ys = np.concatenate([train.y, validation.y])
        classification = bool(np.all((ys == 0.0) | (ys == 1.0)))
    return knn_shapley_from_features(_features(train, scaler), train.y, _features(validation, scaler),
                                     validation.y, k, classification)


def brute_force_shapley(F_train, y_train, F_val, y_val, k: int, classification: bool = False) -> np.ndarray:
    """Shapley values by enumerating all 2**N coalitions (small N only).

    The utility of a coalition S on one validation point is the mean
    agreement of its min(k, |S|) nearest members, divided by k; it is zero
    for the empty coalition. As in the recursion, k is capped at N.
    """
    F_train = np.asarray(F_train, dtype=np.float64)
    F_val = np.atleast_2d(np.asarray(F_val, dtype=np.float64))
    n = F_train.shape[0]
    k = min(k, n)
    order = np.argsort(cdist(F_val, F_train), axis=1, kind="stable")
    rank = np.argsort(order, axis=1)
    utils = knn_utilities(y_train, y_val, classification)

    def utility(subset):
        if not subset:
            return 0.0
        total = 0.0
        idx = np.array(subset)
        for v in range(F_val.shape[0]):
            near = idx[np.argsort(rank[v, idx], kind="stable")][:k]
            total += utils[v, near].sum() / k
        return total / F_val.shape[0]

    cache = {}
    for size in range(n + 1):
        for s in combinations(range(n), size):
            cache[s] = utility(s)
    values = np.zeros(n)
    for i in range(n):
        rest = [j for j in range(n) if j != i]
        for size in range(n):
            w = 1.0 / (n * comb(n - 1, size))
            for s in combinations(rest, size):
                with_i = tuple(sorted(s + (i,)))
                values[i] += w * (cache[with_i] - cache[s])
    return values


def defense_sweep(poisoned: PartialDataset, strategy, family: GlmFamily, target: AttackTarget, validation: Dataset,
                  fractions, k: int = DEFAULT_K, ridge: float = 0.0) -> list[VictimReport]:
    """Impute, value the imputed rows, drop the lowest-valued share, refit.

    Rows are discarded after imputation: every fraction refits the kept
    imputed rows, all ranked by one valuation. Fraction 0 reproduces
    ``victim_fit_report``.
    """
    fractions = [float(f) for f in fractions]
    for f in fractions:
        if not 0.0 <= f < 1.0:
            raise ValueError(f"discard fraction must lie in [0, 1), got {f}")
    imputed = remediate(poisoned, strategy)
    rates = poisoned.missing_rates()
    values = knn_shapley_values(imputed, validation, k, classification=family.kind == "bernoulli").values
    ranking = np.argsort(values, kind="stable")
    reports = []
    for f in fractions:
        n_drop = int(np.floor(f * imputed.n_rows))
        kept = imputed.take(np.sort(ranking[n_drop:]))
        fit = fit_glm(kept.X, kept.y, family, ridge=ridge)
        reports.append(report_from_fit(strategy, fit, target, validation, family, rates, kept.n_rows))
    return reports


SWEEP_COLUMNS = ("fraction", "distance_to_alpha", "distance_to_true", "target_p_value")


def write_sweep_csv(path, fractions, reports) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for f, r in zip(fractions, reports):
            writer.writerow([repr(float(f)), repr(r.dist_alpha_norm), repr(r.dist_complete_norm),
                             repr(r.target_p_value)])
