"""Differentiable surrogates of the modeler's objective under missing data.

For a mechanism with row-wise mask probabilities P (N x 2**|M|) the modeler's
objective is approximated by

    f(theta, phi) = N^-1 sum_i sum_k P[i, k] * score(xhat(i, k), y_i; theta)

where ``xhat(i, k)`` is row i remediated under mask k:

* CCA: only the all-observed mask contributes and ``xhat = x``.
* mean imputation: hidden column j takes mu_j(phi), the observation-weighted
  column mean.
* linear imputation: hidden column j takes <a_i, beta_j(phi)>, where beta_j
  solves least squares on the always-observed regressors a_i weighted by the
  probability of observing column j.

Every estimator is a smooth function of P, so the surrogate and its theta
gradient can be differentiated w.r.t. P (``probs_adjoint``) and then w.r.t.
the network parameters (``mechanism_backward``).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import BINARY, CONTINUOUS, Dataset, ScalerParams, default_scaling_exclusions, fit_scaler
from .glm import GlmFamily, glm_score, grad_and_hessian
from .mechanism import MaskDistribution, MechanismNet, _forward, mask_bits, mechanism_backward

PI_FLOOR = 1e-8
LS_JITTER = 1e-10


class RemediationKind(str, Enum):
    CCA = "cca"
    MEAN = "mean"
    LINEAR = "linear"


def as_kind(kind) -> RemediationKind:
    return kind if isinstance(kind, RemediationKind) else RemediationKind(str(kind).lower())


@dataclass(frozen=True)
class AttackData:
    """Everything the surrogate needs about the adversary's training rows.

    ``X`` is the raw design (all non-response columns), ``net_input`` the
    standardized rows the mechanism conditions on, ``masked`` the maskable
    dataset columns and ``regressors`` the always-observed matrix used by
    linear imputation.
    """

    X: np.ndarray
    y: np.ndarray
    net_input: np.ndarray
    design_columns: tuple
    n_columns: int
    masked: tuple
    regressors: np.ndarray
    masked_kinds: tuple = ()

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def masked_pos(self) -> tuple:
        """Design-matrix positions of the masked columns."""
        return tuple(self.design_columns.index(j) for j in self.masked)

    def column_values(self, column: int) -> np.ndarray:
        return self.X[:, self.design_columns.index(column)]

    @classmethod
    def from_dataset(
        cls,
        ds: Dataset,
        masked,
        scaler: ScalerParams | None = None,
        scale_response: bool = False,
        imputer_uses_response: bool = False,
    ) -> "AttackData":
        schema = ds.schema
        masked = schema.indices(masked)
        if schema.response_index in masked:
            raise ValueError("the response column cannot be masked")
        if schema.intercept_index is not None and schema.intercept_index in masked:
            raise ValueError("the intercept column cannot be masked")
        if scaler is None:
            exclude = set(default_scaling_exclusions(schema))
            if scale_response:
                exclude.discard(schema.response_index)
            scaler = fit_scaler(ds.values, exclude, schema.column_names)
        net_input = scaler.transform(ds.values)
        design = schema.design_columns
        reg_cols = [j for j in design if j not in masked]
        if imputer_uses_response:
            reg_cols.append(schema.response_index)
        return cls(
            X=ds.X,
            y=ds.y,
            net_input=net_input,
            design_columns=design,
            n_columns=schema.n_columns,
            masked=masked,
            regressors=ds.values[:, reg_cols],
            masked_kinds=tuple(schema.feature_kinds[j] for j in masked),
        )


@dataclass
class Estimators:
    """Imputation estimators evaluated at one mechanism.

    ``observe[:, m]`` is P(R_j = 1 | z_i) for the m-th masked column.
    """

    observe: np.ndarray
    pi: np.ndarray
    means: np.ndarray | None = None
    coeffs: list | None = None
    grams: list | None = None


@dataclass
class ImputedBatch:
    """Imputed rows xhat(i, k) for each contributing mask k with weights P[:, k]."""

    X_hat: np.ndarray  # (n_active, N, p)
    weights: np.ndarray  # (n_active, N)
    mask_ids: tuple
    kind: RemediationKind
    estimators: Estimators
    provenance: dict  # mask id -> {design position: "mean" | "linear"}


def observe_matrix(dist: MaskDistribution) -> np.ndarray:
    """P(R_j = 1 | z_i) for every row and masked column."""
    return dist.probs @ mask_bits(len(dist.masked))


def _observe_column(dist: MaskDistribution, column: int) -> np.ndarray:
    if column not in dist.masked:
        return np.ones(dist.n_rows)
    return observe_matrix(dist)[:, dist.masked.index(column)]


def observe_prob_pi(dist: MaskDistribution, column: int) -> float:
    """Marginal probability of observing ``column``."""
    pi = float(_observe_column(dist, column).mean())
    if pi <= 0.0:
        raise ZeroDivisionError(f"column {column} is never observed (pi = 0)")
    return pi


def conditional_mean(data: AttackData, dist: MaskDistribution, column: int) -> float:
    """mu_j(phi) = (N^-1 / pi_j) sum_i z_ij P(R_j = 1 | z_i)."""
    obs = _observe_column(dist, column)
    pi = obs.mean()
    if pi <= PI_FLOOR:
        raise ZeroDivisionError(f"observation probability of column {column} is below {PI_FLOOR}")
    return float(np.dot(data.column_values(column), obs) / data.n_rows / pi)


def _gram_factor(A, weights):
    C = (A.T * weights) @ A
    try:
        return C, cho_factor(C)
    except np.linalg.LinAlgError:
        C = C + LS_JITTER * np.eye(C.shape[0])
        try:
            return C, cho_factor(C)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(
                "weighted least-squares Gram matrix A^T W A is singular even with 1e-10 jitter"
            ) from None


def weighted_ls_coeffs(A, b, weights) -> np.ndarray:
    """(A^T W A)^-1 A^T W b with W = diag(weights)."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    _, factor = _gram_factor(A, w)
    return cho_solve(factor, A.T @ (w * b))


def regression_coeffs(data: AttackData, dist: MaskDistribution, column: int) -> np.ndarray:
    """beta_j(phi): imputation coefficients of ``column`` on the regressors."""
    return weighted_ls_coeffs(data.regressors, data.column_values(column), _observe_column(dist, column))


def imputed_row(x, observed, kind, means=None, coeffs=None, regressors=None) -> np.ndarray:
    """Fill the unobserved coordinates of design row ``x``.

    ``means`` / ``coeffs`` map design positions to mu_j / beta_j;
    ``regressors`` is the row's always-observed vector a_i.
    """
    kind = as_kind(kind)
    x = np.array(x, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    for j in np.flatnonzero(~observed):
        if kind == RemediationKind.MEAN:
            if means is None or j not in means:
                raise KeyError(f"no mean estimator for position {j}")
            x[j] = means[j]
        elif kind == RemediationKind.LINEAR:
            if coeffs is None or j not in coeffs:
                raise KeyError(f"no regression estimator for position {j}")
            x[j] = float(np.dot(regressors, coeffs[j]))
        else:
            raise ValueError("CCA does not impute; incomplete rows are dropped")
    return x


def compute_estimators(data: AttackData, dist: MaskDistribution, kind) -> Estimators:
    kind = as_kind(kind)
    obs = observe_matrix(dist)
    pi = obs.mean(axis=0)
    est = Estimators(obs, pi)
    if kind == RemediationKind.CCA:
        return est
    if np.any(pi <= PI_FLOOR):
        raise ZeroDivisionError(f"a masked column has observation probability below {PI_FLOOR}")
    cols = np.stack([data.column_values(j) for j in data.masked], axis=1)
    if kind == RemediationKind.MEAN:
        est.means = (cols * obs).sum(axis=0) / data.n_rows / pi
    else:
        if data.regressors.shape[1] == 0:
            raise ValueError("linear imputation needs at least one always-observed regressor")
        est.coeffs, est.grams = [], []
        for m in range(len(data.masked)):
            C, factor = _gram_factor(data.regressors, obs[:, m])
            est.grams.append(factor)
            est.coeffs.append(cho_solve(factor, data.regressors.T @ (obs[:, m] * cols[:, m])))
    return est


def build_imputed_batch(data: AttackData, dist: MaskDistribution, kind) -> ImputedBatch:
    kind = as_kind(kind)
    if tuple(dist.masked) != tuple(data.masked):
        raise ValueError("mask distribution and data disagree on the masked set")
    if kind == RemediationKind.LINEAR and any(k == BINARY for k in data.masked_kinds):
        raise ValueError("linear imputation requires continuous masked columns")
    est = compute_estimators(data, dist, kind)
    n_masked = len(data.masked)
    K = 2**n_masked
    table = mask_bits(n_masked)
    pos = data.masked_pos
    if kind == RemediationKind.CCA:
        ids = (K - 1,)
    else:
        # the all-zeros mask over every column is excluded; it can only arise
        # when every column (response included) is maskable, which is rejected
        ids = tuple(k for k in range(K) if not (n_masked == data.n_columns and k == 0))
    X_hat = np.empty((len(ids), data.n_rows, data.X.shape[1]))
    provenance = {}
    for a, k in enumerate(ids):
        Xk = data.X.copy()
        filled = {}
        for m in np.flatnonzero(table[k] == 0):
            if kind == RemediationKind.MEAN:
                Xk[:, pos[m]] = est.means[m]
            else:
                Xk[:, pos[m]] = data.regressors @ est.coeffs[m]
            filled[pos[m]] = kind.value
        X_hat[a] = Xk
        provenance[k] = filled
    weights = dist.probs[:, list(ids)].T
    return ImputedBatch(X_hat, weights, ids, kind, est, provenance)


def approx_objective(data: AttackData, theta, dist: MaskDistribution, kind, family: GlmFamily) -> float:
    batch = build_imputed_batch(data, dist, kind)
    scores = glm_score(batch.X_hat, data.y[None, :], theta, family)
    return float(np.sum(batch.weights * scores) / data.n_rows)


def cca_objective(data: AttackData, theta, dist: MaskDistribution, family: GlmFamily) -> float:
    """N^-1 sum_i P(all observed | z_i) score(z_i; theta)."""
    return approx_objective(data, theta, dist, RemediationKind.CCA, family)


def imputation_objective(data: AttackData, theta, dist: MaskDistribution, kind, family: GlmFamily) -> float:
    kind = as_kind(kind)
    if kind == RemediationKind.CCA:
        raise ValueError("imputation_objective needs kind 'mean' or 'linear'")
    return approx_objective(data, theta, dist, kind, family)


def dump_weights(batch: ImputedBatch, path) -> None:
    """Write per-row mask weights to CSV (one column per contributing mask)."""
    header = ",".join(f"mask_{k}" for k in batch.mask_ids)
    np.savetxt(path, batch.weights.T, delimiter=",", header=header, comments="", fmt="%.17g")


def probs_adjoint(data: AttackData, batch: ImputedBatch, probs, theta, family: GlmFamily, direction=None):
    """Gradient w.r.t. the probability matrix of the surrogate (``direction``
    None) or of <grad_theta f(theta, P), direction>, with theta held fixed.

    Differentiates through the mask weights and the estimators mu_j and
    beta_j (d C^-1 = -C^-1 dC C^-1 for the weighted Gram matrix C).
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = data.n_rows
    y = data.y
    est = batch.estimators
    pos = data.masked_pos
    n_masked = len(data.masked)
    table = mask_bits(n_masked)
    dP = np.zeros_like(probs)
    g_imputed = [None] * n_masked  # gradient w.r.t. the imputed values of masked column m

    for a, k in enumerate(batch.mask_ids):
        Xk = batch.X_hat[a]
        eta = Xk @ theta
        resid = (y - family.dA(eta)) / family.sigma
        if direction is None:
            term = glm_score(Xk, y, theta, family)
            gx_coef = resid[:, None] * theta[None, :]
        else:
            c = np.asarray(direction, dtype=np.float64)
            cx = Xk @ c
            term = cx * resid
            curv = family.d2A(eta) / family.sigma
            gx_coef = resid[:, None] * c[None, :] - (cx * curv)[:, None] * theta[None, :]
        dP[:, k] += term / n
        wk = probs[:, k] / n
        for m in np.flatnonzero(table[k] == 0):
            contrib = wk * gx_coef[:, pos[m]]
            g_imputed[m] = contrib if g_imputed[m] is None else g_imputed[m] + contrib

    if batch.kind == RemediationKind.CCA:
        return dP
    dO = np.zeros((n, n_masked))
    for m in range(n_masked):
        if g_imputed[m] is None:
            continue
        obs = est.observe[:, m]
        col = data.column_values(data.masked[m])
        if batch.kind == RemediationKind.MEAN:
            g_mu = g_imputed[m].sum()
            dO[:, m] = g_mu * (col - est.means[m]) / obs.sum()
        else:
            A = data.regressors
            h = A.T @ g_imputed[m]
            q = cho_solve(est.grams[m], h)
            dO[:, m] = (A @ q) * (col - A @ est.coeffs[m])
    return dP + dO @ table.T


class Surrogate:
    """Surrogate objective of one mechanism, with theta derivatives and
    phi-adjoints. The forward pass is computed once at construction."""

    def __init__(self, data: AttackData, net: MechanismNet, kind, family: GlmFamily, ridge: float = 0.0,
                 dist: MaskDistribution | None = None):
        self.data = data
        self.net = net
        self.kind = as_kind(kind)
        self.family = family
        self.ridge = float(ridge)
        if dist is None:
            _, probs = _forward(net, data.net_input)
            dist = MaskDistribution(probs, net.masked)
        self.dist = dist
        self.batch = build_imputed_batch(data, dist, self.kind)

    @property
    def probs(self) -> np.ndarray:
        return self.dist.probs

    def _flat(self):
        n = self.data.n_rows
        return self.batch.X_hat, np.broadcast_to(self.data.y, self.batch.weights.shape), self.batch.weights / n

    def objective(self, theta) -> float:
        X, y, w = self._flat()
        theta = np.asarray(theta, dtype=np.float64)
        return float(np.sum(w * glm_score(X, y, theta, self.family))) - 0.5 * self.ridge * float(theta @ theta)

    def grad_hess(self, theta):
        X, y, w = self._flat()
        g, H = grad_and_hessian(X, y, theta, w, self.family)
        p = len(g)
        return g - self.ridge * np.asarray(theta), H - self.ridge * np.eye(p)

    def gradient(self, theta) -> np.ndarray:
        return self.grad_hess(theta)[0]

    def hessian(self, theta) -> np.ndarray:
        return self.grad_hess(theta)[1]

    def probs_adjoint(self, theta, direction=None) -> np.ndarray:
        return probs_adjoint(self.data, self.batch, self.probs, theta, self.family, direction)

    def phi_grad_objective(self, theta) -> np.ndarray:
        """d f(theta, phi) / d phi at fixed theta."""
        return mechanism_backward(self.net, self.data.net_input, self.probs_adjoint(theta))

    def phi_grad_dot(self, theta, direction) -> np.ndarray:
        """d <grad_theta f(theta, phi), direction> / d phi at fixed theta."""
        return mechanism_backward(self.net, self.data.net_input, self.probs_adjoint(theta, direction))


def approx_objective_gradients(data: AttackData, theta, net: MechanismNet, kind, family: GlmFamily,
                               ridge: float = 0.0):
    """Return (grad_theta f, surrogate); the surrogate's ``phi_grad_*`` methods
    are the phi-adjoint hooks."""
    sur = Surrogate(data, net, kind, family, ridge)
    return sur.gradient(theta), sur
