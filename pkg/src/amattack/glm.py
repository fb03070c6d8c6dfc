"""Canonical GLM families, weighted IRLS, Wald inference and adversarial targets."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, expit

from . import _kernels

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"

PROB_CLAMP = 1e-12


class SingularHessianError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GlmFamily:
    """Canonical-link family with partition function A and dispersion sigma.

    The per-row score is ``(eta * y - A(eta)) / sigma``; the base measure is
    dropped because it does not depend on theta.
    """

    kind: str
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, BERNOULLI):
            raise ValueError(f"unsupported family {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("dispersion must be positive")
        if self.kind == BERNOULLI and self.sigma != 1.0:
            raise ValueError("bernoulli dispersion is fixed to 1")

    def A(self, eta):
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == GAUSSIAN:
            return 0.5 * eta * eta
        return np.logaddexp(0.0, eta)

    def dA(self, eta):
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == GAUSSIAN:
            return eta
        return expit(eta)

    def d2A(self, eta):
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == GAUSSIAN:
            return np.ones_like(eta)
        p = expit(eta)
        return p * (1.0 - p)


def get_family(name, sigma: float = 1.0) -> GlmFamily:
    if isinstance(name, GlmFamily):
        return name
    return GlmFamily(str(name), sigma)


@dataclass
class GlmFit:
    theta: np.ndarray
    log_likelihood: float
    converged: bool
    iterations: int
    covariance: np.ndarray | None = None
    p_values: np.ndarray | None = None
    grad_norm: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "p_values": None if self.p_values is None else self.p_values.tolist(),
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
        }


@dataclass(frozen=True)
class AttackTarget:
    """Adversarial coefficients with the target coefficient pinned to zero.

    Indices refer to design-matrix columns. ``theta_complete`` is the
    complete-data fit, kept for distance reporting.
    """

    theta_alpha: np.ndarray
    target_index: int
    masked_set: tuple
    theta_complete: np.ndarray | None = None
    column_names: tuple | None = None

    def __post_init__(self):
        if self.theta_alpha[self.target_index] != 0.0:
            raise ValueError("theta_alpha must be exactly zero at the target index")
        if not self.masked_set:
            raise ValueError("the masked set must be nonempty")

    def to_dict(self) -> dict:
        return {
            "theta_alpha": self.theta_alpha.tolist(),
            "target_index": self.target_index,
            "masked_set": list(self.masked_set),
            "theta_complete": None if self.theta_complete is None else self.theta_complete.tolist(),
            "column_names": None if self.column_names is None else list(self.column_names),
        }

    @classmethod
    def from_dict(cls, doc) -> "AttackTarget":
        tc = doc.get("theta_complete")
        names = doc.get("column_names")
        return cls(
            np.asarray(doc["theta_alpha"], dtype=np.float64),
            int(doc["target_index"]),
            tuple(int(j) for j in doc["masked_set"]),
            None if tc is None else np.asarray(tc, dtype=np.float64),
            None if names is None else tuple(names),
        )


def _flatten(X, y, weights):
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[-1]
    lead = X.shape[:-1]
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), lead)
    yy = np.broadcast_to(np.asarray(y, dtype=np.float64), lead)
    return X.reshape(-1, p), yy.reshape(-1), w.reshape(-1)


def glm_score(x, y, theta, family: GlmFamily):
    """Log-likelihood score of row(s) ``(x, y)`` up to the base measure."""
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(theta))):
        raise ValueError("glm_score received non-finite input")
    eta = x @ theta
    return (eta * y - family.A(eta)) / family.sigma


def weighted_objective(X, y, theta, weights, family: GlmFamily) -> float:
    Xf, yf, w = _flatten(X, y, weights)
    return float(np.dot(w, glm_score(Xf, yf, theta, family)))


def _check(Xf, yf, w, theta):
    if Xf.shape[1] != len(theta):
        raise ValueError(f"design has {Xf.shape[1]} columns but theta has {len(theta)}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")


def grad_and_hessian(X, y, theta, weights, family: GlmFamily):
    """Gradient and Hessian of sum_r w_r * score(x_r, y_r) w.r.t. theta."""
    Xf, yf, w = _flatten(X, y, weights)
    theta = np.asarray(theta, dtype=np.float64)
    _check(Xf, yf, w, theta)
    eta = Xf @ theta
    g, H = _kernels.grad_hess(Xf, yf - family.dA(eta), family.d2A(eta), w)
    return g / family.sigma, H / family.sigma


def weighted_gradient(X, y, theta, weights, family: GlmFamily) -> np.ndarray:
    """sum_r w_r x_r (y_r - A'(<theta, x_r>)) / sigma.

    ``X`` may be stacked imputed rows of shape (..., p); ``weights`` has shape
    ``X.shape[:-1]`` and ``y`` broadcasts against it.
    """
    Xf, yf, w = _flatten(X, y, weights)
    theta = np.asarray(theta, dtype=np.float64)
    _check(Xf, yf, w, theta)
    return Xf.T @ (w * (yf - family.dA(Xf @ theta))) / family.sigma


def weighted_hessian(X, y, theta, weights, family: GlmFamily) -> np.ndarray:
    return grad_and_hessian(X, y, theta, weights, family)[1]


def _polish(X, y, w, family, ridge, theta, g, steps=2):
    # objective differences are at rounding level here, so accept full Newton
    # steps on gradient norm instead
    p = theta.shape[0]
    for _ in range(steps):
        H = grad_and_hessian(X, y, theta, w, family)[1] - ridge * np.eye(p)
        new = theta + _newton_step(H, g, ridge)
        g_new = grad_and_hessian(X, y, new, w, family)[0] - ridge * new
        if not np.linalg.norm(g_new) < np.linalg.norm(g):
            break
        theta, g = new, g_new
    return theta, g


def irls_fit(
    X,
    y,
    weights,
    family: GlmFamily,
    ridge: float = 0.0,
    tol: float = 1e-8,
    max_iter: int = 100,
    inference: bool = False,
) -> GlmFit:
    """Newton/IRLS maximization of sum w * score - ridge * |theta|^2 / 2 from zero.

    Stops once the relative objective change drops below ``tol`` and the
    gradient norm is at most ``1e-6 * (1 + |theta|)``. A step that lowers the
    objective is halved until it does not (at most 30 halvings).
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    Xf, yf, w = _flatten(X, y, weights)
    p = Xf.shape[1]
    if not np.any(w > 0):
        raise ValueError("all weights are zero")

    def objective(theta):
        return float(np.dot(w, glm_score(Xf, yf, theta, family))) - 0.5 * ridge * float(theta @ theta)

    theta = np.zeros(p)
    f_old = objective(theta)
    converged = False
    it = 0
    g = np.zeros(p)
    for it in range(1, max_iter + 1):
        g, H = grad_and_hessian(Xf, yf, theta, w, family)
        g = g - ridge * theta
        H = H - ridge * np.eye(p)
        step = _newton_step(H, g, ridge)
        new = theta + step
        f_new = objective(new)
        halvings = 0
        while not f_new >= f_old and halvings < 30:
            step = 0.5 * step
            new = theta + step
            f_new = objective(new)
            halvings += 1
        theta = new
        rel_small = abs(f_new - f_old) < tol * abs(f_old) or f_new == f_old
        f_old = f_new
        if rel_small:
            g = grad_and_hessian(Xf, yf, theta, w, family)[0] - ridge * theta
            if np.linalg.norm(g) <= 1e-6 * (1.0 + np.linalg.norm(theta)):
                converged = True
                theta, g = _polish(Xf, yf, w, family, ridge, theta, g)
                f_old = objective(theta)
                break
    else:
        g = grad_and_hessian(Xf, yf, theta, w, family)[0] - ridge * theta
    fit = GlmFit(theta, f_old, converged, it, grad_norm=float(np.linalg.norm(g)))
    if inference:
        fit.covariance, fit.p_values = wald_inference(Xf, yf, family, theta, w)
    return fit


def _newton_step(H, g, ridge):
    # H is negative definite at a well-posed problem; solve (-H) d = g.
    try:
        L = np.linalg.cholesky(-H)
    except np.linalg.LinAlgError:
        hint = "" if ridge > 0 else "; add a small ridge (lambda_lower > 0)"
        raise SingularHessianError(f"Hessian is singular or indefinite{hint}") from None
    if np.min(np.diag(L)) ** 2 < 1e-14 * np.max(np.diag(L)) ** 2:
        hint = "" if ridge > 0 else "; add a small ridge (lambda_lower > 0)"
        raise SingularHessianError(f"Hessian is numerically singular{hint}")
    z = np.linalg.solve(L, g)
    return np.linalg.solve(L.T, z)


def normal_sf2(z):
    """Two-sided standard normal tail probability 2 * (1 - Phi(|z|))."""
    return erfc(np.abs(np.asarray(z, dtype=np.float64)) / math.sqrt(2.0))


def wald_inference(X, y, family: GlmFamily, theta, weights=None):
    """Covariance (-H)^{-1} and two-sided z-test p-values.

    ``weights`` are frequency weights (unit by default). For the gaussian
    family the scale is the residual sum of squares over (N - d).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    eta = X @ theta
    info = (X.T * (w * family.d2A(eta))) @ X
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularHessianError("information matrix is singular") from None
    if family.kind == GAUSSIAN:
        dof = w.sum() - p
        if dof <= 0:
            raise ValueError(f"need more rows than coefficients to estimate the scale (N={w.sum():g}, d={p})")
        scale = float(np.dot(w, (y - eta) ** 2)) / dof
        cov = cov * scale
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(theta == 0.0, 0.0, theta / se)
    return cov, normal_sf2(z)


def fit_glm(X, y, family: GlmFamily, ridge: float = 0.0, tol: float = 1e-8, max_iter: int = 100) -> GlmFit:
    """Unweighted fit with Wald inference (the modeler's default GLM)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    fit = irls_fit(X, y, np.full(n, 1.0 / n), family, ridge=ridge / n, tol=tol, max_iter=max_iter)
    fit.log_likelihood *= n
    fit.covariance, fit.p_values = wald_inference(X, y, family, fit.theta)
    return fit


def constrained_target(X, y, family: GlmFamily, target: int, masked_set=None, ridge: float = 0.0,
                       column_names=None) -> AttackTarget:
    """Closest GLM with coefficient ``target`` fixed to zero (fit without that column)."""
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    keep = [j for j in range(p) if j != target]
    if np.linalg.matrix_rank(X[:, keep]) < len(keep):
        raise np.linalg.LinAlgError("design without the target column is rank deficient")
    reduced = fit_glm(X[:, keep], y, family, ridge=ridge)
    theta_alpha = np.zeros(p)
    theta_alpha[keep] = reduced.theta
    complete = fit_glm(X, y, family, ridge=ridge).theta
    return AttackTarget(
        theta_alpha,
        int(target),
        tuple(masked_set) if masked_set is not None else (int(target),),
        complete,
        None if column_names is None else tuple(column_names),
    )


def kl_distance(theta_tilde, theta_alpha, X, family: GlmFamily) -> float:
    """Mean KL(P(Y|x; theta_alpha) || P(Y|x; theta_tilde)) over the rows of X.

    Gaussian uses unit variance regardless of ``family.sigma``.
    """
    X = np.asarray(X, dtype=np.float64)
    eta_a = X @ np.asarray(theta_alpha, dtype=np.float64)
    eta_t = X @ np.asarray(theta_tilde, dtype=np.float64)
    if family.kind == GAUSSIAN:
        return float(np.mean(0.5 * (eta_a - eta_t) ** 2))
    pa = expit(eta_a)
    pt = expit(eta_t)
    if np.any((pt < PROB_CLAMP) | (pt > 1.0 - PROB_CLAMP)):
        warnings.warn("clamping saturated probabilities in kl_distance", RuntimeWarning, stacklevel=2)
        pt = np.clip(pt, PROB_CLAMP, 1.0 - PROB_CLAMP)
    # 0 * log 0 = 0 for the first argument
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(pa > 0, pa * np.log(pa / pt), 0.0)
        t2 = np.where(pa < 1, (1 - pa) * np.log((1 - pa) / (1 - pt)), 0.0)
    return float(np.mean(np.maximum(t1 + t2, 0.0)))


def kl_gradient(theta_tilde, theta_alpha, X, family: GlmFamily) -> np.ndarray:
    """Gradient of ``kl_distance`` w.r.t. ``theta_tilde``: mean of x (A'(eta~) - A'(eta_a))."""
    X = np.asarray(X, dtype=np.float64)
    unit = GlmFamily(family.kind)
    diff = unit.dA(X @ theta_tilde) - unit.dA(X @ theta_alpha)
    return X.T @ diff / X.shape[0]


def audit_metric(X, y, theta, family: GlmFamily) -> float:
    """NMSE (gaussian) or accuracy at threshold 0.5 (bernoulli)."""
    eta = np.asarray(X) @ theta
    y = np.asarray(y, dtype=np.float64)
    if family.kind == GAUSSIAN:
        var = y.var()
        return float(np.mean((y - eta) ** 2) / var) if var > 0 else float("nan")
    return float(np.mean((eta > 0.0) == (y > 0.5)))
