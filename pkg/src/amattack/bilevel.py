"""Bi-level training of the missingness mechanism.

Each epoch solves the inner surrogate problem for theta~, evaluates the upper
loss  KL(theta_alpha || theta~) + lambda_upper * expected missing fraction,
and moves phi along the total gradient

    d loss / d phi = lambda_upper * d Omega / d phi + J^T grad_theta~ Delta,
    J^T v = -B^T A^-1 v = d/d phi < grad_theta f(theta~, phi), -A^-1 v >,

where A is the surrogate Hessian in theta. B is never formed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .glm import AttackTarget, GlmFamily, SingularHessianError, irls_fit, kl_distance, kl_gradient
from .mechanism import (
    MaskDistribution,
    MechanismNet,
    expected_missing_fraction,
    expected_missing_fraction_grad,
    mechanism_backward,
)
from .remediation import AttackData, RemediationKind, Surrogate, as_kind

log = logging.getLogger(__name__)


class InnerSolveError(RuntimeError):
    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class DivergenceError(RuntimeError):
    def __init__(self, message, net=None, trace=None):
        super().__init__(message)
        self.net = net
        self.trace = trace


@dataclass(frozen=True)
class BilevelConfig:
    lambda_upper: float = 0.01
    lambda_lower: float = 0.0
    learning_rate: float = 0.01
    epochs: int = 200
    warm_start_fraction: float = 0.6
    lr_divisor: float = 100.0
    seed: int = 0
    kind: str = "mean"
    hidden_dim: int = 100
    inner_tol: float = 1e-8
    inner_max_iter: int = 100

    def __post_init__(self):
        if not 0.0 <= self.warm_start_fraction <= 1.0:
            raise ValueError("warm_start_fraction must lie in [0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lambda_upper < 0 or self.lambda_lower < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        as_kind(self.kind)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    kind: str
    loss: float
    delta: float
    missing_fraction: float
    grad_norm: float
    theta_tilde: np.ndarray


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "kind", "loss", "delta", "missing_fraction", "grad_norm", "theta_tilde"])
            for r in self.records:
                writer.writerow([
                    r.epoch, r.kind, repr(r.loss), repr(r.delta), repr(r.missing_fraction), repr(r.grad_norm),
                    " ".join(repr(float(t)) for t in r.theta_tilde),
                ])


def inner_solve(net: MechanismNet, data: AttackData, kind, family: GlmFamily, lambda_lower: float = 0.0,
                tol: float = 1e-8, max_iter: int = 100, surrogate: Surrogate | None = None) -> np.ndarray:
    """theta~ = argmax_theta f(theta, phi) by weighted IRLS from zero."""
    sur = surrogate if surrogate is not None else Surrogate(data, net, kind, family, lambda_lower)
    b = sur.batch
    fit = irls_fit(b.X_hat, np.broadcast_to(data.y, b.weights.shape), b.weights / data.n_rows, family,
                   ridge=lambda_lower, tol=tol, max_iter=max_iter)
    if not fit.converged:
        raise InnerSolveError(
            f"inner IRLS did not converge in {fit.iterations} iterations (|grad| = {fit.grad_norm:.3e})", fit
        )
    return fit.theta


def ift_vjp(net: MechanismNet, data: AttackData, kind, family: GlmFamily, theta_tilde, v,
            lambda_lower: float = 0.0, surrogate: Surrogate | None = None) -> np.ndarray:
    """J_theta~(phi)^T v via the implicit function theorem, without forming B."""
    sur = surrogate if surrogate is not None else Surrogate(data, net, kind, family, lambda_lower)
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v):
        return np.zeros(net.n_params)
    H = sur.hessian(theta_tilde)
    try:
        factor = cho_factor(-H)
    except np.linalg.LinAlgError:
        raise SingularHessianError("surrogate Hessian is singular; use lambda_lower > 0") from None
    u = -cho_solve(factor, v)  # u = A^-1 v with A = H
    return sur.phi_grad_dot(theta_tilde, -u)


def upper_loss(net: MechanismNet, data: AttackData, theta_tilde, target: AttackTarget, lambda_upper: float,
               family: GlmFamily, dist: MaskDistribution | None = None) -> float:
    if dist is None:
        from .mechanism import mechanism_forward

        dist = mechanism_forward(net, data.net_input)
    delta = kl_distance(theta_tilde, target.theta_alpha, data.X, family)
    return delta + lambda_upper * expected_missing_fraction(dist, data.n_columns)


@dataclass
class Evaluation:
    loss: float
    delta: float
    missing_fraction: float
    theta_tilde: np.ndarray
    grad: np.ndarray


def evaluate(net: MechanismNet, data: AttackData, target: AttackTarget, kind, family: GlmFamily,
             lambda_upper: float, lambda_lower: float = 0.0, tol: float = 1e-8, max_iter: int = 100,
             with_grad: bool = True) -> Evaluation:
    """Inner solve, upper loss, and (optionally) the total phi-gradient."""
    sur = Surrogate(data, net, kind, family, lambda_lower)
    theta = inner_solve(net, data, kind, family, lambda_lower, tol, max_iter, surrogate=sur)
    delta = kl_distance(theta, target.theta_alpha, data.X, family)
    miss = expected_missing_fraction(sur.dist, data.n_columns)
    loss = delta + lambda_upper * miss
    grad = None
    if with_grad:
        direct = mechanism_backward(net, data.net_input,
                                    lambda_upper * expected_missing_fraction_grad(sur.dist, data.n_columns))
        v = kl_gradient(theta, target.theta_alpha, data.X, family)
        grad = direct + ift_vjp(net, data, kind, family, theta, v, lambda_lower, surrogate=sur)
    return Evaluation(loss, delta, miss, theta, grad)


def total_gradient(net, data, target, kind, family, lambda_upper, lambda_lower=0.0) -> np.ndarray:
    return evaluate(net, data, target, kind, family, lambda_upper, lambda_lower).grad


def blamm_train(data: AttackData, target: AttackTarget, family: GlmFamily, config: BilevelConfig,
                net: MechanismNet | None = None) -> tuple[MechanismNet, TrainTrace]:
    """Full-batch gradient descent on the upper loss.

    For linear imputation the first ``warm_start_fraction`` of the epochs
    train the CCA surrogate; afterwards the linear surrogate is used with the
    learning rate divided by ``lr_divisor``.
    """
    kind = as_kind(config.kind)
    if net is None:
        net = MechanismNet.init(data.masked, data.net_input.shape[1], config.hidden_dim, config.seed)
    if tuple(net.masked) != tuple(data.masked):
        raise ValueError("mechanism and data disagree on the masked set")
    switch = 0
    if kind == RemediationKind.LINEAR:
        switch = int(round(config.warm_start_fraction * config.epochs))
    trace = TrainTrace()
    params = net.flat()
    for epoch in range(config.epochs):
        if epoch < switch:
            stage, lr = RemediationKind.CCA, config.learning_rate
        else:
            stage = kind
            lr = config.learning_rate / config.lr_divisor if switch > 0 else config.learning_rate
        try:
            ev = evaluate(net, data, target, stage, family, config.lambda_upper, config.lambda_lower,
                          config.inner_tol, config.inner_max_iter)
        except (InnerSolveError, SingularHessianError, FloatingPointError, ZeroDivisionError) as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}", net, trace) from exc
        if not (np.isfinite(ev.loss) and np.all(np.isfinite(ev.grad))):
            raise DivergenceError(f"epoch {epoch}: non-finite loss or gradient", net, trace)
        gnorm = float(np.linalg.norm(ev.grad))
        trace.records.append(EpochRecord(epoch, stage.value, ev.loss, ev.delta, ev.missing_fraction, gnorm,
                                         ev.theta_tilde))
        if epoch % 50 == 0:
            log.info("epoch %d [%s] loss=%.6g delta=%.6g missing=%.4f |g|=%.3g", epoch, stage.value, ev.loss,
                     ev.delta, ev.missing_fraction, gnorm)
        params = params - lr * ev.grad
        net = net.with_flat(params)
    return net, trace


def with_overrides(config: BilevelConfig, **kwargs) -> BilevelConfig:
    return replace(config, **{k: v for k, v in kwargs.items() if v is not None})
