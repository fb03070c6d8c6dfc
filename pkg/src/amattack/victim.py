"""The modeler: remediate a partially observed dataset, fit the GLM, report."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, PartialDataset
from .glm import AttackTarget, GlmFamily, GlmFit, audit_metric, fit_glm
from .remediation import RemediationKind

MICE = "mice"


class RemediationError(ValueError):
    pass


def _strategy(strategy) -> RemediationKind:
    if str(getattr(strategy, "value", strategy)).lower() == MICE:
        raise NotImplementedError("the MICE modeler is not provided; use cca, mean or linear")
    return RemediationKind(getattr(strategy, "value", strategy))


def remediate(p: PartialDataset, strategy, include_response: bool = False) -> Dataset:
    """Apply complete-case deletion, mean imputation or linear-regression imputation.

    Linear imputation regresses each incomplete column, on the rows where it is
    observed, on every fully observed non-response column (the intercept
    included); ``include_response`` adds the response as a regressor.
    """
    kind = _strategy(strategy)
    schema = p.origin_schema
    values = np.array(p.values)
    na = np.isnan(values)
    n_design = len(schema.design_columns)
    if not na.any():
        return Dataset(values, schema)
    incomplete = np.flatnonzero(na.any(axis=0))

    if kind == RemediationKind.CCA:
        keep = ~na.any(axis=1)
        if keep.sum() < n_design:
            raise RemediationError(
                f"complete-case analysis leaves {int(keep.sum())} rows, fewer than the {n_design} coefficients"
            )
        return Dataset(values[keep], schema)

    for j in incomplete:
        if na[:, j].all():
            raise RemediationError(f"column {schema.column_names[j]!r} has no observed values")

    if kind == RemediationKind.MEAN:
        for j in incomplete:
            values[na[:, j], j] = values[~na[:, j], j].mean()
        return Dataset(values, schema)

    reg_cols = [j for j in schema.design_columns if not na[:, j].any()]
    if include_response:
        reg_cols.append(schema.response_index)
    if not reg_cols:
        raise RemediationError("linear imputation needs at least one fully observed regressor column")
    A = values[:, reg_cols]
    for j in incomplete:
        obs = ~na[:, j]
        if obs.sum() < len(reg_cols):
            raise RemediationError(
                f"column {schema.column_names[j]!r}: {int(obs.sum())} observed rows for {len(reg_cols)} regressors"
            )
        beta, _, rank, _ = np.linalg.lstsq(A[obs], values[obs, j], rcond=None)
        if rank < len(reg_cols):
            raise RemediationError(f"column {schema.column_names[j]!r}: imputation regressors are rank deficient")
        values[~obs, j] = A[~obs] @ beta
    return Dataset(values, schema)


@dataclass
class VictimReport:
    strategy: str
    fit: GlmFit
    target_p_value: float
    dist_alpha: float
    dist_alpha_norm: float
    dist_complete: float
    dist_complete_norm: float
    audit: float
    missing_rates: np.ndarray
    n_rows: int

    def row(self) -> dict:
        return {
            "strategy": self.strategy,
            "target_p_value": self.target_p_value,
            "dist_alpha": self.dist_alpha,
            "dist_alpha_norm": self.dist_alpha_norm,
            "dist_complete": self.dist_complete,
            "dist_complete_norm": self.dist_complete_norm,
            "audit": self.audit,
            "n_rows": self.n_rows,
        }


def report_from_fit(strategy, fit: GlmFit, target: AttackTarget, audit: Dataset, family: GlmFamily,
                    missing_rates, n_rows: int) -> VictimReport:
    theta = fit.theta
    norm = float(np.abs(target.theta_alpha).sum())
    d_alpha = float(np.abs(theta - target.theta_alpha).sum())
    if target.theta_complete is not None:
        d_complete = float(np.abs(theta - target.theta_complete).sum())
    else:
        d_complete = float("nan")
    metric = audit_metric(audit.X, audit.y, theta, family) if audit.n_rows else float("nan")
    return VictimReport(
        str(getattr(strategy, "value", strategy)),
        fit,
        float(fit.p_values[target.target_index]),
        d_alpha,
        d_alpha / norm,
        d_complete,
        d_complete / norm,
        metric,
        np.asarray(missing_rates, dtype=np.float64),
        int(n_rows),
    )


def victim_fit_report(p: PartialDataset, strategy, family: GlmFamily, target: AttackTarget, audit: Dataset,
                      ridge: float = 0.0, include_response: bool = False) -> VictimReport:
    """Remediate, fit with Wald inference, and compare against the targets."""
    completed = remediate(p, strategy, include_response)
    fit = fit_glm(completed.X, completed.y, family, ridge=ridge)
    return report_from_fit(strategy, fit, target, audit, family, p.missing_rates(), completed.n_rows)
