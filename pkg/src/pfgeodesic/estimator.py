"""First-order Jacobian of the full power-flow map from measurement increments."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import NetworkCase
from .powerflow import OperatingPoint, analytic_jacobian


class EstimationError(ValueError):
    pass


class RankDeficientError(EstimationError):
    def __init__(self, msg, null_vector):
        super().__init__(msg)
        self.null_vector = null_vector


@dataclass(frozen=True, eq=False)
class JacobianEstimate:
    jac: np.ndarray  # (2(N-1), n)
    cond: float
    residual: np.ndarray  # per row
    source: str = "data"

    def reduced(self, case: NetworkCase) -> np.ndarray:
        return self.jac[case.reduced_rows]

    def to_csv(self, path, case: NetworkCase):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row"] + case.state_labels())
            for lab, row in zip(case.full_row_labels(), self.jac):
                w.writerow([lab] + [repr(float(a)) for a in row])


def estimate_jacobian(dX, dY, rank_tol: float = 1e-10) -> JacobianEstimate:
    """Fit ``dY ~ J dX``: exact inverse for ``n`` samples, least squares beyond."""
    dX = np.asarray(dX, dtype=float)
    dY = np.asarray(dY, dtype=float)
    n, m = dX.shape
    if dY.shape[1] != m:
        raise EstimationError("dX and dY must have the same number of columns")
    if m < n:
        raise EstimationError(f"need at least {n} samples, got {m}")
    U, s, Vt = np.linalg.svd(dX, full_matrices=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    if s[-1] < rank_tol * s[0]:
        raise RankDeficientError(
            f"increment matrix is rank deficient (sigma_min/sigma_max={s[-1] / s[0]:.3g})",
            null_vector=U[:, -1],
        )
    if m == n:
        jac = np.linalg.solve(dX.T, dY.T).T
    else:
        jac = np.linalg.lstsq(dX.T, dY.T, rcond=None)[0].T
    resid = np.linalg.norm(jac @ dX - dY, axis=1)
    return JacobianEstimate(jac=jac, cond=cond, residual=resid, source="data")


def model_estimate(case: NetworkCase, op: OperatingPoint) -> JacobianEstimate:
    """Analytic Jacobian wrapped as an estimate (the model baseline)."""
    jac = analytic_jacobian(case, op.delta, op.v)
    return JacobianEstimate(jac=jac, cond=1.0, residual=np.zeros(jac.shape[0]), source="model")


def consistency_score(est: JacobianEstimate, p, q, v, n_pq: int) -> float:
    """Relative mismatch between measured and term-implied voltage columns.

    The voltage block is redundant given the angle block and the base
    (P, Q, V); a large score flags a patch that is not locally linear.
    """
    from .terms import recover_flow_terms, terms_jacobian

    m = len(v) - 1
    terms = recover_flow_terms(est.jac, p, q, v, n_pq, provenance=est.source)
    implied = terms_jacobian(terms)[:, m:]
    measured = est.jac[:, m:]
    denom = np.linalg.norm(measured)
    return float(np.linalg.norm(implied - measured) / denom) if denom > 0 else 0.0
