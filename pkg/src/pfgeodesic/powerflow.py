"""Polar power-flow equations, Newton solver and natural-parameter continuation.

Everything here uses the network model directly. The data-based pipeline
never calls into this module except to *generate* measurements and truth.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .network import NetworkCase

log = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    pass


class NonConvergenceError(PowerFlowError):
    """Newton did not reach the mismatch tolerance (target likely infeasible)."""


class SingularJacobianError(PowerFlowError):
    pass


class StepUnderflowError(PowerFlowError):
    """Continuation could not take a single step from the base point."""


@dataclass(frozen=True)
class OperatingPoint:
    delta: np.ndarray
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iterations: int = 0
    mismatch: float = 0.0
    history: tuple = ()
    consistent: bool = True

    def reduced(self, case: NetworkCase) -> np.ndarray:
        return case.reduced_state(self.delta, self.v)

    def injections(self, case: NetworkCase) -> np.ndarray:
        return case.reduced_injections(self.p, self.q)


def evaluate_injections(case: NetworkCase, delta, v):
    """Nodal (P, Q) at every bus for the polar state (delta, V)."""
    vc = np.asarray(v) * np.exp(1j * np.asarray(delta))
    s = vc * np.conj(case.admittance.Y @ vc)
    return s.real, s.imag


def _full_jacobian_blocks(case: NetworkCase, delta, v):
    Y = case.admittance.Y
    vc = v * np.exp(1j * delta)
    ibus = Y @ vc
    vnorm = vc / v
    ds_dva = 1j * np.diag(vc) @ np.conj(np.diag(ibus) - Y @ np.diag(vc))
    ds_dvm = np.diag(vc) @ np.conj(Y @ np.diag(vnorm)) + np.conj(np.diag(ibus)) @ np.diag(vnorm)
    return ds_dva, ds_dvm


def analytic_jacobian(case: NetworkCase, delta, v) -> np.ndarray:
    """Full Jacobian of the power-flow map, shape ``(2(N-1), n)``.

    Rows are ``P_1..P_{N-1}, Q_1..Q_{N-1}``; columns are
    ``delta_1..delta_{N-1}, V_1..V_{N_l}``.
    """
    delta = np.asarray(delta, dtype=float)
    v = np.asarray(v, dtype=float)
    ds_dva, ds_dvm = _full_jacobian_blocks(case, delta, v)
    m, npq = case.N - 1, case.n_pq
    top = np.hstack([ds_dva.real[:m, :m], ds_dvm.real[:m, :npq]])
    bot = np.hstack([ds_dva.imag[:m, :m], ds_dvm.imag[:m, :npq]])
    return np.vstack([top, bot])


def reduced_jacobian(case: NetworkCase, delta, v) -> np.ndarray:
    return analytic_jacobian(case, delta, v)[case.reduced_rows]


def _sigma_min(jac):
    return float(np.linalg.svd(jac, compute_uv=False)[-1])


def newton_solve(case: NetworkCase, target, delta0, v0, tol=1e-10, max_iter=50,
                 angle_window=np.pi, polish=True) -> OperatingPoint:
    """Solve ``r(x) = target`` for the reduced state.

    ``target`` holds reduced injections ``(P_1..P_{N-1}, Q_1..Q_{N_l})``.
    Voltage magnitudes at PV/slack buses and the slack angle are taken from
    ``v0``/``delta0``. Converged angles must stay within ``angle_window`` of
    ``delta0``. One extra Newton step is taken after convergence when
    ``polish`` is set, which pushes the mismatch to rounding level.
    """
    target = np.asarray(target, dtype=float)
    delta = np.array(delta0, dtype=float, copy=True)
    v = np.array(v0, dtype=float, copy=True)
    rows = case.reduced_rows
    m = case.N - 1
    history = []
    for it in range(max_iter + 1):
        p, q = evaluate_injections(case, delta, v)
        f = case.reduced_injections(p, q) - target
        err = float(np.max(np.abs(f)))
        history.append(err)
        if not np.isfinite(err) or err > 1e8:
            raise NonConvergenceError(f"Newton diverged (mismatch {err:.3g})")
        if err <= tol:
            if polish:
                jac = analytic_jacobian(case, delta, v)[rows]
                try:
                    dx = np.linalg.solve(jac, -f)
                    d2, v2 = delta.copy(), v.copy()
                    d2[:m] += dx[:m]
                    v2[: case.n_pq] += dx[m:]
                    p2, q2 = evaluate_injections(case, d2, v2)
                    err2 = float(np.max(np.abs(case.reduced_injections(p2, q2) - target)))
                    if err2 <= err:
                        delta, v, p, q, err = d2, v2, p2, q2, err2
                except np.linalg.LinAlgError:
                    pass
            if np.any(np.abs(delta[:m] - np.asarray(delta0)[:m]) >= angle_window):
                raise NonConvergenceError("solution left the configured angle window")
            if np.any(v[: case.n_pq] <= 0):
                raise NonConvergenceError("converged to non-physical voltage")
            return OperatingPoint(delta, v, p, q, iterations=it, mismatch=err,
                                  history=tuple(history))
        if it == max_iter:
            break
        jac = analytic_jacobian(case, delta, v)[rows]
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise SingularJacobianError("singular Jacobian at Newton iterate") from None
        delta[:m] += dx[:m]
        v[: case.n_pq] += dx[m:]
    raise NonConvergenceError(f"no convergence in {max_iter} iterations (mismatch {err:.3g})")


def solve_base(case: NetworkCase, tol=1e-10) -> OperatingPoint:
    """Solve the case's scheduled injections from a flat start."""
    delta0 = np.zeros(case.N)
    delta0[-1] = case.slack_angle
    delta0[:-1] = case.slack_angle
    v0 = case.v_set.copy()
    target = case.reduced_injections(case.p_inj, case.q_inj)
    return newton_solve(case, target, delta0, v0, tol=tol)


@dataclass(frozen=True)
class ContinuationConfig:
    initial_step: float = 0.05
    max_step: float = 0.5
    sigma_tol: float = 1e-6
    lambda_tol: float = 1e-7
    max_lambda: float = 1e3
    newton_tol: float = 1e-10
    max_iter: int = 50


@dataclass
class ContinuationTrace:
    """Solutions of ``r(x) = y0 + lam u`` up to the singular boundary."""

    direction: np.ndarray
    lambdas: list = field(default_factory=list)
    states: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    boundary_lambda: float = np.nan
    boundary_state: np.ndarray | None = None
    y0: np.ndarray | None = None
    # full-state references for PV/slack entries
    delta_ref: np.ndarray | None = None
    v_ref: np.ndarray | None = None
    # False when stepping reached max_lambda without meeting the boundary
    bounded: bool = True

    def to_csv(self, path, case: NetworkCase):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda"] + case.state_labels() + ["sigma_min"])
            for lam, x, s in zip(self.lambdas, self.states, self.sigmas):
                w.writerow([repr(float(lam))] + [repr(float(a)) for a in x] + [repr(float(s))])

    def state_at(self, case: NetworkCase, lam: float, cfg: ContinuationConfig | None = None):
        """Newton solution at ``lam`` warm-started from the nearest sample below."""
        cfg = cfg or ContinuationConfig()
        if lam > self.boundary_lambda:
            raise NonConvergenceError("requested lambda beyond the traced boundary")
        lams = np.asarray(self.lambdas)
        k = int(np.searchsorted(lams, lam, side="right")) - 1
        k = max(k, 0)
        x = self.states[k]
        d, v = case.full_state(x, self.delta_ref, self.v_ref)
        jac = reduced_jacobian(case, d, v)
        x_pred = x + np.linalg.solve(jac, self.direction) * (lam - lams[k])
        d, v = case.full_state(x_pred, self.delta_ref, self.v_ref)
        op = newton_solve(case, self.y0 + lam * self.direction, d, v,
                          tol=cfg.newton_tol, max_iter=cfg.max_iter,
                          angle_window=np.pi)
        return op


def continuation_trace(case: NetworkCase, base: OperatingPoint, u,
                       config: ContinuationConfig | None = None) -> ContinuationTrace:
    """Trace ``r(x) = y0 + lam u`` by natural-parameter stepping.

    Steps grow after success and halve after a failed corrector. A step fails
    when Newton does not converge, when the solution crosses to the other
    sheet (sign change of ``det J``), or when the smallest singular value drops
    below ``sigma_tol``. The boundary is the last accepted ``lam`` once the
    failing step is below ``lambda_tol``.
    """
    cfg = config or ContinuationConfig()
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    y0 = base.injections(case)
    x = base.reduced(case)
    d_ref, v_ref = base.delta.copy(), base.v.copy()
    jac = reduced_jacobian(case, base.delta, base.v)
    sign0 = np.sign(np.linalg.det(jac))
    trace = ContinuationTrace(direction=u, y0=y0, delta_ref=d_ref, v_ref=v_ref)
    trace.lambdas.append(0.0)
    trace.states.append(x.copy())
    trace.sigmas.append(_sigma_min(jac))
    lam, step = 0.0, cfg.initial_step
    while True:
        if lam + step > cfg.max_lambda:
            step = cfg.max_lambda - lam
            if step <= 0:
                trace.bounded = False
                break
        tangent = np.linalg.solve(jac, u)
        x_pred = x + step * tangent
        d, v = case.full_state(x_pred, d_ref, v_ref)
        ok = True
        try:
            op = newton_solve(case, y0 + (lam + step) * u, d, v, tol=cfg.newton_tol,
                              max_iter=cfg.max_iter, angle_window=np.pi)
            x_new = op.reduced(case)
            if np.any(np.abs(x_new[: case.N - 1] - x[: case.N - 1]) >= np.pi / 2):
                ok = False
            else:
                jac_new = reduced_jacobian(case, op.delta, op.v)
                sig = _sigma_min(jac_new)
                if np.sign(np.linalg.det(jac_new)) != sign0 or sig < cfg.sigma_tol:
                    ok = False
        except PowerFlowError:
            ok = False
        if ok:
            lam += step
            x, jac = x_new, jac_new
            trace.lambdas.append(lam)
            trace.states.append(x.copy())
            trace.sigmas.append(sig)
            step = min(2.0 * step, cfg.max_step)
        else:
            if step <= cfg.lambda_tol:
                break
            step *= 0.5
    if len(trace.lambdas) == 1:
        raise StepUnderflowError("no continuation step accepted from the base point")
    trace.boundary_lambda = trace.lambdas[-1]
    trace.boundary_state = trace.states[-1].copy()
    return trace
