"""End-to-end evaluation: measurements -> Jacobian -> geometry -> jets -> Padé.

The one-off steps (Jacobian, derivative tensors, geometry) live in an
:class:`Evaluator`; per-direction work fans out to a process pool and is
re-assembled by direction index so that outputs do not depend on scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import multiprocessing
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import JacobianEstimate, consistency_score, estimate_jacobian, model_estimate
from .geometry import GeodesicJet, build_geometry, geodesic_jet
from .measurements import PatchSpec, sample_patch, stack_increments, write_samples_csv
from .network import NetworkCase, load_case
from .pade import PoleFilter, pade_jet, smallest_real_pole, write_boundary_csv
from .powerflow import ContinuationConfig, OperatingPoint, continuation_trace, solve_base
from .terms import derivative_tensors, recover_flow_terms

log = logging.getLogger(__name__)

REGIONS = (0.80, 0.95, 0.99)


class PipelineError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


@dataclass
class PipelineConfig:
    case: str
    radius: float = 0.05
    samples: int | None = None
    mode: str = "random"
    seed: int = 0
    order: int = 6
    pade: tuple = (3, 3)
    provenance: str = "data"
    plane: tuple | None = None
    directions: int = 64
    grid_points: int = 50
    grid_fraction: float = 0.99
    targets: list | None = None
    validate: bool = True
    out: str | None = None
    workers: int = 1
    aggregate: str = "median"
    noise_std: float = 0.0
    metric: str = "max"

    def __post_init__(self):
        if self.directions < 1:
            raise ValueError("direction count must be >= 1")
        if not 0 < self.grid_fraction <= 1:
            raise ValueError("grid fraction must lie in (0, 1]")
        if self.provenance not in ("data", "model"):
            raise ValueError("provenance must be 'data' or 'model'")
        self.pade = tuple(self.pade)
        if self.plane is not None:
            self.plane = tuple(self.plane)

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as exc:  # surfaced with the stage name
                raise PipelineError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@dataclass(eq=False)
class Evaluator:
    """Everything computed once per run (steps 1-3)."""

    case: NetworkCase
    base: OperatingPoint
    estimate: JacobianEstimate
    terms: object
    tensors: list
    ctx: object
    order: int
    pade: tuple
    pole_filter: PoleFilter
    samples: list = field(default_factory=list)
    consistency: float = 0.0

    @property
    def y0(self):
        return self.base.injections(self.case)

    def jet(self, u) -> GeodesicJet:
        return geodesic_jet(self.ctx, u, self.order)

    def direction(self, u):
        jet = self.jet(u)
        aps = pade_jet(jet.coeffs, *self.pade)
        est = smallest_real_pole(aps, self.pole_filter, y0=self.y0, u=u)
        return jet, aps, est


@_stage("measurement")
def _measure(case, base, cfg):
    spec = PatchSpec(radius=cfg.radius, count=cfg.samples or case.n, seed=cfg.seed,
                     mode=cfg.mode, noise_std=cfg.noise_std)
    return sample_patch(case, base, spec)


@_stage("estimation")
def _estimate(samples):
    dX, dY = stack_increments(samples)
    return estimate_jacobian(dX, dY)


@_stage("derivatives")
def _derivatives(case, base, est, order):
    terms = recover_flow_terms(est.jac, base.p, base.q, base.v, case.n_pq, provenance=est.source)
    return terms, derivative_tensors(terms, order)


@_stage("geometry")
def _geometry(case, base, tensors, order):
    return build_geometry(tensors, s_max=order - 2, x0=base.reduced(case))


def prepare(cfg: PipelineConfig, case: NetworkCase | None = None,
            base: OperatingPoint | None = None) -> Evaluator:
    case = case or _stage("load")(load_case)(cfg.case)
    base = base or _stage("base power flow")(solve_base)(case)
    samples = []
    if cfg.provenance == "model":
        est = model_estimate(case, base)
    else:
        samples = _measure(case, base, cfg)
        est = _estimate(samples)
    terms, tensors = _derivatives(case, base, est, cfg.order)
    ctx = _geometry(case, base, tensors, cfg.order)
    score = consistency_score(est, base.p, base.q, base.v, case.n_pq)
    return Evaluator(case=case, base=base, estimate=est, terms=terms, tensors=tensors, ctx=ctx,
                     order=cfg.order, pade=cfg.pade,
                     pole_filter=PoleFilter(aggregate=cfg.aggregate),
                     samples=samples, consistency=score)


def pade_values(aps, lam) -> np.ndarray:
    """Rational values without the pole-proximity guard (error studies only)."""
    lam = np.asarray(lam, dtype=float)
    P = np.polynomial.polynomial.polyval
    return np.stack([P(lam, a.a) / P(lam, a.b) for a in aps], axis=-1)


def plane_directions(case: NetworkCase, plane, count: int):
    """Unit directions evenly spaced in the plane of two injection coordinates."""
    ia, ib = (case.injection_index(p) for p in plane)
    if ia == ib:
        raise ValueError("plane needs two distinct coordinates")
    angles = 2 * np.pi * np.arange(count) / count
    dirs = np.zeros((count, case.n))
    dirs[:, ia] = np.cos(angles)
    dirs[:, ib] = np.sin(angles)
    return angles, dirs


@dataclass
class Truth:
    lambda_star: float
    lambdas: np.ndarray
    states: np.ndarray  # (points, n)
    sigma_star: float = math.nan
    bounded: bool = True


def truth_along(case, base, u, grid_points=50, fraction=0.99, cfg=None) -> Truth:
    """Continuation boundary and Newton states on the evaluation grid."""
    cfg = cfg or ContinuationConfig()
    tr = continuation_trace(case, base, u, cfg)
    lam_star = tr.boundary_lambda
    lams = fraction * lam_star * np.arange(1, grid_points + 1) / grid_points
    states = []
    for lam in lams:
        states.append(tr.state_at(case, lam, cfg).reduced(case))
    return Truth(lambda_star=lam_star, lambdas=lams, states=np.array(states),
                 sigma_star=tr.sigmas[-1], bounded=tr.bounded)


# worker-global state for the process pool
_WORK = {}


def _init_worker(payload):
    _WORK.clear()
    _WORK.update(payload)


def _truth_task(k):
    w = _WORK
    return k, truth_along(w["case"], w["base"], w["dirs"][k], w["grid_points"], w["fraction"])


def _direction_task(k):
    w = _WORK
    ev = w["evaluator"]
    u = w["dirs"][k]
    jet, aps, est = ev.direction(u)
    truth = w["truths"][k] if w["truths"] is not None else None
    if truth is not None:
        lams = truth.lambdas
    else:
        top = est.lambda_s if est.found else 1.0
        lams = w["fraction"] * top * np.arange(1, w["grid_points"] + 1) / w["grid_points"]
    values = pade_values(aps, lams)
    return k, dict(jet=jet.coeffs, lambda_s=est.lambda_s, found=est.found, spread=est.spread,
                   poles=est.coordinate_poles, lambdas=lams, estimates=values)


def _fan_out(task, count, payload, workers):
    if workers <= 1:
        _init_worker(payload)
        results = [task(k) for k in range(count)]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                 initializer=_init_worker, initargs=(payload,)) as pool:
            results = list(pool.map(task, range(count)))
    results.sort(key=lambda kv: kv[0])
    return [r for _, r in results]


def compute_truths(case, base, dirs, grid_points=50, fraction=0.99, workers=1) -> list:
    payload = dict(case=case, base=base, dirs=np.asarray(dirs), grid_points=grid_points,
                   fraction=fraction)
    return _fan_out(_truth_task, len(dirs), payload, workers)


@dataclass
class SweepResult:
    angles: np.ndarray
    directions: np.ndarray
    results: list
    truths: list | None
    plane: tuple


def sweep_directions(ev: Evaluator, cfg: PipelineConfig, plane=None, truths=None) -> SweepResult:
    """Boundary estimate and evaluated states along evenly spaced plane directions."""
    plane = plane or cfg.plane
    if plane is None:
        raise ValueError("sweep needs a plane of two injection coordinates")
    angles, dirs = plane_directions(ev.case, plane, cfg.directions)
    if truths is None and cfg.validate:
        truths = _stage("continuation")(compute_truths)(
            ev.case, ev.base, dirs, cfg.grid_points, cfg.grid_fraction, cfg.workers)
    payload = dict(evaluator=ev, dirs=dirs, truths=truths, grid_points=cfg.grid_points,
                   fraction=cfg.grid_fraction)
    results = _stage("evaluation")(_fan_out)(_direction_task, len(dirs), payload, cfg.workers)
    return SweepResult(angles=angles, directions=dirs, results=results, truths=truths,
                       plane=tuple(plane))


@dataclass
class ErrorReport:
    regions: dict  # fraction -> {"average", "max", "points"}
    boundary_errors: np.ndarray  # relative |lambda_s - lambda*| / lambda* per direction
    meta: dict = field(default_factory=dict)

    def table_row(self):
        return {p: (r["average"], r["max"]) for p, r in self.regions.items()}


def point_errors(estimates, truths_states, n_bus_angles: int, metric: str = "max"):
    """Voltage error per evaluation point over the PQ-bus magnitudes."""
    dv = np.abs(np.asarray(estimates)[..., n_bus_angles:] - np.asarray(truths_states)[..., n_bus_angles:])
    if metric == "max":
        return dv.max(axis=-1)
    if metric == "l2":
        return np.sqrt((dv**2).sum(axis=-1))
    raise ValueError(f"unknown metric {metric!r}")


def error_report(sweep_results, truths, n_angles: int, regions=REGIONS, metric="max",
                 meta=None) -> ErrorReport:
    """Average / max voltage error over grid points with ``lam <= p lambda*``.

    Directions whose continuation never met a boundary have no ``lambda*``;
    they are left out and counted in ``meta["unbounded"]``.
    """
    errs, fracs, bnd = [], [], []
    unbounded = 0
    for res, tr in zip(sweep_results, truths):
        if not tr.bounded:
            unbounded += 1
            bnd.append(math.nan)
            continue
        e = point_errors(res["estimates"], tr.states, n_angles, metric)
        errs.append(e)
        fracs.append(tr.lambdas / tr.lambda_star)
        bnd.append(abs(res["lambda_s"] - tr.lambda_star) / tr.lambda_star)
    errs = np.concatenate(errs) if errs else np.zeros(0)
    fracs = np.concatenate(fracs) if fracs else np.zeros(0)
    out = {}
    for p in regions:
        sel = fracs <= p * (1 + 1e-12)
        if not np.any(sel):
            raise ValueError(f"empty evaluation grid for the {p:.0%} region")
        out[p] = {"average": float(np.mean(errs[sel])), "max": float(np.max(errs[sel])),
                  "points": int(sel.sum())}
    return ErrorReport(regions=out, boundary_errors=np.array(bnd),
                       meta={**(meta or {}), "unbounded": unbounded})


def _fmt(x):
    return repr(float(x))


def write_sweep(out: Path, ev: Evaluator, sweep: SweepResult, report: ErrorReport | None):
    case = ev.case
    out.mkdir(parents=True, exist_ok=True)
    rows = [dict(direction=k, angle=sweep.angles[k], lambda_s=r["lambda_s"], spread=r["spread"],
                 poles=r["poles"]) for k, r in enumerate(sweep.results)]
    write_boundary_csv(out / "boundary.csv", rows, case.n, case.state_labels())
    ia, ib = (case.injection_index(p) for p in sweep.plane)
    y0 = ev.y0
    with open(out / "traces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["direction", "angle", "lambda", "alarm", "y_a", "y_b"]
        header += [f"est_{s}" for s in case.state_labels()]
        if sweep.truths is not None:
            header += [f"true_{s}" for s in case.state_labels()]
        w.writerow(header)
        for k, r in enumerate(sweep.results):
            u = sweep.directions[k]
            for j, lam in enumerate(r["lambdas"]):
                row = [k, _fmt(sweep.angles[k]), _fmt(lam), int(lam >= r["lambda_s"]),
                       _fmt(y0[ia] + lam * u[ia]), _fmt(y0[ib] + lam * u[ib])]
                row += [_fmt(a) for a in r["estimates"][j]]
                if sweep.truths is not None:
                    row += [_fmt(a) for a in sweep.truths[k].states[j]]
                w.writerow(row)
    if sweep.truths is not None:
        with open(out / "boundary_truth.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["direction", "angle", "lambda_star", "bounded", "y_a", "y_b"])
            for k, tr in enumerate(sweep.truths):
                u = sweep.directions[k]
                w.writerow([k, _fmt(sweep.angles[k]), _fmt(tr.lambda_star), int(tr.bounded),
                            _fmt(y0[ia] + tr.lambda_star * u[ia]),
                            _fmt(y0[ib] + tr.lambda_star * u[ib])])
    with open(out / "jets.json", "w") as fh:
        json.dump({"order": ev.order, "x0": ev.ctx.x0.tolist(),
                   "jets": [{"direction": sweep.directions[k].tolist(),
                             "coefficients": np.asarray(r["jet"]).tolist()}
                            for k, r in enumerate(sweep.results)]}, fh)
    if report is not None:
        write_error_csv(out / "errors.csv", {"run": report})


def write_error_csv(path, reports: dict):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "region", "average", "max", "points"])
        for name, rep in reports.items():
            for p, r in rep.regions.items():
                w.writerow([name, p, _fmt(r["average"]), _fmt(r["max"]), r["points"]])


def write_manifest(out: Path, cfg: PipelineConfig, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    man = {"config": asdict(cfg), "config_sha256": cfg.digest(), "seed": cfg.seed,
           "versions": {"pfgeodesic": __version__, "numpy": np.__version__,
                        "python": platform.python_version()}}
    if extra:
        man.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)


@dataclass
class TargetResult:
    target: np.ndarray
    lam: float
    lambda_s: float
    feasible: bool
    state: np.ndarray | None


def evaluate_targets(ev: Evaluator, targets) -> list:
    """Voltage solution or infeasible alarm for each injection profile."""
    out = []
    y0 = ev.y0
    for y in targets:
        y = np.asarray(y, dtype=float)
        d = y - y0
        lam = float(np.linalg.norm(d))
        if lam == 0:
            out.append(TargetResult(y, 0.0, math.inf, True, ev.ctx.x0.copy()))
            continue
        u = d / lam
        _, aps, est = ev.direction(u)
        if lam >= est.lambda_s:
            out.append(TargetResult(y, lam, est.lambda_s, False, None))
        else:
            out.append(TargetResult(y, lam, est.lambda_s, True, pade_values(aps, lam)))
    return out


def write_targets(path, case: NetworkCase, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "lambda", "lambda_s", "status"] + case.state_labels())
        for k, r in enumerate(results):
            vals = [_fmt(a) for a in r.state] if r.state is not None else [""] * case.n
            w.writerow([k, _fmt(r.lam), _fmt(r.lambda_s),
                        "solution" if r.feasible else "infeasible"] + vals)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run the full evaluation and write artifacts to ``cfg.out`` if set."""
    ev = prepare(cfg)
    summary = {"consistency": ev.consistency, "jacobian_cond": ev.estimate.cond,
               "provenance": ev.estimate.source}
    out = Path(cfg.out) if cfg.out else None
    if out is not None and ev.samples:
        out.mkdir(parents=True, exist_ok=True)
        write_samples_csv(out / "samples.csv", ev.case, ev.samples)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ev.estimate.to_csv(out / "jacobian.csv", ev.case)
    if cfg.targets:
        res = evaluate_targets(ev, cfg.targets)
        summary["targets"] = res
        summary["alarms"] = sum(not r.feasible for r in res)
        if out is not None:
            write_targets(out / "targets.csv", ev.case, res)
    if cfg.plane is not None:
        sweep = sweep_directions(ev, cfg)
        report = None
        if sweep.truths is not None:
            report = error_report(sweep.results, sweep.truths, ev.case.N - 1, metric=cfg.metric,
                                  meta={"radius": cfg.radius, "seed": cfg.seed,
                                        "provenance": cfg.provenance})
        summary["sweep"] = sweep
        summary["report"] = report
        if out is not None:
            write_sweep(out, ev, sweep, report)
    if out is not None:
        write_manifest(out, cfg, {"consistency": ev.consistency,
                                  "jacobian_cond": ev.estimate.cond})
    summary["evaluator"] = ev
    return summary


def radius_study(cfg: PipelineConfig, radii, directions=None, include_model=True,
                 truths=None) -> dict:
    """One pipeline per radius on identical directions and evaluation grids.

    Uses fixed-direction patches (``directions`` defaults to the coordinate
    axes). Returns ``{radius or "model": ErrorReport}``.
    """
    radii = list(radii)
    if any(r <= 0 for r in radii) or radii != sorted(radii):
        raise ValueError("radii must be positive and ascending")
    case = load_case(cfg.case)
    base = solve_base(case)
    angles, dirs = plane_directions(case, cfg.plane, cfg.directions)
    if truths is None:
        truths = compute_truths(case, base, dirs, cfg.grid_points, cfg.grid_fraction, cfg.workers)
    reports = {}
    runs = [(r, "data") for r in radii] + ([("model", "model")] if include_model else [])
    for key, prov in runs:
        sub = PipelineConfig(**{**asdict(cfg), "mode": "fixed", "provenance": prov,
                                "radius": key if prov == "data" else cfg.radius})
        try:
            ev = prepare(sub, case, base)
        except PipelineError as exc:
            log.warning("radius %s skipped: %s", key, exc)
            reports[key] = None
            continue
        if directions is not None and prov == "data":
            spec = PatchSpec(radius=key, count=len(directions), seed=cfg.seed, mode="fixed",
                             directions=tuple(map(tuple, directions)))
            samples = sample_patch(case, base, spec)
            est = _estimate(samples)
            terms, tensors = _derivatives(case, base, est, cfg.order)
            ev = Evaluator(case=case, base=base, estimate=est, terms=terms, tensors=tensors,
                           ctx=_geometry(case, base, tensors, cfg.order), order=cfg.order,
                           pade=cfg.pade, pole_filter=PoleFilter(aggregate=cfg.aggregate),
                           samples=samples)
        sweep = sweep_directions(ev, sub, truths=truths)
        reports[key] = error_report(sweep.results, truths, case.N - 1, metric=cfg.metric,
                                    meta={"radius": key, "provenance": prov})
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_error_csv(out / "radius_study.csv",
                        {str(k): v for k, v in reports.items() if v is not None})
        write_manifest(out, cfg, {"radii": radii})
    return reports
