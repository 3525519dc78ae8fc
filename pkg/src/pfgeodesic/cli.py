"""Command-line entry point: ``pfgeodesic <subcommand> ...``.

Exit codes: 0 success, 2 when every evaluated target raised an infeasible
alarm, 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .estimator import estimate_jacobian, model_estimate
from .geometry import geodesic_jet, series_inversion_jet
from .measurements import PatchSpec, read_samples_csv, sample_patch, stack_increments, write_samples_csv
from .network import NetworkCase, load_case
from .pipeline import (PipelineConfig, evaluate_targets, prepare, radius_study, run_pipeline,
                       write_manifest, write_targets)
from .powerflow import ContinuationConfig, continuation_trace, solve_base

log = logging.getLogger("pfgeodesic")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def parse_assignments(case: NetworkCase, text: str, base=None) -> np.ndarray:
    """``"5P=-1.2,7Q=0.3"`` -> reduced-injection vector.

    Unnamed coordinates come from ``base`` (zeros when ``base`` is None).
    """
    vec = np.zeros(case.n) if base is None else np.array(base, dtype=float)
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, _, val = item.partition("=")
        if not _:
            raise ValueError(f"expected LABEL=VALUE, got {item!r}")
        vec[case.injection_index(key.strip())] = float(val)
    return vec


def parse_plane(text: str):
    parts = text.split(":")
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError("plane must look like 5P:7P")
    return tuple(parts)


def _common(p):
    p.add_argument("--case", required=True, help="case file or bundled name (case2, case4, case9)")
    p.add_argument("--radius", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=None, help="patch size (default n)")
    p.add_argument("--mode", choices=["random", "fixed"], default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--order", type=int, default=6)
    p.add_argument("--pade", type=int, nargs=2, default=(3, 3), metavar=("L", "M"))
    p.add_argument("--provenance", choices=["data", "model"], default="data")
    p.add_argument("--out", default=None)
    p.add_argument("--directions", type=int, default=64)
    p.add_argument("--plane", type=parse_plane, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--aggregate", default="median")
    p.add_argument("--metric", choices=["max", "l2"], default="max")
    p.add_argument("--noise", type=float, default=0.0, help="measurement noise std")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pfgeodesic", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a measurement patch")
    _common(p)

    p = sub.add_parser("estimate", help="estimate the Jacobian from a patch")
    _common(p)
    p.add_argument("--from-samples", default=None, help="sample CSV written by 'sample'")
    p.add_argument("--jacobian-out", default=None)

    p = sub.add_parser("trace", help="continuation truth along a direction")
    _common(p)
    p.add_argument("--direction", required=True, help='e.g. "5P=-1,7P=-0.5"')

    p = sub.add_parser("boundary", help="jet + Padé boundary along directions or targets")
    _common(p)
    p.add_argument("--direction", action="append", default=[])
    p.add_argument("--target", action="append", default=[],
                   help='absolute injections, e.g. "5P=-1.5,7P=-1.2"')

    p = sub.add_parser("sweep", help="boundary curve and traces over a plane")
    _common(p)
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--no-validate", action="store_true", help="skip continuation truth")

    p = sub.add_parser("radius-study", help="error table over patch radii")
    _common(p)
    p.add_argument("--radii", type=float, nargs="+", default=[0.01, 0.05, 0.5])
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--no-model", action="store_true")

    p = sub.add_parser("validate", help="internal consistency checks at the base point")
    _common(p)
    p.add_argument("--checks", type=int, default=5, help="random directions for jet checks")
    return ap


def _config(args, **extra) -> PipelineConfig:
    return PipelineConfig(case=args.case, radius=args.radius, samples=args.samples, mode=args.mode,
                          seed=args.seed, order=args.order, pade=tuple(args.pade),
                          provenance=args.provenance, plane=args.plane,
                          directions=args.directions, out=args.out, workers=args.workers,
                          aggregate=args.aggregate, noise_std=args.noise, metric=args.metric,
                          **extra)


def _out(args) -> Path:
    out = Path(args.out or "pfgeodesic-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_sample(args):
    case = load_case(args.case)
    base = solve_base(case)
    spec = PatchSpec(radius=args.radius, count=args.samples or case.n, seed=args.seed,
                     mode=args.mode, noise_std=args.noise)
    samples = sample_patch(case, base, spec)
    out = _out(args)
    write_samples_csv(out / "samples.csv", case, samples)
    write_manifest(out, _config(args))
    print(f"{len(samples)} samples -> {out / 'samples.csv'}")
    return EXIT_OK


def cmd_estimate(args):
    case = load_case(args.case)
    base = solve_base(case)
    if args.provenance == "model":
        est = model_estimate(case, base)
    else:
        if args.from_samples:
            samples = read_samples_csv(args.from_samples, case)
        else:
            samples = sample_patch(case, base, PatchSpec(
                radius=args.radius, count=args.samples or case.n, seed=args.seed,
                mode=args.mode, noise_std=args.noise))
        est = estimate_jacobian(*stack_increments(samples))
    path = Path(args.jacobian_out) if args.jacobian_out else _out(args) / "jacobian.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    est.to_csv(path, case)
    ref = model_estimate(case, base).jac
    rel = np.linalg.norm(est.jac - ref) / np.linalg.norm(ref)
    print(f"cond(dX)={est.cond:.4g}  relative error vs model={rel:.3e}  -> {path}")
    return EXIT_OK


def cmd_trace(args):
    case = load_case(args.case)
    base = solve_base(case)
    u = parse_assignments(case, args.direction)
    u = u / np.linalg.norm(u)
    tr = continuation_trace(case, base, u, ContinuationConfig())
    out = _out(args)
    tr.to_csv(out / "trace.csv", case)
    write_manifest(out, _config(args), {"direction": u.tolist()})
    print(f"lambda* = {tr.boundary_lambda!r}  ({len(tr.lambdas)} points) -> {out / 'trace.csv'}")
    return EXIT_OK


def cmd_boundary(args):
    if not args.direction and not args.target:
        raise ValueError("give at least one --direction or --target")
    cfg = _config(args)
    ev = prepare(cfg)
    out = _out(args)
    code = EXIT_OK
    if args.direction:
        rows = []
        for text in args.direction:
            u = parse_assignments(ev.case, text)
            u = u / np.linalg.norm(u)
            _, _, est = ev.direction(u)
            rows.append(est)
            print(f"{text}: lambda_s = {est.lambda_s!r}  spread = {est.spread}")
        with open(out / "boundary.json", "w") as fh:
            json.dump([{"direction": t, "lambda_s": e.lambda_s, "found": e.found,
                        "spread": list(e.spread),
                        "poles": [None if not np.isfinite(p) else p for p in e.coordinate_poles]}
                       for t, e in zip(args.direction, rows)], fh, indent=2)
    if args.target:
        targets = [parse_assignments(ev.case, t, base=ev.y0) for t in args.target]
        res = evaluate_targets(ev, targets)
        write_targets(out / "targets.csv", ev.case, res)
        for t, r in zip(args.target, res):
            print(f"{t}: {'solution' if r.feasible else 'INFEASIBLE ALARM'} "
                  f"(lambda={r.lam:.6g}, lambda_s={r.lambda_s:.6g})")
        if all(not r.feasible for r in res) and not args.direction:
            code = EXIT_INFEASIBLE
    write_manifest(out, cfg)
    return code


def cmd_sweep(args):
    if args.plane is None:
        raise ValueError("sweep needs --plane, e.g. 5P:7P")
    cfg = _config(args, grid_points=args.grid, validate=not args.no_validate)
    cfg.out = str(_out(args))
    summary = run_pipeline(cfg)
    rep = summary["report"]
    if rep is not None:
        for p, r in rep.regions.items():
            print(f"{p:.0%}: average {r['average']:.3e}  max {r['max']:.3e}  ({r['points']} points)")
    print(f"outputs -> {cfg.out}")
    return EXIT_OK


def cmd_radius_study(args):
    if args.plane is None:
        raise ValueError("radius-study needs --plane, e.g. 5P:7P")
    cfg = _config(args, grid_points=args.grid)
    cfg.out = str(_out(args))
    reports = radius_study(cfg, sorted(args.radii), include_model=not args.no_model)
    print("radius      " + "  ".join(f"{p:>9.0%}" for p in (0.80, 0.95, 0.99)))
    for key, rep in reports.items():
        if rep is None:
            print(f"{key!s:<10}  infeasible patch")
            continue
        print(f"{key!s:<10}  " + "  ".join(f"{r['average']:9.2e}" for r in rep.regions.values()))
    return EXIT_OK


def cmd_validate(args):
    """Estimated vs analytic Jacobian and Christoffel vs series-inversion jets."""
    cfg = _config(args)
    ev = prepare(cfg)
    case, base = ev.case, ev.base
    ref = model_estimate(case, base).jac
    report = {"jacobian_rel_error": float(np.linalg.norm(ev.estimate.jac - ref) / np.linalg.norm(ref)),
              "consistency": ev.consistency, "jet_mismatch": []}
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 1]))
    J = ev.ctx.J
    for _ in range(args.checks):
        u = rng.normal(size=case.n)
        u /= np.linalg.norm(u)
        a = geodesic_jet(ev.ctx, u, args.order).coeffs
        b = series_inversion_jet(J, ev.tensors, u, args.order, ev.ctx.x0).coeffs
        report["jet_mismatch"].append(float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    out = _out(args)
    with open(out / "validate.json", "w") as fh:
        json.dump(report, fh, indent=2)
    write_manifest(out, cfg)
    print(json.dumps(report, indent=2))
    ok = max(report["jet_mismatch"]) <= 1e-9
    return EXIT_OK if ok else EXIT_ERROR


COMMANDS = {"sample": cmd_sample, "estimate": cmd_estimate, "trace": cmd_trace,
            "boundary": cmd_boundary, "sweep": cmd_sweep, "radius-study": cmd_radius_study,
            "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        log.error("%s", exc)
        if args.verbose:
            raise
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
