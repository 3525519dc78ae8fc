"""Smoke run of the full pipeline on the bundled 4-bus stand-in case."""

import tempfile

import numpy as np

from pfgeodesic.pipeline import PipelineConfig, evaluate_targets, prepare, run_pipeline


def main():
    with tempfile.TemporaryDirectory() as tmp:
        summary = run_pipeline(PipelineConfig(case="case4", plane=("2P", "3P"), directions=16,
                                              radius=0.05, out=tmp))
        for p, r in summary["report"].regions.items():
            print(f"{p:.0%} region: average {r['average']:.2e}, max {r['max']:.2e}")
    ev = prepare(PipelineConfig(case="case4"))
    y = ev.y0.copy()
    for scale in (0.5, 5.0, 50.0):
        target = y.copy()
        target[ev.case.injection_index("2P")] -= scale
        (r,) = evaluate_targets(ev, [target])
        what = "V = " + np.array2string(r.state[ev.case.N - 1:], precision=4) if r.feasible \
            else "infeasible alarm"
        print(f"extra load {scale:5.1f} p.u. at bus 2: lambda_s={r.lambda_s:.3f}  {what}")


if __name__ == "__main__":
    main()
