"""Boundary curves and manifold traces for the standard planes.

Writes one output directory per plane with traces.csv (estimated and true
states on the lambda grid), boundary.csv (Padé poles) and
boundary_truth.csv (continuation nose points).
"""

import argparse
from pathlib import Path

from pfgeodesic.pipeline import PipelineConfig, run_pipeline

RUNS = [
    ("case9", ("5P", "7P"), "case9_5P_7P"),
    ("case9", ("7P", "9P"), "case9_7P_9P"),
    ("case2", ("2P", "2Q"), "case2_PQ"),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--radius", type=float, default=0.05)
    ap.add_argument("--directions", type=int, default=64)
    ap.add_argument("--provenance", choices=["data", "model"], default="data")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/sweeps")
    args = ap.parse_args()

    for case, plane, tag in RUNS:
        out = Path(args.out) / tag
        cfg = PipelineConfig(case=case, plane=plane, radius=args.radius, directions=args.directions,
                             provenance=args.provenance, workers=args.workers, out=str(out))
        rep = run_pipeline(cfg)["report"]
        avg = ", ".join(f"{p:.0%}: {r['average']:.2e}" for p, r in rep.regions.items())
        print(f"{tag:>14}  avg voltage error {avg}  -> {out}")


if __name__ == "__main__":
    main()
