"""Simulated local measurements around an operating point.

This is the only data the model-free pipeline sees: increments of angle,
voltage magnitude and (P, Q) between perturbed solved points and the base.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import NetworkCase
from .powerflow import OperatingPoint, PowerFlowError, newton_solve


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeasurementSample:
    d_delta: np.ndarray  # N-1
    d_v: np.ndarray  # N_l
    d_p: np.ndarray  # N-1
    d_q: np.ndarray  # N-1, includes PV buses

    @classmethod
    def from_readings(cls, case: NetworkCase, base: OperatingPoint, point: OperatingPoint):
        m = case.N - 1
        return cls(
            d_delta=point.delta[:m] - base.delta[:m],
            d_v=point.v[: case.n_pq] - base.v[: case.n_pq],
            d_p=point.p[:m] - base.p[:m],
            d_q=point.q[:m] - base.q[:m],
        )


@dataclass(frozen=True)
class PatchSpec:
    radius: float
    count: int
    seed: int = 0
    mode: str = "random"  # "random" (uniform box) or "fixed" (directions on sphere)
    directions: tuple | None = None
    noise_std: float = 0.0
    max_redraws: int = 50

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.mode not in ("random", "fixed"):
            raise ValueError(f"unknown patch mode {self.mode!r}")
        if self.count < 1:
            raise ValueError("need at least one sample")


def default_directions(n: int) -> np.ndarray:
    """The ``n`` coordinate axes of the reduced injection space."""
    return np.eye(n)


def _substream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, index]))


def _solve_at(case, base, target):
    return newton_solve(case, target, base.delta, base.v)


def _add_noise(sample: MeasurementSample, rng, std):
    if std <= 0:
        return sample
    return MeasurementSample(*(a + rng.normal(0.0, std, a.shape) for a in
                               (sample.d_delta, sample.d_v, sample.d_p, sample.d_q)))


def sample_patch(case: NetworkCase, base: OperatingPoint, spec: PatchSpec) -> list:
    """Draw ``spec.count`` measurement samples from the local patch.

    Random mode perturbs every reduced injection uniformly in
    ``[-radius, radius]`` and redraws a sample whose power flow fails. Fixed
    mode places sample ``k`` at ``y0 + radius * d_k`` with unit ``d_k`` and
    reports a failing direction as an error. Each sample uses its own random
    substream derived from ``(seed, k)``.
    """
    y0 = base.injections(case)
    n = case.n
    samples = []
    if spec.mode == "fixed":
        dirs = np.asarray(spec.directions if spec.directions is not None
                          else default_directions(n), dtype=float)
        if dirs.ndim != 2 or dirs.shape[1] != n:
            raise ValueError(f"directions must have shape (k, {n})")
        if spec.count > len(dirs):
            raise SamplingError(f"only {len(dirs)} directions for {spec.count} samples")
        for k in range(spec.count):
            d = dirs[k] / np.linalg.norm(dirs[k])
            try:
                op = _solve_at(case, base, y0 + spec.radius * d)
            except PowerFlowError as exc:
                raise SamplingError(f"direction {k}: power flow failed at radius "
                                    f"{spec.radius} ({exc})") from None
            s = MeasurementSample.from_readings(case, base, op)
            samples.append(_add_noise(s, _substream(spec.seed, k), spec.noise_std))
        return samples
    for k in range(spec.count):
        rng = _substream(spec.seed, k)
        for _ in range(spec.max_redraws):
            dy = rng.uniform(-spec.radius, spec.radius, n)
            try:
                op = _solve_at(case, base, y0 + dy)
            except PowerFlowError:
                continue
            break
        else:
            raise SamplingError(f"sample {k}: {spec.max_redraws} draws all failed; "
                                "patch extends outside the feasible region")
        s = MeasurementSample.from_readings(case, base, op)
        samples.append(_add_noise(s, rng, spec.noise_std))
    return samples


def stack_increments(samples):
    """Return ``(dX, dY)`` with one column per sample.

    ``dX`` stacks (d_delta, d_v); ``dY`` stacks (d_p, d_q) on the full rows.
    """
    if not samples:
        raise ValueError("need at least one sample")
    shapes = {(s.d_delta.shape, s.d_v.shape, s.d_p.shape, s.d_q.shape) for s in samples}
    if len(shapes) != 1:
        raise ValueError("inconsistent sample dimensions")
    dX = np.column_stack([np.concatenate([s.d_delta, s.d_v]) for s in samples])
    dY = np.column_stack([np.concatenate([s.d_p, s.d_q]) for s in samples])
    return dX, dY


def _header(case: NetworkCase):
    m = case.N - 1
    labs = case.labels
    return ([f"d_delta_{labs[k]}" for k in range(m)] + [f"d_v_{labs[k]}" for k in range(case.n_pq)]
            + [f"d_p_{labs[k]}" for k in range(m)] + [f"d_q_{labs[k]}" for k in range(m)])


def write_samples_csv(path, case: NetworkCase, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(case))
        for s in samples:
            w.writerow([repr(float(a)) for a in np.concatenate([s.d_delta, s.d_v, s.d_p, s.d_q])])


def read_samples_csv(path, case: NetworkCase) -> list:
    m, npq = case.N - 1, case.n_pq
    with open(path, newline="") as fh:
        rdr = csv.reader(fh)
        header = next(rdr)
        if header != _header(case):
            raise ValueError("sample CSV columns do not match the case")
        out = []
        for row in rdr:
            a = np.array([float(x) for x in row])
            out.append(MeasurementSample(a[:m], a[m:m + npq], a[m + npq:2 * m + npq],
                                         a[2 * m + npq:]))
    return out
