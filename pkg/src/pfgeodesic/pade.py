"""Padé approximants of geodesic jets and boundary distance from their poles."""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass, field

import numpy as np


class PadeError(ValueError):
    pass


class IllConditionedPadeError(PadeError):
    def __init__(self, cond, L, M):
        super().__init__(f"[{L}/{M}] denominator system is ill-conditioned (cond={cond:.3g})")
        self.cond = cond
        self.L = L
        self.M = M


class PoleProximityError(PadeError):
    pass


@dataclass(frozen=True, eq=False)
class PadeApproximant:
    """``a(lam) / b(lam)`` for one coordinate, ``b[0] = 1``."""

    a: np.ndarray
    b: np.ndarray
    L: int
    M: int
    cond: float = 1.0

    @property
    def roots(self) -> np.ndarray:
        return poly_roots(self.b)

    @property
    def zeros(self) -> np.ndarray:
        return poly_roots(self.a)

    def taylor(self, order: int) -> np.ndarray:
        """Re-expand ``a/b`` as a power series through ``order``."""
        c = np.zeros(order + 1)
        for k in range(order + 1):
            ak = self.a[k] if k < len(self.a) else 0.0
            s = sum(self.b[j] * c[k - j] for j in range(1, min(k, len(self.b) - 1) + 1))
            c[k] = ak - s
        return c


def pade_from_taylor(coeffs, L: int, M: int, cond_max: float = 1e12) -> PadeApproximant:
    """[L/M] approximant matching ``coeffs`` through order ``L+M``."""
    c = np.asarray(coeffs, dtype=float)
    if L < 0 or M < 0:
        raise PadeError("orders must be non-negative")
    if len(c) < L + M + 1:
        raise PadeError(f"[{L}/{M}] needs {L + M + 1} coefficients, got {len(c)}")

    def cc(k):
        return c[k] if k >= 0 else 0.0

    cond = 1.0
    b = np.zeros(M + 1)
    b[0] = 1.0
    if M > 0:
        rhs = -np.array([cc(L + i) for i in range(1, M + 1)])
        scale = np.max(np.abs(c[: L + M + 1]))
        if np.max(np.abs(rhs), initial=0.0) <= 1e-15 * scale:
            pass  # series already polynomial through L+M: denominator stays 1
        else:
            T = np.array([[cc(L + i - j) for j in range(1, M + 1)] for i in range(1, M + 1)])
            sv = np.linalg.svd(T, compute_uv=False)
            cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
            # a well-conditioned but negligible system (e.g. 1x1 of rounding size) is singular too
            if not np.isfinite(cond) or cond > cond_max or sv[-1] * cond_max < scale:
                raise IllConditionedPadeError(cond, L, M)
            b[1:] = np.linalg.solve(T, rhs)
    a = np.array([sum(b[j] * cc(k - j) for j in range(min(k, M) + 1)) for k in range(L + 1)])
    return PadeApproximant(a=a, b=b, L=L, M=M, cond=cond)


def pade_with_fallback(coeffs, L: int, M: int, cond_max: float = 1e12) -> PadeApproximant:
    """Try [L/M], then [L+1/M-1], ... down to a plain polynomial."""
    while True:
        try:
            return pade_from_taylor(coeffs, L, M, cond_max=cond_max)
        except IllConditionedPadeError:
            if M == 0:
                raise
            L, M = L + 1, M - 1


def _trim(p):
    p = np.asarray(p, dtype=complex)
    scale = np.max(np.abs(p)) if len(p) else 0.0
    k = len(p)
    while k > 1 and abs(p[k - 1]) <= 1e-14 * scale:
        k -= 1
    return p[:k]


def _cubic_roots(c0, c1, c2, c3):
    # depressed cubic via Cardano, then one Newton polish per root
    a, b, c = c2 / c3, c1 / c3, c0 / c3
    p = b - a * a / 3
    q = 2 * a**3 / 27 - a * b / 3 + c
    disc = cmath.sqrt(q * q / 4 + p**3 / 27)
    w = -q / 2 + disc
    if abs(w) < abs(-q / 2 - disc):
        w = -q / 2 - disc
    if abs(w) == 0:
        roots = [-a / 3] * 3
    else:
        u1 = w ** (1 / 3)
        omega = complex(-0.5, math.sqrt(3) / 2)
        roots = []
        for k in range(3):
            uk = u1 * omega**k
            roots.append(uk - p / (3 * uk) - a / 3)
    def f(z):
        return ((c3 * z + c2) * z + c1) * z + c0

    out = []
    for z in roots:
        for _ in range(2):
            df = (3 * c3 * z + 2 * c2) * z + c1
            if df == 0:
                break
            z_new = z - f(z) / df
            # near multiple roots f and f' are both rounding noise; keep only improving steps
            if abs(f(z_new)) >= abs(f(z)):
                break
            z = z_new
        out.append(z)
    return np.array(out)


def poly_roots(coef_ascending) -> np.ndarray:
    """Roots of ``sum coef[k] lam^k``; closed forms up to degree 3."""
    p = _trim(coef_ascending)
    deg = len(p) - 1
    if deg <= 0:
        return np.array([], dtype=complex)
    if deg == 1:
        return np.array([-p[0] / p[1]])
    if deg == 2:
        c0, c1, c2 = p
        disc = cmath.sqrt(c1 * c1 - 4 * c2 * c0)
        s = -(c1 + disc) if (c1.conjugate() * disc).real >= 0 else -(c1 - disc)
        if s == 0:
            return np.array([0j, 0j])
        return np.array([s / (2 * c2), 2 * c0 / s])
    if deg == 3:
        return _cubic_roots(*p)
    return np.roots(p[::-1])


def evaluate_pade(approx: PadeApproximant, lam, pole_tol: float = 1e-9):
    lam_arr = np.asarray(lam, dtype=float)
    poles = approx.roots
    real = poles[np.abs(poles.imag) <= 1e-12 * np.maximum(np.abs(poles), 1.0)].real
    if real.size and np.any(np.abs(lam_arr[..., None] - real) < pole_tol):
        raise PoleProximityError("evaluation point within tolerance of a real pole")
    num = np.polynomial.polynomial.polyval(lam_arr, approx.a)
    den = np.polynomial.polynomial.polyval(lam_arr, approx.b)
    return num / den


def pade_jet(coeffs, L: int = 3, M: int = 3, fallback: bool = True) -> list:
    """One approximant per coordinate of a jet ``coeffs[k, coord]``."""
    coeffs = np.asarray(coeffs)
    make = pade_with_fallback if fallback else pade_from_taylor
    return [make(coeffs[:, i], L, M) for i in range(coeffs.shape[1])]


def evaluate_pade_vector(approximants, lam) -> np.ndarray:
    return np.stack([evaluate_pade(a, lam) for a in approximants], axis=-1)


@dataclass(frozen=True)
class PoleFilter:
    imag_tol: float = 1e-3
    doublet_tol: float = 1e-6
    horizon: float = math.inf
    aggregate: str = "median"  # or "min", "max", or an integer coordinate index


def real_positive_poles(approx: PadeApproximant, flt: PoleFilter = PoleFilter()) -> np.ndarray:
    """Positive real denominator roots after removing Froissart doublets."""
    poles = approx.roots
    zeros = approx.zeros
    keep = []
    for z in poles:
        if zeros.size and np.min(np.abs(zeros - z)) <= flt.doublet_tol * max(abs(z), 1e-300):
            continue
        if abs(z.imag) <= flt.imag_tol * abs(z) and z.real > 0 and z.real <= flt.horizon:
            keep.append(z.real)
    return np.sort(np.array(keep))


@dataclass
class BoundaryEstimate:
    lambda_s: float
    coordinate_poles: np.ndarray
    spread: tuple
    found: bool
    y_s: np.ndarray | None = None
    x_s: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def smallest_real_pole(approximants, flt: PoleFilter = PoleFilter(), y0=None, u=None) -> BoundaryEstimate:
    """Aggregate per-coordinate smallest positive real poles into ``lambda_s``.

    When no coordinate has a qualifying pole the estimate is returned with
    ``found=False`` and ``lambda_s = inf``.
    """
    per = np.full(len(approximants), np.nan)
    for i, ap in enumerate(approximants):
        poles = real_positive_poles(ap, flt)
        if poles.size:
            per[i] = poles[0]
    valid = per[np.isfinite(per)]
    if valid.size == 0:
        return BoundaryEstimate(lambda_s=math.inf, coordinate_poles=per,
                                spread=(math.nan, math.nan), found=False)
    agg = flt.aggregate
    if agg == "median":
        lam = float(np.median(valid))
    elif agg == "min":
        lam = float(valid.min())
    elif agg == "max":
        lam = float(valid.max())
    else:
        lam = float(per[int(agg)])
        if not np.isfinite(lam):
            return BoundaryEstimate(lambda_s=math.inf, coordinate_poles=per,
                                    spread=(float(valid.min()), float(valid.max())), found=False)
    est = BoundaryEstimate(lambda_s=lam, coordinate_poles=per,
                           spread=(float(valid.min()), float(valid.max())), found=True)
    if y0 is not None and u is not None:
        est.y_s = np.asarray(y0) + lam * np.asarray(u)
    inside = lam * (1 - 1e-3)
    try:
        est.x_s = evaluate_pade_vector(approximants, inside)
    except PoleProximityError:
        est.x_s = None
    return est


def write_boundary_csv(path, rows, n_coords, coord_labels=None):
    """Rows: dicts with direction, angle, lambda_s, spread_min, spread_max, poles."""
    labels = coord_labels or [f"c{i}" for i in range(n_coords)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "angle", "lambda_s", "spread_min", "spread_max"]
                   + [f"pole_{lab}" for lab in labels])
        for r in rows:
            w.writerow([r["direction"], repr(float(r["angle"])), repr(float(r["lambda_s"])),
                        repr(float(r["spread"][0])), repr(float(r["spread"][1]))]
                       + [repr(float(p)) for p in r["poles"]])
