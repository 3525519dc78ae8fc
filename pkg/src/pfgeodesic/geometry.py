"""Pullback metric, Christoffel symbols and geodesic Taylor jets.

The state space carries the metric ``g = J^T J`` induced by the reduced
power-flow map. Geodesics are expanded at the base point by differentiating
the geodesic equation ``x'' + Gamma(x)[x', x'] = 0`` in the curve parameter:
the curve jet of ``Gamma(x(lam))`` is assembled from spatial derivatives of
``Gamma`` and the lower jet coefficients (multivariate Faa di Bruno).

``series_inversion_jet`` is an independent route: it inverts
``r(x(lam)) = y0 + lam u`` order by order and never touches the metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np


class SingularGeometryError(np.linalg.LinAlgError):
    """The reduced Jacobian is singular: the base point is on the boundary."""


class KahanSum:
    """Compensated accumulator for numpy arrays."""

    def __init__(self, shape):
        self.total = np.zeros(shape)
        self._c = np.zeros(shape)

    def add(self, value):
        y = value - self._c
        t = self.total + y
        self._c = (t - self.total) - y
        self.total = t

    @property
    def value(self):
        return self.total


@lru_cache(maxsize=None)
def partitions(p: int, max_part: int | None = None) -> tuple:
    """Integer partitions of ``p`` as non-increasing tuples."""
    if max_part is None:
        max_part = p
    if p == 0:
        return ((),)
    out = []
    for first in range(min(p, max_part), 0, -1):
        for rest in partitions(p - first, first):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def partition_weight(parts: tuple) -> float:
    """``1 / prod(mult!)``: weight of a partition in the composition formula."""
    w = 1
    for k in set(parts):
        w *= factorial(parts.count(k))
    return 1.0 / w


def _masks(s):
    return range(1 << s)


def _subset(keys, mask):
    return tuple(k for b, k in enumerate(keys) if mask >> b & 1)


class _Directional:
    """Memoised directional derivatives of r, g, g^-1 and Gamma.

    Directions are referred to by hashable keys mapping to vectors; every
    quantity is cached by the sorted multiset of keys, which is valid because
    mixed partials commute.
    """

    def __init__(self, ctx: "GeometryContext", vectors: dict):
        self.ctx = ctx
        self.vectors = vectors
        self._cache = {}

    def _memo(self, kind, keys, fn):
        key = (kind, tuple(sorted(keys)))
        if key not in self._cache:
            self._cache[key] = fn(key[1])
        return self._cache[key]

    def r(self, keys, nfree):
        """``D^{|keys|+nfree} r[.., v_keys]`` on the reduced rows."""
        def build(ks):
            order = len(ks) + nfree
            if order == 0:
                raise ValueError("order-0 map value is not needed")
            if order > len(self.ctx.tensors):
                raise ValueError(f"derivative order {order} not available")
            t = self.ctx.tensors[order - 1]
            return t.contract([self.vectors[k] for k in ks], nfree)[self.ctx.rows]
        return self._memo(("r", nfree), keys, build)

    def g(self, keys):
        def build(ks):
            s = len(ks)
            acc = KahanSum((self.ctx.n, self.ctx.n))
            for mask in _masks(s):
                a = self.r(_subset(ks, mask), 1)
                b = self.r(_subset(ks, ~mask), 1)
                acc.add(a.T @ b)
            return acc.value
        return self._memo("g", keys, build)

    def ginv(self, keys):
        def build(ks):
            if not ks:
                return self.ctx.ginv
            s = len(ks)
            acc = KahanSum((self.ctx.n, self.ctx.n))
            for mask in _masks(s):
                if mask == 0:
                    continue
                acc.add(self.g(_subset(ks, mask)) @ self.ginv(_subset(ks, ~mask)))
            return -self.ctx.ginv @ acc.value
        return self._memo("ginv", keys, build)

    def A(self, keys):
        """Derivatives of ``A_ijk = <r_ij, r_k>``."""
        def build(ks):
            s = len(ks)
            n = self.ctx.n
            acc = KahanSum((n, n, n))
            for mask in _masks(s):
                r2 = self.r(_subset(ks, mask), 2)
                r1 = self.r(_subset(ks, ~mask), 1)
                acc.add(np.einsum("rij,rk->ijk", r2, r1))
            return acc.value
        return self._memo("A", keys, build)

    def gamma(self, keys):
        """Derivatives of ``Gamma^m_ij``, shape ``(m, i, j)``."""
        def build(ks):
            s = len(ks)
            n = self.ctx.n
            acc = KahanSum((n, n, n))
            for mask in _masks(s):
                acc.add(np.einsum("mk,ijk->mij", self.ginv(_subset(ks, mask)),
                                  self.A(_subset(ks, ~mask))))
            return acc.value
        return self._memo("gamma", keys, build)


@dataclass(frozen=True, eq=False)
class GeometryContext:
    """Riemannian data at the base point.

    ``dginv[m, n, k]`` and ``dgamma[m, i, j, k]`` hold the first spatial
    derivatives (index ``k`` is the differentiation direction). Higher ones
    are produced on demand as contractions with direction vectors through
    :meth:`christoffel_derivative`, which keeps memory at ``O(n^3)`` per call
    instead of ``O(n^{3+s})``.
    """

    tensors: tuple
    rows: np.ndarray
    x0: np.ndarray
    J: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    gamma: np.ndarray
    dginv: np.ndarray
    dgamma: np.ndarray
    s_max: int

    @property
    def n(self) -> int:
        return self.J.shape[1]

    def directional(self, vectors: dict) -> _Directional:
        return _Directional(self, vectors)

    def christoffel_derivative(self, directions) -> np.ndarray:
        """``D^s Gamma[v_1, ..., v_s]`` with shape ``(m, i, j)``."""
        if len(directions) > self.s_max:
            raise ValueError(f"spatial order {len(directions)} exceeds s_max={self.s_max}")
        d = self.directional(dict(enumerate(directions)))
        return d.gamma(tuple(range(len(directions))))

    def inverse_metric_derivative(self, directions) -> np.ndarray:
        d = self.directional(dict(enumerate(directions)))
        return d.ginv(tuple(range(len(directions))))


def build_geometry(tensors, s_max: int, x0=None) -> GeometryContext:
    """Metric, inverse, Christoffel symbols and first derivatives.

    ``tensors`` are the derivative tensors of orders ``1..s_max+2`` of the
    full map; only the reduced rows enter the metric.
    """
    tensors = tuple(tensors)
    if len(tensors) < s_max + 2:
        raise ValueError(f"need derivative tensors up to order {s_max + 2}")
    terms = tensors[0].terms
    m = terms.N - 1
    rows = np.concatenate([np.arange(m), m + np.arange(terms.n_pq)])
    J = tensors[0].dense()[rows]
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1.0):
        raise SingularGeometryError(f"reduced Jacobian is singular (sigma_min={sv[-1]:.3g})")
    g = J.T @ J
    ginv = np.linalg.inv(g)
    r2 = tensors[1].dense()[rows]
    A = np.einsum("rij,rk->ijk", r2, J)
    gamma = np.einsum("mk,ijk->mij", ginv, A)
    # first derivative of the inverse metric from the Christoffel symbols
    dginv = -np.einsum("im,nik->mnk", ginv, gamma) - np.einsum("in,mik->mnk", ginv, gamma)
    r3 = tensors[2].dense()[rows] if s_max >= 1 else np.zeros(r2.shape + (J.shape[1],))
    # product rule on Gamma^m_ij = <r_ij, r_n> g^{mn}
    dgamma = (
        np.einsum("rijk,rn,mn->mijk", r3, J, ginv)
        + np.einsum("rij,rnk,mn->mijk", r2, r2, ginv)
        + np.einsum("ijn,mnk->mijk", A, dginv)
    )
    if x0 is None:
        x0 = np.zeros(J.shape[1])
    return GeometryContext(tensors=tensors, rows=rows, x0=np.asarray(x0, dtype=float), J=J, g=g,
                           ginv=ginv, gamma=gamma, dginv=dginv, dgamma=dgamma, s_max=s_max)


@dataclass(frozen=True, eq=False)
class GeodesicJet:
    """Taylor coefficients ``coeffs[k]`` of ``x(lam)`` (``coeffs[0] = x0``)."""

    x0: np.ndarray
    u: np.ndarray
    coeffs: np.ndarray

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def xdot(self) -> np.ndarray:
        return self.coeffs[1]

    def to_json(self) -> str:
        return json.dumps({"order": self.order, "direction": self.u.tolist(),
                           "x0": self.x0.tolist(), "coefficients": self.coeffs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GeodesicJet":
        d = json.loads(text)
        return cls(x0=np.array(d["x0"]), u=np.array(d["direction"]),
                   coeffs=np.array(d["coefficients"]))


def _check_direction(u, n):
    u = np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise ValueError(f"direction must have length {n}")
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    return u


def geodesic_jet(ctx: GeometryContext, u, K: int = 6) -> GeodesicJet:
    """Taylor jet of the geodesic through ``x0`` with initial image velocity ``u``."""
    if K < 2:
        raise ValueError("K must be >= 2")
    if ctx.s_max < K - 2:
        raise ValueError(f"order {K} needs s_max >= {K - 2} (context has {ctx.s_max})")
    n = ctx.n
    u = _check_direction(u, n)
    coeffs = np.zeros((K + 1, n))
    coeffs[0] = ctx.x0
    coeffs[1] = np.linalg.solve(ctx.J, u)
    d = ctx.directional({k: coeffs[k] for k in range(1, K + 1)})
    gamma_jet = []
    for p in range(K - 1):
        if p == 0:
            gamma_jet.append(ctx.gamma)
        else:
            acc = KahanSum((n, n, n))
            for parts in partitions(p):
                acc.add(partition_weight(parts) * d.gamma(parts))
            gamma_jet.append(acc.value)
        xd = [(b + 1) * coeffs[b + 1] for b in range(p + 1)]
        acc = KahanSum(n)
        for a in range(p + 1):
            for b in range(p + 1 - a):
                c = p - a - b
                acc.add(np.einsum("mij,i,j->m", gamma_jet[a], xd[b], xd[c]))
        coeffs[p + 2] = -acc.value / ((p + 2) * (p + 1))
        # the directional cache holds vectors by reference; refresh new entry
        d.vectors[p + 2] = coeffs[p + 2]
    return GeodesicJet(x0=ctx.x0.copy(), u=u, coeffs=coeffs)


def _reduced_rows(tensor):
    m = tensor.terms.N - 1
    return np.concatenate([np.arange(m), m + np.arange(tensor.terms.n_pq)])


def compose_map_jet(tensors, coeffs, rows=None) -> np.ndarray:
    """Taylor coefficients of ``r(x(lam)) - r(x0)`` given the jet of ``x``.

    Row 0 of the result is zero; row ``k`` uses tensors up to order ``k``.
    """
    K = coeffs.shape[0] - 1
    if rows is None:
        rows = _reduced_rows(tensors[0])
    out = np.zeros((K + 1, len(rows)))
    for k in range(1, K + 1):
        acc = KahanSum(len(rows))
        for parts in partitions(k):
            if len(parts) > len(tensors):
                raise ValueError(f"order {len(parts)} tensor not available")
            val = tensors[len(parts) - 1].contract([coeffs[q] for q in parts], 0)[rows]
            acc.add(partition_weight(parts) * val)
        out[k] = acc.value
    return out


def series_inversion_jet(J, tensors, u, K: int = 6, x0=None) -> GeodesicJet:
    """Jet of ``x(lam)`` solving ``r(x(lam)) = y0 + lam u`` order by order."""
    J = np.asarray(J, dtype=float)
    n = J.shape[1]
    u = _check_direction(u, n)
    if len(tensors) < K:
        raise ValueError(f"need derivative tensors up to order {K}")
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1.0):
        raise SingularGeometryError("Jacobian is singular")
    rows = _reduced_rows(tensors[0])
    coeffs = np.zeros((K + 1, n))
    coeffs[0] = np.zeros(n) if x0 is None else x0
    coeffs[1] = np.linalg.solve(J, u)
    for k in range(2, K + 1):
        acc = KahanSum(len(rows))
        for parts in partitions(k):
            if len(parts) < 2:
                continue
            val = tensors[len(parts) - 1].contract([coeffs[q] for q in parts], 0)[rows]
            acc.add(partition_weight(parts) * val)
        coeffs[k] = -np.linalg.solve(J, acc.value)
    return GeodesicJet(x0=coeffs[0].copy(), u=u, coeffs=coeffs)


def speed_jet(ctx: GeometryContext, jet: GeodesicJet) -> np.ndarray:
    """Curve jet of ``g(x(lam))[x', x']`` (unit speed means ``[1, 0, 0, ...]``)."""
    K = jet.order
    n = ctx.n
    d = ctx.directional({k: jet.coeffs[k] for k in range(1, K + 1)})
    out = np.zeros(K - 1)
    g_jet = []
    for p in range(K - 1):
        if p == 0:
            g_jet.append(ctx.g)
        else:
            acc = KahanSum((n, n))
            for parts in partitions(p):
                acc.add(partition_weight(parts) * d.g(parts))
            g_jet.append(acc.value)
        xd = [(b + 1) * jet.coeffs[b + 1] for b in range(p + 1)]
        s = 0.0
        for a in range(p + 1):
            for b in range(p + 1 - a):
                s += xd[b] @ g_jet[a] @ xd[p - a - b]
        out[p] = s
    return out


def evaluate_jet(jet: GeodesicJet, lam):
    """Horner evaluation of the truncated series; ``lam`` may be an array."""
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(lam.shape + jet.coeffs.shape[1:])
    for c in jet.coeffs[::-1]:
        out = out * lam[..., None] + c
    return out
