"""Higher-order derivatives of the full power-flow map from first-order data.

Every line (and bus shunt) contributes a complex flow term

    C_ij = H_ij + i K_ij = V_i V_j conj(Y_ij) exp(i (delta_i - delta_j)),

with ``P_i = sum_j Re C_ij`` and ``Q_i = sum_j Im C_ij``. An angle derivative
multiplies a term by ``i([m=i] - [m=j])``; a voltage derivative multiplies it
by ``([m=i] + [m=j]) / V_m`` and terminates once the term's degree in that
voltage is used up. Because of that, the terms at one operating point are
enough to reproduce derivatives of any order, and the terms themselves can be
read off the angle columns of the Jacobian plus the base (P, Q).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from math import factorial

import numpy as np

from .network import NetworkCase

MAX_ORDER = 8


@dataclass(frozen=True, eq=False)
class FlowTermSet:
    """Flow terms at the base point. ``C`` has shape ``(N-1, N)``."""

    C: np.ndarray
    v: np.ndarray
    n_pq: int
    provenance: str = "model"

    @property
    def N(self) -> int:
        return self.C.shape[1]

    @property
    def n(self) -> int:
        return self.N - 1 + self.n_pq


def recover_flow_terms(jac, p, q, v, n_pq: int, provenance: str = "data") -> FlowTermSet:
    """Recover the flow terms from the angle columns of a full Jacobian.

    ``jac`` has rows ``P_1..P_{N-1}, Q_1..Q_{N-1}`` and at least the ``N-1``
    angle columns; ``p``, ``q`` and ``v`` are base values at all ``N`` buses
    (only the first ``N-1`` injections are used).
    """
    jac = np.asarray(jac, dtype=float)
    v = np.asarray(v, dtype=float)
    N = len(v)
    m = N - 1
    if jac.shape[0] != 2 * m or jac.shape[1] < m:
        raise ValueError("Jacobian must cover rows P_1..P_{N-1}, Q_1..Q_{N-1} and all angle columns")
    dp_dd = jac[:m, :m]
    dq_dd = jac[m:, :m]
    p = np.asarray(p, dtype=float)[:m]
    q = np.asarray(q, dtype=float)[:m]
    H = np.zeros((m, N))
    K = np.zeros((m, N))
    H[:, :m] = -dq_dd
    K[:, :m] = dp_dd
    idx = np.arange(m)
    H[idx, idx] = p - np.diag(dq_dd)
    K[idx, idx] = q + np.diag(dp_dd)
    H[:, m] = p - H[:, :m].sum(axis=1)
    K[:, m] = q - K[:, :m].sum(axis=1)
    return FlowTermSet(C=H + 1j * K, v=v.copy(), n_pq=n_pq, provenance=provenance)


def model_flow_terms(case: NetworkCase, delta, v) -> FlowTermSet:
    """Terms evaluated directly from G, B (validation oracle)."""
    Y = case.admittance.Y
    m = case.N - 1
    d = np.asarray(delta)
    vv = np.asarray(v)
    C = (vv[:m, None] * vv[None, :]) * np.conj(Y[:m, :]) * np.exp(1j * (d[:m, None] - d[None, :]))
    return FlowTermSet(C=C, v=vv.copy(), n_pq=case.n_pq, provenance="model")


def _falling(a: int, c: int) -> int:
    return 0 if c > a else factorial(a) // factorial(a - c)


class DerivativeTensor:
    """k-th order derivatives of the full map at the base point.

    Storage is per flow term: each term depends on at most four state
    variables (``delta_i, delta_j, V_i, V_j``), so its derivative is a small
    local tensor of shape ``(4,) * k``. Row ``P_i``/``Q_i`` entries are real /
    imaginary parts of the sum of local tensors over partners ``j``. Entries
    vanish unless every index refers to bus ``i`` or one common partner.
    """

    def __init__(self, terms: FlowTermSet, order: int):
        if order < 1:
            raise ValueError("order must be >= 1")
        if order > MAX_ORDER:
            raise ValueError(f"order {order} exceeds the configured maximum {MAX_ORDER}")
        if np.any(terms.v <= 0):
            raise ValueError("voltages must be positive")
        self.terms = terms
        self.order = order
        N, m, npq = terms.N, terms.N - 1, terms.n_pq
        self.n = terms.n
        self.rows = 2 * m
        rows, gvars, coef, expo, scale = [], [], [], [], []
        for i in range(m):
            for j in range(N):
                c = terms.C[i, j]
                if c == 0:
                    continue
                # local variables: delta_i, delta_j, V_i, V_j ; -1 marks a fixed one
                if i == j:
                    gv = [i, -1, m + i if i < npq else -1, -1]
                    ex, sc = (2, 0), 0.0
                else:
                    gv = [i, j if j < m else -1, m + i if i < npq else -1,
                          m + j if j < npq else -1]
                    ex, sc = (1, 1), 1.0
                rows.append(i)
                gvars.append(gv)
                coef.append(c)
                expo.append(ex)
                scale.append(sc)
        self._row = np.array(rows, dtype=int)
        self._gvar = np.array(gvars, dtype=int).reshape(-1, 4)
        self._coef = np.array(coef, dtype=complex)
        self._local = self._local_tensors(np.array(expo).reshape(-1, 2), np.array(scale))

    def _local_tensors(self, expo, scale):
        k = self.order
        v = self.terms.v
        m = self.terms.N - 1
        # per-entry multiplicity of each local variable
        grid = np.indices((4,) * k).reshape(k, -1)
        counts = np.stack([(grid == a).sum(axis=0) for a in range(4)])
        ff = np.array([[_falling(a, c) for c in range(k + 1)] for a in range(3)], dtype=float)
        jv = self._gvar[:, 3]
        vi = v[self._row]
        vj = np.where(jv >= 0, v[np.clip(jv - m, 0, None)], 1.0)
        s = scale[:, None]
        ang = np.power(1j * s, counts[0]) * np.power(-1j * s, counts[1])
        fv = (ff[expo[:, :1], counts[2]] / vi[:, None] ** counts[2]
              * ff[expo[:, 1:], counts[3]] / vj[:, None] ** counts[3])
        local = (ang * fv) * self._coef[:, None]
        return local.reshape((-1,) + (4,) * k)

    def _localize(self, vec):
        vec = np.asarray(vec, dtype=float)
        padded = np.append(vec, 0.0)
        return padded[self._gvar]  # -1 picks the trailing zero

    def contract(self, vectors, nfree: int = 0) -> np.ndarray:
        """Contract ``order - nfree`` directions into the tensor.

        Returns an array of shape ``(rows,) + (n,) * nfree``.
        """
        if len(vectors) != self.order - nfree:
            raise ValueError("need order - nfree vectors")
        t = self._local
        for vec in vectors:
            loc = self._localize(vec)
            t = np.einsum("p...a,pa->p...", t, loc)
        m = self.terms.N - 1
        shape = (m,) + (self.n,) * nfree
        acc = np.zeros(shape, dtype=complex)
        if nfree == 0:
            np.add.at(acc, self._row, t)
        else:
            g = self._gvar
            for combo in itertools.product(range(4), repeat=nfree):
                cols = g[:, list(combo)]
                ok = np.all(cols >= 0, axis=1)
                idx = (self._row[ok],) + tuple(cols[ok, a] for a in range(nfree))
                np.add.at(acc, idx, t[(ok,) + combo])
        return np.concatenate([acc.real, acc.imag], axis=0)

    def dense(self) -> np.ndarray:
        """Dense array of shape ``(2(N-1),) + (n,) * order``; small systems only."""
        if self.rows * self.n**self.order > 5e7:
            raise MemoryError("dense tensor too large; use contract() or entry()")
        return self.contract([], nfree=self.order) if self.order else None

    def entry(self, row: int, indices) -> float:
        """Single entry ``d^k y_row / dx_{i1} ... dx_{ik}``."""
        if len(indices) != self.order:
            raise ValueError("wrong number of indices")
        m = self.terms.N - 1
        bus = row % m
        total = 0j
        for p in np.nonzero(self._row == bus)[0]:
            loc = []
            for gi in indices:
                hits = np.nonzero(self._gvar[p] == gi)[0]
                if len(hits) == 0:
                    break
                loc.append(hits[0])
            else:
                total += self._local[p][tuple(loc)]
        return float(total.real if row < m else total.imag)

    def nonzeros(self, tol: float = 0.0) -> dict:
        """Sparse listing ``{(row, sorted indices): value}`` of structural entries."""
        out = {}
        m = self.terms.N - 1
        for p in range(len(self._coef)):
            free = [a for a in range(4) if self._gvar[p, a] >= 0]
            for combo in itertools.combinations_with_replacement(free, self.order):
                val = self._local[p][combo]
                gidx = tuple(sorted(int(self._gvar[p, a]) for a in combo))
                for row, part in ((self._row[p], val.real), (self._row[p] + m, val.imag)):
                    out[(int(row), gidx)] = out.get((int(row), gidx), 0.0) + part
        return {k: v for k, v in out.items() if abs(v) > tol}

    def to_json(self) -> str:
        """Debug dump of the structural nonzeros."""
        items = [{"row": r, "indices": list(ix), "value": val}
                 for (r, ix), val in sorted(self.nonzeros().items())]
        return json.dumps({"order": self.order, "n": self.n, "rows": self.rows,
                           "provenance": self.terms.provenance, "entries": items})


def derivative_tensor(terms: FlowTermSet, k: int) -> DerivativeTensor:
    return DerivativeTensor(terms, k)


def derivative_tensors(terms: FlowTermSet, max_order: int) -> list:
    """Tensors of orders ``1..max_order`` (list index = order - 1)."""
    return [DerivativeTensor(terms, k) for k in range(1, max_order + 1)]


def terms_jacobian(terms: FlowTermSet) -> np.ndarray:
    """First-order tensor as a ``(2(N-1), n)`` matrix."""
    return DerivativeTensor(terms, 1).dense()
