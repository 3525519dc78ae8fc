"""Network cases and bus admittance assembly.

Buses are stored in canonical order: PQ buses first, then PV buses, then the
single slack bus last. Every other module relies on that layout for its index
arithmetic, so the reordering happens once, here, at load time.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

BUS_TYPES = ("pq", "pv", "slack")


class CaseError(ValueError):
    """Raised when a case document cannot be turned into a valid network."""


@dataclass(frozen=True)
class Branch:
    """Series element between two canonical bus indices (0-based).

    ``tap`` is the complex off-nominal ratio ``t = |t| e^{j shift}`` on the
    from side; ``b_charging`` is the total line charging susceptance.
    """

    f: int
    t: int
    r: float
    x: float
    b_charging: float = 0.0
    tap: complex = 1.0 + 0.0j

    @property
    def y_series(self) -> complex:
        z = complex(self.r, self.x)
        if z == 0:
            raise CaseError(f"zero-impedance branch between buses {self.f} and {self.t}")
        return 1.0 / z


@dataclass(frozen=True)
class AdmittanceMatrices:
    G: np.ndarray
    B: np.ndarray

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


@dataclass(frozen=True, eq=False)
class NetworkCase:
    """A validated network in canonical bus order.

    Attributes
    ----------
    labels : tuple
        Original bus identifiers, in canonical order.
    n_pq, n_pv : int
        Number of PQ and PV buses. The slack bus is always the last one.
    p_inj, q_inj : ndarray
        Scheduled injections in p.u. (generation minus load).
    v_set : ndarray
        Voltage set-points (PV, slack) or initial magnitudes (PQ).
    """

    labels: tuple
    n_pq: int
    n_pv: int
    branches: tuple
    shunts: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    v_set: np.ndarray
    slack_angle: float = 0.0
    base_mva: float = 100.0
    name: str = ""
    # free-form provenance, not used numerically
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        if n != self.n_pq + self.n_pv + 1:
            raise CaseError("bus count must equal n_pq + n_pv + 1")
        for arr in (self.shunts, self.p_inj, self.q_inj, self.v_set):
            if len(arr) != n:
                raise CaseError("per-bus arrays must have one entry per bus")
        if not self.branches:
            raise CaseError("case has no branches")
        for br in self.branches:
            if not (0 <= br.f < n and 0 <= br.t < n) or br.f == br.t:
                raise CaseError(f"branch ({br.f}, {br.t}) references an invalid bus")
        rows = [br.f for br in self.branches]
        cols = [br.t for br in self.branches]
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, _ = connected_components(graph, directed=False)
        if ncomp != 1:
            raise CaseError("branch graph is disconnected")

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def n(self) -> int:
        """Reduced coordinate dimension ``2 N_l + N_g``."""
        return 2 * self.n_pq + self.n_pv

    @property
    def slack(self) -> int:
        return self.N - 1

    @property
    def bus_types(self) -> tuple:
        return ("pq",) * self.n_pq + ("pv",) * self.n_pv + ("slack",)

    @property
    def reduced_rows(self) -> np.ndarray:
        """Row indices of the reduced map inside the full (P, Q) row layout."""
        m = self.N - 1
        return np.concatenate([np.arange(m), m + np.arange(self.n_pq)])

    def index_of(self, label) -> int:
        for k, lab in enumerate(self.labels):
            if str(lab) == str(label):
                return k
        raise KeyError(f"no bus labelled {label!r}")

    def reduced_state(self, delta, v) -> np.ndarray:
        return np.concatenate([np.asarray(delta)[: self.N - 1], np.asarray(v)[: self.n_pq]])

    def full_state(self, x, delta_ref, v_ref):
        """Expand a reduced state; fixed entries come from ``delta_ref``/``v_ref``."""
        delta = np.array(delta_ref, dtype=float, copy=True)
        v = np.array(v_ref, dtype=float, copy=True)
        delta[: self.N - 1] = x[: self.N - 1]
        v[: self.n_pq] = x[self.N - 1 :]
        return delta, v

    def reduced_injections(self, p, q) -> np.ndarray:
        return np.concatenate([np.asarray(p)[: self.N - 1], np.asarray(q)[: self.n_pq]])

    def state_labels(self) -> list:
        return [f"d{lab}" for lab in self.labels[:-1]] + [f"v{lab}" for lab in self.labels[: self.n_pq]]

    def injection_labels(self) -> list:
        return [f"p{lab}" for lab in self.labels[:-1]] + [f"q{lab}" for lab in self.labels[: self.n_pq]]

    def full_row_labels(self) -> list:
        return [f"p{lab}" for lab in self.labels[:-1]] + [f"q{lab}" for lab in self.labels[:-1]]

    def injection_index(self, spec: str) -> int:
        """Map ``"5P"``/``"7q"``/``"5"`` to a reduced injection coordinate."""
        m = re.fullmatch(r"\s*([^:]+?)([PpQq]?)\s*", spec)
        if m is None:
            raise ValueError(f"bad injection coordinate {spec!r}")
        bus, qty = m.group(1), (m.group(2) or "p").lower()
        k = self.index_of(bus)
        if k == self.slack:
            raise ValueError("slack injections are not coordinates of the power flow map")
        if qty == "p":
            return k
        if k >= self.n_pq:
            raise ValueError(f"bus {bus} is not a PQ bus, its Q is not a coordinate")
        return self.N - 1 + k

    @cached_property
    def admittance(self) -> AdmittanceMatrices:
        return build_admittance(self)


def build_admittance(case: NetworkCase) -> AdmittanceMatrices:
    """Assemble G and B with the pi-model and complex taps.

    Contributions are accumulated in a canonical order so that permuting the
    branch list gives bit-identical matrices.
    """
    N = case.N
    contributions = []
    for br in case.branches:
        ys = br.y_series
        t = complex(br.tap)
        ytt = ys + 0.5j * br.b_charging
        contributions.append((br.f, br.f, ytt / abs(t) ** 2))
        contributions.append((br.t, br.t, ytt))
        contributions.append((br.f, br.t, -ys / t.conjugate()))
        contributions.append((br.t, br.f, -ys / t))
    contributions.sort(key=lambda c: (c[0], c[1], c[2].real, c[2].imag))
    Y = np.zeros((N, N), dtype=complex)
    for i, j, y in contributions:
        Y[i, j] += y
    Y[np.diag_indices(N)] += case.shunts
    return AdmittanceMatrices(G=Y.real.copy(), B=Y.imag.copy())


def _canonical(records, branches, base_mva, name, meta):
    """records: list of dicts with id, type, v_set, p, q, shunt, angle."""
    ids = [r["id"] for r in records]
    if len(set(map(str, ids))) != len(ids):
        raise CaseError("duplicate bus id")
    for r in records:
        if r["type"] not in BUS_TYPES:
            raise CaseError(f"bus {r['id']}: unknown type {r['type']!r}")
    slacks = [r for r in records if r["type"] == "slack"]
    if not slacks:
        raise CaseError("missing slack bus")
    if len(slacks) > 1:
        raise CaseError("more than one slack bus")
    order = [r for t in BUS_TYPES for r in records if r["type"] == t]
    pos = {str(r["id"]): k for k, r in enumerate(order)}
    canon = []
    for b in branches:
        try:
            f, t = pos[str(b["from"])], pos[str(b["to"])]
        except KeyError as exc:
            raise CaseError(f"branch references unknown bus {exc.args[0]}") from None
        tap = b.get("tap") or 1.0
        shift = b.get("phase_shift", 0.0) or 0.0
        canon.append(
            Branch(f, t, float(b.get("r", 0.0)), float(b.get("x", 0.0)),
                   float(b.get("b_charging", 0.0)), complex(tap * np.exp(1j * shift)))
        )
    return NetworkCase(
        labels=tuple(r["id"] for r in order),
        n_pq=sum(r["type"] == "pq" for r in order),
        n_pv=sum(r["type"] == "pv" for r in order),
        branches=tuple(canon),
        shunts=np.array([r.get("shunt", 0j) for r in order], dtype=complex),
        p_inj=np.array([r.get("p", 0.0) for r in order], dtype=float),
        q_inj=np.array([r.get("q", 0.0) for r in order], dtype=float),
        v_set=np.array([r.get("v_set", 1.0) for r in order], dtype=float),
        slack_angle=float(slacks[0].get("angle", 0.0)),
        base_mva=float(base_mva),
        name=name,
        meta=meta,
    )


def case_from_json(doc: dict) -> NetworkCase:
    try:
        buses = doc["buses"]
        branches = doc["branches"]
    except (KeyError, TypeError):
        raise CaseError("JSON case needs 'buses' and 'branches'") from None
    records = []
    for b in buses:
        records.append(
            dict(
                id=b["id"],
                type=str(b["type"]).lower(),
                v_set=float(b.get("v_set", 1.0)),
                p=float(b.get("p_inj", 0.0)),
                q=float(b.get("q_inj", 0.0)),
                shunt=complex(b.get("shunt_g", 0.0), b.get("shunt_b", 0.0)),
                angle=float(b.get("angle", 0.0)),
            )
        )
    return _canonical(records, branches, doc.get("base_mva", 100.0),
                      doc.get("name", ""), {"format": "json"})


def _matrix_block(text: str, key: str):
    m = re.search(rf"mpc\.{key}\s*=\s*\[(.*?)\]\s*;", text, re.S)
    if m is None:
        return None
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%", 1)[0].strip().rstrip(";").strip()
        if not line:
            continue
        for chunk in line.split(";"):
            if chunk.strip():
                rows.append([float(tok) for tok in chunk.replace(",", " ").split()])
    return rows


def case_from_matpower(text: str) -> NetworkCase:
    """Import the bus/gen/branch subset of a MATPOWER-style case file."""
    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)", text)
    base = float(m.group(1)) if m else 100.0
    bus = _matrix_block(text, "bus")
    branch = _matrix_block(text, "branch")
    gen = _matrix_block(text, "gen") or []
    if bus is None or branch is None:
        raise CaseError("case text must contain mpc.bus and mpc.branch tables")
    try:
        types = {1: "pq", 2: "pv", 3: "slack"}
        records = {}
        for row in bus:
            bid = int(row[0])
            if int(row[1]) == 4:
                continue
            if int(row[1]) not in types:
                raise CaseError(f"bus {bid}: unknown type code {row[1]}")
            records[bid] = dict(
                id=bid, type=types[int(row[1])],
                v_set=row[7], p=-row[2] / base, q=-row[3] / base,
                shunt=complex(row[4], row[5]) / base, angle=np.deg2rad(row[8]),
            )
        for row in gen:
            if len(row) > 7 and row[7] <= 0:
                continue
            rec = records[int(row[0])]
            rec["p"] += row[1] / base
            rec["q"] += row[2] / base
            if rec["type"] != "pq":
                rec["v_set"] = row[5]
        branches = []
        for row in branch:
            if len(row) > 10 and row[10] <= 0:
                continue
            branches.append(
                {"from": int(row[0]), "to": int(row[1]), "r": row[2], "x": row[3],
                 "b_charging": row[4],
                 "tap": row[8] if len(row) > 8 and row[8] != 0 else 1.0,
                 "phase_shift": np.deg2rad(row[9]) if len(row) > 9 else 0.0}
            )
    except (IndexError, KeyError, ValueError) as exc:
        if isinstance(exc, CaseError):
            raise
        raise CaseError(f"malformed case table: {exc}") from None
    return _canonical(list(records.values()), branches, base, "", {"format": "matpower"})


def load_case(source) -> NetworkCase:
    """Load a case from a path, a document string, or a bundled name.

    Bundled names: ``case2``, ``case4``, ``case9``.
    """
    if isinstance(source, dict):
        return case_from_json(source)
    text = None
    name = ""
    src = str(source)
    bundled = {"case2": "case2.json", "case4": "case4.json", "case9": "case9.m"}
    if src in bundled:
        name = src
        text = resources.files("pfgeodesic.cases").joinpath(bundled[src]).read_text()
    elif "\n" not in src and Path(src).exists():
        name = Path(src).stem
        text = Path(src).read_text()
    else:
        text = src
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CaseError(f"invalid JSON case: {exc}") from None
        case = case_from_json(doc)
    elif "mpc." in text:
        case = case_from_matpower(text)
    else:
        raise CaseError("unrecognised case format")
    if name and not case.name:
        object.__setattr__(case, "name", name)
    return case


def case_to_json(case: NetworkCase) -> dict:
    """Native JSON document for ``case`` (canonical order, p.u./radians)."""
    buses = []
    for k, lab in enumerate(case.labels):
        buses.append(
            {"id": lab, "type": case.bus_types[k], "v_set": float(case.v_set[k]),
             "p_inj": float(case.p_inj[k]), "q_inj": float(case.q_inj[k]),
             "shunt_g": float(case.shunts[k].real), "shunt_b": float(case.shunts[k].imag)}
        )
    buses[-1]["angle"] = case.slack_angle
    branches = [
        {"from": case.labels[b.f], "to": case.labels[b.t], "r": b.r, "x": b.x,
         "b_charging": b.b_charging, "tap": abs(b.tap), "phase_shift": float(np.angle(b.tap))}
        for b in case.branches
    ]
    return {"name": case.name, "base_mva": case.base_mva, "buses": buses, "branches": branches}
