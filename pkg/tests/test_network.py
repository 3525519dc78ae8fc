import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfgeodesic.network import (CaseError, build_admittance, case_from_json,
                                case_to_json, load_case)


def test_nine_bus_dimensions(case9):
    assert (case9.N, case9.n_pq, case9.n_pv, case9.n) == (9, 6, 2, 14)
    assert case9.bus_types[-1] == "slack"
    assert str(case9.labels[-1]) == "1"


def test_four_bus_dimensions(case4):
    assert (case4.N, case4.n_pq, case4.n_pv, case4.n) == (4, 2, 1, 5)


def test_two_bus_dimensions(case2):
    assert (case2.N, case2.n_pq, case2.n_pv, case2.n) == (2, 1, 0, 2)


def test_two_bus_admittance_by_hand(case2):
    adm = case2.admittance
    np.testing.assert_array_equal(adm.G, np.zeros((2, 2)))
    np.testing.assert_allclose(adm.B, [[-1, 1], [1, -1]], atol=0)


def test_admittance_symmetric(case9):
    adm = case9.admittance
    np.testing.assert_array_equal(adm.G, adm.G.T)
    np.testing.assert_array_equal(adm.B, adm.B.T)


def test_row_sums_equal_shunts(case9):
    # branch-by-branch oracle: each pi section contributes half its charging at both ends
    Y = case9.admittance.Y
    expect = np.array(case9.shunts, dtype=complex)
    for br in case9.branches:
        expect[br.f] += 0.5j * br.b_charging
        expect[br.t] += 0.5j * br.b_charging
    np.testing.assert_allclose(Y.sum(axis=1), expect, atol=1e-12)


def test_shunt_free_rows_vanish(case2):
    assert np.max(np.abs(case2.admittance.Y.sum(axis=1))) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.randoms(use_true_random=False))
def test_branch_order_does_not_change_admittance(case9, rnd):
    branches = list(case9.branches)
    rnd.shuffle(branches)
    shuffled = replace(case9, branches=tuple(branches))
    a, b = build_admittance(case9), build_admittance(shuffled)
    assert np.array_equal(a.G, b.G) and np.array_equal(a.B, b.B)


def _two_bus_doc(**over):
    doc = {"base_mva": 100, "buses": [
        {"id": 1, "type": "slack", "v_set": 1.0, "p_inj": 0, "q_inj": 0},
        {"id": 2, "type": "pq", "v_set": 1.0, "p_inj": 0, "q_inj": 0}],
        "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 1.0}]}
    doc.update(over)
    return doc


def test_empty_branches_rejected():
    with pytest.raises(CaseError):
        case_from_json(_two_bus_doc(branches=[]))


def test_disconnected_rejected():
    doc = _two_bus_doc()
    doc["buses"].append({"id": 3, "type": "pq", "v_set": 1.0, "p_inj": 0, "q_inj": 0})
    with pytest.raises(CaseError):
        case_from_json(doc)


def test_two_slacks_rejected():
    doc = _two_bus_doc()
    doc["buses"][1]["type"] = "slack"
    with pytest.raises(CaseError):
        case_from_json(doc)


def test_zero_impedance_rejected():
    with pytest.raises(CaseError):
        build_admittance(case_from_json(_two_bus_doc(
            branches=[{"from": 1, "to": 2, "r": 0.0, "x": 0.0}])))


def test_json_round_trip(case9):
    again = case_from_json(json.loads(json.dumps(case_to_json(case9))))
    assert again.labels == case9.labels
    np.testing.assert_array_equal(again.admittance.Y, case9.admittance.Y)
    np.testing.assert_array_equal(again.p_inj, case9.p_inj)


def test_canonical_order_from_shuffled_json():
    doc = {"buses": [
        {"id": "s", "type": "slack", "v_set": 1.0},
        {"id": "g", "type": "pv", "v_set": 1.02, "p_inj": 0.5},
        {"id": "a", "type": "pq", "p_inj": -0.3}],
        "branches": [{"from": "s", "to": "a", "x": 0.1}, {"from": "a", "to": "g", "x": 0.2}]}
    case = case_from_json(doc)
    assert case.labels == ("a", "g", "s")
    assert case.bus_types == ("pq", "pv", "slack")


def test_injection_index(case9):
    assert case9.injection_index("5P") == case9.index_of("5")
    assert case9.injection_index("5q") == case9.N - 1 + case9.index_of("5")
    with pytest.raises(ValueError):
        case9.injection_index("2Q")  # PV bus
    with pytest.raises(ValueError):
        case9.injection_index("1P")  # slack


def test_tap_transformer_admittance():
    # off-nominal tap a: Y_ff = y/|a|^2, Y_ft = -y/conj(a), Y_tf = -y/a, Y_tt = y
    doc = _two_bus_doc(branches=[{"from": 2, "to": 1, "r": 0.0, "x": 0.5, "tap": 1.05}])
    case = case_from_json(doc)
    Y = case.admittance.Y
    y = 1 / 0.5j
    i2, i1 = case.index_of("2"), case.index_of("1")
    np.testing.assert_allclose(Y[i2, i2], y / 1.05**2)
    np.testing.assert_allclose(Y[i1, i1], y)
    np.testing.assert_allclose(Y[i2, i1], -y / 1.05)


def test_load_unknown_source():
    with pytest.raises((CaseError, FileNotFoundError, ValueError)):
        load_case("no-such-case")
