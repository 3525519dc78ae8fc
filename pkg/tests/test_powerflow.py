from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfgeodesic.powerflow import (ContinuationConfig, NonConvergenceError, PowerFlowError,
                                  analytic_jacobian, continuation_trace, evaluate_injections,
                                  newton_solve, reduced_jacobian)

# published solution of the 9-bus case (buses 4..9)
NINE_BUS_V = {"4": 1.0258, "5": 1.0127, "6": 1.0324, "7": 1.0159, "8": 1.0258, "9": 0.9956}


def test_flat_start_zero_injections(case9):
    shunt_free = replace(case9, shunts=np.zeros(case9.N),
                         branches=tuple(replace(b, b_charging=0.0) for b in case9.branches))
    p, q = evaluate_injections(shunt_free, np.zeros(9), np.ones(9))
    assert np.max(np.abs(p)) <= 1e-12 and np.max(np.abs(q)) <= 1e-12


def test_two_bus_closed_form(case2):
    # lossless line, x=1: P2 = -V sin(theta) with V = cos(theta) at theta = pi/4
    d = np.array([-np.pi / 4, 0.0])
    v = np.array([np.sqrt(0.5), 1.0])
    p, q = evaluate_injections(case2, d, v)
    assert p[0] == pytest.approx(-0.5, abs=1e-12)
    assert q[0] == pytest.approx(0.0, abs=1e-12)


def test_nine_bus_base(case9, base9):
    for lab, val in NINE_BUS_V.items():
        assert base9.v[case9.index_of(lab)] == pytest.approx(val, abs=5e-5)
    p, q = evaluate_injections(case9, base9.delta, base9.v)
    y = case9.reduced_injections(p, q)
    target = case9.reduced_injections(case9.p_inj, case9.q_inj)
    assert np.max(np.abs(y - target)) <= 1e-8
    assert base9.consistent


def test_jacobian_two_bus_flat(case2):
    J = analytic_jacobian(case2, np.zeros(2), np.ones(2))
    # rows P2, Q2; columns d2, v2
    assert J[0, 0] == pytest.approx(1.0)
    assert J[1, 1] == pytest.approx(1.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobian_matches_finite_differences(case9, base9, seed):
    rng = np.random.default_rng(seed)
    d = base9.delta + rng.uniform(-0.2, 0.2, 9) * (np.arange(9) < 8)
    v = base9.v + rng.uniform(-0.05, 0.05, 9) * (np.arange(9) < 6)
    J = analytic_jacobian(case9, d, v)
    h = 1e-6
    fd = np.zeros_like(J)
    for k in range(case9.n):
        x = case9.reduced_state(d, v)
        cols = []
        for s in (1, -1):
            xs = x.copy()
            xs[k] += s * h
            dd, vv = case9.full_state(xs, d, v)
            p, q = evaluate_injections(case9, dd, vv)
            cols.append(np.concatenate([p[:8], q[:8]]))
        fd[:, k] = (cols[0] - cols[1]) / (2 * h)
    assert np.linalg.norm(J - fd) / np.linalg.norm(J) <= 1e-6


def test_zero_coupling_entry(case9, base9):
    J = analytic_jacobian(case9, base9.delta, base9.v)
    i, j = case9.index_of("5"), case9.index_of("9")  # not adjacent
    assert J[i, j] == 0.0


def test_newton_fixed_point(case9, base9):
    op = newton_solve(case9, base9.injections(case9), base9.delta, base9.v)
    assert op.iterations <= 1


def test_newton_two_bus_high_root(case2, base2):
    op = newton_solve(case2, np.array([-0.49, 0.0]), base2.delta, base2.v)
    # V^4 - V^2 + P^2 = 0 (lossless, x=1, Q=0): high-voltage root
    v_high = np.sqrt((1 + np.sqrt(1 - 4 * 0.49**2)) / 2)
    assert op.v[0] == pytest.approx(v_high, abs=1e-8)


def test_newton_beyond_nose(case2, base2):
    with pytest.raises(PowerFlowError):
        newton_solve(case2, np.array([-0.6, 0.0]), base2.delta, base2.v)


def test_newton_quadratic_tail(case9, base9):
    target = base9.injections(case9).copy()
    target[case9.injection_index("5P")] -= 1.0
    op = newton_solve(case9, target, base9.delta, base9.v)
    h = op.history[-3:]
    assert all(b < a for a, b in zip(h, h[1:]))


def test_two_bus_nose(case2, base2):
    tr = continuation_trace(case2, base2, np.array([-1.0, 0.0]))
    assert tr.boundary_lambda == pytest.approx(0.5, abs=1e-4)
    assert tr.boundary_state[1] == pytest.approx(np.sqrt(0.5), abs=1e-3)
    assert np.all(np.diff(tr.lambdas) > 0)
    assert min(tr.sigmas[:-1]) > 0


def test_trace_residuals(case9, base9):
    u = np.zeros(case9.n)
    u[case9.injection_index("7P")] = -1.0
    tr = continuation_trace(case9, base9, u)
    for lam, x in zip(tr.lambdas, tr.states):
        d, v = case9.full_state(x, tr.delta_ref, tr.v_ref)
        p, q = evaluate_injections(case9, d, v)
        y = case9.reduced_injections(p, q)
        assert np.max(np.abs(y - (tr.y0 + lam * u))) <= 1e-8


def test_opposite_directions_two_boundaries(case9, base9):
    u = np.zeros(case9.n)
    u[case9.injection_index("5P")] = 1.0
    a = continuation_trace(case9, base9, u)
    b = continuation_trace(case9, base9, -u)
    assert a.boundary_lambda > 0 and b.boundary_lambda > 0
    assert not np.allclose(a.boundary_state, b.boundary_state)


def test_sigma_decreasing_near_nose(case2, base2):
    tr = continuation_trace(case2, base2, np.array([-1.0, 0.0]))
    lam = np.asarray(tr.lambdas)
    s = np.asarray(tr.sigmas)
    tail = s[lam >= 0.9 * tr.boundary_lambda]
    assert np.all(np.diff(tail) < 0)


def test_state_at_matches_closed_form(case2, base2):
    tr = continuation_trace(case2, base2, np.array([-1.0, 0.0]))
    op = tr.state_at(case2, 0.3)
    assert op.v[0] == pytest.approx(np.sqrt((1 + np.sqrt(1 - 4 * 0.09)) / 2), abs=1e-10)
    with pytest.raises(NonConvergenceError):
        tr.state_at(case2, 0.6)


def test_direction_must_be_unit(case2, base2):
    with pytest.raises(ValueError):
        continuation_trace(case2, base2, np.array([-2.0, 0.0]), ContinuationConfig())


def test_reduced_jacobian_square(case9, base9):
    assert reduced_jacobian(case9, base9.delta, base9.v).shape == (14, 14)


def test_unbounded_direction_flagged(case2, base2):
    # injecting reactive power raises V without limit: no nose along +Q
    tr = continuation_trace(case2, base2, np.array([0.0, 1.0]), ContinuationConfig(max_lambda=50.0))
    assert not tr.bounded
    assert tr.boundary_lambda == pytest.approx(50.0)
    assert continuation_trace(case2, base2, np.array([-1.0, 0.0])).bounded
