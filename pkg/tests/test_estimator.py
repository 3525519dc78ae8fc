import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfgeodesic.estimator import (RankDeficientError, consistency_score, estimate_jacobian,
                                  model_estimate)
from pfgeodesic.measurements import MeasurementSample, PatchSpec, sample_patch, stack_increments
from pfgeodesic.powerflow import analytic_jacobian


def _rel(est, J):
    return np.linalg.norm(est.jac - J) / np.linalg.norm(J)


def _fixed(case, base, rho):
    return sample_patch(case, base, PatchSpec(radius=rho, count=case.n, mode="fixed"))


def test_linear_map_exact():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 4))
    dX = rng.normal(size=(4, 4))
    est = estimate_jacobian(dX, A @ dX)
    np.testing.assert_allclose(est.jac, A, atol=1e-12)


def test_linear_map_overdetermined():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(6, 4))
    dX = rng.normal(size=(4, 11))
    np.testing.assert_allclose(estimate_jacobian(dX, A @ dX).jac, A, atol=1e-12)


def test_small_radius_accuracy(case9, base9):
    J = analytic_jacobian(case9, base9.delta, base9.v)
    assert _rel(estimate_jacobian(*stack_increments(_fixed(case9, base9, 1e-5))), J) <= 1e-4


def test_first_order_convergence(case9, base9):
    J = analytic_jacobian(case9, base9.delta, base9.v)
    rhos = np.array([1e-2, 1e-3, 1e-4, 1e-5])
    errs = [_rel(estimate_jacobian(*stack_increments(_fixed(case9, base9, r))), J) for r in rhos]
    slope = np.polyfit(np.log10(rhos), np.log10(errs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.2)


def test_proportional_columns_flagged(case9, base9):
    dX, dY = stack_increments(_fixed(case9, base9, 1e-3))
    dX[:, 5] = 2.0 * dX[:, 4]
    with pytest.raises(RankDeficientError) as info:
        estimate_jacobian(dX, dY)
    assert info.value.null_vector.shape == (case9.n,)


def test_duplicate_sample_flagged(case4, base4):
    s = _fixed(case4, base4, 1e-3)
    s[-1] = s[0]
    with pytest.raises(RankDeficientError):
        estimate_jacobian(*stack_increments(s))


def test_too_few_samples(case4, base4):
    with pytest.raises(ValueError):
        estimate_jacobian(*stack_increments(_fixed(case4, base4, 1e-3)[:3]))


def test_angle_shift_bit_exact(case9, base9):
    # a common angle offset on absolute readings cancels in the increments
    samples = sample_patch(case9, base9, PatchSpec(radius=0.01, count=case9.n, seed=5))
    shift = 0.7318
    m = case9.N - 1
    shifted = []
    for s in samples:
        absolute = base9.delta[:m] + s.d_delta + shift
        shifted.append(MeasurementSample(absolute - (base9.delta[:m] + shift), s.d_v, s.d_p, s.d_q))
    a = estimate_jacobian(*stack_increments(samples))
    b = estimate_jacobian(*stack_increments(shifted))
    inc_a, inc_b = stack_increments(samples)[0], stack_increments(shifted)[0]
    np.testing.assert_allclose(inc_a, inc_b, rtol=0, atol=1e-15)
    assert np.max(np.abs(a.jac - b.jac)) <= 1e-9 * np.max(np.abs(a.jac))


def test_identical_increments_bit_exact(case9, base9):
    samples = sample_patch(case9, base9, PatchSpec(radius=0.01, count=case9.n, seed=5))
    copy = [MeasurementSample(s.d_delta.copy(), s.d_v.copy(), s.d_p.copy(), s.d_q.copy())
            for s in samples]
    assert np.array_equal(estimate_jacobian(*stack_increments(samples)).jac,
                          estimate_jacobian(*stack_increments(copy)).jac)


@settings(max_examples=10, deadline=None)
@given(st.permutations(list(range(14))))
def test_sample_reordering(case9, base9, perm):
    samples = sample_patch(case9, base9, PatchSpec(radius=0.01, count=14, seed=8))
    a = estimate_jacobian(*stack_increments(samples)).jac
    b = estimate_jacobian(*stack_increments([samples[k] for k in perm])).jac
    assert np.linalg.norm(a - b) <= 1e-13 * np.linalg.norm(a)


def test_model_estimate_is_analytic(case9, base9):
    est = model_estimate(case9, base9)
    assert np.array_equal(est.jac, analytic_jacobian(case9, base9.delta, base9.v))
    assert est.reduced(case9).shape == (14, 14)


def test_consistency_score(case9, base9):
    m = model_estimate(case9, base9)
    assert consistency_score(m, base9.p, base9.q, base9.v, case9.n_pq) <= 1e-12
    small = estimate_jacobian(*stack_increments(_fixed(case9, base9, 1e-4)))
    big = estimate_jacobian(*stack_increments(_fixed(case9, base9, 0.3)))
    s_small = consistency_score(small, base9.p, base9.q, base9.v, case9.n_pq)
    s_big = consistency_score(big, base9.p, base9.q, base9.v, case9.n_pq)
    assert s_small < s_big


def test_csv(tmp_path, case4, base4):
    est = model_estimate(case4, base4)
    est.to_csv(tmp_path / "j.csv", case4)
    rows = (tmp_path / "j.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 2 * (case4.N - 1)
