import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfgeodesic.measurements import (MeasurementSample, PatchSpec, SamplingError, read_samples_csv,
                                     sample_patch, stack_increments, write_samples_csv)
from pfgeodesic.powerflow import analytic_jacobian


def test_random_patch_box(case9, base9):
    samples = sample_patch(case9, base9, PatchSpec(radius=0.05, count=14, seed=3))
    assert len(samples) == 14
    _, dY = stack_increments(samples)
    reduced = dY[case9.reduced_rows]
    assert np.max(np.abs(reduced)) <= 0.05 + 1e-9


def test_tiny_radius_continuity(case9, base9):
    samples = sample_patch(case9, base9, PatchSpec(radius=1e-8, count=14, seed=1))
    dX, dY = stack_increments(samples)
    assert np.max(np.linalg.norm(dX, axis=0)) <= 1e-6
    J = analytic_jacobian(case9, base9.delta, base9.v)
    assert np.linalg.norm(dY - J @ dX) <= 1e-3 * np.linalg.norm(dY)


def test_fixed_mode_exact_radius(case9, base9):
    rng = np.random.default_rng(2)
    dirs = rng.normal(size=(13, case9.n))
    samples = sample_patch(case9, base9, PatchSpec(radius=0.5, count=13, mode="fixed",
                                                   directions=tuple(map(tuple, dirs))))
    _, dY = stack_increments(samples)
    norms = np.linalg.norm(dY[case9.reduced_rows], axis=0)
    np.testing.assert_allclose(norms, 0.5, atol=1e-9)


def test_fixed_mode_infeasible_radius(case2, base2):
    with pytest.raises(SamplingError):
        sample_patch(case2, base2, PatchSpec(radius=5.0, count=2, mode="fixed"))


def test_random_mode_gives_up(case2, base2):
    with pytest.raises(SamplingError):
        sample_patch(case2, base2, PatchSpec(radius=50.0, count=2, max_redraws=3))


def test_q_rows_cover_pv_buses(case9, base9):
    s = sample_patch(case9, base9, PatchSpec(radius=0.01, count=1))[0]
    assert s.d_q.shape == (case9.N - 1,)
    assert s.d_v.shape == (case9.n_pq,)


def test_one_sample_one_column(case4, base4):
    dX, dY = stack_increments(sample_patch(case4, base4, PatchSpec(radius=0.01, count=1)))
    assert dX.shape == (case4.n, 1) and dY.shape == (2 * (case4.N - 1), 1)


def test_reproducible(case9, base9):
    spec = PatchSpec(radius=0.05, count=14, seed=11)
    a = stack_increments(sample_patch(case9, base9, spec))
    b = stack_increments(sample_patch(case9, base9, spec))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_substreams_are_per_sample(case9, base9):
    # the first k samples do not depend on how many are drawn
    a = sample_patch(case9, base9, PatchSpec(radius=0.05, count=5, seed=4))
    b = sample_patch(case9, base9, PatchSpec(radius=0.05, count=9, seed=4))
    for x, y in zip(a, b[:5]):
        assert np.array_equal(x.d_p, y.d_p)


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-7, 1e-5), st.integers(0, 2**32 - 1))
def test_first_order_dominance(case9, base9, rho, seed):
    samples = sample_patch(case9, base9, PatchSpec(radius=rho, count=3, seed=seed))
    J = analytic_jacobian(case9, base9.delta, base9.v)
    for s in samples:
        dX, dY = stack_increments([s])
        assert np.linalg.norm(dY - J @ dX) <= 10 * rho * np.linalg.norm(dY)


def test_noise_hook(case4, base4):
    clean = sample_patch(case4, base4, PatchSpec(radius=0.01, count=3, seed=0))
    noisy = sample_patch(case4, base4, PatchSpec(radius=0.01, count=3, seed=0, noise_std=1e-4))
    assert not np.array_equal(clean[0].d_p, noisy[0].d_p)


def test_csv_round_trip(tmp_path, case9, base9):
    samples = sample_patch(case9, base9, PatchSpec(radius=0.05, count=4, seed=2))
    write_samples_csv(tmp_path / "s.csv", case9, samples)
    again = read_samples_csv(tmp_path / "s.csv", case9)
    for a, b in zip(samples, again):
        for f in ("d_delta", "d_v", "d_p", "d_q"):
            assert np.array_equal(getattr(a, f), getattr(b, f))


def test_inconsistent_shapes():
    a = MeasurementSample(np.zeros(2), np.zeros(1), np.zeros(2), np.zeros(2))
    b = MeasurementSample(np.zeros(3), np.zeros(1), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        stack_increments([a, b])


def test_bad_spec():
    with pytest.raises(ValueError):
        PatchSpec(radius=0.0, count=3)
    with pytest.raises(ValueError):
        PatchSpec(radius=0.1, count=3, mode="grid")
