import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcdde_lab.dynamics import (
    AnnuliSpec,
    PopulationSpec,
    bifurcation_scan,
    detect_period,
    gen_annuli,
    gen_linear_dataset,
    gen_population_dataset,
    map_fa,
    map_iterate,
    population_exact,
    population_model,
    write_annuli_csv,
    write_bifurcation_csv,
)
from pcdde_lab.solver import forward

A_STAR = 3.11670


def test_map_and_solution_examples():
    assert population_exact(2.0, 0.5, 0.5) == pytest.approx(0.824361, abs=1e-6)
    assert population_exact(2.0, 0.5, 1.0) == pytest.approx(1.359141, abs=1e-6)
    assert population_exact(2.0, 0.5, 1.0) == map_fa(2.0, 0.5)
    assert population_exact(3.7, 1.0, 4.3) == 1.0
    a = A_STAR
    assert map_fa(a, 1 / a) == pytest.approx(math.exp(a - 1) / a, rel=1e-14)
    x3 = map_iterate(a, 1 / a, 3)[-1]
    assert abs(x3 - 1 / a) < 1e-3
    assert map_iterate(2.0, 1.0, 3) == [1.0, 1.0, 1.0, 1.0]
    assert population_exact(2.0, 0.0, 7.5) == 0.0
    with pytest.raises(ValueError):
        population_exact(2.0, 0.5, -1.0)


@settings(max_examples=1000)
@given(st.floats(0.5, 4.0), st.floats(0.01, 3.0), st.integers(0, 10))
def test_integer_samples_follow_the_map(a, x0, k):
    want = map_iterate(a, x0, k)[-1]
    assert abs(population_exact(a, x0, float(k)) - want) <= 1e-12 * max(1.0, abs(want))


@settings(max_examples=40)
@given(st.floats(0.5, 2.0), st.floats(0.1, 2.0))
def test_solver_matches_closed_form(a, x0):
    rec = forward(population_model(a, 3, substeps=20), [x0])
    for k in range(4):
        assert abs(rec.grid_states[k, 0, 0] - population_exact(a, x0, float(k))) <= 1e-6 * max(1.0, rec.grid_states[k, 0, 0])
    mid = rec.state_at(1.5)[0, 0]
    assert abs(mid - population_exact(a, x0, 1.5)) <= 1e-6 * max(1.0, mid)


@given(st.floats(0.5, 4.0), st.floats(0.0, 5.0))
def test_map_is_unimodal_with_peak_at_inverse_a(a, x):
    assert map_fa(a, x) <= map_fa(a, 1.0 / a) * (1 + 1e-12)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0, A_STAR, 3.2, 4.0])
def test_map_is_strictly_monotone_on_each_branch(a):
    left = map_fa(a, np.linspace(0.0, 1.0 / a, 2001))
    right = map_fa(a, np.linspace(1.0 / a, 8.0, 4001))
    assert np.all(np.diff(left) > 0) and np.all(np.diff(right) < 0)


@given(st.floats(0.5, 3.0), st.floats(0.1, 2.0), st.floats(0.0, 6.0))
def test_solution_is_continuous_at_grid_points(a, x0, t):
    k = math.floor(t) + 1.0
    left = population_exact(a, x0, k - 1e-9)
    assert abs(left - population_exact(a, x0, k)) <= 1e-6 * max(1.0, left)


def test_period_detection():
    assert detect_period(0.5, 0.3) == 1
    assert detect_period(A_STAR, 0.3) == 3
    assert detect_period(A_STAR, 1 / A_STAR) == 3
    assert detect_period(3.5, 1 / 3.5) is None
    with pytest.raises(ValueError):
        detect_period(2.0, 0.3, tol=0.0)


def test_a_three_point_two_settles_on_a_long_cycle():
    # not chaotic: a stable cycle of length 36, which a loose tolerance folds to 6
    assert detect_period(3.2, 1 / 3.2, burn_in=5000, tol=1e-9) == 36
    assert detect_period(3.2, 0.3) == 6


def test_bifurcation_csv(tmp_path):
    rows = bifurcation_scan([0.5, 3.5], 0.3, burn_in=100, samples=4)
    write_bifurcation_csv(tmp_path / "b.csv", rows)
    lines = list(csv.reader(open(tmp_path / "b.csv")))
    assert lines[0] == ["a", "period", "sample_index", "x"]
    assert len(lines) == 9
    assert lines[1][:3] == ["0.5", "1", "0"] and lines[-1][1] == "none"


def test_population_dataset_layout():
    d = gen_population_dataset(2.0, n_traj=100, seed=4)
    assert d.train.shape == (100, 31) and d.test.shape == (100, 100)
    assert d.train_times[0] == 0.0 and d.train_times[-1] == 3.0
    assert d.test_times[0] == 3.1 and d.test_times[-1] == 13.0
    assert np.all((d.x0 >= 0.1) & (d.x0 <= 2.0))
    assert np.all(d.train > 0) and d.train.max() < 5 and d.test.max() < 5
    np.testing.assert_array_equal(d.train[:, 0], d.x0)
    again = gen_population_dataset(2.0, n_traj=100, seed=4)
    np.testing.assert_array_equal(d.test, again.test)


def test_population_spec():
    spec = PopulationSpec(2.0, [0.5, 1.0], (0.0, 2.0), 0.5)
    np.testing.assert_array_equal(spec.sample_times(), [0, 0.5, 1, 1.5, 2])
    traj = spec.trajectories()
    assert traj.shape == (2, 5) and np.all(traj[1] == 1.0)
    with pytest.raises(ValueError):
        PopulationSpec(0.0)
    with pytest.raises(ValueError):
        PopulationSpec(1.0, [-0.1])


@given(st.integers(0, 2**31 - 1), st.integers(1, 200))
def test_annuli_points_lie_in_their_regions(seed, n):
    spec = AnnuliSpec(n_per_class=n, seed=seed)
    pts, labels = gen_annuli(spec)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert pts.shape == (2 * n, 2)
    assert np.sum(labels == -1) == n and np.sum(labels == 1) == n
    assert np.all(r[labels == -1] <= 1.0 + 1e-12)
    assert np.all((r[labels == 1] >= 2.0 - 1e-12) & (r[labels == 1] <= 3.0 + 1e-12))


def test_annuli_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        AnnuliSpec(r1=2.0, r2=1.0)
    pts, labels = gen_annuli(AnnuliSpec(n_per_class=3))
    write_annuli_csv(tmp_path / "a.csv", pts, labels)
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ["x1", "x2", "label"] and len(rows) == 7
    assert {r[2] for r in rows[1:]} == {"-1", "1"}


def test_linear_dataset():
    x, y = gen_linear_dataset(16.0, [1.0, -0.5])
    np.testing.assert_array_equal(y, [16.0, -8.0])
