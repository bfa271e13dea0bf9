import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpklab.errors import ArgumentError, ContractViolation, EvaluationError
from fpklab.measures import (
    GridDensity1D,
    MeasureFlow,
    ParticleCloud,
    grid_to_cloud,
    integrate,
    lyapunov_integral,
    read_cloud,
    read_flow,
    subsample,
    write_cloud,
    write_flow,
)


def sq(x):
    return np.sum(x * x, axis=1)


def V(x):
    return 1.0 + sq(x)


# ---------------------------------------------------------------- ParticleCloud


def test_cloud_rejects_bad_weights():
    with pytest.raises(ContractViolation):
        ParticleCloud(np.zeros((2, 1)), [0.5, 0.6])
    with pytest.raises(ContractViolation):
        ParticleCloud(np.zeros((2, 1)), [1.5, -0.5])


def test_cloud_renormalizes_small_drift():
    c = ParticleCloud(np.zeros((2, 1)), [0.5, 0.5 + 1e-11])
    assert abs(c.weights.sum() - 1.0) <= 1e-15


def test_cloud_is_immutable():
    c = ParticleCloud.uniform([[0.0], [1.0]])
    with pytest.raises(ValueError):
        c.points[0, 0] = 3.0


def test_one_dimensional_points_are_columns():
    c = ParticleCloud.uniform([0.0, 1.0, 2.0])
    assert c.dim == 1 and c.size == 3


# ---------------------------------------------------------------- integrate


def test_integrate_dirac_at_origin():
    assert integrate(ParticleCloud.dirac([0.0]), sq) == 0.0


def test_integrate_symmetric_pair():
    assert integrate(ParticleCloud([[-1.0], [1.0]], [0.5, 0.5]), sq) == 1.0


def test_integrate_constant_with_random_weights(rng):
    w = rng.random(5)
    c = ParticleCloud(rng.normal(size=(5, 2)), w / w.sum())
    assert abs(integrate(c, lambda x: np.ones(len(x))) - 1.0) <= 1e-12


def test_integrate_names_bad_point():
    c = ParticleCloud.uniform([[0.0], [2.0]])
    with pytest.raises(EvaluationError, match="2.0"):
        integrate(c, lambda x: np.where(x[:, 0] > 1, np.inf, 0.0))


@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=20),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_integrate_is_linear(xs, a, b):
    c = ParticleCloud.uniform(np.array(xs)[:, None])

    def f(x):
        return np.sin(x[:, 0])

    def g(x):
        return x[:, 0] ** 2

    lhs = integrate(c, lambda x: a * f(x) + b * g(x))
    rhs = a * integrate(c, f) + b * integrate(c, g)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(a) + abs(b)) * 25


# ---------------------------------------------------------------- lyapunov_integral


def test_lyapunov_dirac():
    assert lyapunov_integral(ParticleCloud.dirac([0.0]), V) == 1.0


def test_lyapunov_two_points():
    assert lyapunov_integral(ParticleCloud([[-2.0], [2.0]], [0.5, 0.5]), V) == 5.0


def test_lyapunov_gaussian_sample():
    z = np.random.default_rng(1).standard_normal((100_000, 1))
    assert abs(lyapunov_integral(ParticleCloud.uniform(z), V) - 2.0) <= 0.05


def test_lyapunov_rejects_negative():
    with pytest.raises(ContractViolation):
        lyapunov_integral(ParticleCloud.dirac([0.0]), lambda x: -np.ones(len(x)))


# ---------------------------------------------------------------- subsample


def test_subsample_single_point_in_support(rng):
    c = ParticleCloud.uniform(rng.normal(size=(7, 2)))
    s = subsample(c, 1, seed=3)
    assert s.size == 1
    assert any(np.array_equal(s.points[0], p) for p in c.points)


def test_subsample_dirac():
    s = subsample(ParticleCloud.dirac([1.5, -2.0]), 50, seed=0)
    assert np.all(s.points == np.array([1.5, -2.0]))


def test_subsample_binomial_frequency():
    c = ParticleCloud([[0.0], [1.0]], [0.9, 0.1])
    s = subsample(c, 10_000, seed=11)
    assert abs(np.mean(s.points[:, 0] == 0.0) - 0.9) <= 0.01


def test_subsample_is_reproducible(rng):
    c = ParticleCloud.uniform(rng.normal(size=(30, 1)))
    assert subsample(c, 100, 5) == subsample(c, 100, 5)


def test_subsample_rejects_zero():
    with pytest.raises(ArgumentError):
        subsample(ParticleCloud.dirac([0.0]), 0, 0)


# ---------------------------------------------------------------- grids


def test_grid_uniform_quantile_midpoints():
    g = GridDensity1D(0.0, 1.0, np.ones(10))
    c = grid_to_cloud(g, 2)
    assert np.allclose(c.points[:, 0], [0.25, 0.75], atol=1e-14)
    assert np.allclose(c.weights, 0.5)


def test_grid_hot_cell():
    vals = np.zeros(10)
    vals[3] = 10.0
    g = GridDensity1D(0.0, 1.0, vals)
    c = grid_to_cloud(g, 10)
    assert c.mean()[0] == pytest.approx(g.centers[3], abs=1e-15)
    assert c.weights.max() == pytest.approx(1.0)


def test_grid_normal_quantile_mean():
    g = GridDensity1D.from_function(lambda x: np.exp(-x * x / 2), -8, 8, 1601)
    c = grid_to_cloud(g, 200)
    assert abs(c.mean()[0]) <= 1e-3


def test_grid_cell_center_preserves_mass_and_mean():
    g = GridDensity1D.from_function(lambda x: np.exp(-((x - 0.3) ** 2)) * (1 + 0.5 * np.sin(x)), -6, 6, 300)
    c = grid_to_cloud(g)
    assert abs(c.weights.sum() - g.mass) <= 1e-10
    assert abs(c.mean()[0] - g.mean()) <= 1e-10


def test_grid_unnormalized_rejected():
    with pytest.raises(ContractViolation):
        grid_to_cloud(GridDensity1D(0.0, 1.0, 2 * np.ones(4)))


# ---------------------------------------------------------------- flows and files


def _flow(rng):
    times = np.array([0.0, 0.5, 1.0])
    return MeasureFlow(times, [ParticleCloud.uniform(rng.normal(size=(4, 2))) for _ in times])


def test_flow_invariants(rng):
    with pytest.raises(ContractViolation):
        MeasureFlow([0.1, 1.0], [ParticleCloud.dirac([0.0])] * 2)
    with pytest.raises(ContractViolation):
        MeasureFlow([0.0, 0.0], [ParticleCloud.dirac([0.0])] * 2)
    with pytest.raises(ContractViolation):
        MeasureFlow([0.0, 1.0], [ParticleCloud.dirac([0.0]), ParticleCloud.dirac([0.0, 1.0])])
    f = _flow(rng)
    assert f.horizon == 1.0 and f.nearest_index(0.74) == 1 and f.nearest_index(0.25) == 0


def test_cloud_csv_round_trip(tmp_path, rng):
    w = rng.random(6)
    c = ParticleCloud(rng.normal(size=(6, 3)), w / w.sum())
    write_cloud(c, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "x1,x2,x3,weight"
    back = read_cloud(tmp_path / "c.csv")
    assert np.array_equal(back.points, c.points)
    assert np.allclose(back.weights, c.weights, rtol=0, atol=1e-15)


def test_flow_directory_round_trip(tmp_path, rng):
    f = _flow(rng)
    write_flow(f, tmp_path / "flow")
    assert (tmp_path / "flow" / "times.csv").is_file()
    assert read_flow(tmp_path / "flow") == f
