import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpklab.dynamics import (
    DiffusionSpec,
    SmoothFunction,
    apply_generator,
    approximate_drift,
    bounded_attraction,
    check_dissipativity,
    check_ellipticity,
    composite_drift,
    convolution_power_drift,
    eval_drift,
    fd_gradient,
    fd_hessian,
    frozen_drift,
    gaussian_bump,
    interaction_drift,
    linear_attraction,
    linear_drift,
    mollifier_rule,
    resolvent,
    separable_kernel,
    shift_to_dissipative,
    squared_norm,
)
from fpklab.errors import ArgumentError, PreconditionError
from fpklab.measures import ParticleCloud


def cubic():
    return frozen_drift(lambda x, t: -x * x * x, lam=0.0, dim=1)


# ---------------------------------------------------------------- diffusion


def test_diffusion_constant_and_ellipticity():
    q = DiffusionSpec.constant([[2.0, 0.5], [0.5, 1.0]])
    assert q.ellipticity == pytest.approx(np.linalg.eigvalsh([[2.0, 0.5], [0.5, 1.0]]).min())
    S = q.sqrt2(None, 0.0)
    assert np.allclose(S @ S.T, 2 * q.matrix, atol=1e-13)
    rep = check_ellipticity(q, samples=500)
    assert rep.passed and rep.max_asymmetry == 0.0
    with pytest.raises(ArgumentError):
        DiffusionSpec.constant([[1.0, 0.3], [0.0, 1.0]])
    with pytest.raises(ArgumentError):
        DiffusionSpec.constant([[1.0, 0.0], [0.0, -1.0]])


# ---------------------------------------------------------------- evaluation


def test_eval_linear():
    b = linear_drift(-np.eye(2))
    assert np.array_equal(eval_drift(b, None, [2.0, 0.0], 0.0), [-2.0, 0.0])


def test_eval_convolution_against_dirac():
    b = convolution_power_drift(0.5, dim=1)
    assert eval_drift(b, ParticleCloud.dirac([0.0]), [4.0], 0.0)[0] == pytest.approx(-2.0, abs=1e-15)


def test_eval_interaction_toward_mean():
    b = interaction_drift(linear_attraction(1.0), dim=1)
    assert eval_drift(b, ParticleCloud.dirac([0.7]), [2.0], 0.0)[0] == pytest.approx(0.7 - 2.0, abs=1e-15)


def test_missing_measure_rejected():
    with pytest.raises(ArgumentError):
        eval_drift(convolution_power_drift(0.5), None, [1.0], 0.0)


def test_mean_reduction_matches_pairwise_sum(rng):
    cloud = ParticleCloud(rng.normal(size=(40, 2)), rng.dirichlet(np.ones(40)))
    x = rng.normal(size=(25, 2))
    fast = interaction_drift(linear_attraction(0.8))
    k = lambda a, b: -0.8 * (a - b)  # noqa: E731
    slow = interaction_drift(k, lam=-0.8)
    assert np.allclose(eval_drift(fast, cloud, x, 0.0), eval_drift(slow, cloud, x, 0.0), atol=1e-13)


def test_separable_and_composite(rng):
    cloud = ParticleCloud.uniform(rng.normal(size=(10, 1)))
    weight = lambda y: 1.0 / (1.0 + np.sum(y * y, axis=-1))  # noqa: E731
    b = interaction_drift(separable_kernel(lambda x: -x, weight), lam=0.0, dim=1)
    x = np.array([[1.5], [-0.5]])
    expected = -x * np.mean(weight(cloud.points))
    assert np.allclose(eval_drift(b, cloud, x, 0.0), expected, atol=1e-14)
    c = composite_drift([b, linear_drift([[-1.0]])])
    assert c.measure_dependent and c.lam == -1.0
    assert np.allclose(eval_drift(c, cloud, x, 0.0), expected - x, atol=1e-14)


# ---------------------------------------------------------------- dissipativity


def test_dissipativity_examples():
    assert check_dissipativity(linear_drift([[-1.0]]), 0.0).max_violation <= 0.0
    assert check_dissipativity(linear_drift([[1.0]]), 1.0).passed
    assert check_dissipativity(cubic(), 0.0).passed
    bad = check_dissipativity(linear_drift([[1.0]]), 0.0)
    assert not bad.passed and len(bad.witness) == 3


def test_kernel_lams_hold(rng):
    cloud = ParticleCloud.uniform(rng.normal(size=(30, 1)))
    for k in (linear_attraction(2.0), bounded_attraction(1.0)):
        b = interaction_drift(k, dim=1)
        assert check_dissipativity(b, b.lam, 4000, measure=cloud).passed


def test_shift_examples():
    a = shift_to_dissipative(linear_drift([[-1.0]], lam=-1.0))
    assert np.array_equal(a(np.array([[3.0]])), [[0.0]])
    a = shift_to_dissipative(linear_drift([[1.0]]))
    assert np.array_equal(a(np.array([[3.0]])), [[0.0]])
    b = frozen_drift(lambda x, t: -x**3 + x, lam=1.0, dim=1)
    a = shift_to_dissipative(b)
    x = np.linspace(-2, 2, 9)[:, None]
    assert np.allclose(a(x), -(x**3), atol=1e-14)
    assert check_dissipativity(a, 0.0).passed


# ---------------------------------------------------------------- resolvent and approximants


def test_zero_drift_approximant_is_zero():
    zero = frozen_drift(lambda x, t: np.zeros_like(x), lam=0.0, dim=1)
    a = approximate_drift(zero, 7.0, epsilon=0.1, horizon=1.0)
    assert np.array_equal(a(np.linspace(-3, 3, 7)[:, None], 0.5), np.zeros((7, 1)))


def test_linear_resolvent_both_routes():
    # J = x / (1 + 1/k); at k = 1, A_1(x) = -x / 2
    x = np.linspace(-3, 3, 13)[:, None]
    exact = approximate_drift(linear_drift([[-1.0]]), 1.0)(x)
    numeric = approximate_drift(frozen_drift(lambda y, t: -y, lam=-1.0, dim=1), 1.0, check=False)(x)
    assert np.allclose(exact, -x / 2, atol=1e-14)
    assert np.allclose(numeric, -x / 2, atol=1e-9)


def test_multid_resolvent_matches_linear_solve(rng):
    A = np.array([[-1.0, 0.5], [-0.5, -2.0]])
    x = rng.normal(size=(20, 2))
    exact = resolvent(linear_drift(A), x, 0.0, 0.3)
    numeric = resolvent(frozen_drift(lambda y, t: y @ A.T, lam=-1.0, dim=2), x, 0.0, 0.3)
    assert np.allclose(exact, numeric, atol=1e-9)


def test_cubic_approximant_converges():
    x = np.linspace(-2, 2, 21)[:, None]
    errors = []
    for k in (10.0, 100.0, 1000.0, 10000.0):
        err = np.abs(approximate_drift(cubic(), k)(x) + x**3)
        assert np.all(err <= 10 * np.abs(x) ** 5 / k + 1e-9)
        errors.append(err.max())
    assert all(b < a for a, b in zip(errors, errors[1:]))


@pytest.mark.parametrize("k", [1.0, 10.0, 100.0])
def test_approximant_bound_lipschitz_and_dissipative(k, rng):
    a = approximate_drift(cubic(), k)
    x = rng.uniform(-20, 20, (4000, 1))
    y = x + rng.normal(0, 0.5, x.shape)
    ax, ay = a(x), a(y)
    assert np.abs(ax).max() <= k + 1 + 1e-12
    assert (np.abs(ax - ay) / np.abs(x - y)).max() <= 2 * k * (1 + 1e-6)
    assert check_dissipativity(a.as_drift(), 0.0, 4000).passed


def test_time_mollified_approximant():
    b = frozen_drift(lambda x, t: -(1.0 + t) * x * x * x, lam=0.0, dim=1, autonomous=False)
    a = approximate_drift(b, 10.0, epsilon=0.2, horizon=1.0)
    u, c = mollifier_rule()
    assert abs(c.sum() - 1.0) <= 1e-15 and np.all(c >= 0) and np.all((u > 0) & (u < 1))
    x = np.linspace(-3, 3, 11)[:, None]
    assert np.abs(a(x, 0.5)).max() <= 11.0
    # near t = 0 the window is clamped, so the average equals the frozen-time value
    assert np.allclose(a(x, 0.0), a.spatial(x, 0.0), atol=1e-12)
    assert check_dissipativity(a.as_drift(), 0.0, 300, horizon=1.0).passed


def test_approximation_requires_dissipativity():
    with pytest.raises(PreconditionError) as info:
        approximate_drift(linear_drift([[1.0]]), 5.0)
    assert info.value.witness is not None


# ---------------------------------------------------------------- generator


def test_generator_examples():
    q2 = DiffusionSpec.identity(2)
    zero = linear_drift(np.zeros((2, 2)))
    assert apply_generator(q2, zero, None, squared_norm(), [0.3, -1.0], 0.0) == pytest.approx(4.0)
    assert apply_generator(q2, linear_drift(-np.eye(2)), None, squared_norm(), [1.0, 1.0], 0.0) == pytest.approx(0.0, abs=1e-14)
    x1sq = SmoothFunction(lambda x: x[:, 0] ** 2)
    qd = DiffusionSpec.constant(np.diag([2.0, 1.0]))
    assert apply_generator(qd, zero, None, x1sq, [0.4, 2.0], 0.0) == pytest.approx(4.0, abs=1e-6)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_generator_analytic_vs_finite_differences(a, b):
    phi = gaussian_bump([0.2, -0.1], 0.8)
    fd = SmoothFunction(phi.value)
    q = DiffusionSpec.constant([[1.0, 0.2], [0.2, 0.5]])
    drift = linear_drift([[-1.0, 0.3], [0.0, -0.5]])
    x = np.array([a, b])
    assert abs(apply_generator(q, drift, None, phi, x, 0.0) - apply_generator(q, drift, None, fd, x, 0.0)) <= 1e-6


def test_fd_helpers_on_quadratic():
    X = np.array([[0.5, -1.0]])
    f = lambda x: x[:, 0] ** 2 + 3 * x[:, 0] * x[:, 1]  # noqa: E731
    assert np.allclose(fd_gradient(f, X), [[1.0 - 3.0, 1.5]], atol=1e-8)
    assert np.allclose(fd_hessian(f, X), [[[2.0, 3.0], [3.0, 0.0]]], atol=1e-6)
