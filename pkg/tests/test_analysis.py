import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from fpklab.analysis import (
    RescaleMap,
    StabilityGauge,
    compute_K,
    gronwall_envelope,
    mismatch_integral,
    rescale_cloud,
    rescale_drift_diffusion,
    rescale_flow,
    restore_flow,
    verify_theorem1,
)
from fpklab.cost import capped_power
from fpklab.dynamics import DiffusionSpec, convolution_power_drift, eval_drift, linear_drift
from fpklab.errors import ArgumentError, PreconditionError
from fpklab.fpk import SdeConfig, solve_linear, solve_linear_paired
from fpklab.measures import MeasureFlow, ParticleCloud
from fpklab.transport import kantorovich_cost

from conftest import random_uniform_cloud

Q1 = DiffusionSpec.identity(1)
OU = linear_drift([[-1.0]])


def small_flow(rng, n=30, d=2, nodes=5, T=1.0):
    times = np.linspace(0, T, nodes)
    return MeasureFlow(times, [random_uniform_cloud(rng, n, d) for _ in times])


# ---------------------------------------------------------------- rescaling


def test_rescale_map_values():
    assert RescaleMap(0.5).s_of_t(1.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert RescaleMap(0.5).s_of_t(1.0) == pytest.approx(0.63212, abs=1e-5)
    assert RescaleMap(0.0).s_of_t(1.7) == 1.7
    assert RescaleMap(0.5).s_infinity == 1.0
    assert RescaleMap(-1.0).s_infinity == math.inf
    assert RescaleMap(2.0).s_of_t(0.0) == 0.0


@given(st.floats(-2, 2), st.floats(0, 5))
def test_rescale_map_round_trip(lam, t):
    # t(s) has slope e^{2 lam t}; keep to the range where 1e-12 is above rounding
    assume(abs(lam) * t <= 3.0)
    m = RescaleMap(lam)
    s = m.s_of_t(t)
    assert m.t_of_s(s) == pytest.approx(t, abs=1e-12, rel=1e-12)
    assert m.s_of_t(t + 0.1) > s


def test_t_of_s_rejects_beyond_s_infinity():
    with pytest.raises(ArgumentError, match="0.25"):
        RescaleMap(2.0).t_of_s(0.3)


def test_rescale_flow_examples(rng):
    flow = small_flow(rng)
    assert rescale_flow(RescaleMap(0.0), flow) == flow
    dirac = MeasureFlow(np.array([0.0, 1.0]), [ParticleCloud.dirac([2.0, -1.0])] * 2)
    out = rescale_flow(RescaleMap(0.7), dirac)
    assert np.allclose(out.slices[1].points, math.exp(-0.7) * np.array([[2.0, -1.0]]), atol=1e-15)
    assert np.array_equal(out.slices[1].weights, dirac.slices[1].weights)


@pytest.mark.parametrize("lam", [-1.0, 0.3])
def test_rescale_flow_round_trip(lam, rng):
    flow = small_flow(rng)
    back = restore_flow(RescaleMap(lam), rescale_flow(RescaleMap(lam), flow))
    assert np.allclose(back.times, flow.times, atol=1e-10)
    for a, b in zip(back.slices, flow.slices):
        assert np.allclose(a.points, b.points, atol=1e-10)


def test_rescale_flow_horizon_error(rng):
    flow = small_flow(rng, T=10.0)
    # s(10) < S_inf always, but a huge horizon rounds to it
    big = MeasureFlow(np.array([0.0, 1e3]), flow.slices[:2])
    with pytest.raises(ArgumentError, match="S_inf"):
        rescale_flow(RescaleMap(0.5), big)


@pytest.mark.parametrize("lam", [-0.8, 0.4])
def test_rescaled_cost_identity(lam, rng):
    # two independent transport solves: on the rescaled slices, and with the rescaled cost
    h = capped_power(2.0)
    mu, sigma = random_uniform_cloud(rng, 25, 2), random_uniform_cloud(rng, 25, 2)
    for t in (0.0, 0.5, 1.3):
        direct = kantorovich_cost(h, rescale_cloud(mu, lam, t), rescale_cloud(sigma, lam, t))
        assert direct == pytest.approx(kantorovich_cost(h.rescaled(lam * t), mu, sigma), abs=1e-9)


def test_rescale_drift_diffusion_examples(rng):
    q, b = rescale_drift_diffusion(RescaleMap(0.0), Q1, OU)
    x = rng.normal(size=(10, 1))
    assert q is Q1 and np.array_equal(b(x, 0.3), -x)
    q, a = rescale_drift_diffusion(RescaleMap(-1.0), Q1, linear_drift([[-1.0]], lam=-1.0))
    assert np.array_equal(a(x, 0.4), np.zeros_like(x))
    assert np.array_equal(q.matrix, [[1.0]])


def test_rescaled_drift_formula(rng):
    lam = 0.5
    m = RescaleMap(lam)
    b = linear_drift([[0.5, 1.0], [-1.0, 0.5]], lam=lam)
    _, a = rescale_drift_diffusion(m, DiffusionSpec.identity(2), b)
    y = rng.normal(size=(6, 2))
    s = 0.3
    t = m.t_of_s(s)
    c = math.exp(lam * t)
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(a(y, s), c * (c * y) @ A.T, atol=1e-13)


def test_rescaled_measure_dependent_drift():
    lam = 0.2
    m = RescaleMap(lam)
    b = convolution_power_drift(0.5, lam=lam, dim=1)
    _, a = rescale_drift_diffusion(m, Q1, b)
    s = 0.5
    c = math.exp(lam * m.t_of_s(s))
    y = np.array([[1.0]])
    meas = ParticleCloud.dirac([0.0])
    # B(x) = -(x - 0)|x|^{-1/2}; A = B - lam x evaluated at c y and scaled by c
    expected = c * (eval_drift(b, meas, c * y, 0.0) - lam * c * y)
    assert np.allclose(eval_drift(a, meas, y, s), expected, atol=1e-14)


# ---------------------------------------------------------------- mismatch integral


def test_mismatch_examples(rng):
    flow = small_flow(rng, d=2)
    A = linear_drift(-np.eye(2))
    assert np.array_equal(mismatch_integral(flow, A, A, 1.0), np.zeros(len(flow)))
    c = np.array([0.3, -0.4])
    shifted = linear_drift(-np.eye(2), b=c)
    I = mismatch_integral(flow, A, shifted, 1.0)
    assert np.allclose(I, 0.25 * flow.times, atol=1e-15)
    assert np.allclose(mismatch_integral(flow, A, shifted, 2.0), I / 2, atol=1e-15)


def test_mismatch_on_ou_flow():
    cfg = SdeConfig(particles=300, steps_per_unit_time=100)
    flow = solve_linear(Q1, OU, ParticleCloud.dirac([1.0]), 1.0, cfg)
    I = mismatch_integral(flow, OU, linear_drift([[-1.0]], b=[0.2]), 1.0)
    assert np.allclose(I, 0.04 * flow.times, atol=1e-14)


def test_mismatch_monotone_and_additive(rng):
    flow = small_flow(rng, d=1, nodes=9)
    b2 = linear_drift([[-2.0]], b=[0.5])
    I = mismatch_integral(flow, OU, b2, 1.0)
    assert np.all(np.diff(I) >= 0)
    head = MeasureFlow(flow.times[:5], flow.slices[:5])
    tail = MeasureFlow(flow.times[4:] - flow.times[4], flow.slices[4:])  # autonomous drifts
    combined = mismatch_integral(head, OU, b2, 1.0)[-1] + mismatch_integral(tail, OU, b2, 1.0)[-1]
    assert combined == pytest.approx(I[-1], abs=1e-12)


# ---------------------------------------------------------------- bound verification


def paired_runs(b_sigma, init_sigma, seeds, particles=400, T=0.5):
    init = ParticleCloud.uniform(np.random.default_rng(3).normal(size=(particles, 1)))
    runs = []
    for s in seeds:
        cfg = SdeConfig(particles=particles, steps_per_unit_time=200, time_nodes=6, seed=s, scheme="explicit_em")
        sig = init if init_sigma is None else init_sigma(init)
        runs.append(solve_linear_paired(Q1, OU, b_sigma, init, sig, T, cfg))
    return runs


def test_bound_identical_dynamics():
    h = capped_power(2.0)
    rep = verify_theorem1(h, paired_runs(OU, None, [0, 1]), OU, OU, Q1, 0.0, ot_particles=None)
    assert np.allclose(rep.lhs, 0.0, atol=1e-14) and np.allclose(rep.rhs, 0.0, atol=1e-14)
    assert rep.passed and rep.seeds == 2


def test_bound_initial_condition_channel():
    h = capped_power(2.0)
    runs = paired_runs(OU, lambda c: c.map_points(lambda x: x + 0.3), range(5))
    rep = verify_theorem1(h, runs, OU, OU, Q1, 0.0, ot_particles=200)
    assert np.allclose(rep.rhs, rep.rhs[0], atol=1e-15)
    assert np.all(rep.lhs <= rep.lhs[0] + 1e-12)
    assert rep.passed


def test_bound_shifted_drift():
    h = capped_power(2.0)
    shifted = linear_drift([[-1.0]], b=[0.2])
    runs = paired_runs(shifted, None, range(20), particles=300)
    rep = verify_theorem1(h, runs, OU, shifted, Q1, 0.0, ot_particles=None)
    assert rep.passed
    assert np.all(np.diff(rep.mismatch_integral) >= 0) and np.all(np.diff(rep.rhs) >= 0)
    assert np.all(rep.mc_stderr >= 0) and rep.per_seed["lhs"].shape == (20, 6)


def test_bound_requires_dissipativity():
    runs = paired_runs(OU, None, [0])
    with pytest.raises(PreconditionError) as info:
        verify_theorem1(capped_power(2.0), runs, linear_drift([[1.0]]), OU, Q1, 0.0)
    assert info.value.witness is not None


# ---------------------------------------------------------------- envelopes


@given(st.floats(1e-6, 1.0))
def test_gauge_round_trip(r):
    g = StabilityGauge.identity()
    assert g.G_star_inverse(g.G_star(r)) == pytest.approx(r, rel=1e-8)


def test_gauge_identity_closed_form():
    g = StabilityGauge.identity()
    r = np.array([1e-4, 0.1, 0.5, 1.0, 3.0])
    assert np.allclose(g.G_star(r), -np.log(r), atol=1e-12)
    assert np.all(np.diff(g.G_star(r)) < 0)


def test_identity_envelope_matches_closed_form():
    t = np.linspace(0, 2, 11)
    for c0, K in [(0.1, 0.7), (0.3, 1.2), (0.5, 0.0)]:
        env = gronwall_envelope(StabilityGauge.identity(), c0, K, t)
        assert np.allclose(env.values, math.sqrt(2) * c0 * np.exp(K * K * t), rtol=1e-9, atol=0)
        assert env.valid.all() and env.expires_at is None


def test_envelope_trivial_cases():
    t = np.linspace(0, 1, 5)
    gauge = StabilityGauge(lambda u: u**1.5, "power")
    env = gronwall_envelope(gauge, 0.2, 0.0, t)
    assert np.allclose(env.values, math.sqrt(2) * 0.2, rtol=1e-9)
    env = gronwall_envelope(gauge, 0.2, 3.0, [0.0])
    assert env.values[0] == pytest.approx(math.sqrt(2) * 0.2, rel=1e-9)
    assert np.array_equal(gronwall_envelope(gauge, 0.0, 3.0, t).values, np.zeros(5))


def test_superlinear_gauge_expires():
    # G(u) = u^2: G*(r) = 1/r - 1, envelope^2 = 1 / (1/(2 c0^2) - 2 K^2 t), blowing up at 1/(4 c0^2 K^2)
    gauge = StabilityGauge(lambda u: u * u, "power")
    c0, K = 0.5, 1.0
    t = np.linspace(0, 1.5, 16)
    env = gronwall_envelope(gauge, c0, K, t)
    live = t < 0.99
    assert np.allclose(env.values[live] ** 2, 1 / (1 / (2 * c0**2) - 2 * K**2 * t[live]), rtol=1e-8)
    assert env.expires_at is not None and 0.9 < env.expires_at <= 1.1
    assert np.all(np.isinf(env.values[~env.valid]))


def test_outside_unit_domain_flag():
    env = gronwall_envelope(StabilityGauge.identity(), 0.8, 0.5, [0.0, 0.5])
    assert env.outside_unit_domain
    assert np.allclose(env.values, math.sqrt(2) * 0.8 * np.exp(0.25 * np.array([0.0, 0.5])), rtol=1e-9)


def test_compute_K_examples():
    h = capped_power(2.0)
    g = StabilityGauge.identity()
    assert compute_K(h, 1.0, 1.0, 0.0, g) == pytest.approx(1.0)
    assert compute_K(h, 1.0, 4.0, 0.0, g) == pytest.approx(2.0)
    assert compute_K(h, 2.0, 1.0, 1.0, g) == pytest.approx(math.sqrt(0.75), abs=1e-12)
    with pytest.raises(ArgumentError):
        compute_K(h, 0.0, 1.0, 1.0, g)


def test_bound_both_orientations_pass():
    # swapping the roles changes which flow the mismatch is integrated over
    h = capped_power(2.0)
    shifted = linear_drift([[-1.0]], b=[0.3])
    runs = paired_runs(shifted, lambda c: c.map_points(lambda x: x + 0.5), range(5))
    forward = verify_theorem1(h, runs, OU, shifted, Q1, 0.0, ot_particles=None)
    swapped = [type(r)(r.flow_sigma, r.flow_mu) for r in runs]
    backward = verify_theorem1(h, swapped, shifted, OU, Q1, 0.0, ot_particles=None)
    assert forward.passed and backward.passed
    assert np.allclose(forward.lhs, backward.lhs, atol=1e-12)
