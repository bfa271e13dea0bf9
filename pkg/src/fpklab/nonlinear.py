"""Nonlinear (McKean-Vlasov) FPK equations by Picard iteration of the frozen-drift map.

``theta`` freezes the measure argument of ``B(mu, x, t)`` to a given flow and solves the
resulting linear equation with particles. ``solve_nonlinear`` iterates it with common
noise, so consecutive iterates differ only through the drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import StabilityGauge, compute_K, gronwall_envelope, paired_indices, rescaled_costs, _take
from .cost import CostFunction, capped_power
from .dynamics import DiffusionSpec, DriftSpec, SmoothFunction, apply_generator, check_dissipativity
from .errors import ArgumentError, ContractViolation, PreconditionError
from .fpk import SdeConfig, initial_particles, simulate
from .measures import MeasureFlow, ParticleCloud, lyapunov_integral
from .rng import CHECK, philox
from .transport import kantorovich_cost

DIVERGENCE_RUN = 3
DIVERGENCE_GROWTH = 1.10


# ---------------------------------------------------------------- Lyapunov classes


@dataclass(frozen=True)
class LyapunovSpec:
    """Lyapunov function ``V >= 1``, growth function ``Lambda`` and class bound ``alpha(t)``."""

    V: SmoothFunction
    Lambda: Callable[[float], float]
    alpha: Callable[[float], float]

    @classmethod
    def quadratic(cls, alpha, Lambda=None, dim: int = 1) -> LyapunovSpec:
        """``V(x) = 1 + |x|^2``; constant ``alpha`` values are accepted."""
        V = SmoothFunction(
            lambda x: 1.0 + np.einsum("nd,nd->n", x, x),
            lambda x: 2.0 * x,
            lambda x: np.broadcast_to(2.0 * np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])),
        )
        a = alpha if callable(alpha) else (lambda t, c=float(alpha): c)
        lam = Lambda if Lambda is not None else (lambda s: 1.0)
        return cls(V, lam, a)


@dataclass(frozen=True)
class LyapunovCheck:
    min_V: float
    max_excess: float
    passed: bool


def check_lyapunov(
    lya: LyapunovSpec,
    q: DiffusionSpec,
    b: DriftSpec,
    measure: ParticleCloud | None = None,
    *,
    samples: int = 2000,
    seed: int = 0,
    radius: float = 5.0,
    horizon: float = 1.0,
) -> LyapunovCheck:
    """Sample ``V >= 1`` and ``L V(x, t) <= Lambda(alpha(t)) (1 + V(x)) + 1e-6``."""
    d = q.dim
    rng = philox(seed, CHECK, 1)
    x = rng.uniform(-radius, radius, (samples, d))
    t = rng.uniform(0.0, horizon, samples)
    v = lya.V(x)
    excess = np.empty(samples)
    if b.autonomous and q.matrix is not None:
        lv = apply_generator(q, b, measure, lya.V, x, 0.0)
        bound = np.array([lya.Lambda(lya.alpha(ti)) for ti in t]) * (1.0 + v)
        excess = lv - bound
    else:
        for i in range(samples):
            lv = apply_generator(q, b, measure, lya.V, x[i], t[i])
            excess[i] = lv - lya.Lambda(lya.alpha(t[i])) * (1.0 + v[i])
    worst = float(excess.max())
    return LyapunovCheck(float(v.min()), worst, bool(v.min() >= 1.0 and worst <= 1e-6))


@dataclass(frozen=True)
class MembershipReport:
    ok: bool
    worst_time: float
    worst_value: float
    worst_excess: float


def class_membership(flow: MeasureFlow, lya: LyapunovSpec) -> MembershipReport:
    """Check ``int V d mu_t <= alpha(t)`` on every slice and report the largest excess."""
    vals = np.array([lyapunov_integral(s, lya.V) for s in flow.slices])
    bounds = np.array([lya.alpha(t) for t in flow.times], dtype=float)
    excess = vals - bounds
    i = int(np.argmax(excess))
    return MembershipReport(bool(excess[i] <= 0.0), float(flow.times[i]), float(vals[i]), float(excess[i]))


# ---------------------------------------------------------------- frozen-drift map


def constant_flow(init: ParticleCloud, T: float, cfg: SdeConfig) -> MeasureFlow:
    """``init`` repeated on the node times of ``cfg`` over ``[0, T]``."""
    n_steps, dt, nodes = cfg.time_grid(T)
    times = nodes * dt
    times[-1] = T
    start = initial_particles(init, cfg)
    return MeasureFlow(times, [start] * len(times))


def freeze(b: DriftSpec, frozen_flow: MeasureFlow) -> DriftSpec:
    """``(x, t) -> B(sigma_t, x, t)`` with nearest-slice lookup in ``frozen_flow``."""
    if not b.measure_dependent:
        return b

    def func(x, t, measure):
        return b.func(x, t, frozen_flow.slice_at(t))

    return DriftSpec(b.kind, b.lam, func, b.dim, False, False, dict(b.params, frozen=True))


def theta(q: DiffusionSpec, b: DriftSpec, frozen_flow: MeasureFlow, init: ParticleCloud, cfg: SdeConfig) -> MeasureFlow:
    """Solve the linear equation whose drift has its measure argument frozen to ``frozen_flow``."""
    fb = freeze(b, frozen_flow)

    def drift(x, t):
        return fb.func(x, t, None)

    return simulate(q, drift, init, frozen_flow.horizon, cfg, implicit=fb)


def sup_cost(h: CostFunction, a: MeasureFlow, b: MeasureFlow, ot_particles: int | None = None, seed: int = 0) -> float:
    """``sup_t C_h(a_t, b_t)`` on a shared index subsample."""
    idx = paired_indices(a.slices[0].size, ot_particles, seed) if a.slices[0].size == b.slices[0].size else None
    return float(rescaled_costs(h, a, b, 0.0, idx).max())


@dataclass
class FixedPointTrace:
    """Picard iterates ``Theta(sigma^0), Theta^2(sigma^0), ...`` and their sup-in-time distances.

    ``residuals[k] = sup_t C_h(iterates[k+1]_t, iterates[k]_t)``, so there is one residual per
    iterate after the first and ``iterations == len(residuals)``.
    """

    iterates: list = field(repr=False)
    residuals: list
    converged: bool
    tau: float
    diverged: bool = False
    horizons_tried: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    @property
    def final(self) -> MeasureFlow:
        return self.iterates[-1]

    @property
    def contraction_factors(self) -> list:
        r = self.residuals
        return [r[i + 1] / r[i] if r[i] > 0 else 0.0 for i in range(len(r) - 1)]

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "residuals": [float(r) for r in self.residuals],
            "converged": bool(self.converged),
            "tau": float(self.tau),
            "diverged": bool(self.diverged),
        }


def _diverging(res: list) -> bool:
    if len(res) <= DIVERGENCE_RUN:
        return False
    tail = res[-(DIVERGENCE_RUN + 1):]
    return all(tail[i + 1] > DIVERGENCE_GROWTH * tail[i] for i in range(DIVERGENCE_RUN))


def _picard(q, b, init, T, cfg, h, tol, max_iter, ot_particles):
    sigma = constant_flow(init, T, cfg)
    iterates = [theta(q, b, sigma, init, cfg)]
    residuals: list = []
    while len(residuals) < max_iter:
        nxt = theta(q, b, iterates[-1], init, cfg)
        residuals.append(sup_cost(h, nxt, iterates[-1], ot_particles, cfg.seed))
        iterates.append(nxt)
        if residuals[-1] <= tol:
            return iterates, residuals, True, False
        if _diverging(residuals):
            return iterates, residuals, False, True
    return iterates, residuals, False, False


def solve_nonlinear(
    q: DiffusionSpec,
    b: DriftSpec,
    init: ParticleCloud,
    T: float,
    cfg: SdeConfig,
    tol: float = 0.01,
    max_iter: int = 15,
    *,
    h: CostFunction | None = None,
    min_horizon: float | None = None,
    ot_particles: int | None = 1024,
    check: bool = True,
) -> FixedPointTrace:
    """Picard iteration ``sigma^{n+1} = Theta(sigma^n)`` from the constant-in-time flow of ``init``.

    Every application of ``Theta`` uses the same seed. The iteration stops when the residual
    drops to ``tol`` or after ``max_iter`` residuals. Divergence (three consecutive increases
    above 10%) halves the horizon, down to ``min_horizon`` (default ``T / 8``); the trace of
    the last attempt is returned either way.
    """
    if tol <= 0 or max_iter < 1:
        raise ArgumentError("tol must be positive and max_iter at least 1")
    h = h or capped_power(2.0)
    if check:
        rep = check_dissipativity(b, b.lam, 2000, cfg.seed, horizon=T, measure=init, dim=q.dim)
        if not rep.passed:
            raise PreconditionError(f"drift is not {b.lam}-dissipative: violation {rep.max_violation:.3e}", rep.witness)
    min_horizon = T / 8 if min_horizon is None else min_horizon
    tau, tried = T, []
    while True:
        tried.append(tau)
        iterates, residuals, converged, diverged = _picard(q, b, init, tau, cfg, h, tol, max_iter, ot_particles)
        if not diverged or tau / 2 < min_horizon:
            return FixedPointTrace(iterates, residuals, converged, tau, diverged, tried)
        tau /= 2


# ---------------------------------------------------------------- uniqueness and stability


def split_half_floor(flow: MeasureFlow, h: CostFunction) -> np.ndarray:
    """Per-node ``C_h`` between the first and second half of the particles: a noise floor."""
    out = []
    for s in flow.slices:
        n = s.size // 2
        if n < 1:
            raise ContractViolation("noise floor needs at least two particles")
        out.append(kantorovich_cost(h, _take(s, np.arange(n)), _take(s, np.arange(n, 2 * n))))
    return np.array(out)


@dataclass(frozen=True)
class UniquenessReport:
    costs: np.ndarray
    combined_stderr: np.ndarray
    sup_cost: float
    passed: bool


def uniqueness_check(flow_a: MeasureFlow, flow_b: MeasureFlow, h: CostFunction, ot_particles: int | None = 1024, seed: int = 0) -> UniquenessReport:
    """Compare two runs from equal data: ``C_h(a_t, b_t) <= 3 sqrt(f_a^2 + f_b^2)`` per node.

    ``f`` is the split-half floor of each run on the same subsample, which measures how far
    apart two independent particle samples of one law are at this particle count.
    """
    idx = paired_indices(flow_a.slices[0].size, ot_particles, seed)
    a = MeasureFlow(flow_a.times, [_take(s, idx) for s in flow_a.slices])
    b = MeasureFlow(flow_b.times, [_take(s, idx) for s in flow_b.slices])
    costs = rescaled_costs(h, a, b, 0.0)
    combined = np.sqrt(split_half_floor(a, h) ** 2 + split_half_floor(b, h) ** 2)
    return UniquenessReport(costs, combined, float(costs.max()), bool(np.all(costs <= 3.0 * combined + 1e-12)))


@dataclass(frozen=True)
class StabilityReport:
    times: np.ndarray
    measured: np.ndarray
    stderr: np.ndarray
    envelope: np.ndarray
    valid: np.ndarray
    expires_at: float | None
    c0: float
    K: float
    a: float
    ok: bool
    per_seed: np.ndarray = field(repr=False)
    traces: list = field(repr=False, default_factory=list)

    @property
    def valid_until(self) -> float:
        return float(self.times[self.valid][-1]) if self.valid.any() else 0.0


def stability_experiment(
    q: DiffusionSpec,
    b: DriftSpec,
    init1,
    init2,
    T: float,
    cfg: SdeConfig,
    gauge: StabilityGauge,
    *,
    h: CostFunction | None = None,
    lyapunov: LyapunovSpec | None = None,
    seeds=(0,),
    tol: float = 0.01,
    max_iter: int = 15,
    ot_particles: int | None = 1024,
    mapper=map,
) -> StabilityReport:
    """Solve from both inits for every seed and compare the measured rescaled cost to the envelope.

    ``init1`` and ``init2`` are clouds or callables ``seed -> cloud``. Both solves of a seed
    share their noise. ``a`` is the largest ``int V d mu_t`` seen on either flow
    (``V = 1 + |x|^2`` unless ``lyapunov`` is given); ``c0`` is the seed-averaged
    ``C_h(mu_0, sigma_0)``. The check is ``measured <= envelope + 3 stderr`` wherever the
    envelope is defined. ``mapper`` (e.g. an executor's ``map``) runs the seeds.
    """
    h = h or capped_power(2.0)
    lya = lyapunov or LyapunovSpec.quadratic(1.0, dim=q.dim)
    seeds = [int(s) for s in seeds]

    def one(s):
        c = cfg.with_seed(s)
        i1 = init1(s) if callable(init1) else init1
        i2 = init2(s) if callable(init2) else init2
        t1 = solve_nonlinear(q, b, i1, T, c, tol, max_iter, h=h, ot_particles=ot_particles)
        t2 = solve_nonlinear(q, b, i2, T, c, tol, max_iter, h=h, ot_particles=ot_particles, check=False)
        f1, f2 = t1.final, t2.final
        if f1.horizon != f2.horizon:
            raise ArgumentError("the two solves reached different horizons")
        idx = paired_indices(f1.slices[0].size, ot_particles, s)
        a = max(lyapunov_integral(sl, lya.V) for sl in f1.slices + f2.slices)
        return rescaled_costs(h, f1, f2, b.lam, idx), a, (t1.summary(), t2.summary()), f1.times

    results = list(mapper(one, seeds))
    per_seed = np.array([r[0] for r in results])
    a = max(r[1] for r in results)
    traces = [r[2] for r in results]
    times = results[0][3]
    mean = per_seed.mean(axis=0)
    stderr = per_seed.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros_like(mean)
    c0 = float(mean[0])
    K = compute_K(h, q.ellipticity, a, T, gauge)
    env = gronwall_envelope(gauge, c0, K, times)
    within = mean <= env.values + 3.0 * stderr + 1e-12
    ok = bool(np.all(within[env.valid]))
    return StabilityReport(times, mean, stderr, env.values, env.valid, env.expires_at, c0, K, a, ok, per_seed, traces)
