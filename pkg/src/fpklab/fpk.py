"""Linear Fokker-Planck-Kolmogorov solvers: particle SDE simulation and a 1-D finite-volume scheme.

The equation ``d/dt rho = trace(Q D^2 rho) - div(B rho)`` is the law of
``dX = B(X, t) dt + sqrt(2 Q(X, t)) dW``; the factor 2 is used everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dynamics import DiffusionSpec, DriftSpec, SmoothFunction, apply_generator, eval_drift, frozen_drift, resolvent
from .errors import ArgumentError, ContractViolation, NumericalError
from .measures import GridDensity1D, MeasureFlow, ParticleCloud, integrate, subsample
from .rng import NoiseStream

SCHEMES = ("explicit_em", "split_step_implicit_drift")


@dataclass(frozen=True)
class SdeConfig:
    """Particle solver settings. ``time_nodes`` slices (including t=0 and t=T) are stored."""

    steps_per_unit_time: int = 1000
    scheme: str = "split_step_implicit_drift"
    particles: int = 1000
    seed: int = 0
    time_nodes: int = 11

    def __post_init__(self):
        if self.steps_per_unit_time < 1:
            raise ArgumentError("steps_per_unit_time must be at least 1")
        if self.particles < 1:
            raise ArgumentError("particles must be at least 1")
        if self.scheme not in SCHEMES:
            raise ArgumentError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.time_nodes < 2:
            raise ArgumentError("time_nodes must be at least 2")
        if self.seed < 0:
            raise ArgumentError("seed must be nonnegative")

    def with_seed(self, seed: int) -> SdeConfig:
        return SdeConfig(self.steps_per_unit_time, self.scheme, self.particles, seed, self.time_nodes)

    def time_grid(self, T: float) -> tuple[int, float, np.ndarray]:
        """``(n_steps, dt, node_steps)`` with ``dt = T / n_steps`` so the last node is exactly T."""
        if not T > 0:
            raise ArgumentError("horizon must be positive")
        n_steps = max(1, math.ceil(T * self.steps_per_unit_time - 1e-9))
        nodes = np.unique(np.round(np.linspace(0, n_steps, self.time_nodes)).astype(int))
        return n_steps, T / n_steps, nodes


@dataclass(frozen=True)
class PairedFlows:
    """Two flows driven by the same Brownian increments (particle ``i`` pairs with ``i``)."""

    flow_mu: MeasureFlow
    flow_sigma: MeasureFlow

    def __post_init__(self):
        if not np.array_equal(self.flow_mu.times, self.flow_sigma.times):
            raise ContractViolation("paired flows must share their time grid")
        if self.flow_mu.slices[0].size != self.flow_sigma.slices[0].size:
            raise ContractViolation("paired flows must have equal particle counts")


def initial_particles(init: ParticleCloud, cfg: SdeConfig) -> ParticleCloud:
    """``init`` itself when it already has ``cfg.particles`` points, otherwise a seeded resample."""
    if init.size == cfg.particles:
        return init
    return subsample(init, cfg.particles, cfg.seed)


def simulate(
    q: DiffusionSpec,
    drift: Callable[[np.ndarray, float], np.ndarray],
    init: ParticleCloud,
    T: float,
    cfg: SdeConfig,
    implicit: DriftSpec | None = None,
) -> MeasureFlow:
    """Particle scheme for an arbitrary drift closure ``drift(x, t) -> (n, d)``.

    With ``cfg.scheme == "split_step_implicit_drift"`` the drift step solves the resolvent
    equation of ``implicit`` (a :class:`DriftSpec` wrapping the same drift).
    """
    start = initial_particles(init, cfg)
    if start.dim != q.dim:
        raise ArgumentError(f"initial cloud has dimension {start.dim}, diffusion has {q.dim}")
    n_steps, dt, nodes = cfg.time_grid(T)
    X = np.array(start.points, dtype=float)
    w = start.weights
    noise = NoiseStream(cfg.seed, X.shape[0], X.shape[1])
    sqdt = math.sqrt(dt)
    node_set = set(nodes.tolist())
    slices, times = [start], [0.0]
    implicit_drift = implicit
    if cfg.scheme == "split_step_implicit_drift" and implicit_drift is None:
        implicit_drift = frozen_drift(drift, lam=0.0, dim=q.dim, autonomous=False)
    for step in range(1, n_steps + 1):
        t = (step - 1) * dt
        Z = noise.next()
        if cfg.scheme == "explicit_em":
            Y = X + dt * drift(X, t)
        else:
            Y = resolvent(implicit_drift, X, t + dt, dt)
        S = q.sqrt2(Y, t)
        if S.ndim == 2:
            X = Y + sqdt * (Z @ S.T)
        else:
            X = Y + sqdt * np.einsum("nij,nj->ni", S, Z)
        if not np.all(np.isfinite(X)):
            raise NumericalError(f"particle state became non-finite at step {step} (t={step * dt:.6g})")
        if step in node_set:
            slices.append(ParticleCloud(X.copy(), w))
            times.append(T if step == n_steps else step * dt)
    return MeasureFlow(np.array(times), slices)


def solve_linear(q: DiffusionSpec, b: DriftSpec, init: ParticleCloud, T: float, cfg: SdeConfig) -> MeasureFlow:
    """Simulate ``dX = B dt + sqrt(2Q) dW`` for a measure-independent drift."""
    if b.measure_dependent:
        raise ArgumentError("solve_linear needs a measure-independent drift; freeze the measure first")

    def drift(x, t):
        return b.func(x, t, None)

    return simulate(q, drift, init, T, cfg, implicit=b)


def solve_linear_paired(q, b1: DriftSpec, b2: DriftSpec, init1: ParticleCloud, init2: ParticleCloud, T: float, cfg: SdeConfig) -> PairedFlows:
    """Two solves with identical configuration, hence identical Brownian increments."""
    return PairedFlows(solve_linear(q, b1, init1, T, cfg), solve_linear(q, b2, init2, T, cfg))


# ---------------------------------------------------------------- 1-D grid


def grid_time_step_limit(q: DiffusionSpec, b: DriftSpec, g: GridDensity1D, t: float = 0.0) -> float:
    """Largest ``dt`` keeping the explicit upwind/centered update positivity preserving."""
    xc = g.centers[:, None]
    dx = g.dx
    qc = q(xc, t)[:, 0, 0]
    bf = eval_drift(b, None, (g.x_min + dx * np.arange(1, g.cells))[:, None], t)[:, 0]
    out = np.concatenate([[0.0], np.maximum(bf, 0.0)])
    inn = np.concatenate([np.minimum(bf, 0.0), [0.0]])
    rate = (out - inn) / dx + 2.0 * qc / dx**2
    return float(1.0 / rate.max())


def solve_grid_1d(q: DiffusionSpec, b: DriftSpec, init: GridDensity1D, T: float, dt: float, save_every: int = 1) -> list[GridDensity1D]:
    """Conservative finite volumes with zero-flux walls: upwind advection, centered diffusion.

    The flux through the face between cells ``i`` and ``i+1`` is
    ``B^+ u_i + B^- u_{i+1} - (q_{i+1} u_{i+1} - q_i u_i) / dx``. Returns the density every
    ``save_every`` steps, starting with ``init`` and ending at ``T``.
    """
    if q.dim != 1:
        raise ArgumentError("grid solver is one-dimensional")
    if b.measure_dependent:
        raise ArgumentError("grid solver needs a measure-independent drift")
    if not init.is_normalized():
        raise ContractViolation(f"initial density has mass {init.mass!r}")
    n_steps = max(1, math.ceil(T / dt - 1e-9))
    dt_eff = T / n_steps
    dx = init.dx
    faces = (init.x_min + dx * np.arange(1, init.cells))[:, None]
    xc = init.centers[:, None]
    constant_q = q.matrix is not None
    u = np.array(init.values, dtype=float)
    out = [init]
    limit = None
    bf = qc = None
    for step in range(1, n_steps + 1):
        t = (step - 1) * dt_eff
        if bf is None or not b.autonomous:
            bf = eval_drift(b, None, faces, t)[:, 0]
        if qc is None or not constant_q:
            qc = q(xc, t)[:, 0, 0]
        if limit is None or not (b.autonomous and constant_q):
            limit = grid_time_step_limit(q, b, init, t)
            if dt_eff > limit * (1 + 1e-12):
                raise ArgumentError(f"time step {dt_eff:.6g} violates the stability bound; use dt <= {limit:.6g}")
        qu = qc * u
        flux = np.maximum(bf, 0.0) * u[:-1] + np.minimum(bf, 0.0) * u[1:] - (qu[1:] - qu[:-1]) / dx
        div = np.zeros_like(u)
        div[:-1] += flux
        div[1:] -= flux
        u = u - dt_eff / dx * div
        if step % save_every == 0 or step == n_steps:
            out.append(GridDensity1D(init.x_min, init.x_max, np.clip(u, 0.0, None)))
    return out


# ---------------------------------------------------------------- weak identity


def weak_identity_residual(flow: MeasureFlow, q: DiffusionSpec, b: DriftSpec, phi: SmoothFunction) -> np.ndarray:
    """``|int phi d rho_t - int phi d rho_0 - int_0^t int L phi d rho_s ds|`` at every node.

    Time integrals use the trapezoid rule on the flow's nodes. A measure-dependent drift
    is evaluated against the flow's own slice.
    """
    values = np.array([integrate(s, phi) for s in flow.slices])
    gen = np.array(
        [
            float(s.weights @ apply_generator(q, b, s if b.measure_dependent else None, phi, s.points, t))
            for t, s in zip(flow.times, flow.slices)
        ]
    )
    cum = cumulative_trapezoid(gen, flow.times, initial=0.0)
    return np.abs(values - values[0] - cum)
