"""Time rescaling, verification of the h-cost stability bound, and Gronwall/Osgood envelopes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad
from scipy.optimize import brentq

from .cost import CostFunction
from .dynamics import DiffusionSpec, DriftSpec, check_dissipativity, eval_drift, shift_to_dissipative
from .errors import ArgumentError, NumericalError, PreconditionError
from .fpk import PairedFlows
from .measures import MeasureFlow, ParticleCloud
from .rng import SUBSAMPLE, philox
from .transport import kantorovich_cost

MARGIN_ABS_TOL = 1e-6
STDERR_FACTOR = 3.0


# ---------------------------------------------------------------- rescaling


@dataclass(frozen=True)
class RescaleMap:
    """Change of time ``s(t) = (1 - e^{-2 lam t}) / (2 lam)`` with space scaling ``e^{-lam t}``."""

    lam: float

    @property
    def s_infinity(self) -> float:
        return 1.0 / (2.0 * self.lam) if self.lam > 0 else math.inf

    def s_of_t(self, t):
        t = np.asarray(t, dtype=float)
        if self.lam == 0:
            out = t.copy()
        else:
            out = -np.expm1(-2.0 * self.lam * t) / (2.0 * self.lam)
        return float(out) if out.ndim == 0 else out

    def t_of_s(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s >= self.s_infinity):
            raise ArgumentError(f"rescaled time reaches S_inf = 1/(2 lam) = {self.s_infinity:.6g}")
        if self.lam == 0:
            out = s.copy()
        else:
            out = -np.log1p(-2.0 * self.lam * s) / (2.0 * self.lam)
        return float(out) if out.ndim == 0 else out


def rescale_cloud(cloud: ParticleCloud, lam: float, t: float) -> ParticleCloud:
    """Image of ``cloud`` under ``x -> e^{-lam t} x``."""
    c = math.exp(-lam * t)
    return cloud.map_points(lambda x: c * x)


def rescale_flow(rmap: RescaleMap, flow: MeasureFlow) -> MeasureFlow:
    """Times become ``s(t_i)``; slice ``i`` is scaled by ``e^{-lam t_i}``; weights are unchanged."""
    s = np.atleast_1d(rmap.s_of_t(flow.times))
    if np.any(s >= rmap.s_infinity):
        raise ArgumentError(f"horizon exceeds S_inf = 1/(2 lam) = {rmap.s_infinity:.6g}")
    slices = [rescale_cloud(c, rmap.lam, t) for c, t in zip(flow.slices, flow.times)]
    return MeasureFlow(s, slices)


def restore_flow(rmap: RescaleMap, flow: MeasureFlow) -> MeasureFlow:
    """Inverse of :func:`rescale_flow`."""
    t = np.atleast_1d(rmap.t_of_s(flow.times))
    slices = [rescale_cloud(c, -rmap.lam, ti) for c, ti in zip(flow.slices, t)]
    return MeasureFlow(t, slices)


def rescale_drift_diffusion(rmap: RescaleMap, q: DiffusionSpec, b: DriftSpec) -> tuple[DiffusionSpec, DriftSpec]:
    """Coefficients of the rescaled equation.

    ``Q~(y, s) = Q(e^{lam t(s)} y, t(s))`` and ``A~(y, s) = e^{lam t(s)} A(e^{lam t(s)} y, t(s))``
    with ``A = B - lam I``. A measure argument is given in rescaled coordinates and is mapped
    back before ``A`` is evaluated.
    """
    lam = rmap.lam
    A = shift_to_dissipative(DriftSpec(b.kind, lam, b.func, b.dim, b.measure_dependent, b.autonomous, b.params))
    if lam == 0:
        return q, A

    def q_tilde(y, s):
        tt = rmap.t_of_s(s)
        return q.q(math.exp(lam * tt) * y, tt)

    def a_tilde(y, s, measure):
        tt = rmap.t_of_s(s)
        c = math.exp(lam * tt)
        original = None if measure is None else measure.map_points(lambda p: c * p)
        return c * A.func(c * y, tt, original)

    qt = DiffusionSpec(q_tilde, q.dim, q.ellipticity, q.deriv_bound)
    if q.matrix is not None:
        qt = DiffusionSpec.constant(q.matrix)
    bt = DriftSpec(b.kind, 0.0, a_tilde, b.dim, b.measure_dependent, False, dict(b.params, rescaled_lam=lam))
    return qt, bt


# ---------------------------------------------------------------- bound verification


def mismatch_integral(
    flow_sigma: MeasureFlow,
    b_mu: DriftSpec,
    b_sigma: DriftSpec,
    nu: float,
    flow_mu: MeasureFlow | None = None,
) -> np.ndarray:
    """Cumulative ``int_0^t int nu^{-1} |B_mu - B_sigma|^2 d sigma_s ds`` at every node.

    Measure-dependent drifts receive the matching slice (``flow_mu`` for ``b_mu``,
    ``flow_sigma`` for ``b_sigma``).
    """
    if b_mu.measure_dependent and flow_mu is None:
        raise ArgumentError("measure-dependent b_mu needs flow_mu")
    integrand = np.empty(len(flow_sigma))
    for i, (t, sig) in enumerate(zip(flow_sigma.times, flow_sigma.slices)):
        m_mu = flow_mu.slice_at(t) if b_mu.measure_dependent else None
        diff = eval_drift(b_mu, m_mu, sig.points, t) - eval_drift(b_sigma, sig, sig.points, t)
        sq = np.einsum("nd,nd->n", diff, diff)
        bad = np.flatnonzero(~np.isfinite(sq))
        if bad.size:
            raise NumericalError(f"non-finite drift difference at t={t:.6g}, x={sig.points[bad[0]].tolist()}")
        integrand[i] = sig.weights @ sq / nu
    return cumulative_trapezoid(integrand, flow_sigma.times, initial=0.0)


def paired_indices(size: int, n: int | None, seed: int) -> np.ndarray | None:
    """Shared subsample of particle indices, or ``None`` when all particles are kept."""
    if n is None or size <= n:
        return None
    return np.sort(philox(seed, SUBSAMPLE).choice(size, size=n, replace=False))


def _take(cloud: ParticleCloud, idx) -> ParticleCloud:
    if idx is None:
        return cloud
    w = cloud.weights[idx]
    return ParticleCloud(cloud.points[idx], w / w.sum())


def rescaled_costs(h: CostFunction, flow_mu: MeasureFlow, flow_sigma: MeasureFlow, lam: float, idx=None) -> np.ndarray:
    """``C_{h_{lam t}}(mu_t, sigma_t)`` at every node, on the (optional) shared index subsample."""
    return np.array(
        [
            kantorovich_cost(h.rescaled(lam * t), _take(a, idx), _take(b, idx))
            for t, a, b in zip(flow_mu.times, flow_mu.slices, flow_sigma.slices)
        ]
    )


def _stderr(samples: np.ndarray) -> np.ndarray:
    k = samples.shape[0]
    if k < 2:
        return np.zeros(samples.shape[1])
    return samples.std(axis=0, ddof=1) / math.sqrt(k)


@dataclass(frozen=True)
class BoundReport:
    """Seed-averaged sides of the stability bound; per-seed arrays have shape ``(seeds, nodes)``."""

    times: np.ndarray
    lhs: np.ndarray
    mismatch_integral: np.ndarray
    rhs: np.ndarray
    margin: np.ndarray
    mc_stderr: np.ndarray
    flagged: np.ndarray
    per_seed: dict = field(repr=False, default_factory=dict)

    @property
    def passed(self) -> bool:
        return not bool(self.flagged.any())

    @property
    def min_margin(self) -> float:
        return float(self.margin.min())

    @property
    def seeds(self) -> int:
        return int(self.per_seed["lhs"].shape[0])


def verify_theorem1(
    h: CostFunction,
    paired: PairedFlows | Sequence[PairedFlows],
    b_mu: DriftSpec,
    b_sigma: DriftSpec,
    q: DiffusionSpec,
    lam: float,
    *,
    ot_particles: int | None = 512,
    seed: int | Sequence[int] = 0,
    check_samples: int = 10_000,
    check_radius: float = 5.0,
) -> BoundReport:
    """Evaluate both sides of the bound on every node, for every seed's paired flows.

    ``lhs = C_{h_{lam t}}(mu_t, sigma_t)`` and
    ``rhs = C_h(mu_0, sigma_0) + |h|_inf sqrt(I(t)) sqrt(1 + I(t))`` with ``I`` from
    :func:`mismatch_integral`. Exact transport runs on a shared random subset of
    ``ot_particles`` particle indices, drawn from ``seed`` (one seed per run, or a base seed
    to which the run index is added). A node is flagged when the mean margin is below
    ``-(3 stderr + 1e-6)``, the stderr being taken across seeds.
    """
    runs = [paired] if isinstance(paired, PairedFlows) else list(paired)
    if not runs:
        raise ArgumentError("no flows to verify")
    keys = [seed + k for k in range(len(runs))] if np.isscalar(seed) else [int(s) for s in seed]
    if len(keys) != len(runs):
        raise ArgumentError("need one subsample seed per run")
    horizon = runs[0].flow_mu.horizon
    measure = runs[0].flow_mu.slices[0] if b_mu.measure_dependent else None
    report = check_dissipativity(
        b_mu, lam, check_samples, keys[0], radius=check_radius, horizon=horizon, measure=measure, dim=q.dim
    )
    if not report.passed:
        raise PreconditionError(
            f"b_mu is not {lam}-dissipative: violation {report.max_violation:.3e} at {report.witness}",
            witness=report.witness,
        )
    lhs, mis, rhs = [], [], []
    for k, run in enumerate(runs):
        fm, fs = run.flow_mu, run.flow_sigma
        idx = paired_indices(fm.slices[0].size, ot_particles, keys[k])
        left = rescaled_costs(h, fm, fs, lam, idx)
        I = mismatch_integral(fs, b_mu, b_sigma, q.ellipticity, flow_mu=fm)
        lhs.append(left)
        mis.append(I)
        rhs.append(left[0] + h.sup_bound * np.sqrt(I) * np.sqrt(1.0 + I))
    lhs, mis, rhs = np.array(lhs), np.array(mis), np.array(rhs)
    margins = rhs - lhs
    stderr = _stderr(margins)
    margin = margins.mean(axis=0)
    flagged = margin < -(STDERR_FACTOR * stderr + MARGIN_ABS_TOL)
    return BoundReport(
        runs[0].flow_mu.times,
        lhs.mean(axis=0),
        mis.mean(axis=0),
        rhs.mean(axis=0),
        margin,
        stderr,
        flagged,
        {"lhs": lhs, "I": mis, "rhs": rhs},
    )


# ---------------------------------------------------------------- Osgood gauge


@dataclass(frozen=True)
class StabilityGauge:
    """Modulus ``G`` and ``G*(r) = int_r^1 du / G(sqrt u)^2`` (signed for ``r > 1``).

    ``G*`` is integrated in ``v = ln u``, where the integrand ``e^v / G(e^{v/2})^2`` has no
    endpoint singularity; the inverse is found by bracketing and Brent's method in ``ln r``.
    """

    G: Callable[[float], float]
    name: str = "custom"
    r_cap: float = 1e12

    @classmethod
    def identity(cls) -> StabilityGauge:
        return cls(lambda u: u, "identity")

    def _integrand(self, v: float) -> float:
        g = self.G(math.exp(0.5 * v))
        return math.exp(v) / (g * g) if g > 0 else math.inf

    def G_star(self, r):
        rs = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(rs)
        for i, ri in enumerate(rs):
            if ri <= 0:
                raise ArgumentError("G* is evaluated at r > 0 only")
            val, _ = quad(self._integrand, math.log(ri), 0.0, epsabs=1e-14, epsrel=1e-13, limit=500)
            out[i] = val
        return float(out[0]) if np.ndim(r) == 0 else out

    def G_star_inverse(self, y: float) -> float | None:
        """``r`` with ``G*(r) = y``, or ``None`` when ``y`` is outside the computed range."""

        def f(v):
            return self.G_star(math.exp(v)) - y

        lo, hi = -1.0, 1.0
        while f(lo) < 0:
            lo *= 2.0
            if lo < -700:
                return None
        v_cap = math.log(self.r_cap)
        while f(hi) > 0:
            if hi >= v_cap:
                return None
            hi = min(2.0 * hi, v_cap)
        return math.exp(brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


@dataclass(frozen=True)
class Envelope:
    times: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    expires_at: float | None
    outside_unit_domain: bool = False


def gronwall_envelope(gauge: StabilityGauge, c0: float, K: float, t_grid) -> Envelope:
    """``((G*)^{-1}(G*(2 c0^2) - 2 K^2 t))^{1/2}`` on ``t_grid``.

    ``c0 = 0`` gives the identically zero envelope. Where the inverse leaves the computed
    range the value is ``inf`` and ``expires_at`` records the first such time.
    """
    t = np.asarray(t_grid, dtype=float)
    if K < 0:
        raise ArgumentError("K must be nonnegative")
    if c0 < 0:
        raise ArgumentError("c0 must be nonnegative")
    if c0 == 0:
        return Envelope(t, np.zeros_like(t), np.ones(t.shape, dtype=bool), None)
    start = 2.0 * c0 * c0
    base = gauge.G_star(start)
    values = np.empty_like(t)
    valid = np.ones(t.shape, dtype=bool)
    for i, ti in enumerate(t):
        r = gauge.G_star_inverse(base - 2.0 * K * K * ti)
        if r is None:
            values[i], valid[i] = math.inf, False
        else:
            values[i] = math.sqrt(r)
    expires = float(t[~valid][0]) if (~valid).any() else None
    return Envelope(t, values, valid, expires, start > 1.0)


def compute_K(h: CostFunction, nu: float, a: float, T: float, gauge: StabilityGauge) -> float:
    """``|h|_inf sqrt(a / nu) sqrt(1 + T G(|h|_inf)^2 / nu)``."""
    if a <= 0 or nu <= 0:
        raise ArgumentError("a and nu must be positive")
    g = gauge.G(h.sup_bound)
    return h.sup_bound * math.sqrt(a / nu) * math.sqrt(1.0 + T * g * g / nu)
