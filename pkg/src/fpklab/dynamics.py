"""Drift and diffusion coefficients, sampled dissipativity, and resolvent drift approximation.

Points are ``(n, d)`` arrays throughout. Every drift function has the signature
``func(x, t, measure) -> (n, d)``, where ``measure`` is a :class:`ParticleCloud` or ``None``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, NumericalError, PreconditionError
from .measures import ParticleCloud
from .rng import CHECK, philox

DISSIPATIVITY_TOL = 1e-8
RESOLVENT_TOL = 1e-10
# broadcasting budget (entries) for particle-particle interaction sums
_PAIR_BUDGET = 2_000_000


def as_points(x, dim: int | None = None) -> tuple[np.ndarray, bool]:
    """Return ``(X, single)`` with ``X`` of shape ``(n, d)``; a 1-D input is one point."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1), True
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ArgumentError(f"points must be 1-D or 2-D, got shape {x.shape}")
    return x, False


# ---------------------------------------------------------------- diffusion


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Diffusion matrix ``Q(x, t)`` with ellipticity constant ``nu``.

    ``q(x, t)`` maps ``(n, d)`` points to ``(n, d, d)`` symmetric matrices. For constant
    matrices ``matrix`` is set and square roots are computed once.
    """

    q: Callable[[np.ndarray, float], np.ndarray]
    dim: int
    ellipticity: float
    deriv_bound: float = 0.0
    matrix: np.ndarray | None = None
    _sqrt2: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.ellipticity > 0:
            raise ArgumentError(f"ellipticity must be positive, got {self.ellipticity!r}")

    @classmethod
    def constant(cls, matrix) -> DiffusionSpec:
        Q = np.atleast_2d(np.asarray(matrix, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise ArgumentError("diffusion matrix must be square")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ArgumentError("diffusion matrix must be symmetric")
        evals, evecs = np.linalg.eigh(Q)
        if evals.min() <= 0:
            raise ArgumentError(f"diffusion matrix is not strictly elliptic (min eigenvalue {evals.min():.3g})")
        Q.setflags(write=False)
        sqrt2 = (evecs * np.sqrt(2.0 * evals)) @ evecs.T

        def q(x, t):
            return np.broadcast_to(Q, (x.shape[0],) + Q.shape)

        return cls(q, Q.shape[0], float(evals.min()), 0.0, Q, sqrt2)

    @classmethod
    def identity(cls, dim: int = 1, scale: float = 1.0) -> DiffusionSpec:
        return cls.constant(scale * np.eye(dim))

    def __call__(self, x, t) -> np.ndarray:
        X, _ = as_points(x)
        return np.asarray(self.q(X, t), dtype=float)

    def sqrt2(self, x, t) -> np.ndarray:
        """``sqrt(2 Q)``; a single ``(d, d)`` matrix when constant, else ``(n, d, d)``."""
        if self._sqrt2 is not None:
            return self._sqrt2
        evals, evecs = np.linalg.eigh(self(x, t))
        root = np.sqrt(2.0 * np.clip(evals, 0.0, None))
        return np.einsum("nij,nj,nkj->nik", evecs, root, evecs)


@dataclass(frozen=True)
class EllipticityReport:
    max_asymmetry: float
    min_ratio: float
    passed: bool


def check_ellipticity(q: DiffusionSpec, samples: int = 2000, seed: int = 0, radius: float = 5.0, horizon: float = 1.0):
    """Sample symmetry of ``Q`` and ``<Q y, y> >= nu |y|^2``."""
    rng = philox(seed, CHECK)
    x = rng.uniform(-radius, radius, (samples, q.dim))
    t = rng.uniform(0.0, horizon, samples)
    y = rng.standard_normal((samples, q.dim))
    Qs = np.stack([q(x[i : i + 1], t[i])[0] for i in range(samples)])
    asym = float(np.max(np.abs(Qs - np.swapaxes(Qs, 1, 2))))
    ratio = np.einsum("ni,nij,nj->n", y, Qs, y) / np.einsum("ni,ni->n", y, y)
    min_ratio = float(ratio.min())
    return EllipticityReport(asym, min_ratio, asym <= 1e-10 and min_ratio >= q.ellipticity * (1 - 1e-12))


# ---------------------------------------------------------------- drifts


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """Drift ``B(x, t)`` or ``B(mu, x, t)`` with declared dissipativity constant ``lam``.

    Build instances with :func:`linear_drift`, :func:`frozen_drift`,
    :func:`interaction_drift`, :func:`convolution_power_drift` or :func:`composite_drift`.
    """

    kind: str
    lam: float
    func: Callable = field(repr=False)
    dim: int | None = None
    measure_dependent: bool = False
    autonomous: bool = True
    params: dict = field(default_factory=dict)

    def __call__(self, x, t=0.0, measure=None):
        return eval_drift(self, measure, x, t)


def eval_drift(b: DriftSpec, measure: ParticleCloud | None, x, t: float) -> np.ndarray:
    """Evaluate ``B`` at one point (shape ``(d,)``) or at ``(n, d)`` points."""
    if b.measure_dependent and measure is None:
        raise ArgumentError(f"drift of kind {b.kind!r} depends on the measure; pass one")
    X, single = as_points(x)
    out = np.asarray(b.func(X, float(t), measure), dtype=float).reshape(X.shape)
    return out[0] if single else out


def linear_drift(A, b=None, lam: float | None = None) -> DriftSpec:
    """``B(x) = A x + b``; ``lam`` defaults to the top eigenvalue of ``(A + A^T)/2``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    off = np.zeros(d) if b is None else np.asarray(b, dtype=float).reshape(d)
    if lam is None:
        lam = float(np.linalg.eigvalsh(0.5 * (A + A.T)).max())

    def func(x, t, measure):
        return x @ A.T + off

    return DriftSpec("linear", float(lam), func, d, params={"matrix": A.tolist(), "offset": off.tolist()})


def frozen_drift(fn: Callable, lam: float, dim: int | None = None, autonomous: bool = True, name: str = "custom") -> DriftSpec:
    """Measure-independent drift from ``fn(x, t) -> (n, d)``."""

    def func(x, t, measure):
        return fn(x, t)

    return DriftSpec("frozen", float(lam), func, dim, autonomous=autonomous, params={"name": name})


def linear_attraction(strength: float = 1.0) -> Callable:
    """Kernel ``k(x, y) = -strength (x - y)``; ``lam = -strength`` in ``x``."""

    def k(x, y):
        return -strength * (x - y)

    def reduce(x, measure):
        # linear in y, so the average collapses onto the mean
        return -strength * (x - measure.weights @ measure.points)

    k.lam = -float(strength)
    k.reduce = reduce
    return k


def bounded_attraction(strength: float = 1.0) -> Callable:
    """Bounded kernel ``k(x, y) = -strength tanh(x - y)`` (componentwise), 0-dissipative."""

    def k(x, y):
        return -strength * np.tanh(x - y)

    k.lam = 0.0
    return k


def separable_kernel(g: Callable, weight: Callable) -> Callable:
    """``k(x, y) = g(x) weight(y)``: a vector field in ``x`` times a scalar in ``y``."""

    def k(x, y):
        return g(x) * weight(y)[..., None]

    return k


def _pair_chunks(n: int, m: int, d: int):
    step = max(1, _PAIR_BUDGET // max(1, m * d))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def interaction_drift(kernel: Callable, H: Callable | None = None, lam: float | None = None, dim: int | None = None, params=None) -> DriftSpec:
    """``B(mu, x) = H(x) * sum_j v_j k(x, y_j)``.

    ``kernel(x, y)`` broadcasts ``(n, 1, d)`` against ``(1, m, d)``; ``H`` maps ``(n, d)`` to ``(n,)``.
    """
    if lam is None:
        lam = getattr(kernel, "lam", None)
        if lam is None:
            raise ArgumentError("interaction drift needs a declared lam")

    reduce = getattr(kernel, "reduce", None)

    def func(x, t, measure):
        y, v = measure.points, measure.weights
        if reduce is not None:
            out = np.array(reduce(x, measure), dtype=float)
            if H is not None:
                out *= np.asarray(H(x), dtype=float)[:, None]
            return out
        out = np.empty_like(x)
        for sl in _pair_chunks(x.shape[0], y.shape[0], x.shape[1]):
            vals = kernel(x[sl, None, :], y[None, :, :])
            out[sl] = np.einsum("nmd,m->nd", vals, v)
        if H is not None:
            out *= np.asarray(H(x), dtype=float)[:, None]
        return out

    return DriftSpec("interaction", float(lam), func, dim, measure_dependent=True, params=dict(params or {}))


def convolution_power_drift(alpha: float, lam: float = 0.0, dim: int | None = None) -> DriftSpec:
    """``B(mu, x) = -sum_j v_j |x - y_j|^(alpha - 1) (x - y_j)`` (zero where ``x = y_j``)."""
    if not 0 < alpha:
        raise ArgumentError("alpha must be positive")

    def func(x, t, measure):
        y, v = measure.points, measure.weights
        out = np.empty_like(x)
        for sl in _pair_chunks(x.shape[0], y.shape[0], x.shape[1]):
            z = x[sl, None, :] - y[None, :, :]
            r = np.sqrt(np.einsum("nmd,nmd->nm", z, z))
            with np.errstate(divide="ignore"):
                f = np.where(r > 0, r ** (alpha - 1.0), 0.0)
            out[sl] = -np.einsum("nmd,nm,m->nd", z, f, v)
        return out

    return DriftSpec("convolution_power", float(lam), func, dim, measure_dependent=True, params={"alpha": alpha})


def composite_drift(parts: Sequence[DriftSpec], lam: float | None = None) -> DriftSpec:
    """Sum of drifts; ``lam`` defaults to the sum of the parts' constants."""
    parts = tuple(parts)
    if lam is None:
        lam = sum(p.lam for p in parts)
    dims = {p.dim for p in parts if p.dim is not None}
    if len(dims) > 1:
        raise ArgumentError(f"composite parts disagree on dimension: {sorted(dims)}")

    def func(x, t, measure):
        return sum(p.func(x, t, measure) for p in parts)

    return DriftSpec(
        "composite",
        float(lam),
        func,
        dims.pop() if dims else None,
        measure_dependent=any(p.measure_dependent for p in parts),
        autonomous=all(p.autonomous for p in parts),
        params={"parts": [p.kind for p in parts]},
    )


# ---------------------------------------------------------------- dissipativity


@dataclass(frozen=True)
class DissipativityReport:
    max_violation: float
    witness: tuple
    samples: int
    passed: bool


def check_dissipativity(
    b: DriftSpec,
    lam: float | None = None,
    samples: int = 10_000,
    seed: int = 0,
    *,
    radius: float = 5.0,
    horizon: float = 1.0,
    measure: ParticleCloud | None = None,
    dim: int | None = None,
) -> DissipativityReport:
    """Largest sampled value of ``<B(x,t) - B(y,t), x - y> - lam |x - y|^2``.

    Half of the pairs are drawn independently in ``[-radius, radius]^d``; the other half
    are close pairs, which probe local monotonicity.
    """
    if samples < 1:
        raise ArgumentError("samples must be at least 1")
    lam = b.lam if lam is None else lam
    d = dim or b.dim or (measure.dim if measure is not None else 1)
    rng = philox(seed, CHECK)
    x = rng.uniform(-radius, radius, (samples, d))
    y = rng.uniform(-radius, radius, (samples, d))
    near = np.arange(samples) % 2 == 1
    y[near] = x[near] + rng.normal(0.0, 1e-2 * radius, (int(near.sum()), d))
    t = rng.uniform(0.0, horizon, samples)
    if b.autonomous:
        bx, by = eval_drift(b, measure, x, 0.0), eval_drift(b, measure, y, 0.0)
    else:
        bx = np.stack([eval_drift(b, measure, x[i], t[i]) for i in range(samples)])
        by = np.stack([eval_drift(b, measure, y[i], t[i]) for i in range(samples)])
    dx = x - y
    viol = np.einsum("nd,nd->n", bx - by, dx) - lam * np.einsum("nd,nd->n", dx, dx)
    i = int(np.argmax(viol))
    worst = float(viol[i])
    return DissipativityReport(worst, (x[i].copy(), y[i].copy(), float(t[i])), samples, worst <= DISSIPATIVITY_TOL)


def shift_to_dissipative(b: DriftSpec) -> DriftSpec:
    """``x -> B(x, t) - lam x`` with ``lam = 0``."""
    if b.kind == "linear":
        A = np.asarray(b.params["matrix"])
        return linear_drift(A - b.lam * np.eye(A.shape[0]), b.params["offset"], lam=0.0)
    lam = b.lam

    def func(x, t, measure):
        return b.func(x, t, measure) - lam * x

    params = dict(b.params, shifted_by=lam)
    return DriftSpec(b.kind, 0.0, func, b.dim, b.measure_dependent, b.autonomous, params)


# ---------------------------------------------------------------- resolvent


def _resolvent_1d(G, x, w, tol, max_iter):
    """Safeguarded Newton on the increasing scalar map ``G(J) - x`` (columns of shape (n,))."""
    scale = 1.0 + np.abs(x)
    lo, hi = x - w, x + w
    for _ in range(200):
        bad_lo = G(lo) > x
        bad_hi = G(hi) < x
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo = np.where(bad_lo, lo - 2 * (hi - lo), lo)
        hi = np.where(bad_hi, hi + 2 * (hi - lo), hi)
    else:
        raise NumericalError("could not bracket the resolvent equation")
    J = x.copy()
    F = G(J) - x
    active = np.arange(x.shape[0])
    for _ in range(max_iter):
        Fa = F[active]
        sa = scale[active]
        conv = (np.abs(Fa) <= tol * sa) | ((hi[active] - lo[active]) <= 1e-15 * sa)
        active, Fa, sa = active[~conv], Fa[~conv], sa[~conv]
        if active.size == 0:
            return J
        Ja, la, ha, xa = J[active], lo[active], hi[active], x[active]
        la = np.where(Fa < 0, Ja, la)
        ha = np.where(Fa > 0, Ja, ha)
        step = 1e-7 * sa
        dF = (G(Ja + step) - xa - Fa) / step
        with np.errstate(divide="ignore", invalid="ignore"):
            Jn = Ja - Fa / dF
        outside = ~np.isfinite(Jn) | (Jn <= la) | (Jn >= ha)
        Jn = np.where(outside, 0.5 * (la + ha), Jn)
        lo[active], hi[active], J[active] = la, ha, Jn
        F[active] = G(Jn) - xa
    worst = int(np.argmax(np.abs(F) / scale))
    raise NumericalError(
        f"resolvent did not converge in {max_iter} iterations: residual {abs(F[worst]):.3e} at x={x[worst]!r}"
    )


def resolvent(b: DriftSpec, x, t: float, step: float, measure=None, tol: float = RESOLVENT_TOL, max_iter: int = 100) -> np.ndarray:
    """Solve ``J - step * B(J, t) = x`` row by row (implicit Euler / resolvent map)."""
    X, single = as_points(x)
    if step == 0:
        return X[0].copy() if single else X.copy()
    if b.kind == "linear":
        A = np.asarray(b.params["matrix"])
        off = np.asarray(b.params["offset"])
        M = np.eye(A.shape[0]) - step * A
        J = np.linalg.solve(M, (X + step * off).T).T
        return J[0] if single else J
    d = X.shape[1]

    def G(J):
        return J - step * b.func(J, t, measure)

    if d == 1:
        w = step * np.abs(b.func(X, t, measure))[:, 0] + 1e-12 * (1 + np.abs(X[:, 0]))

        def G1(j):
            return G(j[:, None])[:, 0]

        J = _resolvent_1d(G1, X[:, 0].copy(), w, tol, max_iter)[:, None]
        return J[0] if single else J

    J = X.copy()
    scale = 1.0 + np.linalg.norm(X, axis=1)
    eye = np.eye(d)
    F = G(J) - X
    for _ in range(max_iter):
        res = np.linalg.norm(F, axis=1)
        active = res > tol * scale
        if not active.any():
            return J[0] if single else J
        Ja, Fa, Xa = J[active], F[active], X[active]
        h = 1e-7 * (1.0 + np.linalg.norm(Ja, axis=1))[:, None]
        jac = np.empty((Ja.shape[0], d, d))
        for k in range(d):
            e = eye[k] * h
            jac[:, :, k] = (G(Ja + e) - G(Ja - e)) / (2 * h)
        delta = -np.linalg.solve(jac, Fa[:, :, None])[:, :, 0]
        alpha = np.ones(Ja.shape[0])
        ra = res[active]
        for _ in range(40):
            Jn = Ja + alpha[:, None] * delta
            Fn = G(Jn) - Xa
            ok = np.linalg.norm(Fn, axis=1) < ra
            if ok.all():
                break
            alpha = np.where(ok, alpha, 0.5 * alpha)
        J[active], F[active] = Jn, Fn
    worst = int(np.argmax(np.linalg.norm(F, axis=1) / scale))
    raise NumericalError(
        f"resolvent did not converge in {max_iter} iterations: residual "
        f"{np.linalg.norm(F[worst]):.3e} at x={X[worst].tolist()}"
    )


def _bump(u):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where((u > 0) & (u < 1), np.exp(-1.0 / (u * (1.0 - u))), 0.0)


def mollifier_rule(nodes: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature ``(u_i, c_i)`` on [0, 1] for the normalized smooth bump; ``sum c_i = 1``."""
    g, w = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * (g + 1.0)
    c = 0.5 * w * _bump(u)
    return u, c / c.sum()


@dataclass(frozen=True, eq=False)
class ApproximatedDrift:
    """``A_k^eps``: resolvent approximant of a 0-dissipative drift, truncated and time-mollified.

    ``A_k(x, t) = k (J_k(x, t) - x)`` with ``J - B(J, t)/k = x``, clipped radially to norm
    ``k + 1``, then averaged over ``[t - eps, t]`` against a smooth bump (times below 0 or
    above ``horizon`` are clamped, i.e. constant extension).
    """

    base: DriftSpec
    k: float
    epsilon: float = 0.0
    horizon: float | None = None
    measure: ParticleCloud | None = None
    nodes: int = 16

    @property
    def bound(self) -> float:
        return self.k + 1.0

    def spatial(self, x, t: float) -> np.ndarray:
        X, single = as_points(x)
        J = resolvent(self.base, X, t, 1.0 / self.k, self.measure)
        A = self.k * (J - X)
        norm = np.linalg.norm(A, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(norm > self.bound, self.bound / norm, 1.0)
        A = A * factor[:, None]
        return A[0] if single else A

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        if self.epsilon == 0.0 or self.base.autonomous:
            return self.spatial(x, t)
        u, c = mollifier_rule(self.nodes)
        hi = math.inf if self.horizon is None else self.horizon
        total = 0.0
        for ui, ci in zip(u, c):
            total = total + ci * self.spatial(x, min(max(t - self.epsilon * ui, 0.0), hi))
        return total

    def as_drift(self) -> DriftSpec:
        def func(x, t, measure):
            return self(x, t)

        return DriftSpec(
            "approximated",
            0.0,
            func,
            self.base.dim,
            autonomous=self.base.autonomous or self.epsilon == 0.0,
            params={"k": self.k, "epsilon": self.epsilon, "base": self.base.kind},
        )


def approximate_drift(
    b: DriftSpec,
    k: float,
    epsilon: float = 0.0,
    *,
    horizon: float | None = None,
    measure: ParticleCloud | None = None,
    check: bool = True,
    samples: int = 10_000,
    seed: int = 0,
) -> ApproximatedDrift:
    """Build the approximant ``A_k^eps`` of a 0-dissipative drift (see :class:`ApproximatedDrift`)."""
    if not k > 0:
        raise ArgumentError("approximation index k must be positive")
    if epsilon < 0:
        raise ArgumentError("mollification width must be nonnegative")
    if check:
        report = check_dissipativity(b, 0.0, samples, seed, measure=measure, horizon=horizon or 1.0)
        if not report.passed:
            raise PreconditionError(
                f"drift is not 0-dissipative: violation {report.max_violation:.3e}", witness=report.witness
            )
    return ApproximatedDrift(b, float(k), float(epsilon), horizon, measure)


# ---------------------------------------------------------------- generator


_GRAD_STEP = 1e-5
_HESS_STEP = 1e-4


@dataclass(frozen=True)
class SmoothFunction:
    """Scalar test function with optional closed-form gradient and Hessian.

    Missing derivatives fall back to central differences.
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x):
        X, single = as_points(x)
        v = np.asarray(self.value(X), dtype=float).reshape(X.shape[0])
        return float(v[0]) if single else v

    def gradient(self, X: np.ndarray) -> np.ndarray:
        if self.grad is not None:
            return np.asarray(self.grad(X), dtype=float).reshape(X.shape)
        return fd_gradient(self.value, X)

    def hessian(self, X: np.ndarray) -> np.ndarray:
        if self.hess is not None:
            return np.asarray(self.hess(X), dtype=float).reshape(X.shape + (X.shape[1],))
        return fd_hessian(self.value, X)


def fd_gradient(f, X, step=_GRAD_STEP):
    d = X.shape[1]
    out = np.empty_like(X)
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        out[:, i] = (f(X + e) - f(X - e)) / (2 * step)
    return out


def fd_hessian(f, X, step=_HESS_STEP):
    n, d = X.shape
    out = np.empty((n, d, d))
    f0 = f(X)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        out[:, i, i] = (f(X + ei) - 2 * f0 + f(X - ei)) / step**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            v = (f(X + ei + ej) - f(X + ei - ej) - f(X - ei + ej) + f(X - ei - ej)) / (4 * step**2)
            out[:, i, j] = out[:, j, i] = v
    return out


def squared_norm() -> SmoothFunction:
    """``|x|^2`` with exact derivatives."""
    return SmoothFunction(
        lambda x: np.einsum("nd,nd->n", x, x),
        lambda x: 2.0 * x,
        lambda x: np.broadcast_to(2.0 * np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])),
    )


def gaussian_bump(center=0.0, width: float = 1.0) -> SmoothFunction:
    """``exp(-|x - c|^2 / (2 w^2))`` with exact derivatives."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    s2 = width**2

    def value(x):
        z = x - c
        return np.exp(-0.5 * np.einsum("nd,nd->n", z, z) / s2)

    def grad(x):
        return -(x - c) / s2 * value(x)[:, None]

    def hess(x):
        z = (x - c) / s2
        eye = np.eye(x.shape[1]) / s2
        return (np.einsum("ni,nj->nij", z, z) - eye) * value(x)[:, None, None]

    return SmoothFunction(value, grad, hess)


def apply_generator(q: DiffusionSpec, b: DriftSpec, measure, phi: SmoothFunction, x, t: float):
    """``trace(Q D^2 phi) + <B, grad phi>`` at ``(x, t)``."""
    X, single = as_points(x)
    Q = q(X, t)
    out = np.einsum("nij,nji->n", Q, phi.hessian(X)) + np.einsum(
        "nd,nd->n", eval_drift(b, measure, X, t), phi.gradient(X)
    )
    return float(out[0]) if single else out
