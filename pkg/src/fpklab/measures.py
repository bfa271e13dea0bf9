"""Probability measures as weighted particle clouds, flows of clouds and 1-D grid densities."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ArgumentError, ContractViolation, EvaluationError

# Deviations below this are renormalized silently; larger ones are rejected.
RENORMALIZE_TOL = 1e-9
GRID_MASS_TOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    """Weighted empirical measure ``sum_i w_i delta_{x_i}`` on R^d.

    ``points`` has shape ``(n, d)``; a 1-D array is read as ``n`` scalar points.
    Weights are renormalized when they miss unit mass by less than 1e-9.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ArgumentError(f"points must have shape (n, d) with n, d >= 1, got {pts.shape}")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise ArgumentError(f"{w.shape[0]} weights for {pts.shape[0]} points")
        if not np.all(np.isfinite(pts)):
            raise ContractViolation("points contain non-finite coordinates")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ContractViolation("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise ContractViolation(f"weights sum to {total!r}, not 1")
        w = w / total
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, points) -> ParticleCloud:
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, x) -> ParticleCloud:
        return cls(np.atleast_1d(np.asarray(x, dtype=float))[None, :], np.ones(1))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.size

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        c = self.points - self.mean()
        return (c * self.weights[:, None]).T @ c

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def map_points(self, fn: Callable[[np.ndarray], np.ndarray]) -> ParticleCloud:
        """Push the cloud forward through ``fn`` (applied to the full point array)."""
        return ParticleCloud(fn(self.points), self.weights)

    def __eq__(self, other):
        if not isinstance(other, ParticleCloud):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(self.weights, other.weights)

    __hash__ = None


def _evaluate(cloud: ParticleCloud, f: Callable) -> np.ndarray:
    values = np.asarray(f(cloud.points), dtype=float).reshape(-1)
    if values.shape[0] != cloud.size:
        raise ArgumentError(f"f returned {values.shape[0]} values for {cloud.size} points")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = bad[0]
        raise EvaluationError(f"non-finite value {values[i]!r} at point {cloud.points[i].tolist()}")
    return values


def integrate(cloud: ParticleCloud, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """``sum_i w_i f(x_i)``; ``f`` receives the ``(n, d)`` point array and returns ``n`` values."""
    return float(cloud.weights @ _evaluate(cloud, f))


def lyapunov_integral(cloud: ParticleCloud, V: Callable[[np.ndarray], np.ndarray]) -> float:
    values = _evaluate(cloud, V)
    if np.any(values < 0):
        i = int(np.argmin(values))
        raise ContractViolation(f"Lyapunov function is negative ({values[i]!r}) at {cloud.points[i].tolist()}")
    return float(cloud.weights @ values)


def subsample(cloud: ParticleCloud, n: int, seed: int) -> ParticleCloud:
    """Draw ``n`` equally weighted points with replacement, proportionally to the weights."""
    if n < 1:
        raise ArgumentError("subsample size must be at least 1")
    rng = np.random.Generator(np.random.Philox(seed))
    idx = rng.choice(cloud.size, size=n, replace=True, p=cloud.weights)
    return ParticleCloud.uniform(cloud.points[idx])


@dataclass(frozen=True, eq=False)
class MeasureFlow:
    """Time grid on ``[0, T]`` with one cloud per node."""

    times: np.ndarray
    slices: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        slices = tuple(self.slices)
        if len(slices) != times.shape[0] or times.shape[0] == 0:
            raise ArgumentError(f"{len(slices)} slices for {times.shape[0]} times")
        if times[0] != 0.0:
            raise ContractViolation(f"flow must start at t=0, got {times[0]!r}")
        if np.any(np.diff(times) <= 0):
            raise ContractViolation("times must be strictly increasing")
        dims = {s.dim for s in slices}
        if len(dims) != 1:
            raise ContractViolation(f"slices have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "slices", slices)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.slices[0].dim

    def __len__(self):
        return len(self.slices)

    def nearest_index(self, t: float) -> int:
        """Index of the node nearest to ``t`` (ties resolve to the earlier node)."""
        i = int(np.searchsorted(self.times, t))
        if i == 0:
            return 0
        if i >= len(self.times):
            return len(self.times) - 1
        return i - 1 if t - self.times[i - 1] <= self.times[i] - t else i

    def slice_at(self, t: float) -> ParticleCloud:
        return self.slices[self.nearest_index(t)]

    def integrate(self, f) -> np.ndarray:
        return np.array([integrate(s, f) for s in self.slices])

    def __eq__(self, other):
        if not isinstance(other, MeasureFlow):
            return NotImplemented
        return np.array_equal(self.times, other.times) and all(
            a == b for a, b in zip(self.slices, other.slices)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridDensity1D:
    """Piecewise-constant density on ``cells`` equal cells of ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if not self.x_max > self.x_min:
            raise ArgumentError("x_max must exceed x_min")
        if v.size == 0:
            raise ArgumentError("grid needs at least one cell")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ContractViolation("density values must be finite and nonnegative")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_function(cls, f: Callable, x_min: float, x_max: float, cells: int) -> GridDensity1D:
        """Sample ``f`` at cell centers and normalize to unit mass."""
        dx = (x_max - x_min) / cells
        centers = x_min + dx * (np.arange(cells) + 0.5)
        v = np.asarray(f(centers), dtype=float)
        return cls(x_min, x_max, v / (v.sum() * dx))

    @property
    def cells(self) -> int:
        return self.values.shape[0]

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.cells

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + self.dx * (np.arange(self.cells) + 0.5)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.dx)

    def is_normalized(self) -> bool:
        return abs(self.mass - 1.0) <= GRID_MASS_TOL

    def mean(self) -> float:
        return float(self.values @ self.centers * self.dx)

    def variance(self) -> float:
        """Variance of the piecewise-constant density (includes the dx^2/12 in-cell term)."""
        m = self.mean()
        return float(self.values @ (self.centers - m) ** 2 * self.dx + self.dx**2 / 12)


def grid_to_cloud(g: GridDensity1D, n: int | None = None) -> ParticleCloud:
    """Convert a grid density to a cloud.

    With ``n`` equal to the number of cells (the default) each cell center carries its
    cell mass. Any other ``n`` places equally weighted points at the quantile midpoints
    ``(k + 1/2)/n`` of the piecewise-linear CDF.
    """
    if not g.is_normalized():
        raise ContractViolation(f"grid density has mass {g.mass!r}, expected 1")
    n = g.cells if n is None else n
    if n < 1:
        raise ArgumentError("n must be at least 1")
    if n == g.cells:
        return ParticleCloud(g.centers, g.values * g.dx)
    cell_mass = g.values * g.dx
    edges = g.x_min + g.dx * np.arange(g.cells + 1)
    cdf = np.concatenate([[0.0], np.cumsum(cell_mass)])
    cdf /= cdf[-1]
    q = (np.arange(n) + 0.5) / n
    # searchsorted on the strictly increasing part skips empty cells
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return ParticleCloud.uniform(np.interp(q, cdf[keep], edges[keep]))


# ---------------------------------------------------------------- CSV I/O


def write_cloud(cloud: ParticleCloud, path) -> None:
    """CSV with header ``x1,...,xd,weight``; 17 significant digits."""
    header = ",".join([f"x{i + 1}" for i in range(cloud.dim)] + ["weight"])
    data = np.column_stack([cloud.points, cloud.weights])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def read_cloud(path) -> ParticleCloud:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if not header or header[-1].strip() != "weight":
        raise ArgumentError(f"{path}: last column must be 'weight'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ParticleCloud(data[:, :-1], data[:, -1])


def write_flow(flow: MeasureFlow, directory) -> None:
    """Per-slice CSVs plus a ``times.csv`` index (``index,t,file``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (t, s) in enumerate(zip(flow.times, flow.slices)):
        name = f"slice_{i:04d}.csv"
        write_cloud(s, directory / name)
        rows.append(f"{i},{t:.17g},{name}")
    (directory / "times.csv").write_text("index,t,file\n" + "\n".join(rows) + "\n")


def read_flow(directory) -> MeasureFlow:
    directory = Path(directory)
    with open(directory / "times.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    times = [float(r["t"]) for r in rows]
    slices = [read_cloud(directory / r["file"]) for r in rows]
    return MeasureFlow(np.array(times), slices)

