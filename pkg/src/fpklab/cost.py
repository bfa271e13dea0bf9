"""Bounded monotone radial costs ``h`` and their time-rescaled versions ``h_s(r) = h(r e^{-s})``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ArgumentError, ContractViolation

_CHECK_POINTS = 1000


def _check_grid(radius: float) -> np.ndarray:
    """Zero plus a geometric grid of 10^3 points up to ``10 * radius``."""
    return np.concatenate([[0.0], np.geomspace(1e-6 * radius, 10.0 * radius, _CHECK_POINTS - 1)])


@dataclass(frozen=True)
class CostFunction:
    """A bounded, non-decreasing cost ``h`` with ``h(0) = 0``.

    Use :func:`capped_power`, :func:`capped_concave` or :func:`custom` rather than the
    constructor. ``shift`` is the accumulated time rescaling ``s``.
    """

    family: str
    base: Callable[[np.ndarray], np.ndarray]
    sup_bound: float
    radius: float = 1.0
    p: float | None = None
    shift: float = 0.0
    params: tuple = ()

    def __post_init__(self):
        if not math.isfinite(self.sup_bound) or self.sup_bound <= 0:
            raise ContractViolation(f"cost must be bounded, sup_bound={self.sup_bound!r}")
        if self.shift == 0.0:
            self._validate()

    def _validate(self):
        r = _check_grid(self.radius)
        v = np.asarray(self.base(r), dtype=float)
        if not np.all(np.isfinite(v)):
            raise ContractViolation("cost is not finite on the check grid")
        if v[0] != 0.0:
            raise ContractViolation(f"h(0) = {v[0]!r}, expected 0")
        if np.any(np.diff(v) < -1e-12 * self.sup_bound):
            raise ContractViolation("cost is not monotone non-decreasing")
        if np.any(v > self.sup_bound * (1 + 1e-12)) or np.any(v < 0):
            raise ContractViolation(f"cost leaves [0, {self.sup_bound}]")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ArgumentError("cost argument must be nonnegative")
        if self.shift != 0.0:
            r = r * math.exp(-self.shift)
        out = self.base(r)
        return float(out) if np.ndim(out) == 0 else out

    evaluate = __call__

    def rescaled(self, s: float) -> CostFunction:
        return rescaled(self, s)


def _capped_power_fn(p: float):
    def h(r):
        return np.minimum(np.asarray(r, dtype=float) ** p, 1.0)

    return h


def capped_power(p: float) -> CostFunction:
    """``h(r) = min{r^p, 1}`` for ``p >= 1``."""
    if not p >= 1:
        raise ArgumentError(f"capped_power needs p >= 1, got {p!r}")
    return CostFunction("capped_power", _capped_power_fn(float(p)), 1.0, 1.0, float(p), params=(("p", float(p)),))


def capped_concave(table=None, fn: Callable | None = None, sup_bound: float | None = None, radius: float = 1.0) -> CostFunction:
    """A concave-type cost from a table of ``(r, h)`` knots or from a closure.

    Table costs are piecewise linear between knots and constant after the last one.
    """
    if table is not None:
        knots = np.asarray(table, dtype=float)
        if knots.ndim != 2 or knots.shape[1] != 2:
            raise ArgumentError("table must be a list of (r, h) pairs")
        rs, hs = knots[:, 0], knots[:, 1]
        if rs[0] != 0.0:
            rs, hs = np.concatenate([[0.0], rs]), np.concatenate([[0.0], hs])

        def h(r):
            return np.interp(r, rs, hs)

        return CostFunction(
            "capped_concave", h, float(hs.max()), float(rs[-1]), params=(("table", tuple(map(tuple, knots.tolist()))),)
        )
    if fn is None or sup_bound is None:
        raise ArgumentError("capped_concave needs a table, or fn together with sup_bound")
    return CostFunction("capped_concave", fn, float(sup_bound), radius)


def custom(fn: Callable, sup_bound: float, radius: float = 1.0) -> CostFunction:
    return CostFunction("custom", fn, float(sup_bound), radius)


def rescaled(h: CostFunction, s: float) -> CostFunction:
    """Cost ``r -> h(r e^{-s})`` with the same sup bound."""
    if not math.isfinite(s):
        raise ArgumentError("rescaling parameter must be finite")
    return CostFunction(h.family, h.base, h.sup_bound, h.radius, h.p, h.shift + float(s), h.params)


def is_concave_metric_family(h: CostFunction) -> bool:
    """Sampled test: slopes between grid points never increase and ``h(r) > 0`` for ``r > 0``."""
    r = _check_grid(h.radius * math.exp(h.shift))
    v = np.asarray(h(r), dtype=float)
    if np.any(v[1:] <= 0):
        return False
    slopes = np.diff(v) / np.diff(r)
    return bool(np.all(np.diff(slopes) <= 1e-9 * np.maximum(1.0, np.abs(slopes[:-1]))))
