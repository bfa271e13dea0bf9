"""Exact Kantorovich h-cost between particle clouds.

The linear program ``min <pi, M>`` over couplings is solved by the network simplex of
POT (``ot.emd``), which also returns the dual potentials. ``kantorovich_bruteforce``
enumerates permutation couplings and serves as an independent oracle.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass

import numpy as np

from .cost import CostFunction
from .errors import ArgumentError, CapacityError, ContractViolation, NumericalError
from .measures import ParticleCloud

# POT probes every array backend on import; only numpy is needed here.
for _backend in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

SUPPORT_LIMIT = 4096
BRUTEFORCE_LIMIT = 8
GAP_TOL = 1e-8
FEASIBILITY_TOL = 1e-9
_MAX_ITER = 10**8


@dataclass(frozen=True)
class TransportPlan:
    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    cost_value: float


@dataclass(frozen=True)
class DualPotentials:
    phi: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True)
class KantorovichResult:
    cost: float
    plan: TransportPlan
    duals: DualPotentials
    gap: float

    def __iter__(self):
        # unpacks as (cost, plan, duals)
        return iter((self.cost, self.plan, self.duals))


def pairwise_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def cost_matrix(h: CostFunction, mu: ParticleCloud, sigma: ParticleCloud) -> np.ndarray:
    if mu.dim != sigma.dim:
        raise ArgumentError(f"dimension mismatch: {mu.dim} vs {sigma.dim}")
    return np.asarray(h(pairwise_distances(mu.points, sigma.points)), dtype=float)


def kantorovich(h: CostFunction, mu: ParticleCloud, sigma: ParticleCloud, limit: int = SUPPORT_LIMIT) -> KantorovichResult:
    """Optimal coupling cost ``C_h(mu, sigma)`` with plan and dual potentials."""
    if mu.dim != sigma.dim:
        raise ArgumentError(f"dimension mismatch: {mu.dim} vs {sigma.dim}")
    if max(mu.size, sigma.size) > limit:
        raise CapacityError(f"support sizes {mu.size}x{sigma.size} exceed the limit of {limit} points")
    M = cost_matrix(h, mu, sigma)
    a = np.ascontiguousarray(mu.weights)
    b = np.ascontiguousarray(sigma.weights)
    # the simplex wants equal totals to machine precision
    b = b * (a.sum() / b.sum())
    G, log = ot.emd(a, b, M, numItermax=_MAX_ITER, log=True)
    if log["result_code"] != 1:
        raise NumericalError(f"network simplex did not reach optimality: {log['warning']}")
    primal = float(np.sum(G * M))
    u, v = np.asarray(log["u"]), np.asarray(log["v"])
    dual = float(a @ u + b @ v)
    gap = abs(primal - dual)
    if gap > GAP_TOL:
        raise NumericalError(f"duality gap {gap:.3e} exceeds {GAP_TOL}")
    primal = min(max(primal, 0.0), h.sup_bound)
    plan = TransportPlan(G, G.sum(axis=1), G.sum(axis=0), primal)
    return KantorovichResult(primal, plan, DualPotentials(u, v), gap)


def kantorovich_cost(h: CostFunction, mu: ParticleCloud, sigma: ParticleCloud, limit: int = SUPPORT_LIMIT) -> float:
    return kantorovich(h, mu, sigma, limit).cost


def kantorovich_bruteforce(h: CostFunction, mu: ParticleCloud, sigma: ParticleCloud) -> float:
    """Minimum over all ``n!`` permutation couplings of two uniform n-point clouds."""
    n = mu.size
    if sigma.size != n or not (mu.is_uniform() and sigma.is_uniform()):
        raise CapacityError("brute force needs two uniform clouds of equal size")
    if n > BRUTEFORCE_LIMIT:
        raise CapacityError(f"brute force is limited to n <= {BRUTEFORCE_LIMIT}, got {n}")
    M = cost_matrix(h, mu, sigma)
    rows = np.arange(n)
    best = min(M[rows, list(perm)].sum() for perm in itertools.permutations(range(n)))
    return float(best) / n


def dual_value(duals: DualPotentials, mu: ParticleCloud, sigma: ParticleCloud, h: CostFunction | None = None) -> float:
    """``sum phi_i w_i + sum psi_j v_j``; with ``h`` given, feasibility is checked first."""
    phi, psi = np.asarray(duals.phi, dtype=float), np.asarray(duals.psi, dtype=float)
    if phi.shape != (mu.size,) or psi.shape != (sigma.size,):
        raise ArgumentError("potential lengths do not match the clouds")
    if h is not None:
        slack = phi[:, None] + psi[None, :] - cost_matrix(h, mu, sigma)
        i, j = np.unravel_index(int(np.argmax(slack)), slack.shape)
        if slack[i, j] > FEASIBILITY_TOL:
            raise ContractViolation(
                f"infeasible potentials: phi[{i}] + psi[{j}] exceeds h(|x_{i} - y_{j}|) by {slack[i, j]:.3e}"
            )
    return float(mu.weights @ phi + sigma.weights @ psi)


def synchronous_upper_bound(h: CostFunction, mu: ParticleCloud, sigma: ParticleCloud) -> float:
    """Cost of the index-matching coupling ``sum_i w_i h(|x_i - y_i|)`` of paired clouds."""
    if mu.size != sigma.size or not np.array_equal(mu.weights, sigma.weights):
        raise ArgumentError("synchronous coupling needs paired clouds with identical weights")
    if mu.dim != sigma.dim:
        raise ArgumentError(f"dimension mismatch: {mu.dim} vs {sigma.dim}")
    r = np.linalg.norm(mu.points - sigma.points, axis=1)
    return float(mu.weights @ h(r))
