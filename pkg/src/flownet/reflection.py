"""Reflection operators on discretized trajectories.

Trajectories live on a uniform time grid and are understood as piecewise
linear; all operators act on the samples, with running suprema taken over
grid points only.  The central object is the map

    ``Pi_gamma(v)(t) = sup_{0 <= s <= t} [R^T v(s) - gamma(s)]_+``

whose unique fixed point (a contraction under the certified weighted norm)
is the minimal nondecreasing regulator keeping volumes nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NonConvergenceError, StructuralError
from .network import RoutingSpec, WeightedNorm

__all__ = [
    "TimeGrid",
    "TrajectoryGrid",
    "traj_norm",
    "apply_pi",
    "fixed_point_psi",
    "apply_phi",
    "psi_iteration_cap",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = t0 + k h`` for ``k = 0..n``."""

    t0: float
    h: float
    n: int

    def __post_init__(self):
        if self.h <= 0:
            raise StructuralError("grid step must be positive")
        if self.n < 1:
            raise StructuralError("grid needs at least one step")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n + 1)

    @property
    def t_end(self) -> float:
        return self.t0 + self.h * self.n

    def compatible(self, other: "TimeGrid") -> bool:
        return (
            self.n == other.n
            and math.isclose(self.t0, other.t0, rel_tol=1e-12, abs_tol=1e-12)
            and math.isclose(self.h, other.h, rel_tol=1e-12, abs_tol=1e-15)
        )


@dataclass(frozen=True)
class TrajectoryGrid:
    """Vector-valued samples on a :class:`TimeGrid`; row ``k`` is the state
    at ``t_k``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.grid.n + 1:
            raise StructuralError(
                f"values must have shape ({self.grid.n + 1}, n_links), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise StructuralError("trajectory contains non-finite samples")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_links(self) -> int:
        return self.values.shape[1]


def _check_pair(a: TrajectoryGrid, b: TrajectoryGrid) -> None:
    if not a.grid.compatible(b.grid) or a.n_links != b.n_links:
        raise StructuralError("trajectories live on different grids")


def traj_norm_values(values: np.ndarray, wn: WeightedNorm) -> float:
    """Trajectory norm on a raw sample array: entry-wise sup over time, then
    the weighted vector norm."""
    sup = np.max(np.abs(values), axis=0)
    return float(np.max(sup / wn.weights, initial=0.0))


def traj_norm(v: TrajectoryGrid, wn: WeightedNorm) -> float:
    """``| sup_k |v(t_k)| |`` in the certified weighted norm."""
    if v.n_links != wn.weights.shape[0]:
        raise StructuralError("trajectory and norm dimensions differ")
    return traj_norm_values(v.values, wn)


def pi_values(gamma: np.ndarray, v: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Raw-array reflection operator: prefix maximum of ``[R^T v - gamma]_+``.

    Row ``k`` of the result is ``max_{s <= k} [R^T v(t_s) - gamma(t_s)]_+``,
    computed as one matrix product and a cumulative maximum.
    """
    excess = np.maximum(v @ R - gamma, 0.0)
    return np.maximum.accumulate(excess, axis=0)


def apply_pi(gamma: TrajectoryGrid, v: TrajectoryGrid, routing: RoutingSpec) -> TrajectoryGrid:
    """Reflection operator on trajectories sharing one grid.

    Output is entry-wise nonnegative and non-decreasing in time.
    """
    _check_pair(gamma, v)
    if gamma.n_links != routing.n_links:
        raise StructuralError("trajectory dimension does not match the routing matrix")
    return TrajectoryGrid(gamma.grid, pi_values(gamma.values, v.values, routing.R))


def psi_iteration_cap(tol: float, rho: float) -> int:
    """Default iteration budget for the fixed-point iteration."""
    if rho <= 0.0:
        return 100
    return 10 * math.ceil(math.log(tol) / math.log(rho)) + 100


def psi_values(
    gamma: np.ndarray,
    R: np.ndarray,
    wn: WeightedNorm,
    tol: float,
    cap: int | None = None,
) -> tuple[np.ndarray, int, float]:
    """Raw-array fixed point of the reflection operator.

    Iterates ``v <- Pi_gamma(v)`` from ``v = 0``; the zero start lies below
    the fixed point and the operator is monotone, so convergence is
    monotone non-decreasing.  Stopping uses the Banach a-posteriori bound
    with the certified contraction factor, which turns ``tol`` into a true
    distance-to-fixed-point bound rather than a heuristic.
    """
    if tol <= 0:
        raise StructuralError("tolerance must be positive")
    rho = wn.contraction_factor
    if cap is None:
        cap = psi_iteration_cap(tol, rho)
    RT = np.ascontiguousarray(R.T)
    G = np.ascontiguousarray(gamma)
    W, iterations, residual, converged = _kernels.psi_fixed_point(
        G, RT, wn.weights, rho, tol, cap
    )
    if not converged:
        raise NonConvergenceError(
            "reflection fixed point did not converge; the contraction certificate "
            "may not match the routing matrix",
            iterations,
            residual,
        )
    return W, iterations, residual


def fixed_point_psi(
    gamma: TrajectoryGrid,
    routing: RoutingSpec,
    wn: WeightedNorm,
    tol: float = 1e-10,
) -> tuple[TrajectoryGrid, int, float]:
    """Unique fixed point ``w = Pi_gamma(w)``.

    Returns ``(w, iterations, residual)`` where ``residual`` bounds the
    remaining defect ``|w - Pi_gamma(w)|`` in the trajectory norm (and,
    divided by ``1 - rho``, the distance to the true fixed point).  The
    output is entry-wise nonnegative and non-decreasing in time.
    """
    if gamma.n_links != routing.n_links:
        raise StructuralError("trajectory dimension does not match the routing matrix")
    W, iterations, residual = psi_values(gamma.values, routing.R, wn, tol)
    return TrajectoryGrid(gamma.grid, W), iterations, residual


def phi_values(
    y: np.ndarray,
    R: np.ndarray,
    wn: WeightedNorm,
    tol: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw-array ``x = y + (I - R^T) w`` with ``w`` the reflection fixed
    point of ``y``.  Returns ``(x, w)``."""
    W, _, _ = psi_values(y, R, wn, tol)
    X = y + W - W @ R
    return X, W


def apply_phi(
    y: TrajectoryGrid,
    routing: RoutingSpec,
    wn: WeightedNorm,
    tol: float = 1e-10,
) -> TrajectoryGrid:
    """Reflected trajectory ``y + (I - R^T) Psi(y)``; nonnegative up to the
    fixed-point tolerance."""
    if y.n_links != routing.n_links:
        raise StructuralError("trajectory dimension does not match the routing matrix")
    X, _ = phi_values(y.values, routing.R, wn, tol)
    return TrajectoryGrid(y.grid, X)
