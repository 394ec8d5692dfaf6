"""Independent reference integrator for cross-validation.

A fine-step projected Euler scheme that never touches the reflection
machinery: at each step the boundary outflows are resolved directly from
the complementarity conditions (links holding volume discharge at their
cap; empty links pass through what arrives, up to the cap).  Agreement
between this integrator and the fixed-point solver is therefore evidence,
not a tautology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NonConvergenceError, StructuralError
from .network import WeightedNorm, build_weighted_norm
from .solver import Scenario

__all__ = [
    "OracleConfig",
    "OracleRun",
    "resolve_boundary_outflow",
    "oracle_solve",
    "closed_form_single_cell",
]


@dataclass(frozen=True)
class OracleConfig:
    """Fine-grid integrator settings.

    ``step`` defaults to one tenth of the scenario step.  ``eps_active``
    decides which volumes count as empty; floating point never lands
    exactly on the boundary.
    """

    step: float | None = None
    eps_active: float = 1e-9
    tol: float = 1e-12
    max_iterations: int = 10_000

    def __post_init__(self):
        if self.step is not None and self.step <= 0:
            raise StructuralError("oracle step must be positive")
        if self.eps_active < 0 or self.tol <= 0 or self.max_iterations < 1:
            raise StructuralError("bad oracle configuration")


@dataclass(frozen=True)
class OracleRun:
    """Fine-grid trajectories produced by :func:`oracle_solve`."""

    times: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def x_at(self, times: np.ndarray) -> np.ndarray:
        """Volumes linearly interpolated at arbitrary times."""
        times = np.asarray(times, dtype=float)
        out = np.empty((len(times), self.x.shape[1]))
        for i in range(self.x.shape[1]):
            out[:, i] = np.interp(times, self.times, self.x[:, i])
        return out


def resolve_boundary_outflow(
    x: np.ndarray,
    zeta: np.ndarray,
    lam: np.ndarray,
    routing_matrix: np.ndarray,
    wn: WeightedNorm,
    eps_active: float = 1e-9,
    tol: float = 1e-12,
    cap: int = 10_000,
) -> np.ndarray:
    """Outflow consistent with the complementarity conditions at one state.

    Links with ``x_i > eps_active`` discharge at their cap ``zeta_i``.  On
    the empty set the outflow solves ``z = min(zeta, lam + R^T z)``: an
    empty link forwards exactly what arrives unless that exceeds its cap.
    The fixed point is computed by iterating from ``z = zeta``; the map is
    order-preserving and the start dominates every fixed point, so the
    iterates decrease monotonically and contract under the certified norm.
    """
    x = np.asarray(x, dtype=float)
    zeta = np.ascontiguousarray(zeta, dtype=float)
    lam = np.ascontiguousarray(lam, dtype=float)
    RT = np.ascontiguousarray(routing_matrix.T)
    active = np.ascontiguousarray(x <= eps_active)
    z, iterations, converged = _kernels.resolve_active_outflow(
        zeta, lam, RT, active, wn.weights, tol, cap
    )
    if not converged:
        raise NonConvergenceError(
            "boundary outflow resolution did not converge; routing matrix may not "
            "be sub-stochastic",
            iterations,
            float("nan"),
        )
    return z


def oracle_solve(scenario: Scenario, cfg: OracleConfig = OracleConfig()) -> OracleRun:
    """Projected explicit Euler on a fine grid.

    ``x_{k+1} = [x_k + h (lam(t_k) - (I - R^T) z_k)]_+`` where ``z_k``
    resolves the boundary outflows at ``x_k``.  The projection absorbs the
    ``O(h^2)`` overshoot an explicit step can take before the empty set
    updates.  Deterministic by construction.
    """
    h = cfg.step if cfg.step is not None else scenario.step / 10.0
    n = max(1, round(scenario.horizon / h))
    h = scenario.horizon / n
    R = scenario.routing.R
    RT = np.ascontiguousarray(R.T)
    wn = build_weighted_norm(scenario.routing)
    E = scenario.n_links

    times = h * np.arange(n + 1)
    lam_rows = scenario.inflow.sample(times)
    X = np.empty((n + 1, E))
    Z = np.empty((n + 1, E))
    X[0] = scenario.x0
    for k in range(n):
        x = X[k]
        zeta = scenario.controller.evaluate(x)
        lam = np.ascontiguousarray(lam_rows[k])
        active = np.ascontiguousarray(x <= cfg.eps_active)
        z, iterations, converged = _kernels.resolve_active_outflow(
            np.ascontiguousarray(zeta), lam, RT, active, wn.weights, cfg.tol,
            cfg.max_iterations,
        )
        if not converged:
            raise NonConvergenceError(
                "boundary outflow resolution did not converge", iterations, float("nan")
            )
        Z[k] = z
        X[k + 1] = np.maximum(x + h * (lam_rows[k] - (z - z @ R)), 0.0)
    Z[n] = Z[n - 1]
    return OracleRun(times=times, x=X, z=Z)


def closed_form_single_cell(
    zeta_cap: float, lam: float, x0: float, t: float | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exact solution for one isolated cell with constant cap and inflow.

    While the cell holds volume it drains at ``zeta_cap``; if it empties
    (only possible when ``lam < zeta_cap``) the outflow drops to ``lam``.
    Returns ``(x, z)`` evaluated at ``t``.
    """
    t = np.asarray(t, dtype=float)
    if lam >= zeta_cap:
        x = x0 + (lam - zeta_cap) * t
        z = np.full_like(t, zeta_cap)
        return x, z
    x = np.maximum(x0 - (zeta_cap - lam) * t, 0.0)
    z = np.where(x > 0, zeta_cap, lam)
    # at the exact hitting time the volume is zero and outflow is lam
    return x, z
