"""Solution-invariant checks shared by the test suite and the CLI.

Every trajectory produced by the solver or the oracle must satisfy the
defining conditions of the dynamics up to a tolerance proportional to the
grid step: nonnegative volumes, outflows between zero and the control cap,
complementarity (a link holding volume discharges at its cap), discrete
mass balance, and a regulator that only grows where the volume sits at
zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import Scenario, Solution

__all__ = [
    "InvariantCheck",
    "check_flow_run",
    "check_solution",
    "default_tolerance",
    "DEFAULT_EPS_FACTOR",
]

# Default tolerance is this multiple of the grid step.
DEFAULT_EPS_FACTOR = 50.0
# Regulator increments below this threshold are numerical noise, not service
# deficit; genuine increments scale with h * deficit.
W_INCREMENT_FLOOR = 1e-8


@dataclass(frozen=True)
class InvariantCheck:
    name: str
    passed: bool
    worst: float
    tolerance: float

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst": float(self.worst),
            "tolerance": float(self.tolerance),
        }


def default_tolerance(h: float) -> float:
    return DEFAULT_EPS_FACTOR * h


def _check(name: str, worst: float, tol: float) -> InvariantCheck:
    return InvariantCheck(name, bool(worst <= tol), float(worst), float(tol))


def check_flow_run(
    times: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
    zeta: np.ndarray,
    scenario: Scenario,
    eps: float,
    w: np.ndarray | None = None,
) -> tuple[InvariantCheck, ...]:
    """Run the five solution invariants on raw trajectory arrays.

    When ``w`` is given, the boundary check asserts that the regulator only
    increases where the volume is (numerically) zero; otherwise it asserts
    the equivalent statement on the outflow deficit ``zeta - z``.
    """
    times = np.asarray(times, dtype=float)
    h = float(times[1] - times[0])
    R = scenario.routing.R
    lam_rows = scenario.inflow.sample(times)

    checks = [
        _check("nonnegativity", float(np.max(-x, initial=0.0)), eps),
        _check(
            "flow_bounds",
            max(float(np.max(-z, initial=0.0)), float(np.max(z - zeta, initial=0.0))),
            eps,
        ),
    ]

    # complementarity: sum_i x_i (zeta_i - z_i) small relative to |x|
    slack = np.sum(x * np.maximum(zeta - z, 0.0), axis=1)
    scale = 1.0 + np.max(np.abs(x), axis=1)
    checks.append(_check("complementarity", float(np.max(slack / scale, initial=0.0)), eps))

    # mass balance against the left-rule quadrature of lam - (I - R^T) z
    D = lam_rows[:-1] - (z[:-1] - z[:-1] @ R)
    integral = np.vstack([np.zeros_like(x[0]), h * np.cumsum(D, axis=0)])
    drift = np.max(np.abs(x - x[0] - integral))
    checks.append(_check("mass_balance", float(drift), eps))

    if w is not None:
        increments = np.diff(w, axis=0)
        monotone = float(np.max(-increments, initial=0.0))
        start = float(np.max(np.abs(w[0]), initial=0.0))
        growing = increments > W_INCREMENT_FLOOR * (1.0 + np.max(np.abs(w)))
        if growing.any():
            worst = float(np.max(np.where(growing, x[1:], 0.0)))
        else:
            worst = 0.0
        checks.append(_check("regulator_monotone", max(monotone, start), eps))
        checks.append(_check("boundary_only_regulator_growth", worst, eps))
    else:
        deficit = zeta - z > eps
        worst = float(np.max(np.where(deficit, x, 0.0), initial=0.0))
        checks.append(_check("boundary_only_deficit", worst, eps))

    return tuple(checks)


def check_solution(
    scenario: Scenario, solution: Solution, eps: float | None = None
) -> tuple[InvariantCheck, ...]:
    """Invariant suite for a solver output; ``eps`` defaults to 50 h."""
    eps = eps if eps is not None else default_tolerance(solution.report.h)
    return check_flow_run(
        solution.grid.times,
        solution.x.values,
        solution.z.values,
        solution.zeta.values,
        scenario,
        eps,
        w=solution.w.values,
    )
