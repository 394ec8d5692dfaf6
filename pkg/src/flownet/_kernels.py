"""Compiled inner loops.

The reflection fixed point and the oracle's boundary-outflow resolution are
called once per window / per time step, on small arrays, so interpreter
overhead would dominate; both loops are jitted with numba.  Everything here
operates on plain float64 arrays and mirrors the reference formulas used by
the public operations one-to-one.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_EPS = 2.220446049250313e-16


@njit(cache=True)
def psi_fixed_point(G, RT, u, rho, tol, cap):  # pragma: no cover - compiled
    """Fixed point of ``v -> running_max([R^T v - gamma]_+)`` from ``v = 0``.

    G
        (n+1, E) samples of gamma.
    RT
        R transposed, C-contiguous.
    u
        weights of the certified norm.
    rho
        certified contraction factor of ``R^T``.

    Stops when the successive-iterate distance in the trajectory norm drops
    below ``tol * (1 - rho) / max(rho, eps)``; the Banach a-posteriori bound
    then puts the iterate within ``tol`` of the true fixed point.  Returns
    ``(V, iterations, residual_bound, converged)`` with
    ``residual_bound = rho * last_delta``.
    """
    n1, E = G.shape
    V = np.zeros((n1, E))
    thresh = tol * (1.0 - rho) / max(rho, _EPS)
    it = 0
    while it < cap:
        it += 1
        Vn = np.empty((n1, E))
        for k in range(n1):
            for i in range(E):
                s = -G[k, i]
                for j in range(E):
                    s += RT[i, j] * V[k, j]
                if s < 0.0:
                    s = 0.0
                if k > 0 and Vn[k - 1, i] > s:
                    s = Vn[k - 1, i]
                Vn[k, i] = s
        delta = 0.0
        for i in range(E):
            m = 0.0
            for k in range(n1):
                d = abs(Vn[k, i] - V[k, i])
                if d > m:
                    m = d
            m /= u[i]
            if m > delta:
                delta = m
        V = Vn
        if delta <= thresh:
            return V, it, rho * delta, True
    return V, it, delta, False


@njit(cache=True)
def resolve_active_outflow(zeta, lam, RT, active, u, tol, cap):  # pragma: no cover
    """Monotone iteration ``z -> min(zeta, lam + R^T z)`` on the active set.

    Links outside the active set stay pinned at ``zeta``.  Starting from
    ``z = zeta`` the iterates decrease monotonically to the maximal fixed
    point below ``zeta``.  Returns ``(z, iterations, converged)``.
    """
    E = zeta.shape[0]
    z = zeta.copy()
    it = 0
    any_active = False
    for i in range(E):
        if active[i]:
            any_active = True
    if not any_active:
        return z, 0, True
    while it < cap:
        it += 1
        delta = 0.0
        zn = np.empty(E)
        for i in range(E):
            if active[i]:
                s = lam[i]
                for j in range(E):
                    s += RT[i, j] * z[j]
                if s > zeta[i]:
                    s = zeta[i]
                zn[i] = s
                d = abs(s - z[i]) / u[i]
                if d > delta:
                    delta = d
            else:
                zn[i] = zeta[i]
        z = zn
        if delta <= tol:
            return z, it, True
    return z, it, False
