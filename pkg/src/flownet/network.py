"""Network topology, routing matrix validation, and contraction certificates.

A flow network is a directed multigraph whose links act as point queues.
The routing matrix ``R`` gives the fraction ``R[i, j]`` of link ``i``'s
outflow that enters link ``j``; the row deficit ``1 - sum_j R[i, j]``
leaves the network.  Everything downstream (the reflection operators, the
solver, the oracle) relies on two certificates produced here:

* out-connectedness of ``R``, which implies spectral radius < 1, and
* a weighted sup-norm under which ``R^T`` is a strict contraction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import CertificationError, StructuralError

__all__ = [
    "Multigraph",
    "RoutingSpec",
    "WeightedNorm",
    "ValidityReport",
    "validate_routing",
    "check_out_connected",
    "build_weighted_norm",
    "equilibrium_outflow",
]


@dataclass(frozen=True)
class Multigraph:
    """Directed multigraph with explicit tail/head maps.

    Links are identified by string ids; parallel links and opposite
    directions between the same node pair are allowed.  Self-loops are not.
    """

    nodes: tuple[str, ...]
    links: tuple[str, ...]
    tail: Mapping[str, str]
    head: Mapping[str, str]

    def __post_init__(self):
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise StructuralError("duplicate node ids")
        if len(set(self.links)) != len(self.links):
            raise StructuralError("duplicate link ids")
        for link in self.links:
            if link not in self.tail or link not in self.head:
                raise StructuralError(f"link {link!r} missing tail or head")
            if self.tail[link] not in node_set:
                raise StructuralError(f"link {link!r} tail {self.tail[link]!r} not a node")
            if self.head[link] not in node_set:
                raise StructuralError(f"link {link!r} head {self.head[link]!r} not a node")
            if self.tail[link] == self.head[link]:
                raise StructuralError(f"link {link!r} is a self-loop")

    @property
    def n_links(self) -> int:
        return len(self.links)

    def link_index(self, link: str) -> int:
        try:
            return self.links.index(link)
        except ValueError:
            raise StructuralError(f"unknown link id {link!r}") from None


@dataclass(frozen=True)
class RoutingSpec:
    """A multigraph together with its routing matrix.

    Construction only enforces structure (square matrix, matching
    dimension).  Model invariants -- nonnegativity, sub-stochastic rows,
    topology consistency, out-connectedness -- are checked by
    :func:`validate_routing`, which reports violations instead of raising.
    """

    graph: Multigraph
    R: np.ndarray
    row_sum_tolerance: float = 1e-12

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        n = self.graph.n_links
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise StructuralError(f"routing matrix must be square, got shape {R.shape}")
        if R.shape[0] != n:
            raise StructuralError(
                f"routing matrix is {R.shape[0]}x{R.shape[0]} but the graph has {n} links"
            )
        if self.row_sum_tolerance <= 0:
            raise StructuralError("row_sum_tolerance must be positive")
        R = R.copy()
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @property
    def n_links(self) -> int:
        return self.graph.n_links


@dataclass(frozen=True)
class WeightedNorm:
    """Positive weights ``u`` and a factor ``rho < 1`` certifying that the
    weighted sup-norm ``|v| = max_i |v_i| / u_i`` contracts ``R^T``:
    ``sum_j (R^T)[i, j] * u_j <= rho * u_i`` for every row ``i``.
    """

    weights: np.ndarray
    contraction_factor: float

    def __post_init__(self):
        u = np.asarray(self.weights, dtype=float)
        if u.ndim != 1 or not np.all(u > 0) or not np.all(np.isfinite(u)):
            raise StructuralError("weights must be a finite positive vector")
        if not 0.0 <= self.contraction_factor < 1.0:
            raise CertificationError(
                f"contraction factor must lie in [0, 1), got {self.contraction_factor}"
            )
        u = u.copy()
        u.setflags(write=False)
        object.__setattr__(self, "weights", u)

    def norm(self, v: np.ndarray) -> float:
        """Weighted sup-norm of a vector (or row-stacked vectors)."""
        v = np.asarray(v, dtype=float)
        return float(np.max(np.abs(v) / self.weights, initial=0.0))

    def induced_norm(self, M: np.ndarray) -> float:
        """Induced matrix norm: ``max_i sum_j |M[i, j]| u_j / u_i``."""
        u = self.weights
        return float(np.max((np.abs(M) @ u) / u))


@dataclass(frozen=True)
class ValidityReport:
    """Outcome of :func:`validate_routing`: empty means all invariants hold."""

    violations: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:  # truthiness == validity
        return self.ok


def _deficient_rows(spec: RoutingSpec) -> np.ndarray:
    """Boolean mask of rows whose sum is strictly below one (with tolerance)."""
    return spec.R.sum(axis=1) < 1.0 - spec.row_sum_tolerance


def check_out_connected(spec: RoutingSpec) -> bool:
    """Every link must reach, along positive routing entries, some link whose
    row sum is strictly below one.  The link itself counts (path length zero).

    Implemented as reverse breadth-first search from the deficient rows on
    the support graph of ``R``; no matrix powers are formed.
    """
    R = spec.R
    n = spec.n_links
    if n == 0:
        return True
    deficient = _deficient_rows(spec)
    reached = deficient.copy()
    queue = deque(np.flatnonzero(deficient))
    # predecessors[j] = links i with R[i, j] > 0
    support = R > 0.0
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(support[:, j]):
            if not reached[i]:
                reached[i] = True
                queue.append(i)
    return bool(reached.all())


def validate_routing(spec: RoutingSpec) -> ValidityReport:
    """Check every standing assumption on the routing matrix.

    Returns a report listing each violated invariant with the offending
    indices; an empty report means the spec is usable by the solver.
    """
    R = spec.R
    graph = spec.graph
    tol = spec.row_sum_tolerance
    violations: list[str] = []

    bad = np.argwhere(R < 0.0)
    if bad.size:
        pairs = ", ".join(f"({graph.links[i]}, {graph.links[j]})" for i, j in bad[:5])
        violations.append(f"negative routing fractions at {pairs}")

    row_sums = R.sum(axis=1)
    over = np.flatnonzero(row_sums > 1.0 + tol)
    if over.size:
        names = ", ".join(
            f"{graph.links[i]} (sum={row_sums[i]:.6g})" for i in over[:5]
        )
        violations.append(f"row sums exceed one for links {names}")

    for i, j in np.argwhere(R > 0.0):
        if graph.head[graph.links[i]] != graph.tail[graph.links[j]]:
            violations.append(
                f"routing {graph.links[i]} -> {graph.links[j]} does not follow the topology "
                f"(head {graph.head[graph.links[i]]!r} != tail {graph.tail[graph.links[j]]!r})"
            )

    if not check_out_connected(spec):
        violations.append("routing matrix is not out-connected")

    return ValidityReport(tuple(violations))


def build_weighted_norm(spec: RoutingSpec) -> WeightedNorm:
    """Construct weights certifying that ``R^T`` is a strict contraction.

    Solves ``(I - R^T) u = 1``; out-connectedness makes the inverse
    nonnegative, so ``u >= 1`` and ``(R^T u)_i = u_i - 1`` row by row.  The
    certified factor is the largest row-wise ratio ``(R^T u)_i / u_i``,
    which equals ``1 - 1/max(u)`` in exact arithmetic.  No eigensolver is
    involved and the certificate can be re-checked row by row.
    """
    R = spec.R
    n = spec.n_links
    if not check_out_connected(spec):
        raise CertificationError("spectral radius not certified < 1: routing is not out-connected")
    if n == 0:
        return WeightedNorm(np.ones(0), 0.0)
    try:
        u = np.linalg.solve(np.eye(n) - R.T, np.ones(n))
    except np.linalg.LinAlgError as exc:
        raise CertificationError(f"spectral radius not certified < 1: {exc}") from exc
    if not np.all(np.isfinite(u)) or np.any(u <= 0):
        raise CertificationError("spectral radius not certified < 1: degenerate weight vector")
    ratios = (R.T @ u) / u
    rho = float(np.max(ratios, initial=0.0))
    if not 0.0 <= rho < 1.0:
        raise CertificationError(f"spectral radius not certified < 1: rho={rho}")
    return WeightedNorm(u, rho)


def equilibrium_outflow(spec: RoutingSpec, lam: np.ndarray) -> np.ndarray:
    """Steady-state arrival rates ``a`` solving ``(I - R^T) a = lam``.

    For a valid out-connected spec the solution is entry-wise nonnegative
    and unique; it is the vector the controls converge to on links that
    keep positive volume.
    """
    lam = np.asarray(lam, dtype=float)
    n = spec.n_links
    if lam.shape != (n,):
        raise StructuralError(f"inflow vector has shape {lam.shape}, expected ({n},)")
    try:
        a = np.linalg.solve(np.eye(n) - spec.R.T, lam)
    except np.linalg.LinAlgError as exc:
        raise CertificationError(f"equilibrium system is singular: {exc}") from exc
    return a
