"""Feedback controllers bounding per-link outflow.

A controller maps the full network state ``x`` to a vector of outflow caps,
writing only its own links and leaving the rest at zero.  Three families are
built in:

* proportional phase allocation at signalized junctions (service share of a
  phase proportional to its queue mass, with an overhead constant),
* demand/supply coupling for road cells (outflow is the minimum of the
  cell's own demand and the downstream cell's remaining supply),
* constant caps (typically boundary links discharging at fixed capacity).

Each controller declares a Lipschitz constant in the plain sup-norm; the
solver converts it to the weighted norm when sizing contraction windows.
All evaluation is vectorized: ``evaluate`` accepts a single state ``(E,)``
or a stack of states ``(n, E)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import StructuralError
from .network import WeightedNorm

__all__ = [
    "Controller",
    "ConstantController",
    "GpaPhaseSpec",
    "GpaJunctionController",
    "DemandFunction",
    "LinearDemand",
    "SaturatingDemand",
    "AffineSupply",
    "CtmLinkSpec",
    "CtmController",
    "CompositeController",
    "compose",
    "weighted_lipschitz",
    "estimate_lipschitz",
]


class Controller:
    """Base interface: a Lipschitz map from states to outflow caps."""

    links: tuple[int, ...]
    n_links: int
    lipschitz_constant: float

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Outflow caps for state(s) ``x``; same leading shape as ``x``."""
        raise NotImplementedError


def _as_rows(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise StructuralError(f"state array must be 1- or 2-dimensional, got {x.ndim}")


@dataclass(frozen=True)
class ConstantController(Controller):
    """State-independent caps; Lipschitz constant zero."""

    link_ids: tuple[int, ...]
    values: tuple[float, ...]
    n_links: int

    def __post_init__(self):
        if len(self.link_ids) != len(self.values):
            raise StructuralError("one cap value per controlled link required")
        if len(set(self.link_ids)) != len(self.link_ids):
            raise StructuralError("duplicate link index in constant caps")
        if any(v < 0 for v in self.values):
            raise StructuralError("constant caps must be nonnegative")
        template = np.zeros(self.n_links)
        template[list(self.link_ids)] = self.values
        template.setflags(write=False)
        object.__setattr__(self, "_template", template)

    @property
    def links(self) -> tuple[int, ...]:
        return self.link_ids

    @property
    def lipschitz_constant(self) -> float:
        return 0.0

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        rows, squeeze = _as_rows(x)
        out = np.repeat(self._template[None, :], rows.shape[0], axis=0)
        return out[0] if squeeze else out


@dataclass(frozen=True)
class GpaPhaseSpec:
    """Phases of one signalized junction: disjoint groups of inbound links
    served together, plus the overhead constant ``kappa > 0``."""

    phases: tuple[tuple[int, ...], ...]
    kappa: float

    def __post_init__(self):
        if self.kappa <= 0:
            raise StructuralError("kappa must be positive")
        if not self.phases or any(len(p) == 0 for p in self.phases):
            raise StructuralError("each phase must contain at least one link")
        seen: set[int] = set()
        for phase in self.phases:
            for link in phase:
                if link in seen:
                    raise StructuralError(f"link index {link} appears in two phases")
                seen.add(link)

    @property
    def junction_links(self) -> tuple[int, ...]:
        return tuple(i for phase in self.phases for i in phase)


@dataclass(frozen=True)
class GpaJunctionController(Controller):
    """Proportional phase allocation at one junction.

    Every link in phase ``p`` gets the cap ``sum(x[p]) / (sum(x[J]) + kappa)``
    where ``J`` is the union of all phases.  Values lie in ``[0, 1)`` and the
    per-phase values sum to ``sum(x[J]) / (sum(x[J]) + kappa) < 1``.

    The declared Lipschitz constant is the sup-norm gradient bound
    ``max_p max(|p|, |J| - |p|) / kappa``, which is ``2 / kappa`` for the
    usual two-links-per-phase layout.
    """

    spec: GpaPhaseSpec
    n_links: int

    def __post_init__(self):
        if any(i < 0 or i >= self.n_links for i in self.spec.junction_links):
            raise StructuralError("phase link index out of range")
        object.__setattr__(
            self, "_junction_idx", np.array(self.spec.junction_links, dtype=np.intp)
        )
        object.__setattr__(
            self,
            "_phase_idx",
            tuple(np.array(p, dtype=np.intp) for p in self.spec.phases),
        )

    @property
    def links(self) -> tuple[int, ...]:
        return self.spec.junction_links

    @property
    def lipschitz_constant(self) -> float:
        m = len(self.spec.junction_links)
        worst = max(max(len(p), m - len(p)) for p in self.spec.phases)
        return worst / self.spec.kappa

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        rows, squeeze = _as_rows(x)
        out = np.zeros_like(rows)
        total = rows[:, self._junction_idx].sum(axis=1) + self.spec.kappa
        for idx in self._phase_idx:
            share = rows[:, idx].sum(axis=1) / total
            out[:, idx] = share[:, None]
        return out[0] if squeeze else out


class DemandFunction:
    """Strictly increasing Lipschitz map with ``d(0) = 0``."""

    lipschitz: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearDemand(DemandFunction):
    slope: float

    def __post_init__(self):
        if self.slope <= 0:
            raise StructuralError("demand slope must be positive")

    @property
    def lipschitz(self) -> float:
        return self.slope

    def __call__(self, x):
        return self.slope * x


@dataclass(frozen=True)
class SaturatingDemand(DemandFunction):
    """``d(x) = capacity * x / (x + kappa)``: increasing, bounded by capacity."""

    capacity: float
    kappa: float

    def __post_init__(self):
        if self.capacity <= 0 or self.kappa <= 0:
            raise StructuralError("capacity and kappa must be positive")

    @property
    def lipschitz(self) -> float:
        return self.capacity / self.kappa

    def __call__(self, x):
        return self.capacity * x / (x + self.kappa)


@dataclass(frozen=True)
class AffineSupply:
    """``s(x) = max(max_flow - slope * x, 0)``: non-increasing, nonnegative."""

    max_flow: float
    slope: float

    def __post_init__(self):
        if self.max_flow < 0 or self.slope < 0:
            raise StructuralError("supply parameters must be nonnegative")

    @property
    def lipschitz(self) -> float:
        return self.slope

    def __call__(self, x):
        return np.maximum(self.max_flow - self.slope * x, 0.0)


@dataclass(frozen=True)
class CtmLinkSpec:
    """One road cell: its demand function and the downstream cell whose
    remaining supply caps it."""

    link: int
    demand: DemandFunction
    downstream: int
    supply: AffineSupply


@dataclass(frozen=True)
class CtmController(Controller):
    """Cell-to-cell outflow caps ``min(demand_i(x_i), supply_j(x_j))``."""

    rules: tuple[CtmLinkSpec, ...]
    n_links: int

    def __post_init__(self):
        seen: set[int] = set()
        for rule in self.rules:
            for idx in (rule.link, rule.downstream):
                if idx < 0 or idx >= self.n_links:
                    raise StructuralError(f"link index {idx} out of range")
            if rule.link in seen:
                raise StructuralError(f"duplicate rule for link index {rule.link}")
            seen.add(rule.link)

    @property
    def links(self) -> tuple[int, ...]:
        return tuple(rule.link for rule in self.rules)

    @property
    def lipschitz_constant(self) -> float:
        return max(
            max(rule.demand.lipschitz, rule.supply.lipschitz) for rule in self.rules
        )

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        rows, squeeze = _as_rows(x)
        out = np.zeros_like(rows)
        for rule in self.rules:
            out[:, rule.link] = np.minimum(
                rule.demand(rows[:, rule.link]), rule.supply(rows[:, rule.downstream])
            )
        return out[0] if squeeze else out


@dataclass(frozen=True)
class CompositeController(Controller):
    """Disjoint controllers concatenated into one map over all links."""

    parts: tuple[Controller, ...]
    n_links: int

    def __post_init__(self):
        seen: set[int] = set()
        for part in self.parts:
            if part.n_links != self.n_links:
                raise StructuralError("all components must share the link count")
            overlap = seen.intersection(part.links)
            if overlap:
                raise StructuralError(f"link indices {sorted(overlap)} controlled twice")
            seen.update(part.links)
        if seen != set(range(self.n_links)):
            missing = sorted(set(range(self.n_links)) - seen)
            raise StructuralError(f"link indices {missing} have no controller")

    @property
    def links(self) -> tuple[int, ...]:
        return tuple(range(self.n_links))

    @property
    def lipschitz_constant(self) -> float:
        # sup-norm is per-coordinate, so the bound is the worst component
        return max(part.lipschitz_constant for part in self.parts)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        rows, squeeze = _as_rows(x)
        out = np.zeros_like(rows)
        for part in self.parts:
            out += part.evaluate(rows)
        return out[0] if squeeze else out


def compose(parts: Sequence[Controller], n_links: int) -> Controller:
    """Concatenate controllers over disjoint link sets covering all links."""
    if not parts:
        raise StructuralError("at least one controller required")
    if len(parts) == 1 and set(parts[0].links) == set(range(n_links)):
        return parts[0]
    return CompositeController(tuple(parts), n_links)


def weighted_lipschitz(controller: Controller, wn: WeightedNorm) -> float:
    """Lipschitz bound in the weighted sup-norm.

    With weights ``u``, norms convert as ``|v|_u <= |v|_inf / min(u)`` and
    ``|v|_inf <= max(u) |v|_u``, so a sup-norm constant ``L`` becomes
    ``L * max(u) / min(u)``.
    """
    u = wn.weights
    if u.size == 0:
        return controller.lipschitz_constant
    return controller.lipschitz_constant * float(u.max() / u.min())


def estimate_lipschitz(
    controller: Controller,
    box: tuple[float, float] | tuple[np.ndarray, np.ndarray],
    n: int,
    wn: WeightedNorm | None = None,
    seed: int = 0,
) -> float:
    """Sampled lower bound on the Lipschitz constant.

    Draws ``n`` states uniformly from the box and returns the largest
    pairwise ratio ``|zeta(x) - zeta(x')| / |x - x'|`` in the weighted
    sup-norm (unit weights when ``wn`` is omitted).  Used as a sanity check
    against the declared constant, never as a replacement for it.
    """
    if n < 2:
        raise StructuralError("need at least two samples")
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (controller.n_links,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (controller.n_links,))
    rng = np.random.default_rng(seed)
    states = lo + (hi - lo) * rng.random((n, controller.n_links))
    values = controller.evaluate(states)
    u = wn.weights if wn is not None else np.ones(controller.n_links)
    best = 0.0
    for i in range(n - 1):
        dx = np.max(np.abs(states[i + 1 :] - states[i]) / u, axis=1)
        dz = np.max(np.abs(values[i + 1 :] - values[i]) / u, axis=1)
        mask = dx > 0
        if mask.any():
            best = max(best, float(np.max(dz[mask] / dx[mask])))
    return best
