"""Shared fixtures and the random scenario generator."""

from __future__ import annotations

import numpy as np
import pytest

from flownet import (
    AffineSupply,
    CompositeController,
    ConstantController,
    CtmController,
    CtmLinkSpec,
    GpaJunctionController,
    GpaPhaseSpec,
    InflowSignal,
    LinearDemand,
    Multigraph,
    RoutingSpec,
    SaturatingDemand,
    Scenario,
    bundled_scenario_path,
    load_scenario,
    validate_routing,
)


def single_link_graph() -> Multigraph:
    return Multigraph(("a", "b"), ("e1",), {"e1": "a"}, {"e1": "b"})


def chain_graph() -> Multigraph:
    return Multigraph(
        ("a", "b", "c"),
        ("e1", "e2"),
        {"e1": "a", "e2": "b"},
        {"e1": "b", "e2": "c"},
    )


def single_link_spec() -> RoutingSpec:
    return RoutingSpec(single_link_graph(), np.zeros((1, 1)))


def chain_spec(fraction: float = 1.0) -> RoutingSpec:
    R = np.array([[0.0, fraction], [0.0, 0.0]])
    return RoutingSpec(chain_graph(), R)


def constant_scenario(
    cap: float,
    lam: float,
    x0: float,
    horizon: float = 2.0,
    step: float = 0.01,
) -> Scenario:
    spec = single_link_spec()
    return Scenario(
        routing=spec,
        controller=ConstantController((0,), (cap,), 1),
        inflow=InflowSignal.constant(np.array([lam])),
        x0=np.array([x0]),
        horizon=horizon,
        step=step,
    )


def random_routing(rng: np.random.Generator, n_links: int | None = None) -> RoutingSpec:
    """Random valid out-connected routing spec with at most 8 links."""
    while True:
        E = int(n_links) if n_links is not None else int(rng.integers(1, 9))
        n_nodes = int(rng.integers(2, 5))
        nodes = tuple(f"n{k}" for k in range(n_nodes))
        tails, heads, links = {}, {}, []
        for i in range(E):
            t, h = rng.choice(n_nodes, size=2, replace=False)
            lid = f"e{i}"
            links.append(lid)
            tails[lid] = nodes[t]
            heads[lid] = nodes[h]
        graph = Multigraph(nodes, tuple(links), tails, heads)
        R = np.zeros((E, E))
        for i in range(E):
            downstream = [j for j in range(E) if tails[links[j]] == heads[links[i]]]
            if not downstream or rng.random() < 0.2:
                continue  # everything exits the network
            total = rng.uniform(0.2, 0.9)
            weights = rng.random(len(downstream))
            weights = weights / weights.sum() * total
            for j, w in zip(downstream, weights):
                R[i, j] = w
        spec = RoutingSpec(graph, R)
        if validate_routing(spec).ok:
            return spec


def random_controller(rng: np.random.Generator, spec: RoutingSpec):
    """Random mix of junction, cell, and constant controllers covering spec."""
    graph = spec.graph
    E = spec.n_links
    covered: set[int] = set()
    parts = []

    # group inbound links per node to form junctions
    inbound: dict[str, list[int]] = {}
    for i, lid in enumerate(graph.links):
        inbound.setdefault(graph.head[lid], []).append(i)
    for node, members in inbound.items():
        if len(members) >= 2 and rng.random() < 0.5:
            members = [m for m in members if m not in covered]
            if len(members) < 2:
                continue
            split = int(rng.integers(1, len(members)))
            phases = (tuple(members[:split]), tuple(members[split:]))
            kappa = float(rng.uniform(0.3, 1.5))
            parts.append(GpaJunctionController(GpaPhaseSpec(phases, kappa), E))
            covered.update(members)

    ctm_rules = []
    for i in range(E):
        if i in covered:
            continue
        downstream = np.flatnonzero(spec.R[i] > 0)
        if downstream.size and rng.random() < 0.4:
            j = int(rng.choice(downstream))
            if rng.random() < 0.5:
                demand = LinearDemand(float(rng.uniform(0.5, 1.5)))
            else:
                demand = SaturatingDemand(
                    float(rng.uniform(0.8, 1.5)), float(rng.uniform(0.5, 1.5))
                )
            supply = AffineSupply(
                float(rng.uniform(0.8, 1.6)), float(rng.uniform(0.5, 1.2))
            )
            ctm_rules.append(CtmLinkSpec(i, demand, j, supply))
            covered.add(i)
    if ctm_rules:
        parts.append(CtmController(tuple(ctm_rules), E))

    rest = sorted(set(range(E)) - covered)
    if rest:
        caps = tuple(float(rng.uniform(0.2, 1.2)) for _ in rest)
        parts.append(ConstantController(tuple(rest), caps, E))
    if len(parts) == 1:
        return parts[0]
    return CompositeController(tuple(parts), E)


def random_scenario(
    rng: np.random.Generator,
    horizon: float = 20.0,
    step: float = 0.01,
    n_links: int | None = None,
) -> Scenario:
    spec = random_routing(rng, n_links)
    E = spec.n_links
    controller = random_controller(rng, spec)
    lam0 = rng.uniform(0.0, 0.5, size=E) * (rng.random(E) < 0.8)
    if rng.random() < 0.3:
        # two-segment inflow switching mid-run, aligned with the grid
        lam1 = rng.uniform(0.0, 0.5, size=E) * (rng.random(E) < 0.8)
        inflow = InflowSignal(
            np.array([0.0, horizon / 2.0]), np.vstack([lam0, lam1])
        )
    else:
        inflow = InflowSignal.constant(lam0)
    x0 = rng.uniform(0.0, 1.0, size=E) * (rng.random(E) < 0.8)
    return Scenario(
        routing=spec,
        controller=controller,
        inflow=inflow,
        x0=x0,
        horizon=horizon,
        step=step,
    )


@pytest.fixture(scope="session")
def gpa_scenario() -> Scenario:
    return load_scenario(bundled_scenario_path("two_junction_gpa"))


@pytest.fixture(scope="session")
def ctm_scenario() -> Scenario:
    return load_scenario(bundled_scenario_path("two_junction_ctm"))


@pytest.fixture(scope="session")
def chain_scenario() -> Scenario:
    return load_scenario(bundled_scenario_path("two_cell_chain"))
