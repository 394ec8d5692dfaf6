"""Scenario files, trajectory CSV output, and report serialization.

A scenario is a single JSON document.  Routing is entered as turn-fraction
triples rather than a raw matrix, which makes topology-inconsistent
matrices unrepresentable::

    {
      "name": "small example",
      "nodes": ["a", "b"],
      "links": [{"id": "e1", "tail": "a", "head": "b"}, ...],
      "routing": [{"from": "e1", "to": "e2", "fraction": 0.5}, ...],
      "inflows": [{"link": "e1", "breakpoints": [0.0], "values": [0.3]}],
      "controllers": [
        {"kind": "constant", "caps": {"e2": 1.0}},
        {"kind": "gpa", "kappa": 0.1, "phases": [["e1", "e8"], ["e3", "e5"]]},
        {"kind": "ctm", "cells": [{"link": "e15",
                                   "demand": {"kind": "linear", "slope": 1.0},
                                   "downstream": "e16",
                                   "supply": {"max_flow": 1.0, "slope": 1.0}}]}
      ],
      "initial": {"e1": 0.1},
      "horizon": 20.0,
      "step": 0.01,
      "tolerances": {"picard": 1e-10, "reflection": 1e-12}
    }

Links absent from ``inflows`` / ``initial`` default to zero.  Every link
must be covered by exactly one controller.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .controllers import (
    AffineSupply,
    CompositeController,
    ConstantController,
    Controller,
    CtmController,
    CtmLinkSpec,
    GpaJunctionController,
    GpaPhaseSpec,
    LinearDemand,
    SaturatingDemand,
    compose,
)
from .errors import ScenarioFormatError, ScenarioValidationError, StructuralError
from .network import Multigraph, RoutingSpec, validate_routing
from .solver import InflowSignal, Scenario, Solution, SolveReport

__all__ = [
    "load_scenario",
    "document_to_scenario",
    "scenario_to_document",
    "write_scenario",
    "write_csv",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "report_to_dict",
    "write_report",
    "bundled_scenario_path",
    "list_bundled_scenarios",
]


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(doc: dict, key: str, kind, where: str = "scenario"):
    if key not in doc:
        raise ScenarioFormatError(f"{where}: missing field {key!r}")
    value = doc[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ScenarioFormatError(f"{where}: field {key!r} must be a number")
        return float(value)
    if not isinstance(value, kind):
        raise ScenarioFormatError(f"{where}: field {key!r} must be {kind.__name__}")
    return value


def _build_controller(
    entry: dict,
    index: dict[str, int],
    n_links: int,
    violations: list[str],
) -> Controller | None:
    kind = entry.get("kind")
    where = f"controller[{kind}]"

    def link_idx(name: Any) -> int | None:
        if not isinstance(name, str) or name not in index:
            violations.append(f"{where}: unknown link id {name!r}")
            return None
        return index[name]

    try:
        if kind == "constant":
            caps = _require(entry, "caps", dict, where)
            ids, vals = [], []
            for name, value in caps.items():
                idx = link_idx(name)
                if idx is None:
                    return None
                ids.append(idx)
                vals.append(float(value))
            return ConstantController(tuple(ids), tuple(vals), n_links)
        if kind == "gpa":
            kappa = _require(entry, "kappa", float, where)
            phases_doc = _require(entry, "phases", list, where)
            phases = []
            for phase in phases_doc:
                idxs = [link_idx(name) for name in phase]
                if any(i is None for i in idxs):
                    return None
                phases.append(tuple(idxs))
            return GpaJunctionController(GpaPhaseSpec(tuple(phases), kappa), n_links)
        if kind == "ctm":
            cells_doc = _require(entry, "cells", list, where)
            rules = []
            for cell in cells_doc:
                link = link_idx(cell.get("link"))
                down = link_idx(cell.get("downstream"))
                if link is None or down is None:
                    return None
                demand_doc = _require(cell, "demand", dict, where)
                dkind = demand_doc.get("kind", "linear")
                if dkind == "linear":
                    demand = LinearDemand(_require(demand_doc, "slope", float, where))
                elif dkind == "saturating":
                    demand = SaturatingDemand(
                        _require(demand_doc, "capacity", float, where),
                        _require(demand_doc, "kappa", float, where),
                    )
                else:
                    violations.append(f"{where}: unknown demand kind {dkind!r}")
                    return None
                supply_doc = _require(cell, "supply", dict, where)
                supply = AffineSupply(
                    _require(supply_doc, "max_flow", float, where),
                    _require(supply_doc, "slope", float, where),
                )
                rules.append(CtmLinkSpec(link, demand, down, supply))
            return CtmController(tuple(rules), n_links)
    except StructuralError as exc:
        violations.append(f"{where}: {exc}")
        return None
    violations.append(f"controller: unknown kind {kind!r}")
    return None


def document_to_scenario(doc: dict) -> Scenario:
    """Build and fully validate a scenario from a parsed document.

    Raises :class:`ScenarioFormatError` on malformed structure and
    :class:`ScenarioValidationError` listing every semantic violation found.
    """
    try:
        return _document_to_scenario(doc)
    except (ScenarioFormatError, ScenarioValidationError):
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"scenario: malformed field: {exc}") from exc


def _document_to_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario document must be a JSON object")

    nodes = tuple(_require(doc, "nodes", list))
    links_doc = _require(doc, "links", list)
    link_ids, tail, head = [], {}, {}
    for item in links_doc:
        if not isinstance(item, dict):
            raise ScenarioFormatError("links: each entry must be an object")
        lid = _require(item, "id", str, "links")
        link_ids.append(lid)
        tail[lid] = _require(item, "tail", str, f"link {lid}")
        head[lid] = _require(item, "head", str, f"link {lid}")

    violations: list[str] = []
    try:
        graph = Multigraph(nodes, tuple(link_ids), tail, head)
    except StructuralError as exc:
        raise ScenarioValidationError([str(exc)]) from exc
    index = {lid: i for i, lid in enumerate(link_ids)}
    n = len(link_ids)

    R = np.zeros((n, n))
    for row in _require(doc, "routing", list):
        src, dst = row.get("from"), row.get("to")
        if src not in index:
            violations.append(f"routing: unknown link id {src!r}")
            continue
        if dst not in index:
            violations.append(f"routing: unknown link id {dst!r}")
            continue
        R[index[src], index[dst]] += float(row.get("fraction", 0.0))
    spec = RoutingSpec(graph, R)
    report = validate_routing(spec)
    violations.extend(report.violations)

    parts = []
    for entry in _require(doc, "controllers", list):
        ctrl = _build_controller(entry, index, n, violations)
        if ctrl is not None:
            parts.append(ctrl)
    controller: Controller | None = None
    if parts:
        try:
            controller = compose(parts, n)
        except StructuralError as exc:
            violations.append(str(exc))
    else:
        violations.append("no usable controller defined")

    segments: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for entry in _require(doc, "inflows", list):
        name = entry.get("link")
        if name not in index:
            violations.append(f"inflows: unknown link id {name!r}")
            continue
        breaks = np.asarray(entry.get("breakpoints", [0.0]), dtype=float)
        vals = np.asarray(entry.get("values", []), dtype=float)
        if breaks.shape != vals.shape:
            violations.append(f"inflows: link {name}: breakpoints and values differ in length")
            continue
        if breaks.size == 0 or breaks[0] != 0.0:
            violations.append(f"inflows: link {name}: first breakpoint must be 0")
            continue
        segments[index[name]] = (breaks, vals)
    try:
        inflow = _merge_inflows(segments, n)
    except StructuralError as exc:
        violations.append(f"inflows: {exc}")
        inflow = InflowSignal.constant(np.zeros(n))

    x0 = np.zeros(n)
    for name, value in _require(doc, "initial", dict).items():
        if name not in index:
            violations.append(f"initial: unknown link id {name!r}")
            continue
        x0[index[name]] = float(value)

    horizon = _require(doc, "horizon", float)
    step = _require(doc, "step", float)
    tols = doc.get("tolerances", {})
    tol_picard = float(tols.get("picard", 1e-10))
    tol_psi = tols.get("reflection")
    tol_psi = float(tol_psi) if tol_psi is not None else None

    if violations or controller is None:
        raise ScenarioValidationError(violations)
    try:
        return Scenario(
            routing=spec,
            controller=controller,
            inflow=inflow,
            x0=x0,
            horizon=horizon,
            step=step,
            tol_picard=tol_picard,
            tol_psi=tol_psi,
            name=str(doc.get("name", "")),
        )
    except StructuralError as exc:
        raise ScenarioValidationError([str(exc)]) from exc


def _merge_inflows(
    segments: dict[int, tuple[np.ndarray, np.ndarray]], n: int
) -> InflowSignal:
    if not segments:
        return InflowSignal.constant(np.zeros(n))
    all_breaks = np.unique(
        np.concatenate([[0.0]] + [b for b, _ in segments.values()])
    )
    values = np.zeros((len(all_breaks), n))
    for link, (breaks, vals) in segments.items():
        idx = np.clip(np.searchsorted(breaks, all_breaks, side="right") - 1, 0, None)
        values[:, link] = vals[idx]
    return InflowSignal(all_breaks, values)


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioFormatError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return document_to_scenario(doc)


def _controller_entries(controller: Controller, links: tuple[str, ...]) -> list[dict]:
    parts = controller.parts if isinstance(controller, CompositeController) else (controller,)
    entries = []
    for part in parts:
        if isinstance(part, ConstantController):
            entries.append(
                {
                    "kind": "constant",
                    "caps": {links[i]: v for i, v in zip(part.link_ids, part.values)},
                }
            )
        elif isinstance(part, GpaJunctionController):
            entries.append(
                {
                    "kind": "gpa",
                    "kappa": part.spec.kappa,
                    "phases": [[links[i] for i in phase] for phase in part.spec.phases],
                }
            )
        elif isinstance(part, CtmController):
            cells = []
            for rule in part.rules:
                if isinstance(rule.demand, LinearDemand):
                    demand = {"kind": "linear", "slope": rule.demand.slope}
                elif isinstance(rule.demand, SaturatingDemand):
                    demand = {
                        "kind": "saturating",
                        "capacity": rule.demand.capacity,
                        "kappa": rule.demand.kappa,
                    }
                else:
                    raise StructuralError(
                        f"cannot serialize demand {type(rule.demand).__name__}"
                    )
                cells.append(
                    {
                        "link": links[rule.link],
                        "demand": demand,
                        "downstream": links[rule.downstream],
                        "supply": {
                            "max_flow": rule.supply.max_flow,
                            "slope": rule.supply.slope,
                        },
                    }
                )
            entries.append({"kind": "ctm", "cells": cells})
        else:
            raise StructuralError(f"cannot serialize controller {type(part).__name__}")
    return entries


def scenario_to_document(scenario: Scenario) -> dict:
    """Inverse of :func:`document_to_scenario` for built-in controller kinds."""
    graph = scenario.routing.graph
    links = graph.links
    routing = [
        {"from": links[i], "to": links[j], "fraction": float(scenario.routing.R[i, j])}
        for i, j in np.argwhere(scenario.routing.R > 0.0)
    ]
    inflows = []
    for i, lid in enumerate(links):
        vals = scenario.inflow.values[:, i]
        if np.any(vals != 0.0):
            inflows.append(
                {
                    "link": lid,
                    "breakpoints": scenario.inflow.breakpoints.tolist(),
                    "values": vals.tolist(),
                }
            )
    doc = {
        "name": scenario.name,
        "nodes": list(graph.nodes),
        "links": [
            {"id": lid, "tail": graph.tail[lid], "head": graph.head[lid]}
            for lid in links
        ],
        "routing": routing,
        "inflows": inflows,
        "controllers": _controller_entries(scenario.controller, links),
        "initial": {
            lid: float(v) for lid, v in zip(links, scenario.x0) if v != 0.0
        },
        "horizon": scenario.horizon,
        "step": scenario.step,
        "tolerances": {"picard": scenario.tol_picard},
    }
    if scenario.tol_psi is not None:
        doc["tolerances"]["reflection"] = scenario.tol_psi
    return doc


def write_scenario(scenario: Scenario, path: str | Path) -> None:
    _atomic_write_text(Path(path), json.dumps(scenario_to_document(scenario), indent=2))


def write_csv(path: str | Path, header: list[str], rows: np.ndarray) -> None:
    """Write a numeric table with 17 significant digits per value, so that
    re-parsing reproduces the float64 samples bit-exactly."""
    lines = [",".join(header)]
    lines.extend(",".join(f"{v:.17g}" for v in row) for row in rows)
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_trajectory_csv(path: str | Path, solution: Solution, links: tuple[str, ...]) -> None:
    """Trajectory table: ``t`` then x, z, zeta, w blocks per link."""
    header = (
        ["t"]
        + [f"x_{l}" for l in links]
        + [f"z_{l}" for l in links]
        + [f"zeta_{l}" for l in links]
        + [f"w_{l}" for l in links]
    )
    times = solution.grid.times
    blocks = [solution.x.values, solution.z.values, solution.zeta.values, solution.w.values]
    write_csv(path, header, np.hstack([times[:, None]] + blocks))


def read_trajectory_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read back a trajectory table; returns (header, data)."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return header, data


def report_to_dict(report: SolveReport) -> dict:
    """JSON-compatible summary of a solve report.

    Per-window statistics are summarized (count, iteration totals, worst
    residual); the full per-window list stays on the Python object.
    """
    c = report.constants
    return {
        "grid": {"h": report.h, "n_steps": report.n_steps},
        "certified": {
            "routing_contraction": c.routing_contraction,
            "net_flow_norm": c.net_flow_norm,
            "lipschitz_sup": c.lipschitz_sup,
            "lipschitz_weighted": c.lipschitz_weighted,
            "integral_rate": c.integral_rate,
            "reflection_gain": c.reflection_gain,
            "safety_factor": c.safety_factor,
            "window_length": c.window,
        },
        "windows": {
            "count": report.n_windows,
            "total_iterations": report.total_iterations,
            "max_iterations": report.max_iterations,
            "max_residual": report.max_residual,
        },
        "outflow_clamp_max": report.clamp_max,
        "tolerances": {"picard": report.tol_picard, "reflection": report.tol_psi},
        "misaligned_breakpoints": list(report.misaligned_breakpoints),
    }


def write_report(path: str | Path, payload: dict) -> None:
    _atomic_write_text(Path(path), json.dumps(payload, indent=2))


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (without extension)."""
    root = resources.files("flownet") / "scenarios"
    candidate = root / f"{name}.json"
    with resources.as_file(candidate) as real:
        if not real.exists():
            raise ScenarioFormatError(
                f"no bundled scenario {name!r}; available: {', '.join(list_bundled_scenarios())}"
            )
        return Path(real)


def list_bundled_scenarios() -> list[str]:
    root = resources.files("flownet") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))
