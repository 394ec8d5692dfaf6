"""Command-line interface.

Subcommands: ``simulate``, ``equilibrium``, ``verify``, ``compare-oracle``,
``plot-data``.  Every command prints a JSON report to stdout.  Exit codes:

* 0 success
* 1 scenario or model validation failure
* 2 numerical non-convergence
* 3 invariant violation (``verify``)

Set ``FLOWNET_LOG`` (DEBUG/INFO/WARNING/ERROR) to control log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    CertificationError,
    NonConvergenceError,
    ScenarioFormatError,
    ScenarioValidationError,
    StructuralError,
)
from .network import equilibrium_outflow
from .oracle import OracleConfig, oracle_solve
from .scenario_io import (
    load_scenario,
    report_to_dict,
    write_csv,
    write_report,
    write_trajectory_csv,
)
from .solver import Scenario, solve
from .verification import check_solution, default_tolerance

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NONCONVERGENCE = 2
EXIT_INVARIANT = 3

log = logging.getLogger("flownet")


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _load(args: argparse.Namespace) -> Scenario:
    scenario = load_scenario(args.scenario)
    overrides = {}
    if getattr(args, "step", None) is not None:
        overrides["step"] = args.step
    if getattr(args, "tol", None) is not None:
        overrides["tol_picard"] = args.tol
    if overrides:
        scenario = dataclasses.replace(scenario, **overrides)
    log.info(
        "loaded scenario %r: %d links, horizon %g, step %g",
        scenario.name,
        scenario.n_links,
        scenario.horizon,
        scenario.step,
    )
    return scenario


def _cmd_simulate(args: argparse.Namespace) -> int:
    scenario = _load(args)
    solution = solve(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    links = scenario.routing.graph.links
    csv_path = out / "trajectory.csv"
    report_path = out / "report.json"
    write_trajectory_csv(csv_path, solution, links)
    checks = check_solution(scenario, solution)
    write_report(
        report_path,
        {
            "scenario": scenario.name,
            **report_to_dict(solution.report),
            "invariants": [c.as_dict() for c in checks],
        },
    )
    _emit(
        {
            "scenario": scenario.name,
            "trajectory": str(csv_path),
            "report": str(report_path),
            "windows": solution.report.n_windows,
            "h": solution.report.h,
        }
    )
    return EXIT_OK


def _cmd_equilibrium(args: argparse.Namespace) -> int:
    scenario = _load(args)
    links = scenario.routing.graph.links
    inflow = scenario.inflow
    segments = []
    for j, start in enumerate(inflow.breakpoints):
        a = equilibrium_outflow(scenario.routing, inflow.values[j])
        segments.append(
            {"start": float(start), "equilibrium": {l: float(v) for l, v in zip(links, a)}}
        )
    payload: dict = {"scenario": scenario.name, "segments": segments}
    if len(segments) > 1:
        payload["note"] = "inflow is piecewise constant; one equilibrium per segment"
    _emit(payload)
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    scenario = _load(args)
    solution = solve(scenario)
    eps = args.eps if args.eps is not None else default_tolerance(solution.report.h)
    checks = check_solution(scenario, solution, eps)
    ok = all(c.passed for c in checks)
    _emit(
        {
            "scenario": scenario.name,
            "eps": eps,
            "checks": [c.as_dict() for c in checks],
            "ok": ok,
            **report_to_dict(solution.report),
        }
    )
    return EXIT_OK if ok else EXIT_INVARIANT


def _cmd_compare_oracle(args: argparse.Namespace) -> int:
    scenario = _load(args)
    solution = solve(scenario)
    h = solution.report.h
    run = oracle_solve(scenario, OracleConfig(step=h / args.refine))
    times = solution.grid.times
    x_oracle = run.x_at(times)
    diff = np.abs(solution.x.values - x_oracle)
    links = scenario.routing.graph.links
    per_link = {l: float(diff[:, i].max()) for i, l in enumerate(links)}
    _emit(
        {
            "scenario": scenario.name,
            "h": h,
            "h_oracle": h / args.refine,
            "sup_distance": float(diff.max()),
            "per_link": per_link,
        }
    )
    return EXIT_OK


def _cmd_plot_data(args: argparse.Namespace) -> int:
    scenario = _load(args)
    solution = solve(scenario)
    links = scenario.routing.graph.links
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    times = solution.grid.times

    volumes = out / "volumes.csv"
    header = ["t"] + [f"x_{l}" for l in links]
    write_csv(volumes, header, np.hstack([times[:, None], solution.x.values]))

    a = equilibrium_outflow(scenario.routing, scenario.inflow.values[0])
    controls = out / "controls.csv"
    header = ["t"] + [f"zeta_{l}" for l in links] + [f"equilibrium_{l}" for l in links]
    ref = np.tile(a, (len(times), 1))
    write_csv(controls, header, np.hstack([times[:, None], solution.zeta.values, ref]))

    _emit({"scenario": scenario.name, "volumes": str(volumes), "controls": str(controls)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flownet",
        description="Simulate and verify feedback-controlled point-queue flow networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, step_tol: bool = True) -> None:
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        if step_tol:
            p.add_argument("--step", type=float, default=None, help="override grid step")
            p.add_argument(
                "--tol", type=float, default=None, help="override Picard tolerance"
            )

    p = sub.add_parser("simulate", help="solve and write trajectory CSV + report")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("equilibrium", help="print steady-state arrival rates")
    add_common(p, step_tol=False)
    p.set_defaults(func=_cmd_equilibrium)

    p = sub.add_parser("verify", help="solve and run the invariant suite")
    add_common(p)
    p.add_argument(
        "--eps",
        type=float,
        default=None,
        help="invariant tolerance (default 50 * step)",
    )
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("compare-oracle", help="sup-distance against the reference integrator")
    add_common(p)
    p.add_argument(
        "--refine", type=int, default=10, help="oracle step = solver step / refine"
    )
    p.set_defaults(func=_cmd_compare_oracle)

    p = sub.add_parser("plot-data", help="emit volume and control CSVs for plotting")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_plot_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("FLOWNET_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        _emit({"error": "validation", "violations": exc.violations})
        return EXIT_VALIDATION
    except (ScenarioFormatError, StructuralError, CertificationError) as exc:
        _emit({"error": "validation", "message": str(exc)})
        return EXIT_VALIDATION
    except NonConvergenceError as exc:
        _emit(
            {
                "error": "non-convergence",
                "message": str(exc),
                "iterations": exc.iterations,
                "residual": exc.residual,
            }
        )
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
