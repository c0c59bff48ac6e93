"""Command line entry point: gen, fit, plan, simulate, report."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from .device import DeviceModel, training_samples
from .graph_model import GraphError, graph_from_dict, load_graph
from .latency_model import fit_predictor
from .orchestrator import plan_jobs
from .peak_analysis import dump_reports
from .plan import dump_plans
from .scenario import ScenarioError, read_scenario, run_modes, write_outputs
from .simulator import MODES, SimulationError
from .workloads import FAMILIES, generate_workload

logger = logging.getLogger("memsched")


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
        return
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _modes(values: Optional[List[str]], default) -> List[str]:
    if not values:
        return list(default)
    out = []
    for v in values:
        for m in v.split(","):
            if m not in MODES:
                raise ScenarioError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
            if m not in out:
                out.append(m)
    return out


def cmd_gen(args) -> int:
    doc = generate_workload(args.family, args.batch_size, args.seed, job_id=args.job_id,
                            depth=args.depth, width=args.width, layers=args.layers, image=args.image)
    # validate before writing
    graph_from_dict(doc)
    _write(args.out, json.dumps(doc, indent=1))
    return 0


def cmd_fit(args) -> int:
    graphs = []
    if args.config:
        graphs += [j.graph for j in read_scenario(args.config).jobs]
    for path in args.graph or []:
        with open(path) as fh:
            graphs.append(load_graph(fh.read()))
    if not graphs:
        raise ScenarioError("fit needs --config or at least one --graph")
    samples = training_samples(graphs, DeviceModel(), noise=args.noise, seed=args.seed)
    predictor = fit_predictor(samples)
    for kind, r2 in predictor.r2().items():
        logger.info("%s: r2=%.4f", kind, r2)
    _write(args.out, predictor.dumps())
    return 0


def cmd_plan(args) -> int:
    scenario = read_scenario(args.config, args.seed)
    lat = scenario.planning_latencies()
    session = plan_jobs([(j.graph, lat[j.graph.job_id]) for j in scenario.jobs],
                        scenario.planner_config(scenario.memory_budget()))
    if args.out and args.out != "-" and not args.out.endswith(".json"):
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "plans.json"), dump_plans(session.plans))
        _write(os.path.join(args.out, "peak_reports.json"), dump_reports(session.reports))
    else:
        _write(args.out, dump_plans(session.plans))
    return 0


def _run(args, default_modes) -> int:
    scenario = read_scenario(args.config, args.seed)
    result = run_modes(scenario, _modes(args.mode, default_modes))
    written = write_outputs(result, args.out, args.format)
    for row in result.summary:
        logger.info("%s: peak=%d msr=%.4f eor=%.4f cbr=%s passive=%d", row["mode"], row["peak"], row["msr"],
                    row["eor"], row["cbr"], row["passive_swaps"])
    for path in written:
        logger.debug("wrote %s", path)
    bad = [r for r in result.summary if r["violations"]]
    return 1 if bad else 0


def cmd_simulate(args) -> int:
    return _run(args, ("scheduled",))


def cmd_report(args) -> int:
    return _run(args, MODES)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memsched", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a workload graph file")
    g.add_argument("--family", required=True, choices=FAMILIES)
    g.add_argument("--batch-size", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--job-id")
    g.add_argument("--depth", type=int, default=3, help="layers of the chain family")
    g.add_argument("--width", type=int, default=64, help="width of the chain family")
    g.add_argument("--layers", type=int, default=6, help="layers of the random family")
    g.add_argument("--image", type=int, help="input image side for the CNN families")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit the latency predictor on synthetic device samples")
    f.add_argument("--config")
    f.add_argument("--graph", action="append")
    f.add_argument("--noise", type=float, default=0.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    for name, func, helptext in (("plan", cmd_plan, "build scheduling plans"),
                                 ("simulate", cmd_simulate, "simulate the requested modes"),
                                 ("report", cmd_report, "simulate all modes and write the summary")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", default="-" if name == "plan" else "out")
        if name != "plan":
            s.add_argument("--mode", action="append", help="vanilla, scheduled or passive (repeatable)")
            s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.set_defaults(func=func)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, GraphError, SimulationError, OSError, ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
