"""Scenario files: load jobs and settings, run the requested modes, write reports."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from .device import DeviceModel
from .graph_model import ComputeGraph, build_sequence, load_graph
from .latency_model import Predictor, predict_latencies, usage_level
from .orchestrator import Orchestrator, PlannerConfig
from .peak_analysis import analyze_job, dump_reports
from .plan import dump_plans
from .simulator import MODES, SimConfig, SimJob, SimulationTrace, compute_metrics, simulate

logger = logging.getLogger(__name__)

REQUIRED = ("pcie_bandwidth", "transfer_setup", "memory_budget", "ewma_alpha", "replan_threshold",
            "stall_epsilon", "stall_min_iters", "jobs")
OPTIONAL = ("iterations", "seed", "gpu_slowdown_curve", "gpu_capacity", "latencies", "predictor_file",
            "ticks_per_iteration_limit", "memory_budget_fraction", "latency_jitter")
JOB_FIELDS = ("graph_file", "max_swap_ratio", "launch_tick", "latency_drift")


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioJob:
    graph: ComputeGraph
    max_swap_ratio: float
    launch_tick: int
    true_latencies: Dict[str, int]


@dataclass
class Scenario:
    config: dict
    jobs: List[ScenarioJob]
    base_dir: str = "."
    seed: int = 0

    @property
    def iterations(self) -> int:
        return int(self.config.get("iterations", 3))

    def sim_jobs(self) -> List[SimJob]:
        return [SimJob(j.graph, j.true_latencies, j.launch_tick) for j in self.jobs]

    def sim_config(self, mode: str, memory_budget: Optional[int] = None) -> SimConfig:
        curve = {int(k): float(v) for k, v in self.config.get("gpu_slowdown_curve", {}).items()}
        return SimConfig(
            mode=mode,
            iterations=self.iterations,
            seed=self.seed,
            gpu_slowdown_curve=curve,
            ticks_per_iteration_limit=int(self.config.get("ticks_per_iteration_limit", 10 ** 12)),
            pcie_bandwidth=float(self.config["pcie_bandwidth"]),
            transfer_setup=int(self.config["transfer_setup"]),
            memory_budget=memory_budget,
            latency_jitter=float(self.config.get("latency_jitter", 0.0)),
        )

    def planner_config(self, memory_budget: int) -> PlannerConfig:
        c = self.config
        return PlannerConfig(
            pcie_bandwidth=float(c["pcie_bandwidth"]),
            transfer_setup=int(c["transfer_setup"]),
            memory_budget=int(memory_budget),
            max_swap_ratios={j.graph.job_id: float(j.max_swap_ratio) for j in self.jobs},
            ewma_alpha=float(c["ewma_alpha"]),
            replan_threshold=float(c["replan_threshold"]),
            stall_epsilon=float(c["stall_epsilon"]),
            stall_min_iters=int(c["stall_min_iters"]),
        )

    def vanilla_planned_peak(self) -> int:
        return sum(analyze_job(build_sequence(j.graph, j.true_latencies)).memory_peak for j in self.jobs)

    def memory_budget(self) -> int:
        frac = self.config.get("memory_budget_fraction")
        if frac is not None:
            return int(float(frac) * self.vanilla_planned_peak())
        return int(self.config["memory_budget"])

    def planning_latencies(self) -> Dict[str, Dict[str, int]]:
        """Cold-start latency estimates the planner starts from."""
        c = self.config
        if "predictor_file" in c:
            with open(os.path.join(self.base_dir, c["predictor_file"])) as fh:
                predictor = Predictor.loads(fh.read())
            usage = usage_level(len(self.jobs), int(c.get("gpu_capacity", 4)))
            return {j.graph.job_id: predict_latencies(j.graph, predictor, usage) for j in self.jobs}
        lat = c.get("latencies")
        if lat is None:
            raise ScenarioError("scheduled mode needs latency estimates: fit a predictor with `fit` and set "
                                "predictor_file, or set latencies to \"device\" or a latency table file")
        if lat == "device":
            dev = DeviceModel()
            return {j.graph.job_id: dev.latencies(j.graph) for j in self.jobs}
        with open(os.path.join(self.base_dir, lat)) as fh:
            table = json.load(fh)
        out = {}
        for j in self.jobs:
            if j.graph.job_id not in table:
                raise ScenarioError(f"latency table has no entry for job {j.graph.job_id!r}")
            ops = table[j.graph.job_id]
            missing = sorted(set(j.graph.ops) - set(ops))
            if missing:
                raise ScenarioError(f"latency table misses ops {missing[:5]} of job {j.graph.job_id!r}")
            out[j.graph.job_id] = {o: int(ops[o]) for o in j.graph.ops}
        return out


def load_scenario(config: Mapping, base_dir: str = ".", seed: Optional[int] = None) -> Scenario:
    missing = [k for k in REQUIRED if k not in config]
    if missing:
        raise ScenarioError(f"scenario config misses {missing}")
    unknown = sorted(set(config) - set(REQUIRED) - set(OPTIONAL))
    if unknown:
        raise ScenarioError(f"scenario config has unknown fields {unknown}")
    dev = DeviceModel()
    jobs = []
    seen = set()
    for raw in config["jobs"]:
        bad = sorted(set(raw) - set(JOB_FIELDS))
        if bad or "graph_file" not in raw:
            raise ScenarioError(f"job entry {raw!r} has unknown fields {bad} or no graph_file")
        path = os.path.join(base_dir, raw["graph_file"])
        with open(path) as fh:
            graph = load_graph(fh.read())
        if graph.job_id in seen:
            raise ScenarioError(f"duplicate job id {graph.job_id!r}")
        seen.add(graph.job_id)
        drift = float(raw.get("latency_drift", 1.0))
        true_lat = {o: int(round(v * drift)) for o, v in dev.latencies(graph).items()}
        jobs.append(ScenarioJob(graph, float(raw.get("max_swap_ratio", 1.0)), int(raw.get("launch_tick", 0)), true_lat))
    return Scenario(dict(config), jobs, base_dir, int(config.get("seed", 0) if seed is None else seed))


def read_scenario(path: str, seed: Optional[int] = None) -> Scenario:
    with open(path) as fh:
        config = json.load(fh)
    return load_scenario(config, os.path.dirname(os.path.abspath(path)), seed)


@dataclass
class ScenarioResult:
    traces: Dict[str, SimulationTrace] = field(default_factory=dict)
    orchestrator: Optional[Orchestrator] = None
    summary: List[dict] = field(default_factory=list)


def run_modes(scenario: Scenario, modes: Sequence[str]) -> ScenarioResult:
    for m in modes:
        if m not in MODES:
            raise ScenarioError(f"unknown mode {m!r}")
    result = ScenarioResult()
    jobs = scenario.sim_jobs()
    budget = scenario.memory_budget()
    # metrics are always relative to a vanilla run
    result.traces["vanilla"] = simulate(jobs, None, scenario.sim_config("vanilla"))
    if "scheduled" in modes:
        orch = Orchestrator([j.graph for j in scenario.jobs], scenario.planning_latencies(),
                            scenario.planner_config(budget))
        result.orchestrator = orch

        def controller(job_id, iteration, observed, tick):
            return orch.replan_if_needed(job_id, observed)

        result.traces["scheduled"] = simulate(jobs, orch.plans, scenario.sim_config("scheduled"), controller)
    if "passive" in modes:
        result.traces["passive"] = simulate(jobs, None, scenario.sim_config("passive", budget))
    vanilla = result.traces["vanilla"]
    for m in MODES:
        if m not in result.traces or (m == "vanilla" and m not in modes):
            continue
        t = result.traces[m]
        metrics = compute_metrics(vanilla, t)
        result.summary.append({
            "mode": m,
            "peak": t.peak,
            "time_cost": t.time_cost(),
            "msr": metrics.msr,
            "eor": metrics.eor,
            "cbr": metrics.to_dict()["cbr"],
            "passive_swaps": t.passive_swap_count,
            "blocked_ticks": t.total_blocked_ticks,
            "replans": t.replans,
            "violations": len(t.violations),
        })
    return result


SUMMARY_COLUMNS = ("mode", "peak", "time_cost", "msr", "eor", "cbr", "passive_swaps", "blocked_ticks",
                   "replans", "violations")


def summary_csv(rows: Sequence[dict]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for r in rows:
        cells = []
        for c in SUMMARY_COLUMNS:
            v = r[c]
            cells.append(repr(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_outputs(result: ScenarioResult, out_dir: str, fmt: str = "csv") -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name: str, text: str):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
        written.append(path)

    for mode, trace in sorted(result.traces.items()):
        put(f"trace_{mode}.csv", trace.to_csv())
        put(f"trace_{mode}.json", json.dumps(trace.summary(), indent=1, sort_keys=True))
    if result.orchestrator is not None:
        put("plans.json", dump_plans(result.orchestrator.plans))
        put("peak_reports.json", dump_reports(result.orchestrator.session.reports))
    if fmt == "json":
        put("summary.json", json.dumps(result.summary, indent=1, sort_keys=True))
    else:
        put("summary.csv", summary_csv(result.summary))
    return written


def run_scenario(path: str, out_dir: str, modes: Sequence[str] = MODES, seed: Optional[int] = None,
                 fmt: str = "csv") -> ScenarioResult:
    scenario = read_scenario(path, seed)
    result = run_modes(scenario, modes)
    write_outputs(result, out_dir, fmt)
    return result
