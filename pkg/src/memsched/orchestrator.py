"""Planning loop over all jobs and the replan lifecycle.

``build_plan`` alternates peak analysis with swap passes until swapping
stops helping, then falls back to recomputation while the merged peak is
over the memory budget.  ``Orchestrator`` keeps the latency tables between
iterations, corrects them from observations and rebuilds every plan when
the observed latency sum drifts past the threshold.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .graph_model import ComputeGraph, build_sequence
from .latency_model import LatencyTable, ReplanState, should_replan
from .peak_analysis import PeakReport, merge_global_peak
from .plan import SchedulingPlan
from .recompute_planner import recompute_pass
from .swap_planner import JobContext, SwapBudget, TransferModel, swap_pass

logger = logging.getLogger(__name__)


@dataclass
class PlannerConfig:
    pcie_bandwidth: float
    transfer_setup: int = 0
    memory_budget: int = 0
    max_swap_ratios: Dict[str, float] = field(default_factory=dict)
    ewma_alpha: float = 0.3
    replan_threshold: float = 0.2
    stall_epsilon: float = 0.0005
    stall_min_iters: int = 100

    def __post_init__(self):
        if self.pcie_bandwidth <= 0:
            raise ValueError("pcie_bandwidth must be positive")
        if self.transfer_setup < 0 or self.memory_budget < 0:
            raise ValueError("transfer_setup and memory_budget must be nonnegative")
        if not 0 < self.stall_epsilon < 1:
            raise ValueError("stall_epsilon must lie in (0, 1)")
        for jid, r in self.max_swap_ratios.items():
            if not 0 < r <= 1:
                raise ValueError(f"max swap ratio of job {jid!r} must lie in (0, 1]")

    @property
    def transfer(self) -> TransferModel:
        return TransferModel(self.pcie_bandwidth, self.transfer_setup)


@dataclass
class PlanningSession:
    plans: Dict[str, SchedulingPlan]
    reports: Dict[str, PeakReport]
    mp_history: List[int]
    iterations: int
    diagnostic: Optional[str] = None
    contexts: Dict[str, JobContext] = field(default_factory=dict)


def _stalled(history: List[Dict[str, int]], touched: List[set], cfg: PlannerConfig, it: int) -> bool:
    if it <= cfg.stall_min_iters or len(history) < 4:
        return False
    jobs = set().union(*touched[-3:])
    if not jobs:
        return True
    then = sum(history[-4][j] for j in jobs) / len(jobs)
    now = sum(history[-1][j] for j in jobs) / len(jobs)
    if then <= 0:
        return True
    return (then - now) / then < cfg.stall_epsilon


def plan_jobs(jobs: Sequence[Tuple[ComputeGraph, Mapping[str, int]]], config: PlannerConfig,
              version: int = 0) -> PlanningSession:
    ctxs: Dict[str, JobContext] = {}
    for graph, lat in jobs:
        seq = build_sequence(graph, lat)
        ctxs[graph.job_id] = JobContext(seq, SchedulingPlan(graph.job_id, version=version), lat)
    budget = SwapBudget(dict(config.max_swap_ratios))
    transfer = config.transfer

    def peaks() -> Dict[str, int]:
        return {j: c.report.memory_peak for j, c in ctxs.items()}

    history = [peaks()]
    mp_history = [merge_global_peak(c.report for c in ctxs.values())]
    touched: List[set] = []
    swapping = bool(ctxs)
    it = 0
    while ctxs:
        it += 1
        before = {j: (len(c.plan.swap_events), len(c.plan.recompute_events)) for j, c in ctxs.items()}
        changed = False
        if swapping:
            swapping = swap_pass(ctxs, budget, transfer)
            changed = swapping
        if not changed and mp_history[-1] >= config.memory_budget:
            changed = recompute_pass(ctxs, config.memory_budget)
        if not changed:
            break
        touched.append({j for j, c in ctxs.items()
                        if (len(c.plan.swap_events), len(c.plan.recompute_events)) != before[j]})
        history.append(peaks())
        mp_history.append(merge_global_peak(c.report for c in ctxs.values()))
        if _stalled(history, touched, config, it):
            logger.info("planning stalled after %d iterations", it)
            break

    diagnostic = None
    if mp_history[-1] > config.memory_budget:
        diagnostic = (f"merged memory peak {mp_history[-1]} still exceeds the budget "
                      f"{config.memory_budget} after {it} planning iterations")
        logger.warning(diagnostic)
    return PlanningSession(
        plans={j: c.plan for j, c in sorted(ctxs.items())},
        reports={j: c.report for j, c in sorted(ctxs.items())},
        mp_history=mp_history,
        iterations=it,
        diagnostic=diagnostic,
        contexts=ctxs,
    )


def build_plan(jobs: Sequence[Tuple[ComputeGraph, Mapping[str, int]]], config: PlannerConfig) -> Dict[str, SchedulingPlan]:
    return plan_jobs(jobs, config).plans


class Orchestrator:
    """Owns latency estimates and plan versions for a set of jobs."""

    def __init__(self, graphs: Sequence[ComputeGraph], initial_latencies: Mapping[str, Mapping[str, int]],
                 config: PlannerConfig):
        self.graphs = {g.job_id: g for g in graphs}
        self.config = config
        self.tables = {j: LatencyTable(initial_latencies[j], config.ewma_alpha) for j in sorted(self.graphs)}
        self.states = {j: ReplanState(self.tables[j].total(), self.tables[j].total(), config.replan_threshold)
                       for j in self.tables}
        self.version = 0
        self.replans = 0
        self.session = self._plan()

    @property
    def plans(self) -> Dict[str, SchedulingPlan]:
        return self.session.plans

    def _plan(self) -> PlanningSession:
        jobs = [(self.graphs[j], self.tables[j].ticks()) for j in sorted(self.graphs)]
        return plan_jobs(jobs, self.config, version=self.version)

    def replan_if_needed(self, job_id: str, observed: Mapping[str, float]) -> Optional[Dict[str, SchedulingPlan]]:
        """Fold one job's observed iteration into the estimates; maybe rebuild all plans."""
        self.tables[job_id].observe(observed)
        state = self.states[job_id]
        state.current_sum = float(sum(observed.values()))
        if not should_replan(state):
            return None
        logger.info("job %s: latency sum drifted %.0f -> %.0f, replanning", job_id,
                    state.last_sum, state.current_sum)
        state.last_sum = state.current_sum
        self.version += 1
        self.replans += 1
        self.session = self._plan()
        return self.session.plans


def replan_if_needed(orchestrator: Orchestrator, job_id: str,
                     observed: Mapping[str, float]) -> Optional[Dict[str, SchedulingPlan]]:
    return orchestrator.replan_if_needed(job_id, observed)
