"""Deterministic discrete-event execution of jobs under their plans.

Each job runs its ops back to back on its own compute stream.  All host
transfers share one channel served first come, first served.  Swap events
fire ``delta`` ticks after their trigger access ends; an op whose input is
missing waits for a pending swap-in or issues a passive one.  In passive
mode nothing is planned: tensors are evicted least-recently-used when an
allocation would overflow the memory budget and reloaded on demand.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .device import slowdown
from .graph_model import TGA, TUA, ComputeGraph, build_sequence
from .plan import IN, OUT, SchedulingPlan, SwapEvent, effective_sequence, transfer_duration

logger = logging.getLogger(__name__)

MODES = ("vanilla", "scheduled", "passive")

# heap priorities at equal ticks
P_TRANSFER_DONE = 0
P_OP_END = 1
P_TRIGGER = 2
P_START = 3
P_DISPATCH = 4

INF_SENTINEL = "inf"


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    pass


@dataclass
class SimJob:
    graph: ComputeGraph
    latencies: Dict[str, int]
    launch_tick: int = 0

    @property
    def job_id(self) -> str:
        return self.graph.job_id


@dataclass
class SimConfig:
    mode: str = "scheduled"
    iterations: int = 1
    seed: int = 0
    gpu_slowdown_curve: Dict[int, float] = field(default_factory=dict)
    ticks_per_iteration_limit: int = 10 ** 12
    pcie_bandwidth: float = 12000.0
    transfer_setup: int = 0
    memory_budget: Optional[int] = None
    latency_jitter: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown simulation mode {self.mode!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        for k, m in self.gpu_slowdown_curve.items():
            if m < 1:
                raise ValueError(f"slowdown multiplier for {k} jobs must be >= 1")


@dataclass(frozen=True)
class TransferRecord:
    start: int
    end: int
    job_id: str
    tensor_id: str
    direction: str
    passive: bool
    event_id: str


@dataclass
class SimulationTrace:
    mode: str
    footprint_curve: List[Tuple[int, int]] = field(default_factory=list)
    job_curves: Dict[str, List[Tuple[int, int]]] = field(default_factory=dict)
    iteration_times: Dict[str, List[int]] = field(default_factory=dict)
    passive_swap_count: int = 0
    blocked_ticks: Dict[str, int] = field(default_factory=dict)
    peak: int = 0
    job_peaks: Dict[str, int] = field(default_factory=dict)
    transfers: List[TransferRecord] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)
    rows: List[Tuple[int, str, str, str, int]] = field(default_factory=list)
    plan_versions: Dict[str, List[int]] = field(default_factory=dict)
    passive_waits: List[Tuple[int, str, str]] = field(default_factory=list)
    replans: int = 0
    end_tick: int = 0

    @property
    def total_blocked_ticks(self) -> int:
        return sum(self.blocked_ticks.values())

    def mean_iteration_time(self, job_id: str) -> float:
        times = self.iteration_times[job_id]
        return sum(times) / len(times)

    def time_cost(self) -> float:
        """Mean per-iteration time summed over jobs."""
        return float(sum(self.mean_iteration_time(j) for j in sorted(self.iteration_times)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tick", "job_id", "event_kind", "tensor_id", "footprint_bytes"])
        w.writerows(self.rows)
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "peak": self.peak,
            "job_peaks": dict(sorted(self.job_peaks.items())),
            "iteration_times": {j: list(v) for j, v in sorted(self.iteration_times.items())},
            "time_cost": self.time_cost(),
            "passive_swap_count": self.passive_swap_count,
            "blocked_ticks": dict(sorted(self.blocked_ticks.items())),
            "transfers": len(self.transfers),
            "violations": list(self.violations),
            "replans": self.replans,
            "end_tick": self.end_tick,
        }


@dataclass
class MetricsReport:
    msr: float
    eor: float
    cbr: float

    def to_dict(self) -> dict:
        return {"msr": self.msr, "eor": self.eor,
                "cbr": INF_SENTINEL if math.isinf(self.cbr) else self.cbr}


def cost_benefit(msr: float, eor: float) -> float:
    if eor == 0:
        return math.inf
    return msr / eor


def compute_metrics(vanilla: SimulationTrace, experimental: SimulationTrace) -> MetricsReport:
    if set(vanilla.iteration_times) != set(experimental.iteration_times):
        raise ValueError("traces cover different job sets")
    vmp, emp = vanilla.peak, experimental.peak
    vtc, etc = vanilla.time_cost(), experimental.time_cost()
    msr = (vmp - emp) / vmp if vmp else 0.0
    eor = (etc - vtc) / vtc if vtc else 0.0
    return MetricsReport(msr, eor, cost_benefit(msr, eor))


# --------------------------------------------------------------------------
# per-job programs

@dataclass(frozen=True)
class Step:
    op_id: str
    base_op: str
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    access_ids: Tuple[str, ...]
    # (tensor, "activity" | "plan")
    releases: Tuple[Tuple[str, str], ...]
    recompute: bool = False


@dataclass
class Program:
    steps: List[Step]
    triggers: Dict[str, List[SwapEvent]]
    at_start: List[SwapEvent]
    n_events: int


def build_program(graph: ComputeGraph, base_latencies: Mapping[str, int], plan: SchedulingPlan) -> Program:
    seq = build_sequence(graph, base_latencies)
    eff = effective_sequence(seq, plan.recompute_events)
    # planner flags before a swap-out are carried out by the swap-out itself;
    # only recomputation drops a tensor outright
    drops = {r.release_access for r in plan.recompute_events}
    recs = {r.event_id: r for r in plan.recompute_events}
    steps: List[Step] = []
    group: List = []

    def flush():
        if not group:
            return
        oid = group[0].op_id
        releases = []
        for a in group:
            if a.release_flag:
                releases.append((a.tensor_id, "activity"))
            elif a.access_id in drops:
                releases.append((a.tensor_id, "plan"))
        steps.append(Step(
            op_id=oid,
            base_op=recs[oid].regen_op if oid in recs else oid,
            inputs=tuple(a.tensor_id for a in group if a.access_type == TUA),
            outputs=tuple(a.tensor_id for a in group if a.access_type == TGA),
            access_ids=tuple(a.access_id for a in group),
            releases=tuple(releases),
            recompute=oid in recs,
        ))

    for a in eff.accesses:
        if group and group[0].op_id != a.op_id:
            flush()
            group = []
        group.append(a)
    flush()
    triggers: Dict[str, List[SwapEvent]] = {}
    at_start = []
    for ev in sorted(plan.swap_events, key=lambda e: (e.start_time, e.event_id)):
        if ev.trigger_access is None:
            at_start.append(ev)
        else:
            triggers.setdefault(ev.trigger_access, []).append(ev)
    return Program(steps, triggers, at_start, len(plan.swap_events))


# --------------------------------------------------------------------------
# engine

class _Storage:
    __slots__ = ("job_id", "key", "size", "on_gpu", "host_valid", "in_use", "pending_evict",
                 "out_active", "in_active", "evicting", "last_use")

    def __init__(self, job_id: str, key: str, size: int):
        self.job_id = job_id
        self.key = key
        self.size = size
        self.on_gpu = False
        self.host_valid = False
        self.in_use = 0
        self.pending_evict = False
        self.out_active = False
        self.in_active = False
        self.evicting = False
        self.last_use = -1


@dataclass
class _Request:
    job_id: str
    storage: str
    tensor_id: str
    direction: str
    passive: bool
    event_id: str
    enqueued: int
    seq: int
    counted: bool


class _JobState:
    def __init__(self, sim: "Simulator", job: SimJob, plan: SchedulingPlan):
        self.job = job
        self.job_id = job.job_id
        self.graph = job.graph
        self.plan = plan
        self.pending_plan: Optional[SchedulingPlan] = None
        self.program = build_program(job.graph, job.latencies, plan)
        self.iteration = 0
        self.idx = 0
        self.iter_start = 0
        self.wait: Optional[str] = None
        self.wait_on: Optional[str] = None
        self.block_since: Optional[int] = None
        self.unfired = 0
        self.inflight = 0
        self.pending_release: List[str] = []
        self.observed: Dict[str, int] = {}
        self.running = False
        self.done = False
        self.current: Optional[Step] = None
        self.used = 0


Controller = Callable[[str, int, Dict[str, int], int], Optional[Dict[str, SchedulingPlan]]]


class Simulator:
    def __init__(self, jobs: Sequence[SimJob], plans: Optional[Mapping[str, SchedulingPlan]], config: SimConfig,
                 controller: Optional[Controller] = None):
        self.cfg = config
        self.controller = controller
        self.rng = np.random.default_rng(config.seed)
        self.jobs: Dict[str, _JobState] = {}
        self.storages: Dict[Tuple[str, str], _Storage] = {}
        for job in sorted(jobs, key=lambda j: j.job_id):
            plan = SchedulingPlan(job.job_id)
            if config.mode == "scheduled" and plans is not None and job.job_id in plans:
                plan = plans[job.job_id]
            self.jobs[job.job_id] = _JobState(self, job, plan)
            for t in job.graph.tensors.values():
                key = job.graph.storage_of(t.tensor_id)
                if (job.job_id, key) not in self.storages:
                    self.storages[(job.job_id, key)] = _Storage(job.job_id, key, t.size)
        self.heap: List[tuple] = []
        self.n = 0
        self.now = 0
        self.used = 0
        self.queue: Deque[_Request] = deque()
        self.active: Optional[_Request] = None
        self.req_seq = 0
        self.trace = SimulationTrace(config.mode)
        for jid in self.jobs:
            self.trace.iteration_times[jid] = []
            self.trace.blocked_ticks[jid] = 0
            self.trace.job_curves[jid] = [(0, 0)]
            self.trace.job_peaks[jid] = 0
            self.trace.plan_versions[jid] = []
        self.trace.footprint_curve.append((0, 0))

    # -- helpers ------------------------------------------------------------
    def _push(self, time: int, prio: int, kind: str, *payload):
        self.n += 1
        heapq.heappush(self.heap, (time, prio, self.n, kind, payload))

    def _st(self, job_id: str, tensor_id: str) -> _Storage:
        graph = self.jobs[job_id].graph
        return self.storages[(job_id, graph.storage_of(tensor_id))]

    def _row(self, job_id: str, kind: str, tensor_id: str = ""):
        self.trace.rows.append((self.now, job_id, kind, tensor_id, self.used))

    def _alloc(self, s: _Storage):
        if not s.on_gpu:
            s.on_gpu = True
            self.used += s.size
            self.jobs[s.job_id].used += s.size

    def _evict(self, s: _Storage):
        if s.on_gpu:
            s.on_gpu = False
            s.pending_evict = False
            self.used -= s.size
            self.jobs[s.job_id].used -= s.size

    def _running_jobs(self) -> int:
        return sum(1 for j in self.jobs.values() if j.running)

    def _latency(self, job: _JobState, step: Step) -> int:
        base = job.job.latencies[step.base_op]
        mult = slowdown(self.cfg.gpu_slowdown_curve, self._running_jobs())
        value = base * mult
        if self.cfg.latency_jitter:
            value *= 1.0 + float(self.rng.uniform(-self.cfg.latency_jitter, self.cfg.latency_jitter))
        return max(0, int(math.ceil(value - 1e-9)))

    def _duration(self, size: int) -> int:
        return transfer_duration(size, self.cfg.pcie_bandwidth, self.cfg.transfer_setup)

    def _block(self, job: _JobState, why: str, on: str = ""):
        job.wait = why
        job.wait_on = on
        if job.block_since is None:
            job.block_since = self.now

    def _unblock(self, job: _JobState):
        if job.block_since is not None:
            self.trace.blocked_ticks[job.job_id] += self.now - job.block_since
        job.block_since = None
        job.wait = None
        job.wait_on = None

    # -- lifecycle ----------------------------------------------------------
    def run(self) -> SimulationTrace:
        for jid, job in self.jobs.items():
            self._push(job.job.launch_tick, P_START, "launch", jid)
        while self.heap:
            time, prio, _, kind, payload = heapq.heappop(self.heap)
            self.now = time
            getattr(self, "_on_" + kind)(*payload)
            if not self.heap or self.heap[0][0] > time:
                self._record(time)
        unfinished = [j for j in self.jobs.values() if not j.done]
        if unfinished:
            chain = "; ".join(f"job {j.job_id} waiting for {j.wait} {j.wait_on or ''}".strip()
                              for j in unfinished)
            raise DeadlockError(f"no runnable event at tick {self.now}: {chain}")
        self.trace.end_tick = self.now
        self.trace.peak = max(b for _, b in self.trace.footprint_curve)
        return self.trace

    def _record(self, time: int):
        curve = self.trace.footprint_curve
        if curve[-1][1] != self.used:
            if curve[-1][0] == time:
                curve[-1] = (time, self.used)
            else:
                curve.append((time, self.used))
        for jid, job in self.jobs.items():
            jc = self.trace.job_curves[jid]
            if jc[-1][1] != job.used:
                if jc[-1][0] == time:
                    jc[-1] = (time, job.used)
                else:
                    jc.append((time, job.used))
            if job.used > self.trace.job_peaks[jid]:
                self.trace.job_peaks[jid] = job.used

    def _on_launch(self, jid: str):
        job = self.jobs[jid]
        job.running = True
        wrapped = job.plan.wrapped_parameters(job.graph.aliases)
        for t in job.graph.tensors.values():
            if t.kind != "parameter":
                continue
            s = self._st(jid, t.tensor_id)
            if t.tensor_id in wrapped:
                s.host_valid = True
            else:
                self._alloc(s)
        self._row(jid, "launch")
        self._start_iteration(job)

    def _start_iteration(self, job: _JobState):
        if job.pending_plan is not None:
            job.plan = job.pending_plan
            job.pending_plan = None
            job.program = build_program(job.graph, job.job.latencies, job.plan)
        self.trace.plan_versions[job.job_id].append(job.plan.version)
        job.iter_start = self.now
        job.idx = 0
        job.observed = {}
        job.unfired = job.program.n_events
        self._row(job.job_id, "iteration_start")
        for ev in job.program.at_start:
            self._push(self.now + ev.delta_time, P_TRIGGER, "fire", job.job_id, ev)
        self._push(self.now, P_START, "try_step", job.job_id)

    # -- compute stream -----------------------------------------------------
    def _on_try_step(self, jid: str):
        job = self.jobs[jid]
        if job.done or job.current is not None or job.wait in ("release", "iter_end"):
            return
        step = job.program.steps[job.idx]
        if self.now - job.iter_start > self.cfg.ticks_per_iteration_limit:
            raise SimulationError(f"job {jid} iteration {job.iteration} exceeded "
                                  f"{self.cfg.ticks_per_iteration_limit} ticks")
        protect = {self.jobs[jid].graph.storage_of(t) for t in step.inputs + step.outputs}
        waiting = False
        for x in step.inputs:
            s = self._st(jid, x)
            if s.on_gpu:
                if s.pending_evict:
                    s.pending_evict = False
                continue
            if self._has_request(s, IN):
                waiting = True
            elif s.host_valid:
                if self.cfg.mode == "passive" and not self._make_room(s.size, jid, protect):
                    waiting = True
                    continue
                self._enqueue(jid, s, x, IN, passive=True, event_id="passive", counted=False)
                self.trace.passive_swap_count += 1
                self.trace.passive_waits.append((self.now, jid, x))
                self._row(jid, "passive_swap_in", x)
                waiting = True
            elif s.out_active or s.evicting:
                waiting = True
            else:
                self.trace.violations.append(f"t={self.now} job {jid}: {step.op_id} reads non-resident {x}")
                self._alloc(s)
        if waiting:
            self._block(job, "inputs", step.op_id)
            return
        need = 0
        to_alloc = []
        for y in step.outputs:
            s = self._st(jid, y)
            kind = job.graph.tensors[y].kind
            if s.on_gpu or kind == "parameter":
                continue
            need += s.size
            to_alloc.append(s)
        if self.cfg.mode == "passive" and need and not self._make_room(need, jid, protect):
            self._block(job, "memory", step.op_id)
            return
        self._unblock(job)
        for s in to_alloc:
            self._alloc(s)
            s.host_valid = False
        for y in step.outputs:
            s = self._st(jid, y)
            if job.graph.tensors[y].kind == "updated_parameter":
                # the update overwrites the parameter in place
                s.host_valid = False
        for key in protect:
            st = self.storages[(jid, key)]
            st.in_use += 1
            st.last_use = self.now
        job.current = step
        lat = self._latency(job, step)
        if not step.recompute:
            job.observed[step.op_id] = lat
        self._row(jid, "recompute_start" if step.recompute else "op_start", step.op_id)
        self._push(self.now + lat, P_OP_END, "step_end", jid)

    def _on_step_end(self, jid: str):
        job = self.jobs[jid]
        step = job.current
        job.current = None
        touched = {job.graph.storage_of(t) for t in step.inputs + step.outputs}
        for key in touched:
            s = self.storages[(jid, key)]
            s.in_use -= 1
            s.last_use = self.now
        self._row(jid, "op_end", step.op_id)
        for aid in step.access_ids:
            for ev in job.program.triggers.get(aid, ()):
                self._push(self.now + ev.delta_time, P_TRIGGER, "fire", jid, ev)
        for t, why in step.releases:
            s = self._st(jid, t)
            if why == "activity" and (s.out_active or self._has_request(s, OUT)):
                job.pending_release.append(t)
            else:
                self._release(jid, t)
        for key in touched:
            s = self.storages[(jid, key)]
            if s.pending_evict and s.in_use == 0:
                self._evict(s)
                self._row(jid, "evict", key)
        if job.pending_release:
            self._block(job, "release", ",".join(job.pending_release))
            self._poke()
            return
        self._advance(job)

    def _release(self, jid: str, t: str):
        s = self._st(jid, t)
        if not s.on_gpu and not s.host_valid:
            self.trace.violations.append(f"t={self.now} job {jid}: double release of {t}")
            return
        self._cancel_requests(s)
        self._evict(s)
        s.host_valid = False
        self._row(jid, "release", t)

    def _advance(self, job: _JobState):
        job.idx += 1
        if job.idx < len(job.program.steps):
            self._push(self.now, P_START, "try_step", job.job_id)
        else:
            self._try_end_iteration(job)

    def _try_end_iteration(self, job: _JobState):
        if job.unfired or job.inflight:
            self._block(job, "iter_end", f"{job.unfired} unfired, {job.inflight} in flight")
            return
        self._unblock(job)
        self.trace.iteration_times[job.job_id].append(self.now - job.iter_start)
        self._row(job.job_id, "iteration_end")
        job.iteration += 1
        observed = dict(job.observed)
        if self.controller is not None and self.cfg.mode == "scheduled":
            plans = self.controller(job.job_id, job.iteration, observed, self.now)
            if plans:
                self.trace.replans += 1
                for jid, p in plans.items():
                    if jid in self.jobs:
                        self.jobs[jid].pending_plan = p
        if job.iteration >= self.cfg.iterations:
            job.done = True
            job.running = False
            return
        self._start_iteration(job)

    # -- transfers ----------------------------------------------------------
    def _on_fire(self, jid: str, ev: SwapEvent):
        job = self.jobs[jid]
        job.unfired -= 1
        s = self._st(jid, ev.tensor_id)
        self._enqueue(jid, s, ev.tensor_id, ev.direction, passive=False, event_id=ev.event_id, counted=True)
        if job.wait == "iter_end":
            self._wake(job)

    def _enqueue(self, jid: str, s: _Storage, tensor_id: str, direction: str, passive: bool,
                 event_id: str, counted: bool):
        self.req_seq += 1
        self.queue.append(_Request(jid, s.key, tensor_id, direction, passive, event_id, self.now,
                                   self.req_seq, counted))
        if counted:
            self.jobs[jid].inflight += 1
        if direction == OUT and passive:
            s.evicting = True
        self._push(self.now, P_DISPATCH, "dispatch")

    def _has_request(self, s: _Storage, direction: str) -> bool:
        if direction == IN and s.in_active:
            return True
        if direction == OUT and s.out_active:
            return True
        return any(r.storage == s.key and r.job_id == s.job_id and r.direction == direction for r in self.queue)

    def _cancel_requests(self, s: _Storage):
        keep: Deque[_Request] = deque()
        for r in self.queue:
            if r.storage == s.key and r.job_id == s.job_id:
                if r.counted:
                    self.jobs[r.job_id].inflight -= 1
                self._row(r.job_id, "cancel_" + r.direction, r.tensor_id)
                continue
            keep.append(r)
        self.queue = keep

    def _on_dispatch(self):
        while self.active is None and self.queue:
            req = self.queue.popleft()
            s = self.storages[(req.job_id, req.storage)]
            if req.direction == OUT:
                if not s.on_gpu:
                    self._finish_request(req, skipped=True)
                    continue
                s.out_active = True
            else:
                if s.on_gpu:
                    s.pending_evict = False
                    self._finish_request(req, skipped=True)
                    continue
                if not s.host_valid:
                    self._row(req.job_id, "swap_in_without_copy", req.tensor_id)
                    self._finish_request(req, skipped=True)
                    continue
                s.in_active = True
            dur = self._duration(s.size)
            self.active = req
            self.trace.transfers.append(TransferRecord(self.now, self.now + dur, req.job_id, req.tensor_id,
                                                       req.direction, req.passive, req.event_id))
            self._row(req.job_id, f"swap_{req.direction}_start", req.tensor_id)
            self._push(self.now + dur, P_TRANSFER_DONE, "transfer_done")

    def _on_transfer_done(self):
        req = self.active
        self.active = None
        s = self.storages[(req.job_id, req.storage)]
        if req.direction == OUT:
            s.out_active = False
            s.evicting = False
            if s.on_gpu:
                s.host_valid = True
                if s.in_use > 0:
                    s.pending_evict = True
                else:
                    self._evict(s)
        else:
            s.in_active = False
            if s.host_valid and not s.on_gpu:
                self._alloc(s)
        self._row(req.job_id, f"swap_{req.direction}_complete", req.tensor_id)
        self._finish_request(req, skipped=False)
        self._push(self.now, P_DISPATCH, "dispatch")

    def _finish_request(self, req: _Request, skipped: bool):
        if req.counted:
            self.jobs[req.job_id].inflight -= 1
        if skipped:
            self._row(req.job_id, f"skip_{req.direction}", req.tensor_id)
        self._poke()

    def _poke(self):
        # transfers changed residency: retry every blocked job once this tick
        for job in self.jobs.values():
            if job.wait is not None:
                self._push(self.now, P_START, "wake", job.job_id)

    def _on_wake(self, jid: str):
        self._wake(self.jobs[jid])

    def _wake(self, job: _JobState):
        if job.wait == "release":
            still = []
            for t in job.pending_release:
                s = self._st(job.job_id, t)
                if s.out_active or self._has_request(s, OUT):
                    still.append(t)
                else:
                    self._release(job.job_id, t)
            job.pending_release = still
            if not still:
                self._unblock(job)
                self._advance(job)
        elif job.wait == "iter_end":
            self._try_end_iteration(job)
        elif job.wait in ("inputs", "memory"):
            self._on_try_step(job.job_id)

    # -- passive-mode memory pressure --------------------------------------
    def _make_room(self, need: int, jid: str, protect: Set[str]) -> bool:
        budget = self.cfg.memory_budget
        if budget is None:
            return True
        pending = sum(s.size for s in self.storages.values() if s.evicting and s.on_gpu)
        while self.used - pending + need > budget:
            victims = [
                s for s in self.storages.values()
                if s.on_gpu and s.in_use == 0 and not s.evicting and not s.out_active
                and not (s.job_id == jid and s.key in protect)
            ]
            if not victims:
                # wait for evictions in flight; otherwise run over budget
                return pending == 0
            v = min(victims, key=lambda s: (s.last_use, s.job_id, s.key))
            if v.host_valid:
                self._evict(v)
                self._row(v.job_id, "passive_evict", v.key)
            else:
                self._enqueue(v.job_id, v, v.key, OUT, passive=True, event_id="passive", counted=False)
                pending += v.size
        return pending == 0


def simulate(jobs: Sequence[SimJob], plans: Optional[Mapping[str, SchedulingPlan]], config: SimConfig,
             controller: Optional[Controller] = None) -> SimulationTrace:
    return Simulator(jobs, plans, config, controller).run()


def check_trace(trace: SimulationTrace) -> List[str]:
    """Safety problems visible in a trace (empty when the run was clean)."""
    problems = list(trace.violations)
    xfers = sorted(trace.transfers, key=lambda r: (r.start, r.end))
    for a, b in zip(xfers, xfers[1:]):
        if b.start < a.end:
            problems.append(f"overlapping transfers {a} and {b}")
    return problems


def dump_trace_summary(trace: SimulationTrace) -> str:
    return json.dumps(trace.summary(), indent=1, sort_keys=True)
