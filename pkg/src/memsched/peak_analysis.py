"""Static GPU memory peak analysis over one iteration of a job.

The footprint only changes at five kinds of points: the iteration start,
a tensor generation, a swap-in completion, a swap-out completion and a
release.  Sorting those points on a single time axis and replaying them
gives the peak, the tensors resident at the peak and when it happens.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

from .graph_model import PERSISTENT_KINDS, TGA, TensorAccessSequence
from .plan import OUT, SchedulingPlan, effective_sequence, fused_release_flags

TGA_EVENT = "tga"
TUA_EVENT = "tua"
SWAP_IN_COMPLETE = "swap_in_complete"
SWAP_OUT_COMPLETE = "swap_out_complete"
RELEASE = "release"


class PlanReferenceError(KeyError):
    """A plan names an access that does not exist in the sequence."""


class PeakAnalysisError(RuntimeError):
    """The replay hit an impossible state, e.g. a tensor freed twice."""


@dataclass(frozen=True)
class TimelineEvent:
    time: int
    event_type: str
    tensor_id: str
    size: int
    delta: int
    access_id: Optional[str] = None
    # updated parameter taking over the storage of this parameter
    alias_of: Optional[str] = None
    release: bool = False


@dataclass
class PeakReport:
    memory_peak: int
    peak_tensors: FrozenSet[str]
    last_input_access: Optional[str]
    peak_time: int
    footprint_curve: List[Tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "memory_peak": self.memory_peak,
            "peak_tensors": sorted(self.peak_tensors),
            "last_input_access": self.last_input_access,
            "peak_time": self.peak_time,
            "footprint_curve": [list(p) for p in self.footprint_curve],
        }


def _order_class(ev: TimelineEvent, zero_length: bool) -> int:
    # frees first, then zero-delta bookkeeping, then allocations; an updated
    # parameter takes over its storage only after a swap-in landing at that tick
    if ev.delta < 0:
        # a tensor generated and dropped by the same zero-length access
        return 4 if zero_length else 0
    if ev.alias_of is not None:
        return 3
    if ev.delta == 0:
        return 1
    return 2


def build_timeline(seq: TensorAccessSequence, plan: Optional[SchedulingPlan] = None) -> List[TimelineEvent]:
    plan = plan or SchedulingPlan(seq.job_id)
    eff = effective_sequence(seq, plan.recompute_events)
    by_id = eff.by_id()
    for ev in plan.swap_events:
        for ref in (ev.trigger_access, ev.served_access):
            if ref is not None and ref not in by_id:
                raise PlanReferenceError(f"swap event {ev.event_id} references unknown access {ref!r}")
    for rec in plan.recompute_events:
        for ref in (rec.target_access, rec.release_access):
            if ref and ref not in by_id:
                raise PlanReferenceError(f"recompute event {rec.event_id} references unknown access {ref!r}")
    for aid in plan.release_flags:
        if aid not in by_id:
            raise PlanReferenceError(f"release flag on unknown access {aid!r}")

    fused = fused_release_flags(eff, plan)
    keyed: List[Tuple[tuple, TimelineEvent]] = []
    n = 0

    def push(ev: TimelineEvent, zero_length: bool = False):
        nonlocal n
        keyed.append(((ev.time, _order_class(ev, zero_length), ev.tensor_id, n), ev))
        n += 1

    storage_accesses: Dict[str, List[Tuple[int, int]]] = {}
    for a in eff.accesses:
        storage_accesses.setdefault(eff.storage_of(a.tensor_id), []).append((a.start_time, a.end_time))

    for a in eff.accesses:
        size = eff.sizes[a.tensor_id]
        kind = eff.kinds.get(a.tensor_id, "interim")
        if a.access_type == TGA:
            alias = eff.aliases.get(a.tensor_id)
            delta = 0 if kind in PERSISTENT_KINDS or kind == "input" else size
            push(TimelineEvent(a.start_time, TGA_EVENT, a.tensor_id, size, delta, a.access_id, alias))
        else:
            push(TimelineEvent(a.start_time, TUA_EVENT, a.tensor_id, size, 0, a.access_id,
                               release=a.release_flag))
        if a.release_flag or (a.access_id in plan.release_flags and a.access_id not in fused):
            push(TimelineEvent(a.end_time, RELEASE, a.tensor_id, size, -size, a.access_id),
                 zero_length=a.start_time == a.end_time)

    for ev in plan.swap_events:
        size = eff.sizes[ev.tensor_id]
        if ev.direction == OUT:
            done = ev.end_time
            # eviction waits for a still-running access of the same storage
            for s, e in storage_accesses.get(eff.storage_of(ev.tensor_id), ()):
                if s < ev.end_time and e > ev.start_time:
                    done = max(done, e)
            push(TimelineEvent(done, SWAP_OUT_COMPLETE, ev.tensor_id, size, -size, ev.event_id))
        else:
            push(TimelineEvent(ev.end_time, SWAP_IN_COMPLETE, ev.tensor_id, size, size, ev.event_id))

    keyed.sort(key=lambda kv: kv[0])
    return [ev for _, ev in keyed]


def analyze_peak(timeline: Iterable[TimelineEvent],
                 initial_resident: Union[Mapping[str, int], Iterable[str]]) -> PeakReport:
    timeline = list(timeline)
    if isinstance(initial_resident, Mapping):
        initial = dict(initial_resident)
    else:
        sizes = {ev.tensor_id: ev.size for ev in timeline}
        initial = {t: sizes[t] for t in initial_resident}

    used = sum(initial.values())
    resident = set(initial)
    peak = used
    peak_set = frozenset(resident)
    peak_time = 0
    lua = None
    peak_lua = None
    curve: List[Tuple[int, int]] = [(0, used)]

    for i, ev in enumerate(timeline):
        et = ev.event_type
        if et == TGA_EVENT:
            if ev.alias_of is not None:
                if ev.alias_of not in resident:
                    raise PeakAnalysisError(
                        f"updated parameter {ev.tensor_id!r} written while {ev.alias_of!r} is not resident")
                resident.discard(ev.alias_of)
                resident.add(ev.tensor_id)
            elif ev.tensor_id in initial:
                pass
            elif ev.delta == 0:
                # placeholder of a parameter kept on the host; its swap-in brings it
                pass
            else:
                if ev.tensor_id in resident:
                    raise PeakAnalysisError(f"tensor {ev.tensor_id!r} generated while already resident")
                used += ev.delta
                resident.add(ev.tensor_id)
        elif et == TUA_EVENT:
            if not ev.release:
                lua = ev.access_id
        elif et == SWAP_IN_COMPLETE:
            if ev.tensor_id in resident:
                raise PeakAnalysisError(f"swap-in of already resident tensor {ev.tensor_id!r}")
            used += ev.size
            resident.add(ev.tensor_id)
        elif et in (SWAP_OUT_COMPLETE, RELEASE):
            if ev.tensor_id not in resident:
                raise PeakAnalysisError(f"{et} of non-resident tensor {ev.tensor_id!r} at t={ev.time} (double release)")
            used -= ev.size
            resident.discard(ev.tensor_id)
        else:
            raise ValueError(f"unknown timeline event type {et!r}")
        if used < 0:
            raise PeakAnalysisError(f"footprint went negative at t={ev.time}")
        if i + 1 < len(timeline) and timeline[i + 1].time == ev.time:
            continue
        # the footprint is judged once all changes of a tick have settled
        if used > peak:
            peak = used
            peak_set = frozenset(resident)
            peak_time = ev.time
            peak_lua = lua
        if curve[-1][0] == ev.time and len(curve) > 1:
            curve[-1] = (ev.time, used)
        else:
            curve.append((ev.time, used))
    return PeakReport(peak, peak_set, peak_lua, peak_time, curve)


def initial_resident(seq: TensorAccessSequence, plan: Optional[SchedulingPlan] = None) -> Dict[str, int]:
    """Tensors on the GPU when an iteration starts.

    Inputs, outputs and parameters, minus the parameters the plan keeps on
    the host across the iteration boundary.
    """
    wrapped = plan.wrapped_parameters(seq.aliases) if plan is not None else set()
    return {
        t: seq.sizes[t]
        for t, k in sorted(seq.kinds.items())
        if k in ("parameter", "input", "output") and t not in wrapped
    }


def analyze_job(seq: TensorAccessSequence, plan: Optional[SchedulingPlan] = None) -> PeakReport:
    return analyze_peak(build_timeline(seq, plan), initial_resident(seq, plan))


def merge_global_peak(reports: Iterable[PeakReport]) -> int:
    return sum(r.memory_peak for r in reports)


def dump_reports(reports: Mapping[str, PeakReport]) -> str:
    return json.dumps({j: reports[j].to_dict() for j in sorted(reports)}, indent=1)
