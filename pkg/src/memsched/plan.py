"""Scheduling plans: swap, recompute and release instructions for one job.

Every event is executed relative to a trigger access, ``(trigger, delta)``:
it fires ``delta`` ticks after the trigger access ends.  ``start_time`` and
``end_time`` are the planned absolute ticks inside one iteration and are kept
alongside so the planner can reason about overlap without re-deriving them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Set

from .graph_model import TGA, TUA, TensorAccess, TensorAccessSequence

OUT = "out"
IN = "in"


def transfer_duration(size: int, bandwidth: float, setup: int = 0) -> int:
    """Ticks needed to move ``size`` bytes over the PCIe link."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return int(math.ceil(size / bandwidth)) + int(setup)


@dataclass
class SwapEvent:
    event_id: str
    job_id: str
    tensor_id: str
    direction: str
    trigger_access: Optional[str]
    delta_time: int
    start_time: int
    end_time: int
    earliest_time: int = 0
    latest_time: int = 0
    wraps_iteration: bool = False
    pair_id: str = ""
    # the access a swap-in prefetches for
    served_access: Optional[str] = None

    @property
    def duration(self) -> int:
        return self.end_time - self.start_time


@dataclass
class RecomputeEvent:
    event_id: str
    job_id: str
    tensor_id: str
    target_access: str
    regen_op: str
    recompute_latency: int
    memory_saving: int
    # access of the tensor after which it is dropped from the GPU
    release_access: str = ""


@dataclass
class SchedulingPlan:
    job_id: str
    swap_events: List[SwapEvent] = field(default_factory=list)
    recompute_events: List[RecomputeEvent] = field(default_factory=list)
    release_flags: Set[str] = field(default_factory=set)
    version: int = 0

    def pairs(self) -> Dict[str, Dict[str, SwapEvent]]:
        out: Dict[str, Dict[str, SwapEvent]] = {}
        for ev in self.swap_events:
            out.setdefault(ev.pair_id, {})[ev.direction] = ev
        return out

    def swapped_tensors(self) -> Set[str]:
        return {ev.tensor_id for ev in self.swap_events}

    def recomputed_tensors(self) -> Set[str]:
        return {ev.tensor_id for ev in self.recompute_events}

    def wrapped_parameters(self, aliases: Mapping[str, str]) -> Set[str]:
        """Parameters that start every iteration on the host."""
        out = set()
        for ev in self.swap_events:
            if ev.wraps_iteration and ev.direction == IN:
                out.add(aliases.get(ev.tensor_id, ev.tensor_id))
        return out

    def copy(self) -> "SchedulingPlan":
        return SchedulingPlan(
            job_id=self.job_id,
            swap_events=[replace(e) for e in self.swap_events],
            recompute_events=[replace(e) for e in self.recompute_events],
            release_flags=set(self.release_flags),
            version=self.version,
        )

    def remove_pair(self, pair_id: str) -> None:
        self.swap_events = [e for e in self.swap_events if e.pair_id != pair_id]


# --------------------------------------------------------------------------
# effective sequence: recomputations are extra ops inserted in the stream

def recompute_access_ids(ev: RecomputeEvent, regen_inputs: Iterable[str]) -> List[str]:
    ids = [f"{ev.event_id}/{t}/{TUA}" for t in regen_inputs]
    ids.append(f"{ev.event_id}/{ev.tensor_id}/{TGA}")
    return ids


def effective_sequence(seq: TensorAccessSequence, recomputes: Iterable[RecomputeEvent]) -> TensorAccessSequence:
    """Rebuild access times with every recomputation run right before its target op.

    Ops keep their own latency; everything from the target op onwards shifts
    later by the recomputation latency.
    """
    recomputes = list(recomputes)
    if not recomputes:
        return seq
    by_id = seq.by_id()
    regen_inputs: Dict[str, List[str]] = {}
    for a in seq.accesses:
        if a.access_type == TUA:
            regen_inputs.setdefault(a.op_id, []).append(a.tensor_id)
    before_op: Dict[str, List[RecomputeEvent]] = {}
    for ev in recomputes:
        target = by_id[ev.target_access]
        before_op.setdefault(target.op_id, []).append(ev)
    for evs in before_op.values():
        evs.sort(key=lambda e: (e.tensor_id, e.event_id))

    grouped: List[List[TensorAccess]] = []
    for a in seq.accesses:
        if grouped and grouped[-1][0].op_id == a.op_id:
            grouped[-1].append(a)
        else:
            grouped.append([a])

    out: List[TensorAccess] = []
    now = 0
    for group in grouped:
        op_id = group[0].op_id
        for ev in before_op.get(op_id, ()):
            lat = int(ev.recompute_latency)
            inputs = regen_inputs.get(ev.regen_op, [])
            for t in inputs:
                out.append(TensorAccess(f"{ev.event_id}/{t}/{TUA}", t, ev.event_id, seq.job_id, TUA, now, now + lat))
            out.append(TensorAccess(f"{ev.event_id}/{ev.tensor_id}/{TGA}", ev.tensor_id, ev.event_id,
                                    seq.job_id, TGA, now, now + lat))
            now += lat
        lat = group[0].end_time - group[0].start_time
        for a in group:
            out.append(replace(a, start_time=now, end_time=now + lat))
        now += lat
    return replace(seq, accesses=out, iteration_period=now)


def fused_release_flags(seq: TensorAccessSequence, plan: SchedulingPlan) -> Set[str]:
    """Release flags whose eviction is carried out by a following swap-out.

    The planner flags the access right before a swap-out; the memory is given
    back when that swap-out completes, so the flag must not free it twice.
    """
    if not plan.release_flags or not plan.swap_events:
        return set()
    by_id = seq.by_id()
    tat = seq.by_tensor()
    outs: Dict[str, List[SwapEvent]] = {}
    for ev in plan.swap_events:
        if ev.direction == OUT:
            outs.setdefault(ev.tensor_id, []).append(ev)
    fused = set()
    for aid in plan.release_flags:
        a = by_id.get(aid)
        if a is None or a.tensor_id not in outs:
            continue
        later = [b.start_time for b in tat[a.tensor_id] if b.start_time > a.start_time]
        nxt = min(later) if later else seq.iteration_period
        for ev in outs[a.tensor_id]:
            if a.end_time <= ev.start_time <= nxt:
                fused.add(aid)
                break
    return fused


# --------------------------------------------------------------------------
# JSON

def plan_to_dict(plan: SchedulingPlan) -> dict:
    return {
        "job_id": plan.job_id,
        "version": plan.version,
        "swap_events": [
            {
                "event_id": e.event_id,
                "pair_id": e.pair_id,
                "tensor": e.tensor_id,
                "direction": e.direction,
                "trigger_access": e.trigger_access,
                "delta_time": e.delta_time,
                "start_time": e.start_time,
                "end_time": e.end_time,
                "earliest_time": e.earliest_time,
                "latest_time": e.latest_time,
                "wraps_iteration": e.wraps_iteration,
                "served_access": e.served_access,
            }
            for e in sorted(plan.swap_events, key=lambda e: (e.start_time, e.event_id))
        ],
        "recompute_events": [
            {
                "event_id": e.event_id,
                "tensor": e.tensor_id,
                "target_access": e.target_access,
                "regen_op": e.regen_op,
                "recompute_latency": e.recompute_latency,
                "memory_saving": e.memory_saving,
                "release_access": e.release_access,
            }
            for e in plan.recompute_events
        ],
        "release_flags": sorted(plan.release_flags),
    }


def plan_from_dict(doc: Mapping) -> SchedulingPlan:
    job_id = str(doc["job_id"])
    swaps = [
        SwapEvent(
            event_id=e["event_id"], job_id=job_id, tensor_id=e["tensor"], direction=e["direction"],
            trigger_access=e.get("trigger_access"), delta_time=int(e["delta_time"]),
            start_time=int(e["start_time"]), end_time=int(e["end_time"]),
            earliest_time=int(e.get("earliest_time", 0)), latest_time=int(e.get("latest_time", 0)),
            wraps_iteration=bool(e.get("wraps_iteration", False)), pair_id=e.get("pair_id", ""),
            served_access=e.get("served_access"),
        )
        for e in doc.get("swap_events", [])
    ]
    recs = [
        RecomputeEvent(
            event_id=e["event_id"], job_id=job_id, tensor_id=e["tensor"], target_access=e["target_access"],
            regen_op=e["regen_op"], recompute_latency=int(e["recompute_latency"]),
            memory_saving=int(e["memory_saving"]), release_access=e.get("release_access", ""),
        )
        for e in doc.get("recompute_events", [])
    ]
    return SchedulingPlan(job_id, swaps, recs, set(doc.get("release_flags", [])), int(doc.get("version", 0)))


def dump_plans(plans: Mapping[str, SchedulingPlan]) -> str:
    return json.dumps({jid: plan_to_dict(plans[jid]) for jid in sorted(plans)}, indent=1, sort_keys=True)


def load_plans(document: str) -> Dict[str, SchedulingPlan]:
    doc = json.loads(document)
    return {jid: plan_from_dict(p) for jid, p in doc.items()}
