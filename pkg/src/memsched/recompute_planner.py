"""Recomputation planning, used once swapping can no longer lower the peak.

A tensor resident across the peak but idle there can be dropped after the
access before the peak and regenerated right before its next use by running
its producing op again.  Only single-op regeneration is allowed and the
producer's inputs must stay resident, so one recomputation never depends on
another or on a swap.
"""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

from .graph_model import PERSISTENT_KINDS, TGA, TUA, TensorAccess
from .plan import RecomputeEvent, fused_release_flags
from .peak_analysis import PeakAnalysisError, merge_global_peak
from .swap_planner import JobContext, swap_issues

logger = logging.getLogger(__name__)


def msps(memory_saving: float, recompute_time: float) -> float:
    """Memory saved per tick of recomputation."""
    if recompute_time <= 0:
        raise ValueError("recompute time must be positive")
    return memory_saving / recompute_time


def _producer_inputs(ctx: JobContext, op_id: str) -> List[str]:
    return [a.tensor_id for a in ctx.seq.accesses if a.op_id == op_id and a.access_type == TUA]


def _op_outputs(ctx: JobContext, op_id: str) -> List[str]:
    return [a.tensor_id for a in ctx.seq.accesses if a.op_id == op_id and a.access_type == TGA]


def _input_stays(ctx: JobContext, tensor_id: str, until: int, swapped_storage: set) -> bool:
    """True if ``tensor_id`` is resident from its generation up to ``until``."""
    if ctx.effective.storage_of(tensor_id) in swapped_storage:
        return False
    if tensor_id in ctx.plan.recomputed_tensors():
        return False
    kind = ctx.effective.kinds.get(tensor_id, "interim")
    if kind in PERSISTENT_KINDS:
        return True
    accesses = ctx.tat.get(tensor_id, [])
    # still read at or after the target, hence not released before it
    return bool(accesses) and accesses[-1].start_time >= until


def find_candidates(ctx: JobContext) -> List[Tuple[float, str, RecomputeEvent]]:
    """(MSPS, tensor, event) for every eligible recomputation in one job."""
    report = ctx.report
    eff = ctx.effective
    swapped = ctx.swapped_out()
    swapped_storage = {eff.storage_of(e.tensor_id) for e in ctx.plan.swap_events}
    locked = ctx.recompute_locked()
    out = []
    for t in sorted(report.peak_tensors):
        if eff.kinds.get(t) != "interim" or t in swapped or t in locked:
            continue
        if eff.storage_of(t) in swapped_storage:
            continue
        accesses = ctx.tat.get(t, [])
        target: Optional[TensorAccess] = None
        prev: Optional[TensorAccess] = None
        for p, a in zip(accesses, accesses[1:]):
            if a.access_type == TUA and p.end_time <= report.peak_time < a.start_time:
                prev, target = p, a
                break
        if target is None:
            continue
        tga = next(a for a in accesses if a.access_type == TGA)
        regen_op = tga.op_id
        if len(_op_outputs(ctx, regen_op)) != 1:
            continue
        inputs = _producer_inputs(ctx, regen_op)
        if not inputs or any(x in locked for x in inputs):
            continue
        if not all(_input_stays(ctx, x, target.start_time, swapped_storage) for x in inputs):
            continue
        latency = int(ctx.latencies.get(regen_op, tga.end_time - tga.start_time))
        if latency <= 0:
            continue
        size = eff.sizes[t]
        ev = RecomputeEvent(
            event_id=f"{ctx.job_id}:r{len(ctx.plan.recompute_events)}_{t}",
            job_id=ctx.job_id, tensor_id=t, target_access=target.access_id, regen_op=regen_op,
            recompute_latency=latency, memory_saving=size, release_access=prev.access_id,
        )
        out.append((msps(size, latency), t, ev))
    return out


def reanchor_swaps(ctx: JobContext) -> List[str]:
    """Move swap events to their (trigger, delta) position and drop broken pairs."""
    by_id = ctx.effective.by_id()
    moved = []
    for ev in ctx.plan.swap_events:
        base = by_id[ev.trigger_access].end_time if ev.trigger_access else 0
        start = base + ev.delta_time
        moved.append(replace(ev, start_time=start, end_time=start + ev.duration))
    ctx.plan.swap_events = moved
    bad = set()
    for pids, msg in swap_issues(ctx.seq, ctx.plan):
        logger.debug("job %s: dropping pair(s) %s after recompute shift: %s", ctx.job_id, pids, msg)
        bad.update(pids)
    for pid in sorted(bad):
        ctx.plan.remove_pair(pid)
    return sorted(bad)


def _apply(ctx: JobContext, ev: RecomputeEvent) -> None:
    ctx.plan.recompute_events.append(ev)
    ctx.plan.release_flags.add(ev.release_access)
    ctx.refresh(analyze=False)
    if reanchor_swaps(ctx):
        # flags that belonged to dropped pairs would now free the tensor early
        fused = fused_release_flags(ctx.effective, ctx.plan)
        own = {r.release_access for r in ctx.plan.recompute_events}
        ctx.plan.release_flags = {a for a in ctx.plan.release_flags if a in fused or a in own}
    ctx.refresh()


def recompute_pass(jobs: Dict[str, JobContext], budget_bytes: int) -> bool:
    """Commit the best recomputation that lowers the merged peak.

    Returns False when the merged peak is below the budget or nothing helps.
    """
    before = merge_global_peak(ctx.report for ctx in jobs.values())
    if before < budget_bytes:
        return False
    ranked = []
    for jid in sorted(jobs):
        for value, t, ev in find_candidates(jobs[jid]):
            ranked.append((-value, jid, t, ev))
    ranked.sort(key=lambda r: r[:3])
    for _, jid, t, ev in ranked:
        ctx = jobs[jid]
        saved = ctx.plan.copy()
        try:
            _apply(ctx, ev)
            after = merge_global_peak(c.report for c in jobs.values())
        except PeakAnalysisError as exc:
            logger.debug("job %s: recompute of %s rejected: %s", jid, t, exc)
            after = before
        if after < before:
            logger.debug("job %s: recompute %s via %s, peak %d -> %d", jid, t, ev.regen_op, before, after)
            return True
        ctx.plan = saved
        ctx.refresh()
    return False
