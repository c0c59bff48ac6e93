"""Greedy swap-out / swap-in scheduling for the tensors that cause the peak.

Each pass walks the peak tensors of every job, largest first, and tries to
evict the tensor before the peak and prefetch it before its next use.  The
PCIe link is exclusive, so within a job no two transfers may overlap;
between jobs the simulator arbitrates at run time.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .graph_model import TGA, TUA, TensorAccess, TensorAccessSequence
from .peak_analysis import PeakReport, analyze_job
from .plan import IN, OUT, SchedulingPlan, SwapEvent, effective_sequence, transfer_duration

logger = logging.getLogger(__name__)

MAX_RETRIES = 16


@dataclass(frozen=True)
class FeasibleRegion:
    begin: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.begin


@dataclass
class SwapBudget:
    max_ratio: Dict[str, float] = field(default_factory=dict)
    swapped_out_count: Dict[str, int] = field(default_factory=dict)
    total_swapped: int = 0

    def admits(self, job_id: str) -> bool:
        # the first swap in the system has no ratio to compare against
        if self.total_swapped == 0:
            return True
        ratio = self.swapped_out_count.get(job_id, 0) / self.total_swapped
        return ratio <= self.max_ratio.get(job_id, 1.0)

    def record(self, job_id: str) -> None:
        self.swapped_out_count[job_id] = self.swapped_out_count.get(job_id, 0) + 1
        self.total_swapped += 1


@dataclass(frozen=True)
class TransferModel:
    bandwidth: float
    setup: int = 0

    def duration(self, size: int) -> int:
        return transfer_duration(size, self.bandwidth, self.setup)


@dataclass
class SwapAttempt:
    succeed: bool
    succeed_swap_out: bool
    have_first_access: bool
    window: Tuple[int, int]


class JobContext:
    """Planner-side working state of one job: base sequence, plan, peak report."""

    def __init__(self, seq: TensorAccessSequence, plan: Optional[SchedulingPlan] = None,
                 latencies: Optional[Dict[str, int]] = None):
        self.seq = seq
        self.plan = plan if plan is not None else SchedulingPlan(seq.job_id)
        self.latencies = dict(latencies or {})
        self._counter = 0
        self.refresh()

    @property
    def job_id(self) -> str:
        return self.seq.job_id

    def refresh(self, analyze: bool = True) -> None:
        self.effective = effective_sequence(self.seq, self.plan.recompute_events)
        if analyze:
            self.report = analyze_job(self.seq, self.plan)
        self._ends = sorted((a.end_time, i) for i, a in enumerate(self.effective.accesses))
        self._tat = None

    @property
    def tat(self) -> Dict[str, List[TensorAccess]]:
        if self._tat is None:
            self._tat = self.effective.by_tensor()
        return self._tat

    def storage_accesses(self, tensor_id: str) -> List[TensorAccess]:
        root = self.effective.storage_of(tensor_id)
        out = list(self.tat.get(root, ()))
        for upd, param in self.effective.aliases.items():
            if param == root:
                out.extend(self.tat.get(upd, ()))
        return out

    def next_id(self, prefix: str) -> str:
        self._counter += 1
        return f"{self.job_id}:{prefix}{len(self.plan.swap_events) + len(self.plan.recompute_events)}_{self._counter}"

    def anchor(self, start: int) -> Tuple[Optional[str], int]:
        """Trigger access (latest one ending at or before ``start``) and the delta."""
        i = bisect.bisect_right(self._ends, (start, float("inf")))
        if i == 0:
            return None, start
        end, idx = self._ends[i - 1]
        return self.effective.accesses[idx].access_id, start - end

    def swapped_out(self) -> set:
        return {e.tensor_id for e in self.plan.swap_events if e.direction == OUT}

    def recompute_locked(self) -> set:
        locked = set(self.plan.recomputed_tensors())
        for rec in self.plan.recompute_events:
            for a in self.effective.accesses:
                if a.op_id == rec.event_id and a.access_type == TUA:
                    locked.add(a.tensor_id)
        return locked


# --------------------------------------------------------------------------
# windows and regions

def _tga(accesses: Sequence[TensorAccess]) -> Optional[TensorAccess]:
    for a in accesses:
        if a.access_type == TGA:
            return a
    return None


def swap_window(tensor_id: str, report: PeakReport, seq: TensorAccessSequence) -> Tuple[int, int]:
    accesses = seq.by_tensor().get(tensor_id, [])
    tga = _tga(accesses)
    if tga is None:
        raise KeyError(f"tensor {tensor_id!r} has no TGA in the sequence")
    earliest = tga.end_time
    for a in accesses:
        if a.start_time <= report.peak_time:
            earliest = max(earliest, a.end_time)
    return earliest, report.peak_time


def subtract_intervals(window: Tuple[int, int], blocked: Iterable[Tuple[int, int]]) -> List[Tuple[int, int]]:
    begin, end = window
    free = []
    cur = begin
    for s, e in sorted(b for b in blocked if b[1] > b[0]):
        if e <= cur:
            continue
        if s >= end:
            break
        if s > cur:
            free.append((cur, s))
        cur = max(cur, e)
    if cur < end:
        free.append((cur, end))
    return free


def feasible_regions(window: Tuple[int, int], existing_events: Iterable[SwapEvent],
                     tensor_accesses: Iterable[TensorAccess], duration: int) -> List[FeasibleRegion]:
    if duration <= 0:
        raise ValueError("duration must be positive")
    blocked = [(e.start_time, e.end_time) for e in existing_events]
    blocked += [(a.start_time, a.end_time) for a in tensor_accesses]
    return [FeasibleRegion(b, e) for b, e in subtract_intervals(window, blocked) if e - b >= duration]


# --------------------------------------------------------------------------
# placing events

def _make_event(ctx: JobContext, tensor_id: str, direction: str, start: int, end: int,
                window: Tuple[int, int], pair_id: str, wraps: bool = False,
                served: Optional[str] = None) -> SwapEvent:
    trigger, delta = ctx.anchor(start)
    return SwapEvent(
        event_id=ctx.next_id("s"), job_id=ctx.job_id, tensor_id=tensor_id, direction=direction,
        trigger_access=trigger, delta_time=delta, start_time=start, end_time=end,
        earliest_time=window[0], latest_time=window[1], wraps_iteration=wraps,
        pair_id=pair_id, served_access=served,
    )


def _flag_preceding(ctx: JobContext, tensor_id: str, before: int) -> None:
    prev = [a for a in ctx.tat.get(tensor_id, ()) if a.end_time <= before]
    if prev:
        ctx.plan.release_flags.add(prev[-1].access_id)


def schedule_swap(ctx: JobContext, tensor_id: str, window: Tuple[int, int],
                  transfer: TransferModel) -> SwapAttempt:
    """One attempt at an out/in pair for a forward/backward tensor."""
    size = ctx.effective.sizes[tensor_id]
    dur = transfer.duration(size)
    own = ctx.storage_accesses(tensor_id)
    regions = feasible_regions(window, ctx.plan.swap_events, own, dur)
    if not regions:
        return SwapAttempt(False, False, False, window)
    region = regions[0]
    out_start, out_end = region.begin, region.begin + dur
    first = next((a for a in ctx.tat[tensor_id]
                  if a.access_type == TUA and a.start_time >= out_end), None)
    if first is None:
        return SwapAttempt(False, True, False, window)
    pair_id = ctx.next_id("p")
    out_ev = _make_event(ctx, tensor_id, OUT, out_start, out_end, window, pair_id)
    in_window = (out_end, first.start_time)
    in_regions = feasible_regions(in_window, ctx.plan.swap_events + [out_ev], own, dur)
    if not in_regions:
        # retry with the swap-out moved past this access
        return SwapAttempt(False, True, True, (first.end_time, window[1]))
    last = in_regions[-1]
    in_ev = _make_event(ctx, tensor_id, IN, last.end - dur, last.end, in_window, pair_id,
                        served=first.access_id)
    ctx.plan.swap_events.extend([out_ev, in_ev])
    _flag_preceding(ctx, tensor_id, out_start)
    return SwapAttempt(True, True, True, window)


def schedule_wrapped_swap(ctx: JobContext, updated_id: str, peak_time: int,
                          transfer: TransferModel, evict_by_peak: bool) -> bool:
    """Swap an updated parameter out after its update and back in next iteration.

    With ``evict_by_peak`` the swap-out must complete by the peak (the peak is
    in the optimizer phase); otherwise the prefetch must finish after the peak
    (the peak is at the start of the next iteration).
    """
    eff = ctx.effective
    param = eff.aliases[updated_id]
    size = eff.sizes[updated_id]
    dur = transfer.duration(size)
    own = ctx.storage_accesses(updated_id)
    tga = _tga(ctx.tat[updated_id])
    out_latest = min(peak_time, eff.iteration_period) if evict_by_peak else eff.iteration_period
    out_window = (tga.end_time, out_latest)
    regions = feasible_regions(out_window, ctx.plan.swap_events, own, dur)
    if not regions:
        return False
    out_start = regions[0].begin
    first = next((a for a in ctx.tat.get(param, ()) if a.access_type == TUA), None)
    if first is None:
        return False
    pair_id = ctx.next_id("w")
    out_ev = _make_event(ctx, updated_id, OUT, out_start, out_start + dur, out_window, pair_id, wraps=True)
    in_window = (0, first.start_time)
    in_regions = feasible_regions(in_window, ctx.plan.swap_events + [out_ev], own, dur)
    if not in_regions:
        return False
    last = in_regions[-1]
    if not evict_by_peak and last.end <= peak_time:
        return False
    in_ev = _make_event(ctx, param, IN, last.end - dur, last.end, in_window, pair_id, wraps=True,
                        served=first.access_id)
    ctx.plan.swap_events.extend([out_ev, in_ev])
    _flag_preceding(ctx, updated_id, out_start)
    return True


def schedule_rest(ctx: JobContext, tensor_id: str, served_access: str, transfer: TransferModel) -> int:
    """Add out/in pairs in the gaps between the tensor's later accesses."""
    accesses = [a for a in ctx.tat[tensor_id]]
    idx = next(i for i, a in enumerate(accesses) if a.access_id == served_access)
    size = ctx.effective.sizes[tensor_id]
    dur = transfer.duration(size)
    own = ctx.storage_accesses(tensor_id)
    added = 0
    for prev, nxt in zip(accesses[idx:], accesses[idx + 1:]):
        if nxt.access_type != TUA:
            continue
        gap = (prev.end_time, nxt.start_time)
        if gap[1] - gap[0] < 2 * dur:
            continue
        outs = feasible_regions(gap, ctx.plan.swap_events, own, dur)
        if not outs:
            continue
        out_start = outs[0].begin
        pair_id = ctx.next_id("p")
        out_ev = _make_event(ctx, tensor_id, OUT, out_start, out_start + dur, gap, pair_id)
        in_window = (out_start + dur, nxt.start_time)
        ins = feasible_regions(in_window, ctx.plan.swap_events + [out_ev], own, dur)
        if not ins:
            continue
        in_ev = _make_event(ctx, tensor_id, IN, ins[-1].end - dur, ins[-1].end, in_window, pair_id,
                            served=nxt.access_id)
        ctx.plan.swap_events.extend([out_ev, in_ev])
        ctx.plan.release_flags.add(prev.access_id)
        added += 1
    return added


def _try_tensor(ctx: JobContext, tensor_id: str, budget: SwapBudget, transfer: TransferModel) -> bool:
    eff = ctx.effective
    report = ctx.report
    kind = eff.kinds.get(tensor_id, "interim")
    swapped = ctx.swapped_out()
    if tensor_id in ctx.recompute_locked():
        return False

    if kind == "updated_parameter":
        if tensor_id in swapped:
            return False
        return schedule_wrapped_swap(ctx, tensor_id, report.peak_time, transfer, evict_by_peak=True)

    if kind == "parameter":
        updated = [u for u, p in eff.aliases.items() if p == tensor_id]
        first = next((a for a in ctx.tat.get(tensor_id, ()) if a.access_type == TUA), None)
        if updated and first is not None and report.peak_time < first.start_time:
            if updated[0] in swapped:
                return False
            return schedule_wrapped_swap(ctx, updated[0], report.peak_time, transfer, evict_by_peak=False)

    if not budget.admits(ctx.job_id):
        return False
    if len(ctx.tat.get(tensor_id, ())) <= 1 or tensor_id in swapped:
        return False
    window = swap_window(tensor_id, report, eff)
    attempt = SwapAttempt(False, True, True, window)
    tries = 0
    while (not attempt.succeed and attempt.window[1] > attempt.window[0]
           and attempt.succeed_swap_out and attempt.have_first_access and tries < MAX_RETRIES):
        attempt = schedule_swap(ctx, tensor_id, attempt.window, transfer)
        tries += 1
    if not attempt.succeed:
        return False
    served = next(e.served_access for e in reversed(ctx.plan.swap_events)
                  if e.tensor_id == tensor_id and e.direction == IN)
    schedule_rest(ctx, tensor_id, served, transfer)
    return True


def swap_pass(jobs: Dict[str, JobContext], budget: SwapBudget, transfer: TransferModel) -> bool:
    """One sweep over all peak tensors; True if any event was added."""
    candidates = []
    for jid in sorted(jobs):
        ctx = jobs[jid]
        for t in ctx.report.peak_tensors:
            candidates.append((-ctx.effective.sizes[t], jid, t))
    candidates.sort()
    changed = False
    for _, jid, t in candidates:
        ctx = jobs[jid]
        if t not in ctx.report.peak_tensors:
            continue
        before = len(ctx.plan.swap_events)
        if _try_tensor(ctx, t, budget, transfer):
            budget.record(jid)
            ctx.refresh()
            changed = True
            logger.debug("job %s: swapped %s (%d events)", jid, t, len(ctx.plan.swap_events) - before)
    return changed


# --------------------------------------------------------------------------
# plan checking

def swap_issues(seq: TensorAccessSequence, plan: SchedulingPlan,
                transfer: Optional[TransferModel] = None) -> List[Tuple[Tuple[str, ...], str]]:
    """Every violated swap invariant as (pair ids involved, message)."""
    eff = effective_sequence(seq, plan.recompute_events)
    by_id = eff.by_id()
    problems: List[Tuple[Tuple[str, ...], str]] = []
    period = eff.iteration_period
    events = sorted(plan.swap_events, key=lambda e: (e.start_time, e.end_time))
    for a, b in zip(events, events[1:]):
        if b.start_time < a.end_time:
            problems.append(((a.pair_id, b.pair_id), f"overlap {a.event_id} {b.event_id}"))
    storage: Dict[str, List[TensorAccess]] = {}
    for acc in eff.accesses:
        storage.setdefault(eff.storage_of(acc.tensor_id), []).append(acc)
    for ev in plan.swap_events:
        pid = (ev.pair_id,)
        if ev.start_time < 0 or ev.end_time > period or ev.end_time < ev.start_time:
            problems.append((pid, f"{ev.event_id} outside iteration [0,{period}]"))
        if transfer is not None and ev.duration != transfer.duration(eff.sizes[ev.tensor_id]):
            problems.append((pid, f"{ev.event_id} has wrong duration"))
        if ev.trigger_access is not None and ev.trigger_access not in by_id:
            problems.append((pid, f"{ev.event_id} trigger {ev.trigger_access!r} unknown"))
            continue
        trig_end = by_id[ev.trigger_access].end_time if ev.trigger_access else 0
        if ev.start_time != trig_end + ev.delta_time:
            problems.append((pid, f"{ev.event_id} start does not match its (trigger, delta) anchor"))
        for acc in storage.get(eff.storage_of(ev.tensor_id), ()):
            if acc.start_time < ev.end_time and acc.end_time > ev.start_time:
                problems.append((pid, f"{ev.event_id} overlaps access {acc.access_id}"))
    for pid, pair in plan.pairs().items():
        if set(pair) != {IN, OUT}:
            problems.append(((pid,), f"pair {pid} incomplete"))
            continue
        out_ev, in_ev = pair[OUT], pair[IN]
        served = by_id.get(in_ev.served_access) if in_ev.served_access else None
        if served is None:
            problems.append(((pid,), f"pair {pid} swap-in serves no access"))
            continue
        if in_ev.end_time > served.start_time:
            problems.append(((pid,), f"pair {pid} swap-in completes after its access starts"))
        if not out_ev.wraps_iteration and out_ev.end_time > in_ev.start_time:
            problems.append(((pid,), f"pair {pid} swap-in starts before its swap-out completes"))
        if out_ev.wraps_iteration and in_ev.end_time > out_ev.start_time:
            problems.append(((pid,), f"pair {pid} wrapped swap-in not before the next swap-out"))
        tga = _tga([acc for acc in eff.accesses if acc.tensor_id == out_ev.tensor_id])
        if tga is not None and out_ev.start_time < tga.end_time:
            problems.append(((pid,), f"pair {pid} swap-out starts before the tensor exists"))
    return problems


def check_swap_plan(seq: TensorAccessSequence, plan: SchedulingPlan,
                    transfer: Optional[TransferModel] = None) -> List[str]:
    """List every violated swap invariant (empty when the plan is consistent)."""
    return [msg for _, msg in swap_issues(seq, plan, transfer)]
