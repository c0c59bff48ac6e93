"""Every acceptance criterion at its stated tolerance, one result line each."""
import filecmp
import random
import time

import numpy as np
import pytest

from conftest import record
from memsched.latency_model import FeatureVector, fit_predictor
from memsched.peak_analysis import analyze_job
from memsched.plan import IN, OUT
from memsched.scenario import read_scenario, run_modes, run_scenario
from memsched.simulator import SimulationTrace, check_trace, compute_metrics, cost_benefit
from memsched.swap_planner import JobContext, SwapBudget, TransferModel, swap_pass
from oracles import oracle_peak, random_job, random_swap_plan
from scenarios import job_ids, random_scenario, single_job_scenario, write_scenario


def check(number, title, fn):
    """Run ``fn`` (returns a detail string), record the outcome and re-raise failures."""
    try:
        detail = fn()
    except AssertionError as exc:
        record(number, title, False, str(exc).splitlines()[0] if str(exc) else "")
        raise
    record(number, title, True, detail or "")


@pytest.fixture(scope="module")
def multi_job_runs(tmp_path_factory):
    """The 100 random multi-job scenarios shared by the plan-safety and monotonicity checks."""
    root = tmp_path_factory.mktemp("multi")
    start = time.perf_counter()
    runs = []
    for i in range(100):
        d = root / f"s{i}"
        d.mkdir()
        path = write_scenario(str(d), random_scenario(str(d), i))
        result = run_modes(read_scenario(path), ["vanilla", "scheduled"])
        runs.append((i, result))
    return runs, time.perf_counter() - start


def test_criterion_01_peak_oracle_equivalence():
    def body():
        start = time.perf_counter()
        mismatches = []
        for i in range(200):
            rng = random.Random(1000 + i)
            graph, lat, seq = random_job(rng, max_ops=12)
            if i % 2 == 0:
                plan = random_swap_plan(rng, seq, bandwidth=rng.choice([4, 8, 32]), max_pairs=3)
            else:
                ctx = JobContext(seq)
                swap_pass({seq.job_id: ctx}, SwapBudget(), TransferModel(rng.choice([4, 16, 64])))
                plan = ctx.plan
            pairs = len(plan.pairs())
            assert pairs <= 3 or i % 2, f"job {i} has {pairs} random pairs"
            report = analyze_job(seq, plan)
            got = (report.memory_peak, report.peak_time, report.peak_tensors)
            want = oracle_peak(seq, plan)
            if got != want:
                mismatches.append((i, got, want))
        elapsed = time.perf_counter() - start
        assert not mismatches, f"{len(mismatches)} mismatches, first {mismatches[0]}"
        assert elapsed < 10, f"took {elapsed:.1f}s"
        return f"200/200 jobs match in {elapsed:.2f}s"

    check(1, "peak analysis matches the brute-force replay oracle", body)


def test_criterion_02_plan_safety(multi_job_runs):
    runs, elapsed = multi_job_runs

    def body():
        bad = []
        for i, result in runs:
            trace = result.traces["scheduled"]
            # violations hold reads of absent tensors not covered by a passive swap-in
            # and double releases; check_trace adds overlapping transfers
            problems = check_trace(trace)
            if problems:
                bad.append((i, problems[:2]))
        assert not bad, f"{len(bad)} unsafe scenarios, first {bad[0]}"
        assert elapsed < 60, f"took {elapsed:.1f}s"
        return f"100/100 safe in {elapsed:.1f}s"

    check(2, "scheduled runs are safe: no bad reads, no double release, exclusive channel", body)


def test_criterion_03_peak_monotonicity(multi_job_runs):
    runs, _ = multi_job_runs

    def body():
        nonmono = []
        above = []
        for i, result in runs:
            h = result.orchestrator.session.mp_history
            if any(b > a for a, b in zip(h, h[1:])):
                nonmono.append(i)
            v, s = result.traces["vanilla"].peak, result.traces["scheduled"].peak
            if s > v:
                above.append((i, s, v))
        assert not nonmono, f"merged peak increased during planning in scenarios {nonmono}"
        assert not above, (f"scheduled peak above vanilla peak in {len(above)}/100 scenarios "
                           f"(scenario, scheduled, vanilla): {above}")
        return "mp nonincreasing 100/100, scheduled <= vanilla 100/100"

    check(3, "merged peak never grows while planning; scheduled peak <= vanilla peak", body)


def test_criterion_04_slack_overlap_zero_overhead(tmp_path):
    def body():
        config = single_job_scenario(str(tmp_path), "random", fraction=None, seed=0,
                                     extra={"pcie_bandwidth": 1e6, "memory_budget": 10 ** 12})
        result = run_modes(read_scenario(write_scenario(str(tmp_path), config)), ["vanilla", "scheduled"])
        plan = next(iter(result.orchestrator.plans.values()))
        assert plan.swap_events, "the planner scheduled no swaps"
        assert not plan.recompute_events
        transfer = TransferModel(1e6)
        seq = next(iter(result.orchestrator.session.contexts.values())).effective
        for pid, pair in plan.pairs().items():
            for ev in pair.values():
                slack = ev.latest_time - ev.earliest_time
                assert slack >= 2 * ev.duration, f"{ev.event_id} has slack {slack} for duration {ev.duration}"
                assert ev.duration == transfer.duration(seq.sizes[ev.tensor_id])
        trace = result.traces["scheduled"]
        metrics = compute_metrics(result.traces["vanilla"], trace)
        assert metrics.eor == 0.0, f"eor {metrics.eor}"
        assert trace.passive_swap_count == 0
        return f"{len(plan.pairs())} pairs, eor=0, passive=0, msr={metrics.msr:.3f}"

    check(4, "transfers with 2x slack add no overhead", body)


def test_criterion_05_proactive_beats_passive(tmp_path):
    def body():
        start = time.perf_counter()
        rows = []
        for family in ("vgg16", "resnet50", "inception_v3", "inception_v4", "densenet"):
            d = tmp_path / family
            d.mkdir()
            config = single_job_scenario(str(d), family, fraction=0.7, seed=1)
            result = run_modes(read_scenario(write_scenario(str(d), config)), ["vanilla", "scheduled", "passive"])
            sched = result.traces["scheduled"].time_cost()
            passive = result.traces["passive"].time_cost()
            rows.append((family, sched, passive))
        elapsed = time.perf_counter() - start
        worse = [r for r in rows if r[1] > r[2]]
        assert not worse, f"scheduled slower than passive: {worse}"
        assert elapsed < 300, f"took {elapsed:.0f}s"
        return "; ".join(f"{f} {s:.0f}<={p:.0f}" for f, s, p in rows) + f" ({elapsed:.0f}s)"

    check(5, "scheduled ETC <= passive ETC on the five network families", body)


def test_criterion_06_metrics_formula():
    def body():
        for msr, eor, cbr in ((0.3483, 0.2295, 1.518), (0.7468, 0.2006, 3.722)):
            assert abs(cost_benefit(msr, eor) - cbr) <= 0.001
            vanilla = SimulationTrace("vanilla", peak=1_000_000, iteration_times={"j": [1_000_000]})
            exp = SimulationTrace("scheduled", peak=round(1_000_000 * (1 - msr)),
                                  iteration_times={"j": [round(1_000_000 * (1 + eor))]})
            m = compute_metrics(vanilla, exp)
            assert abs(m.msr - msr) < 1e-9 and abs(m.eor - eor) < 1e-9
            assert abs(m.cbr - cbr) <= 0.001, f"cbr {m.cbr} for ({msr}, {eor})"
        return "1.518 and 3.722 reproduced"

    check(6, "CBR = MSR / EOR on reference (msr, eor, cbr) rows", body)


def test_criterion_07_replan_trigger(tmp_path):
    def body():
        out = []
        for drift, expect in ((1.25, 1), (1.05, 0)):
            d = tmp_path / f"d{drift}"
            d.mkdir()
            config = single_job_scenario(str(d), "chain", fraction=0.7, drift=drift, depth=4, width=64)
            result = run_modes(read_scenario(write_scenario(str(d), config)), ["scheduled"])
            trace = result.traces["scheduled"]
            assert result.orchestrator.replans == expect, f"drift {drift}: {result.orchestrator.replans} replans"
            versions = trace.plan_versions[job_ids(config)[0]]
            assert versions[0] == 0 and max(versions) == expect, f"drift {drift}: versions {versions}"
            assert all(b - a in (0, 1) for a, b in zip(versions, versions[1:]))
            out.append(f"drift {drift:.2f}: {expect} replan, versions {versions}")
        return "; ".join(out)

    check(7, "25% drift replans exactly once, 5% drift never", body)


def test_criterion_08_cross_iteration_swap(tmp_path):
    def body():
        config = single_job_scenario(str(tmp_path), "random", fraction=0.7, seed=0)
        result = run_modes(read_scenario(write_scenario(str(tmp_path), config)), ["scheduled"])
        plan = next(iter(result.orchestrator.plans.values()))
        wrapped = plan.pairs()
        wrapped = {pid: p for pid, p in wrapped.items() if p[OUT].wraps_iteration}
        assert wrapped, "no wrapped swap pair"
        trace = result.traces["scheduled"]
        params = {p[IN].tensor_id for p in wrapped.values()}
        waits = [w for w in trace.passive_waits if w[2] in params]
        assert not waits, f"passive waits on wrapped parameters: {waits}"
        assert trace.passive_swap_count == 0
        assert len(trace.iteration_times[job_ids(config)[0]]) >= 2
        return f"wrapped parameters {sorted(params)}, no passive waits"

    check(8, "updated parameters swap across the iteration boundary without stalls", body)


def _r2(y, pred):
    return 1.0 - float(np.sum((y - pred) ** 2)) / float(np.sum((y - y.mean()) ** 2))


def test_criterion_09_latency_fit():
    def body():
        rng = np.random.default_rng(7)
        w_dims = np.array([0.8, 0.05, 0.3, 0.01])
        w_attr = np.array([2.0, 5.0])

        def samples(n, noise):
            out = []
            for _ in range(n):
                dims = rng.integers(1, 256, size=4).astype(float)
                attrs = rng.integers(1, 8, size=2).astype(float)
                u = float(rng.uniform(0, 1))
                y = 3.0 + dims @ w_dims + attrs @ w_attr + 40.0 * u
                if noise:
                    y *= 1.0 + rng.uniform(-noise, noise)
                out.append((FeatureVector("conv2d", tuple(dims), tuple(attrs), u), y))
            return out

        scores = {}
        for noise, floor in ((0.0, 0.99), (0.1, 0.9)):
            predictor = fit_predictor(samples(400, noise))
            held = samples(200, noise)
            y = np.array([v for _, v in held])
            pred = np.array([predictor.predict(fv) for fv, _ in held])
            scores[noise] = _r2(y, pred)
            assert scores[noise] >= floor, f"noise {noise}: r2 {scores[noise]:.4f} < {floor}"
        return f"r2 {scores[0.0]:.4f} noiseless, {scores[0.1]:.4f} at 10% noise"

    check(9, "latency regression fits linear synthetic latencies", body)


def test_criterion_10_determinism(tmp_path):
    def body():
        cfg_dir = tmp_path / "cfg"
        cfg_dir.mkdir()
        config = random_scenario(str(cfg_dir), 3)
        config["iterations"] = 4
        path = write_scenario(str(cfg_dir), config)
        run_scenario(path, str(tmp_path / "a"), seed=11)
        run_scenario(path, str(tmp_path / "b"), seed=11)
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
        names = sorted(cmp.common_files)
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
        assert not mismatch and not errors and not cmp.left_only and not cmp.right_only, f"differ: {mismatch}"
        assert {"plans.json", "summary.csv", "trace_scheduled.csv"} <= set(match)
        return f"{len(match)} output files byte-identical"

    check(10, "reruns with the same seed are byte-identical", body)
