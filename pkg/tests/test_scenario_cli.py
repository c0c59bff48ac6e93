import csv
import json
import os

import pytest

from memsched.cli import main
from memsched.latency_model import Predictor
from memsched.scenario import ScenarioError, load_scenario, read_scenario, run_modes
from memsched.simulator import check_trace
from memsched.workloads import generate_workload
from scenarios import BASE, single_job_scenario, write_graph, write_scenario


def test_single_chain_job_all_modes(tmp_path):
    config = single_job_scenario(str(tmp_path), "chain", depth=4, width=64)
    result = run_modes(read_scenario(write_scenario(str(tmp_path), config)), ["vanilla", "scheduled", "passive"])
    rows = {r["mode"]: r for r in result.summary}
    assert set(rows) == {"vanilla", "scheduled", "passive"}
    assert rows["scheduled"]["msr"] > 0
    assert rows["vanilla"]["msr"] == 0
    for trace in result.traces.values():
        assert check_trace(trace) == []


def test_three_staggered_jobs_replan_on_drift(tmp_path):
    d = str(tmp_path)
    jobs = []
    for k, family in enumerate(["chain", "random", "chain"]):
        doc = generate_workload(family, 8, seed=k, job_id=f"j{k}", depth=3 + k, width=48)
        jobs.append({"graph_file": write_graph(d, doc), "launch_tick": 20 * k, "latency_drift": 1.5})
    config = dict(BASE, jobs=jobs, memory_budget_fraction=0.7)
    result = run_modes(read_scenario(write_scenario(d, config)), ["vanilla", "scheduled"])
    assert [r["mode"] for r in result.summary] == ["vanilla", "scheduled"]
    assert result.orchestrator.replans >= 1
    assert check_trace(result.traces["scheduled"]) == []


def test_scenario_errors(tmp_path):
    d = str(tmp_path)
    config = single_job_scenario(d, "chain")
    with pytest.raises(ScenarioError):
        load_scenario({k: v for k, v in config.items() if k != "jobs"}, d)
    with pytest.raises(ScenarioError):
        load_scenario(dict(config, colour="red"), d)
    no_lat = {k: v for k, v in config.items() if k != "latencies"}
    with pytest.raises(ScenarioError, match="latency"):
        run_modes(load_scenario(no_lat, d), ["scheduled"])
    dup = dict(config, jobs=config["jobs"] * 2)
    with pytest.raises(ScenarioError, match="duplicate"):
        load_scenario(dup, d)


def test_cli_end_to_end(tmp_path, capsys):
    d = str(tmp_path)
    graph = os.path.join(d, "chain.json")
    assert main(["gen", "--family", "chain", "--depth", "4", "--out", graph]) == 0
    config = dict(BASE, jobs=[{"graph_file": "chain.json"}], memory_budget_fraction=0.7)
    path = write_scenario(d, config)

    assert main(["fit", "--graph", graph, "--out", os.path.join(d, "pred.json")]) == 0
    with open(os.path.join(d, "pred.json")) as fh:
        assert "matmul" in Predictor.loads(fh.read()).r2()

    assert main(["plan", "--config", path]) == 0
    plans = json.loads(capsys.readouterr().out)
    assert "chain" in plans

    out = os.path.join(d, "out")
    assert main(["simulate", "--config", path, "--out", out, "--mode", "vanilla,scheduled"]) == 0
    with open(os.path.join(out, "summary.csv")) as fh:
        assert [r["mode"] for r in csv.DictReader(fh)] == ["vanilla", "scheduled"]

    rep = os.path.join(d, "rep")
    assert main(["report", "--config", path, "--out", rep, "--format", "json"]) == 0
    with open(os.path.join(rep, "summary.json")) as fh:
        rows = json.load(fh)
    assert [r["mode"] for r in rows] == ["vanilla", "scheduled", "passive"]


def test_cli_reports_errors(tmp_path):
    assert main(["plan", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit):
        main(["gen", "--family", "alexnet"])
