"""Random multi-job scenario files for the end-to-end tests."""
from __future__ import annotations

import json
import os
import random
from typing import List, Optional

from memsched.workloads import generate_workload

BASE = {
    "pcie_bandwidth": 12000,
    "transfer_setup": 0,
    "memory_budget": 0,
    "ewma_alpha": 0.3,
    "replan_threshold": 0.2,
    "stall_epsilon": 0.0005,
    "stall_min_iters": 100,
    "latencies": "device",
    "iterations": 3,
}


def write_graph(directory: str, doc: dict) -> str:
    path = os.path.join(directory, f"{doc['job_id']}.json")
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return os.path.basename(path)


def random_scenario(directory: str, index: int) -> dict:
    """1 to 3 small generated jobs with random sizes, launch ticks and link speed."""
    rng = random.Random(index)
    jobs = []
    for k in range(rng.randint(1, 3)):
        family = rng.choice(["random", "random", "chain"])
        doc = generate_workload(family, rng.choice([4, 8, 16]), seed=rng.randint(0, 10 ** 6),
                                job_id=f"s{index}j{k}", depth=rng.randint(2, 5), width=rng.randint(8, 96),
                                layers=rng.randint(3, 8))
        jobs.append({"graph_file": write_graph(directory, doc), "max_swap_ratio": rng.choice([0.5, 1.0]),
                     "launch_tick": rng.randint(0, 30)})
    config = dict(BASE)
    config.update({
        "pcie_bandwidth": rng.choice([50, 200, 1000]),
        "transfer_setup": rng.randint(0, 2),
        "memory_budget_fraction": rng.uniform(0.4, 0.9),
        "jobs": jobs,
        "gpu_slowdown_curve": {"1": 1.0, "2": 1.2, "3": 1.5},
        "seed": index,
    })
    return config


def write_scenario(directory: str, config: dict, name: str = "scenario.json") -> str:
    path = os.path.join(directory, name)
    with open(path, "w") as fh:
        json.dump(config, fh, indent=1)
    return path


def single_job_scenario(directory: str, family: str, fraction: Optional[float] = 0.7, seed: int = 1,
                        batch_size: int = 16, drift: Optional[float] = None, extra: Optional[dict] = None,
                        **kwargs) -> dict:
    doc = generate_workload(family, batch_size, seed=seed, **kwargs)
    job = {"graph_file": write_graph(directory, doc), "max_swap_ratio": 1.0, "launch_tick": 0}
    if drift is not None:
        job["latency_drift"] = drift
    config = dict(BASE)
    config["jobs"] = [job]
    if fraction is not None:
        config["memory_budget_fraction"] = fraction
    config.update(extra or {})
    return config


def job_ids(config: dict) -> List[str]:
    return [os.path.splitext(j["graph_file"])[0] for j in config["jobs"]]
