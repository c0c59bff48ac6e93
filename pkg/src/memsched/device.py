"""Synthetic GPU cost model standing in for real kernel timings.

One tick is one microsecond.  Compute-heavy kinds carry their work in
MFLOP as the last attribute; everything else is bound by memory traffic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .graph_model import ComputeGraph, OperatorSpec
from .latency_model import FeatureVector, extract_features

FLOP_KINDS = frozenset({"conv2d", "matmul", "conv2d_grad", "matmul_grad"})
FREE_KINDS = frozenset({"placeholder"})


@dataclass(frozen=True)
class DeviceModel:
    flops_per_tick: float = 1.0e7
    mem_bytes_per_tick: float = 5.0e5
    launch_ticks: int = 2
    pcie_bandwidth: float = 12000.0

    def op_latency(self, op: OperatorSpec, sizes: Mapping[str, int]) -> int:
        if op.op_kind in FREE_KINDS:
            return 0
        traffic = sum(sizes[t] for t in op.inputs) + sum(sizes[t] for t in op.outputs)
        work = op.attributes[-1] * 1e6 if op.op_kind in FLOP_KINDS and op.attributes else 0.0
        return int(math.ceil(self.launch_ticks + work / self.flops_per_tick + traffic / self.mem_bytes_per_tick))

    def latencies(self, graph: ComputeGraph) -> Dict[str, int]:
        sizes = graph.sizes()
        return {oid: self.op_latency(op, sizes) for oid, op in sorted(graph.ops.items())}


def slowdown(curve: Mapping[int, float], running: int) -> float:
    """Latency multiplier for ``running`` concurrently executing jobs.

    Uses the entry of the largest job count not above ``running``.
    """
    best = 1.0
    for k in sorted(curve):
        if k <= running:
            best = float(curve[k])
    return best


def usage_slowdown(gpu_usage: float) -> float:
    """Smooth multiplier used to synthesize training samples at a usage level."""
    return 1.0 + 0.5 * gpu_usage


def training_samples(graphs: Sequence[ComputeGraph], device: DeviceModel,
                     usage_levels: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                     noise: float = 0.0, seed: int = 0) -> List[Tuple[FeatureVector, float]]:
    """(features, latency) pairs for every op of every graph at each usage level."""
    rng = np.random.default_rng(seed)
    out = []
    for g in graphs:
        sizes = g.sizes()
        for oid in sorted(g.ops):
            op = g.ops[oid]
            base = device.op_latency(op, sizes)
            for u in usage_levels:
                y = base * usage_slowdown(u)
                if noise:
                    y *= 1.0 + rng.uniform(-noise, noise)
                out.append((extract_features(op, sizes, u), y))
    return out
