"""Compute graphs, execution order and tensor access sequences.

A job is a DAG of operators that consume and produce sized tensors.  The
scheduler never looks at tensor values, only at sizes, op latencies and the
order in which tensors are generated (TGA) and used (TUA).
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

TENSOR_KINDS = ("input", "interim", "parameter", "updated_parameter", "output")
PHASES = ("forward_backward", "optimize")
TGA = "TGA"
TUA = "TUA"

# tensors that live across the iteration boundary and are never auto-released
PERSISTENT_KINDS = frozenset({"parameter", "updated_parameter", "output"})


class GraphError(ValueError):
    """Raised for malformed graph documents; ``offending_id`` names the culprit."""

    def __init__(self, message: str, offending_id: Optional[str] = None):
        super().__init__(message)
        self.offending_id = offending_id


@dataclass(frozen=True)
class TensorSpec:
    tensor_id: str
    job_id: str
    size: int
    kind: str


@dataclass(frozen=True)
class OperatorSpec:
    op_id: str
    op_kind: str
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    attributes: Tuple[float, ...] = ()
    phase: str = "forward_backward"


@dataclass
class ComputeGraph:
    job_id: str
    tensors: Dict[str, TensorSpec]
    ops: Dict[str, OperatorSpec]
    # derived: updated_parameter -> parameter whose storage it reuses
    aliases: Dict[str, str] = field(default_factory=dict)

    def producer(self, tensor_id: str) -> Optional[str]:
        return self._producers().get(tensor_id)

    def consumers(self, tensor_id: str) -> List[str]:
        return [op.op_id for op in self.ops.values() if tensor_id in op.inputs]

    def _producers(self) -> Dict[str, str]:
        cache = self.__dict__.get("_producer_cache")
        if cache is None:
            cache = {}
            for op in self.ops.values():
                for t in op.outputs:
                    cache[t] = op.op_id
            self.__dict__["_producer_cache"] = cache
        return cache

    def storage_of(self, tensor_id: str) -> str:
        """Id of the tensor whose memory ``tensor_id`` occupies."""
        return self.aliases.get(tensor_id, tensor_id)

    def sizes(self) -> Dict[str, int]:
        return {t.tensor_id: t.size for t in self.tensors.values()}

    def persistent_tensors(self) -> List[str]:
        """Tensors resident at the start of every iteration (before any plan)."""
        return sorted(t.tensor_id for t in self.tensors.values()
                      if t.kind in ("parameter", "input", "output"))


@dataclass(frozen=True)
class TensorAccess:
    access_id: str
    tensor_id: str
    op_id: str
    job_id: str
    access_type: str
    start_time: int
    end_time: int
    release_flag: bool = False


@dataclass
class TensorAccessSequence:
    job_id: str
    accesses: List[TensorAccess]
    iteration_period: int
    kinds: Dict[str, str] = field(default_factory=dict)
    sizes: Dict[str, int] = field(default_factory=dict)
    aliases: Dict[str, str] = field(default_factory=dict)

    def by_id(self) -> Dict[str, TensorAccess]:
        return {a.access_id: a for a in self.accesses}

    def by_tensor(self) -> Dict[str, List[TensorAccess]]:
        """Accesses grouped per tensor, ordered by time (the TAT table)."""
        out: Dict[str, List[TensorAccess]] = {}
        for a in self.accesses:
            out.setdefault(a.tensor_id, []).append(a)
        return out

    def storage_of(self, tensor_id: str) -> str:
        return self.aliases.get(tensor_id, tensor_id)


def access_id_for(op_id: str, tensor_id: str, access_type: str) -> str:
    return f"{op_id}/{tensor_id}/{access_type}"


# --------------------------------------------------------------------------
# loading / saving

_TOP_FIELDS = {"job_id", "tensors", "ops"}
_TENSOR_FIELDS = {"id", "size", "kind"}
_OP_FIELDS = {"id", "kind", "inputs", "outputs", "attributes", "phase"}


def _check_fields(obj: Mapping, allowed: set, required: set, where: str, oid=None):
    if not isinstance(obj, Mapping):
        raise GraphError(f"{where}: expected an object", oid)
    unknown = set(obj) - allowed
    if unknown:
        raise GraphError(f"{where}: unknown fields {sorted(unknown)}", oid)
    missing = required - set(obj)
    if missing:
        raise GraphError(f"{where}: missing fields {sorted(missing)}", oid)


def graph_from_dict(doc: Mapping) -> ComputeGraph:
    _check_fields(doc, _TOP_FIELDS, _TOP_FIELDS, "graph")
    job_id = str(doc["job_id"])
    tensors: Dict[str, TensorSpec] = {}
    for raw in doc["tensors"]:
        _check_fields(raw, _TENSOR_FIELDS, _TENSOR_FIELDS, "tensor", raw.get("id") if isinstance(raw, Mapping) else None)
        tid = str(raw["id"])
        if tid in tensors:
            raise GraphError(f"duplicate tensor id {tid!r}", tid)
        size = raw["size"]
        if not isinstance(size, int) or isinstance(size, bool) or size <= 0:
            raise GraphError(f"tensor {tid!r} has nonpositive or non-integer size {size!r}", tid)
        if raw["kind"] not in TENSOR_KINDS:
            raise GraphError(f"tensor {tid!r} has unknown kind {raw['kind']!r}", tid)
        tensors[tid] = TensorSpec(tid, job_id, size, raw["kind"])

    ops: Dict[str, OperatorSpec] = {}
    for raw in doc["ops"]:
        oid = raw.get("id") if isinstance(raw, Mapping) else None
        _check_fields(raw, _OP_FIELDS, {"id", "kind", "inputs", "outputs"}, "op", oid)
        oid = str(oid)
        if oid in ops or oid in tensors:
            raise GraphError(f"duplicate op id {oid!r}", oid)
        phase = raw.get("phase", "forward_backward")
        if phase not in PHASES:
            raise GraphError(f"op {oid!r} has unknown phase {phase!r}", oid)
        ops[oid] = OperatorSpec(
            op_id=oid,
            op_kind=str(raw["kind"]),
            inputs=tuple(str(t) for t in raw["inputs"]),
            outputs=tuple(str(t) for t in raw["outputs"]),
            attributes=tuple(float(a) for a in raw.get("attributes", [])),
            phase=phase,
        )
    graph = ComputeGraph(job_id, tensors, ops)
    validate_graph(graph)
    return graph


def validate_graph(graph: ComputeGraph) -> None:
    """Check every structural invariant and fill in ``graph.aliases``."""
    produced: Dict[str, str] = {}
    for op in graph.ops.values():
        if not op.outputs:
            raise GraphError(f"op {op.op_id!r} produces no tensor", op.op_id)
        for t in op.inputs + op.outputs:
            if t not in graph.tensors:
                raise GraphError(f"op {op.op_id!r} references unknown tensor {t!r}", t)
        if len(set(op.inputs)) != len(op.inputs):
            raise GraphError(f"op {op.op_id!r} lists an input twice", op.op_id)
        if set(op.inputs) & set(op.outputs):
            raise GraphError(f"op {op.op_id!r} reads and writes the same tensor", op.op_id)
        for t in op.outputs:
            if t in produced:
                raise GraphError(f"tensor {t!r} produced by both {produced[t]!r} and {op.op_id!r}", t)
            produced[t] = op.op_id
    for t in graph.tensors.values():
        if t.tensor_id not in produced:
            raise GraphError(f"tensor {t.tensor_id!r} has no producing op (every tensor needs a TGA)", t.tensor_id)

    aliases: Dict[str, str] = {}
    for op in graph.ops.values():
        updated = [t for t in op.outputs if graph.tensors[t].kind == "updated_parameter"]
        if op.phase == "optimize" and op.op_kind == "update" and len(updated) != 1:
            raise GraphError(f"update op {op.op_id!r} must output exactly one updated_parameter", op.op_id)
        if not updated:
            continue
        if op.op_kind != "update" or len(updated) != 1:
            raise GraphError(f"updated_parameter produced outside a single-output update op {op.op_id!r}", op.op_id)
        params = [t for t in op.inputs if graph.tensors[t].kind == "parameter"]
        if len(params) != 1:
            raise GraphError(f"update op {op.op_id!r} must read exactly one parameter", op.op_id)
        if params[0] in aliases.values():
            raise GraphError(f"parameter {params[0]!r} updated twice", params[0])
        if graph.tensors[params[0]].size != graph.tensors[updated[0]].size:
            raise GraphError(f"updated parameter {updated[0]!r} differs in size from {params[0]!r}", updated[0])
        aliases[updated[0]] = params[0]
    graph.aliases = aliases
    # raises on cycles
    topological_order(graph)


def load_graph(document: str) -> ComputeGraph:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise GraphError(f"graph document is not valid JSON: {exc}") from exc
    return graph_from_dict(doc)


def graph_to_dict(graph: ComputeGraph) -> dict:
    return {
        "job_id": graph.job_id,
        "tensors": [{"id": t.tensor_id, "size": t.size, "kind": t.kind} for t in graph.tensors.values()],
        "ops": [
            {
                "id": op.op_id,
                "kind": op.op_kind,
                "inputs": list(op.inputs),
                "outputs": list(op.outputs),
                "attributes": list(op.attributes),
                "phase": op.phase,
            }
            for op in graph.ops.values()
        ],
    }


def dump_graph(graph: ComputeGraph) -> str:
    return json.dumps(graph_to_dict(graph), indent=1)


# --------------------------------------------------------------------------
# ordering and access sequences

def topological_order(graph: ComputeGraph) -> List[str]:
    """Kahn's algorithm; among ready ops the smallest op_id runs first."""
    producers = {}
    for op in graph.ops.values():
        for t in op.outputs:
            producers[t] = op.op_id
    indegree = {oid: 0 for oid in graph.ops}
    succ: Dict[str, List[str]] = {oid: [] for oid in graph.ops}
    for op in graph.ops.values():
        deps = {producers[t] for t in op.inputs if t in producers}
        for d in deps:
            if d == op.op_id:
                raise GraphError(f"op {op.op_id!r} consumes its own output", op.op_id)
            succ[d].append(op.op_id)
            indegree[op.op_id] += 1
    ready = [oid for oid, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        oid = heapq.heappop(ready)
        order.append(oid)
        for nxt in succ[oid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, nxt)
    if len(order) != len(graph.ops):
        stuck = sorted(oid for oid, deg in indegree.items() if deg > 0)
        raise GraphError(f"cycle detected among ops {stuck}", stuck[0])
    return order


def generate_access_sequence(graph: ComputeGraph, latencies: Mapping[str, int]) -> TensorAccessSequence:
    now = 0
    accesses: List[TensorAccess] = []
    for oid in topological_order(graph):
        if oid not in latencies:
            raise KeyError(f"missing latency for op {oid!r}")
        lat = int(latencies[oid])
        if lat < 0:
            raise ValueError(f"negative latency for op {oid!r}")
        op = graph.ops[oid]
        for t in op.inputs:
            accesses.append(TensorAccess(access_id_for(oid, t, TUA), t, oid, graph.job_id, TUA, now, now + lat))
        for t in op.outputs:
            accesses.append(TensorAccess(access_id_for(oid, t, TGA), t, oid, graph.job_id, TGA, now, now + lat))
        now += lat
    return TensorAccessSequence(
        job_id=graph.job_id,
        accesses=accesses,
        iteration_period=now,
        kinds={t.tensor_id: t.kind for t in graph.tensors.values()},
        sizes=graph.sizes(),
        aliases=dict(graph.aliases),
    )


def activity_analysis(seq: TensorAccessSequence, outputs: Optional[Iterable[str]] = None) -> TensorAccessSequence:
    """Flag the last access of every releasable tensor.

    Parameters, updated parameters and job outputs stay resident across the
    iteration boundary; every other tensor is freed when its last access ends.
    """
    keep = {t for t, k in seq.kinds.items() if k in PERSISTENT_KINDS}
    if outputs is not None:
        keep |= set(outputs)
    last: Dict[str, int] = {}
    for i, a in enumerate(seq.accesses):
        last[a.tensor_id] = i
    flagged = {i for t, i in last.items() if t not in keep}
    accesses = [replace(a, release_flag=(i in flagged)) for i, a in enumerate(seq.accesses)]
    return replace(seq, accesses=accesses)


def build_sequence(graph: ComputeGraph, latencies: Mapping[str, int]) -> TensorAccessSequence:
    """Access sequence with release flags, the planner's starting point."""
    return activity_analysis(generate_access_sequence(graph, latencies))


def op_intervals(seq: TensorAccessSequence) -> List[Tuple[str, int, int]]:
    """(op_id, start, end) per executed op, in execution order."""
    seen = {}
    order = []
    for a in seq.accesses:
        if a.op_id not in seen:
            seen[a.op_id] = (a.start_time, a.end_time)
            order.append(a.op_id)
    return [(oid, *seen[oid]) for oid in order]


def op_latencies_from_sequence(seq: TensorAccessSequence) -> Dict[str, int]:
    return {oid: end - start for oid, start, end in op_intervals(seq)}


def tensor_sizes(graph: ComputeGraph, ids: Sequence[str]) -> int:
    return sum(graph.tensors[t].size for t in ids)
