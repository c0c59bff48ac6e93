"""Operator latency prediction, online correction and the replan trigger.

Cold start uses a regression fitted per op kind on (features, latency)
samples.  While jobs run, observed latencies are folded into the estimates
with an exponentially weighted moving average, and a replan is requested
when the summed latency drifts more than a threshold away from the sum the
current plans were built with.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .graph_model import ComputeGraph, OperatorSpec

logger = logging.getLogger(__name__)

DimsLike = Union[int, Sequence[int]]


@dataclass(frozen=True)
class FeatureLayout:
    """Number of dimension and attribute slots; shorter inputs are zero padded."""
    dim_slots: int
    attr_slots: int


@dataclass(frozen=True)
class FeatureVector:
    op_kind: str
    input_dims: Tuple[float, ...]
    attributes: Tuple[float, ...]
    gpu_usage: float

    def values(self) -> List[float]:
        return list(self.input_dims) + list(self.attributes) + [self.gpu_usage]


@dataclass(frozen=True)
class LatencyEstimate:
    op_id: str
    value: float
    source: str  # predicted, observed or ewma


@dataclass
class ReplanState:
    last_sum: float
    current_sum: float
    threshold: float = 0.2

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("replan threshold must be positive")
        if self.last_sum < 0 or self.current_sum < 0:
            raise ValueError("latency sums must be nonnegative")


def _flat_dims(dims: DimsLike) -> List[float]:
    if isinstance(dims, (int, float)):
        return [float(dims)]
    return [float(d) for d in dims]


def extract_features(op: OperatorSpec, tensor_dims: Mapping[str, DimsLike], gpu_usage: float,
                     layout: Optional[FeatureLayout] = None) -> FeatureVector:
    """Assemble <input dims..., attributes..., gpu_usage> for one op.

    ``tensor_dims`` maps tensor ids to a shape or to a plain size (a
    one-dimensional shape).
    """
    if not 0.0 <= gpu_usage <= 1.0:
        raise ValueError(f"gpu_usage {gpu_usage} outside [0, 1]")
    dims: List[float] = []
    for t in op.inputs:
        dims.extend(_flat_dims(tensor_dims[t]))
    attrs = [float(a) for a in op.attributes]
    if layout is not None:
        if len(dims) > layout.dim_slots or len(attrs) > layout.attr_slots:
            raise ValueError(f"op {op.op_id!r} does not fit the feature layout {layout}")
        dims += [0.0] * (layout.dim_slots - len(dims))
        attrs += [0.0] * (layout.attr_slots - len(attrs))
    return FeatureVector(op.op_kind, tuple(dims), tuple(attrs), float(gpu_usage))


# --------------------------------------------------------------------------
# regression

@dataclass
class KindModel:
    coefficients: List[float]
    intercept: float
    r2: float
    layout: FeatureLayout

    def design_row(self, fv: FeatureVector) -> np.ndarray:
        return _design_row(fv, self.layout)

    def predict(self, fv: FeatureVector) -> float:
        value = float(np.dot(self.coefficients, self.design_row(fv)) + self.intercept)
        return max(0.0, value)


def _design_row(fv: FeatureVector, layout: FeatureLayout) -> np.ndarray:
    dims = list(fv.input_dims)[:layout.dim_slots]
    dims += [0.0] * (layout.dim_slots - len(dims))
    attrs = list(fv.attributes)[:layout.attr_slots]
    attrs += [0.0] * (layout.attr_slots - len(attrs))
    return np.array(dims + attrs + [fv.gpu_usage, fv.gpu_usage ** 2], dtype=float)


class InsufficientSamplesError(ValueError):
    pass


class DegenerateFeaturesError(ValueError):
    pass


@dataclass
class Predictor:
    models: Dict[str, KindModel] = field(default_factory=dict)

    def predict(self, fv: FeatureVector) -> float:
        model = self.models.get(fv.op_kind)
        if model is None:
            raise KeyError(f"no latency model for op kind {fv.op_kind!r}")
        return model.predict(fv)

    def r2(self) -> Dict[str, float]:
        return {k: m.r2 for k, m in sorted(self.models.items())}

    def to_dict(self) -> dict:
        return {
            kind: {
                "coefficients": list(m.coefficients),
                "intercept": m.intercept,
                "r2": m.r2,
                "layout": [m.layout.dim_slots, m.layout.attr_slots],
            }
            for kind, m in sorted(self.models.items())
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Predictor":
        models = {}
        for kind, m in doc.items():
            coefs = [float(c) for c in m["coefficients"]]
            if "layout" in m:
                layout = FeatureLayout(int(m["layout"][0]), int(m["layout"][1]))
            else:
                # without a stored layout, treat every slot but usage and usage^2 as a dim
                layout = FeatureLayout(len(coefs) - 2, 0)
            models[kind] = KindModel(coefs, float(m["intercept"]), float(m["r2"]), layout)
        return cls(models)

    @classmethod
    def loads(cls, document: str) -> "Predictor":
        return cls.from_dict(json.loads(document))


def fit_predictor(samples: Iterable[Tuple[FeatureVector, float]]) -> Predictor:
    """Least squares per op kind over the features plus a usage^2 term."""
    by_kind: Dict[str, List[Tuple[FeatureVector, float]]] = {}
    for fv, y in samples:
        by_kind.setdefault(fv.op_kind, []).append((fv, float(y)))
    if not by_kind:
        raise InsufficientSamplesError("no samples to fit")
    models = {}
    for kind in sorted(by_kind):
        rows = by_kind[kind]
        if len(rows) < 2:
            raise InsufficientSamplesError(f"op kind {kind!r} has {len(rows)} sample(s); need at least 2")
        layout = FeatureLayout(max(len(fv.input_dims) for fv, _ in rows),
                               max(len(fv.attributes) for fv, _ in rows))
        X = np.array([_design_row(fv, layout) for fv, _ in rows])
        y = np.array([v for _, v in rows])
        if np.all(X == X[0]):
            raise DegenerateFeaturesError(f"op kind {kind!r}: all feature vectors are identical")
        A = np.hstack([X, np.ones((len(rows), 1))])
        sol, *_ = np.linalg.lstsq(A, y, rcond=None)
        pred = A @ sol
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-9 else 0.0)
        models[kind] = KindModel([float(c) for c in sol[:-1]], float(sol[-1]), r2, layout)
        logger.debug("fitted %s on %d samples, r2=%.4f", kind, len(rows), r2)
    return Predictor(models)


def predict_latencies(graph: ComputeGraph, predictor: Predictor, gpu_usage: float) -> Dict[str, int]:
    """Integer tick latency per op of the graph at a given usage level."""
    sizes = graph.sizes()
    out = {}
    for oid in sorted(graph.ops):
        fv = extract_features(graph.ops[oid], sizes, gpu_usage)
        out[oid] = int(round(predictor.predict(fv)))
    return out


def usage_level(concurrent_jobs: int, capacity: int) -> float:
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    return min(1.0, max(0.0, concurrent_jobs / capacity))


# --------------------------------------------------------------------------
# online correction

def ewma_update(estimate: float, observation: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if estimate < 0 or observation < 0:
        raise ValueError("latencies must be nonnegative")
    return alpha * observation + (1.0 - alpha) * estimate


def should_replan(state: ReplanState) -> bool:
    drift = abs(state.current_sum - state.last_sum)
    if state.last_sum == 0:
        return state.current_sum > 0
    return drift / state.last_sum > state.threshold


class LatencyTable:
    """Per-op latency estimates for one job, corrected by observations."""

    def __init__(self, initial: Mapping[str, float], alpha: float = 0.3):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha {alpha} outside [0, 1]")
        self.alpha = alpha
        self.estimates: Dict[str, LatencyEstimate] = {
            op: LatencyEstimate(op, float(v), "predicted") for op, v in initial.items()
        }

    def observe(self, observed: Mapping[str, float]) -> None:
        for op, obs in observed.items():
            cur = self.estimates.get(op)
            if cur is None:
                self.estimates[op] = LatencyEstimate(op, float(obs), "observed")
            else:
                self.estimates[op] = LatencyEstimate(op, ewma_update(cur.value, float(obs), self.alpha), "ewma")

    def ticks(self) -> Dict[str, int]:
        return {op: int(round(e.value)) for op, e in sorted(self.estimates.items())}

    def total(self) -> float:
        return float(sum(e.value for e in self.estimates.values()))
