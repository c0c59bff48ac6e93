import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memsched.graph_model import OperatorSpec
from memsched.latency_model import (
    DegenerateFeaturesError,
    FeatureLayout,
    FeatureVector,
    InsufficientSamplesError,
    LatencyTable,
    Predictor,
    ReplanState,
    ewma_update,
    extract_features,
    fit_predictor,
    should_replan,
    usage_level,
)

CONV = OperatorSpec("c", "conv2d", ("x",), ("y",), (1.0, 1.0))
RELU = OperatorSpec("r", "relu", ("x",), ("y",))


def test_extract_conv_features():
    fv = extract_features(CONV, {"x": (16, 3, 224, 224)}, 0.5)
    assert fv.values() == [16, 3, 224, 224, 1, 1, 0.5]


def test_extract_pads_to_layout():
    fv = extract_features(RELU, {"x": 64}, 0.25, FeatureLayout(3, 2))
    assert fv.input_dims == (64.0, 0.0, 0.0)
    assert fv.attributes == (0.0, 0.0)
    assert extract_features(RELU, {"x": 64}, 0.25, FeatureLayout(3, 2)) == fv
    with pytest.raises(ValueError):
        extract_features(RELU, {"x": 64}, 1.5)


def test_one_sample_is_not_enough():
    with pytest.raises(InsufficientSamplesError):
        fit_predictor([(extract_features(RELU, {"x": 4}, 0.0), 3.0)])
    with pytest.raises(InsufficientSamplesError):
        fit_predictor([])


def test_identical_features_are_degenerate():
    fv = extract_features(RELU, {"x": 4}, 0.0)
    with pytest.raises(DegenerateFeaturesError):
        fit_predictor([(fv, 3.0), (fv, 4.0)])


def test_fit_recovers_linear_function_and_roundtrips():
    rng = np.random.default_rng(0)
    samples = []
    for _ in range(50):
        n = float(rng.integers(1, 100))
        u = float(rng.uniform(0, 1))
        samples.append((FeatureVector("relu", (n,), (), u), 2.0 + 0.5 * n + 10 * u))
    p = fit_predictor(samples)
    assert p.r2()["relu"] > 0.9999
    fv = FeatureVector("relu", (40.0,), (), 0.5)
    assert p.predict(fv) == pytest.approx(27.0, abs=1e-6)
    again = Predictor.loads(p.dumps())
    assert again.predict(fv) == pytest.approx(p.predict(fv))
    with pytest.raises(KeyError):
        p.predict(FeatureVector("matmul", (1.0,), (), 0.0))


@pytest.mark.parametrize("est, obs, alpha, want", [(10, 20, 0.5, 15), (10, 20, 1.0, 20), (10, 20, 0.0, 10)])
def test_ewma(est, obs, alpha, want):
    assert ewma_update(est, obs, alpha) == want


def test_ewma_rejects_bad_alpha():
    with pytest.raises(ValueError):
        ewma_update(1, 2, 1.5)


@pytest.mark.parametrize("last, cur, thr, want", [(100, 120, 0.1, True), (100, 100, 0.1, False),
                                                  (0, 50, 0.1, True), (100, 80, 0.1, True),
                                                  (100, 105, 0.1, False)])
def test_should_replan(last, cur, thr, want):
    assert should_replan(ReplanState(last, cur, thr)) is want


def test_replan_state_validation():
    with pytest.raises(ValueError):
        ReplanState(1, 1, 0)


def test_usage_level_clamps():
    assert usage_level(2, 4) == 0.5
    assert usage_level(9, 4) == 1.0


def test_latency_table_converges():
    table = LatencyTable({"a": 10.0}, alpha=0.5)
    for _ in range(20):
        table.observe({"a": 30.0})
    assert table.ticks() == {"a": 30}
    assert table.estimates["a"].source == "ewma"


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 1e6), st.floats(0, 1))
def test_ewma_stays_between_estimate_and_observation(est, obs, alpha):
    v = ewma_update(est, obs, alpha)
    assert min(est, obs) - 1e-6 <= v <= max(est, obs) + 1e-6
    assert not math.isnan(v)
