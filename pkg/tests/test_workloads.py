import pytest

from memsched.graph_model import graph_from_dict
from memsched.workloads import FAMILIES, generate_workload


def kinds(doc, phase=None):
    return [o["kind"] for o in doc["ops"] if phase is None or o.get("phase") == phase]


def test_chain_depth_three():
    doc = generate_workload("chain", 8, depth=3)
    assert kinds(doc).count("matmul") == 3
    assert kinds(doc).count("matmul_grad") == 3
    assert kinds(doc, "optimize") == ["update"] * 3


def test_vgg16_batch_scaling():
    small = {t["id"]: t for t in generate_workload("vgg16", 16, image=32, classes=10)["tensors"]}
    big = {t["id"]: t for t in generate_workload("vgg16", 32, image=32, classes=10)["tensors"]}
    assert small.keys() == big.keys()
    for tid, t in small.items():
        # weight gradients are parameter shaped
        if t["kind"] in ("parameter", "updated_parameter") or "_d_w" in tid:
            assert big[tid]["size"] == t["size"]
        elif t["kind"] == "interim":
            assert big[tid]["size"] == 2 * t["size"]


@pytest.mark.parametrize("family", FAMILIES)
def test_every_family_builds_a_valid_graph(family):
    doc = generate_workload(family, 2, seed=3, image=32, classes=10)
    g = graph_from_dict(doc)
    assert any(o.phase == "optimize" for o in g.ops.values())


def test_random_family_is_seeded():
    assert generate_workload("random", 4, seed=9) == generate_workload("random", 4, seed=9)
    assert generate_workload("random", 4, seed=9) != generate_workload("random", 4, seed=10)


def test_unknown_family():
    with pytest.raises(ValueError):
        generate_workload("alexnet")
