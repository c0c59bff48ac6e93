"""Generators for training-job graphs: forward, backward and optimizer ops.

The network families only mimic layer counts and the rough profile of
activation sizes of the real architectures.  Activations and gradients
scale linearly with the batch size; parameters do not.
"""
from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

FLOAT_BYTES = 4
FAMILIES = ("vgg16", "resnet50", "inception_v3", "inception_v4", "densenet", "chain", "random")

# forward tensors each backward kind needs besides the incoming gradient
_SAVED = {
    "conv2d": "inputs",
    "matmul": "inputs",
    "relu": "output",
    "maxpool": "both",
    "avgpool": "none",
    "add": "none",
    "concat": "none",
}


@dataclass
class _Fwd:
    op_id: str
    kind: str
    inputs: List[str]
    output: str
    attributes: List[float]


class GraphBuilder:
    """Records forward layers, then derives backward and update ops."""

    def __init__(self, job_id: str, batch: int):
        if batch < 1:
            raise ValueError("batch_size must be at least 1")
        self.job_id = job_id
        self.batch = batch
        self.tensors: List[dict] = []
        self.kinds: Dict[str, str] = {}
        self.shapes: Dict[str, Tuple[int, ...]] = {}
        self.placeholders: List[dict] = []
        self.fwd: List[_Fwd] = []
        self.params: List[str] = []
        self._n = 0

    # -- tensors ------------------------------------------------------------
    def _tensor(self, name: str, shape: Tuple[int, ...], kind: str, batched: bool = True) -> str:
        tid = name
        size = FLOAT_BYTES * int(math.prod(shape)) * (self.batch if batched else 1)
        self.tensors.append({"id": tid, "size": max(1, size), "kind": kind})
        self.kinds[tid] = kind
        self.shapes[tid] = shape
        return tid

    def _op_id(self, kind: str) -> str:
        self._n += 1
        return f"o{self._n:04d}_{kind}"

    def input(self, name: str, shape: Tuple[int, ...]) -> str:
        tid = self._tensor(name, shape, "input")
        self.placeholders.append({"id": f"i_{name}", "kind": "placeholder", "inputs": [],
                                  "outputs": [tid], "attributes": [], "phase": "forward_backward"})
        return tid

    def param(self, name: str, shape: Tuple[int, ...]) -> str:
        tid = self._tensor(name, shape, "parameter", batched=False)
        self.placeholders.append({"id": f"i_{name}", "kind": "placeholder", "inputs": [],
                                  "outputs": [tid], "attributes": [], "phase": "forward_backward"})
        self.params.append(tid)
        return tid

    def layer(self, kind: str, inputs: Sequence[str], out_shape: Tuple[int, ...],
              attributes: Sequence[float] = ()) -> str:
        oid = self._op_id(kind)
        out = self._tensor(f"{oid}_y", out_shape, "interim")
        self.fwd.append(_Fwd(oid, kind, list(inputs), out, [float(a) for a in attributes]))
        return out

    # -- layers -------------------------------------------------------------
    def conv(self, x: str, cout: int, k: int = 3, stride: int = 1) -> str:
        cin, h, w = self.shapes[x]
        ho, wo = max(1, math.ceil(h / stride)), max(1, math.ceil(w / stride))
        wt = self.param(f"w{len(self.params) + 1:03d}", (cout, cin, k, k))
        mflops = 2.0 * k * k * cin * cout * ho * wo * self.batch / 1e6
        return self.layer("conv2d", [x, wt], (cout, ho, wo), (k, stride, round(mflops, 3)))

    def relu(self, x: str) -> str:
        return self.layer("relu", [x], self.shapes[x])

    def conv_relu(self, x: str, cout: int, k: int = 3, stride: int = 1) -> str:
        return self.relu(self.conv(x, cout, k, stride))

    def pool(self, x: str, k: int = 2, stride: int = 2, kind: str = "maxpool") -> str:
        c, h, w = self.shapes[x]
        return self.layer(kind, [x], (c, max(1, math.ceil(h / stride)), max(1, math.ceil(w / stride))), (k, stride))

    def global_pool(self, x: str) -> str:
        c = self.shapes[x][0]
        return self.layer("avgpool", [x], (c, 1, 1), (self.shapes[x][1], 1))

    def add(self, a: str, b: str) -> str:
        return self.layer("add", [a, b], self.shapes[a])

    def concat(self, xs: Sequence[str]) -> str:
        c = sum(self.shapes[x][0] for x in xs)
        _, h, w = self.shapes[xs[0]]
        return self.layer("concat", list(xs), (c, h, w))

    def dense(self, x: str, nout: int) -> str:
        nin = int(math.prod(self.shapes[x]))
        wt = self.param(f"w{len(self.params) + 1:03d}", (nin, nout))
        mflops = 2.0 * nin * nout * self.batch / 1e6
        return self.layer("matmul", [x, wt], (nout,), (round(mflops, 6),))

    # -- backward / optimizer ----------------------------------------------
    def finish(self, y: str, label: str) -> dict:
        grads: Dict[str, List[str]] = defaultdict(list)
        bwd: List[dict] = []
        loss_id = self._op_id("loss")
        loss = self._tensor("loss", (1,), "output", batched=False)
        bwd.append({"id": loss_id, "kind": "loss", "inputs": [y, label], "outputs": [loss],
                    "attributes": [], "phase": "forward_backward"})
        gid = self._op_id("loss_grad")
        dy = self._tensor(f"d_{y}", self.shapes[y], "interim")
        bwd.append({"id": gid, "kind": "loss_grad", "inputs": [y, label], "outputs": [dy],
                    "attributes": [], "phase": "forward_backward"})
        grads[y].append(dy)

        def needs_grad(t: str) -> bool:
            return self.kinds[t] in ("interim", "parameter")

        def reduce(t: str) -> Optional[str]:
            g = grads.get(t, [])
            if not g:
                return None
            if len(g) == 1:
                return g[0]
            oid = self._op_id("add_n")
            total = self._tensor(f"{oid}_d_{t}", self.shapes[t], "interim",
                                 batched=self.kinds[t] != "parameter")
            bwd.append({"id": oid, "kind": "add_n", "inputs": list(g), "outputs": [total],
                        "attributes": [], "phase": "forward_backward"})
            return total

        for rec in reversed(self.fwd):
            g = reduce(rec.output)
            targets = [t for t in rec.inputs if needs_grad(t)]
            if g is None or not targets:
                continue
            saved = _SAVED.get(rec.kind, "inputs")
            extra: List[str] = []
            if saved in ("inputs", "both"):
                extra += rec.inputs
            if saved in ("output", "both"):
                extra.append(rec.output)
            oid = self._op_id(f"{rec.kind}_grad")
            outs = []
            for t in targets:
                outs.append(self._tensor(f"{oid}_d_{t}", self.shapes[t], "interim",
                                         batched=self.kinds[t] != "parameter"))
                grads[t].append(outs[-1])
            attrs = list(rec.attributes)
            if rec.kind in ("conv2d", "matmul") and attrs:
                attrs[-1] = round(attrs[-1] * len(targets), 6)
            bwd.append({"id": oid, "kind": f"{rec.kind}_grad", "inputs": [g] + extra, "outputs": outs,
                        "attributes": attrs, "phase": "forward_backward"})

        updates = []
        for n, w in enumerate(self.params, start=1):
            dw = reduce(w)
            if dw is None:
                continue
            new = self._tensor(f"{w}_new", self.shapes[w], "updated_parameter", batched=False)
            updates.append({"id": f"u{n:04d}_update", "kind": "update", "inputs": [w, dw],
                            "outputs": [new], "attributes": [], "phase": "optimize"})

        ops = list(self.placeholders)
        for rec in self.fwd:
            ops.append({"id": rec.op_id, "kind": rec.kind, "inputs": rec.inputs, "outputs": [rec.output],
                        "attributes": rec.attributes, "phase": "forward_backward"})
        ops += bwd + updates
        return {"job_id": self.job_id, "tensors": self.tensors, "ops": ops}

# --------------------------------------------------------------------------
# families

def _vgg16(b: GraphBuilder, image: int, classes: int) -> str:
    x = b.input("x", (3, image, image))
    for cout, reps in ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3)):
        for _ in range(reps):
            x = b.conv_relu(x, cout)
        x = b.pool(x)
    x = b.relu(b.dense(x, 4096))
    x = b.relu(b.dense(x, 4096))
    return b.dense(x, classes)


def _bottleneck(b: GraphBuilder, x: str, mid: int, out: int, stride: int) -> str:
    y = b.conv_relu(x, mid, 1)
    y = b.conv_relu(y, mid, 3, stride)
    y = b.conv(y, out, 1)
    short = x
    if stride != 1 or b.shapes[x][0] != out:
        short = b.conv(x, out, 1, stride)
    return b.relu(b.add(y, short))


def _resnet50(b: GraphBuilder, image: int, classes: int) -> str:
    x = b.input("x", (3, image, image))
    x = b.pool(b.conv_relu(x, 64, 7, 2), 3, 2)
    for mid, reps, stride in ((64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)):
        for i in range(reps):
            x = _bottleneck(b, x, mid, mid * 4, stride if i == 0 else 1)
    return b.dense(b.global_pool(x), classes)


def _inception_module(b: GraphBuilder, x: str, width: int, deep: bool) -> str:
    c = width
    b1 = b.conv_relu(x, c, 1)
    b2 = b.conv_relu(b.conv_relu(x, c // 2, 1), c, 3)
    b3 = b.conv_relu(b.conv_relu(x, c // 2, 1), c, 3)
    b3 = b.conv_relu(b3, c, 3)
    if deep:
        b3 = b.conv_relu(b3, c, 3)
    b4 = b.conv_relu(b.pool(x, 3, 1, "avgpool"), c // 2, 1)
    return b.concat([b1, b2, b3, b4])


def _inception(b: GraphBuilder, image: int, classes: int, stem: int, stages: Sequence[Tuple[int, int]],
               deep: bool) -> str:
    x = b.input("x", (3, image, image))
    x = b.conv_relu(x, 32, 3, 2)
    for i in range(stem - 1):
        x = b.conv_relu(x, 32 if i < 2 else 64, 3)
    x = b.pool(x, 3, 2)
    for n, (modules, width) in enumerate(stages):
        if n:
            x = b.pool(x, 3, 2)
        for _ in range(modules):
            x = _inception_module(b, x, width, deep)
    return b.dense(b.global_pool(x), classes)


def _densenet(b: GraphBuilder, image: int, classes: int, blocks=(6, 12, 24, 16), growth: int = 32) -> str:
    x = b.input("x", (3, image, image))
    x = b.pool(b.conv_relu(x, 2 * growth, 7, 2), 3, 2)
    for n, layers in enumerate(blocks):
        feats = [x]
        for _ in range(layers):
            inp = feats[0] if len(feats) == 1 else b.concat(feats)
            y = b.conv_relu(inp, 4 * growth, 1)
            y = b.conv_relu(y, growth, 3)
            feats.append(y)
        x = b.concat(feats)
        if n < len(blocks) - 1:
            x = b.conv_relu(x, b.shapes[x][0] // 2, 1)
            x = b.pool(x, 2, 2, "avgpool")
    return b.dense(b.global_pool(x), classes)


def _chain(b: GraphBuilder, depth: int, width: int) -> str:
    x = b.input("x", (width,))
    for _ in range(depth):
        x = b.dense(x, width)
    return x


def _random(b: GraphBuilder, rng: random.Random, layers: int) -> str:
    x = b.input("x", (rng.randint(1, 64),))
    acts = [x]
    for _ in range(layers):
        choice = rng.random()
        src = rng.choice(acts)
        if choice < 0.45:
            y = b.dense(src, rng.randint(1, 64))
        elif choice < 0.75:
            if b.kinds[src] == "input":
                y = b.dense(src, rng.randint(1, 64))
            else:
                y = b.relu(src)
        else:
            same = [a for a in acts if a != src and b.shapes[a] == b.shapes[src] and b.kinds[a] != "input"]
            if same and b.kinds[src] != "input":
                y = b.add(src, rng.choice(same))
            else:
                y = b.dense(src, rng.randint(1, 64))
        acts.append(y)
    # make every activation reach the loss so each one has a gradient
    dangling = [a for a in acts[1:] if not any(a in r.inputs for r in b.fwd)]
    out = dangling[-1]
    for a in dangling[:-1]:
        out = b.add(b.dense(a, b.shapes[out][0]), out)
    return out


def generate_workload(family: str, batch_size: int = 16, seed: int = 0, job_id: Optional[str] = None,
                      depth: int = 3, width: int = 64, image: Optional[int] = None,
                      classes: int = 1000, layers: int = 6) -> dict:
    """Graph document for one training job of the given family."""
    if family not in FAMILIES:
        raise ValueError(f"unknown workload family {family!r}; choose from {', '.join(FAMILIES)}")
    b = GraphBuilder(job_id or family, batch_size)
    if family == "vgg16":
        y = _vgg16(b, image or 224, classes)
    elif family == "resnet50":
        y = _resnet50(b, image or 224, classes)
    elif family == "inception_v3":
        y = _inception(b, image or 299, classes, 5, ((3, 64), (4, 128), (2, 192)), deep=False)
    elif family == "inception_v4":
        y = _inception(b, image or 299, classes, 7, ((4, 96), (7, 128), (3, 192)), deep=True)
    elif family == "densenet":
        y = _densenet(b, image or 224, classes)
    elif family == "chain":
        y = _chain(b, depth, width)
    else:
        y = _random(b, random.Random(seed), layers)
    label = b.input("label", (b.shapes[y][0],))
    return b.finish(y, label)
