#!/usr/bin/env python3
"""Generate the checked-in model fixtures under tests/fixtures/.

For each fixture model this script writes:

  <name>.onnx          exported by torch (opset 13, constant folding off so
                       BatchNormalization nodes survive)
  <name>.json          hand-built twin in the JSON model format, weights taken
                       from the same state dict (inline for small tensors,
                       data_file for larger ones)
  weights/<name>/*.bin raw little-endian float32 weight files for the twin
  expected/<name>.bin  torch eager output for the seeded reference input
                       (weft Tensor.seeded_uniform(shape, seed=0))

The .onnx bytes come from torch's own serializer, so they are an independent
check on the protobuf decoder. Before writing anything the script verifies
that the parsed ONNX graph and the JSON twin agree (node kinds, weights
bitwise, executed outputs bitwise) and that weft's execution matches torch
eager within 1e-4.

Fixtures are frozen: rerun only when the fixture set itself changes, and
commit the regenerated files.
"""

from __future__ import annotations

import json
import os
import sys

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

# the onnxscript splice step needs the onnx package but is a no-op for plain
# aten graphs; skip it so export works from torch's own serializer alone
from torch.onnx._internal.torchscript_exporter import onnx_proto_utils

onnx_proto_utils._add_onnxscript_fn = lambda model_bytes, custom_opsets: model_bytes

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import weft  # noqa: E402
from weft import Tensor, infer_shapes, topo_sort  # noqa: E402
from weft.runtime import RunConfig, execute, plan  # noqa: E402

FIXDIR = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures")
INLINE_LIMIT = 256  # initializers above this go to data_file


class ConvBn(nn.Module):
    input_shape = (1, 3, 16, 16)

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(8)
        self.conv2 = nn.Conv2d(8, 12, 3, stride=2, padding=1)
        self.bn2 = nn.BatchNorm2d(12)

    def forward(self, x):
        x = torch.relu(self.bn1(self.conv1(x)))
        return torch.relu(self.bn2(self.conv2(x)))

    def twin(self, w):
        return {
            "nodes": [
                w.conv("conv1", "input", "c1", self.conv1),
                w.bn("bn1", "c1", "b1", self.bn1),
                w.relu("relu1", "b1", "r1"),
                w.conv("conv2", "r1", "c2", self.conv2),
                w.bn("bn2", "c2", "b2", self.bn2),
                w.relu("relu2", "b2", "output"),
            ],
        }


class Residual(nn.Module):
    input_shape = (1, 4, 12, 12)

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(4, 8, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(8)
        self.conv2 = nn.Conv2d(8, 8, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(8)
        self.short = nn.Conv2d(4, 8, 1)
        self.bns = nn.BatchNorm2d(8)

    def forward(self, x):
        main = self.bn2(self.conv2(torch.relu(self.bn1(self.conv1(x)))))
        skip = self.bns(self.short(x))
        return torch.relu(main + skip)

    def twin(self, w):
        return {
            "nodes": [
                w.conv("conv1", "input", "c1", self.conv1),
                w.bn("bn1", "c1", "b1", self.bn1),
                w.relu("relu1", "b1", "r1"),
                w.conv("conv2", "r1", "c2", self.conv2),
                w.bn("bn2", "c2", "main", self.bn2),
                w.conv("short", "input", "s1", self.short),
                w.bn("bns", "s1", "skip", self.bns),
                {"name": "add", "op": "Add", "inputs": ["main", "skip"],
                 "outputs": ["sum"]},
                w.relu("relu2", "sum", "output"),
            ],
        }


class DwSep(nn.Module):
    input_shape = (1, 8, 14, 14)

    def __init__(self):
        super().__init__()
        self.dw = nn.Conv2d(8, 8, 3, padding=1, groups=8)
        self.bn1 = nn.BatchNorm2d(8)
        self.pw = nn.Conv2d(8, 16, 1)
        self.bn2 = nn.BatchNorm2d(16)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        x = torch.relu(self.bn1(self.dw(x)))
        x = torch.relu(self.bn2(self.pw(x)))
        return self.pool(x)

    def twin(self, w):
        return {
            "nodes": [
                w.conv("dw", "input", "c1", self.dw),
                w.bn("bn1", "c1", "b1", self.bn1),
                w.relu("relu1", "b1", "r1"),
                w.conv("pw", "r1", "c2", self.pw),
                w.bn("bn2", "c2", "b2", self.bn2),
                w.relu("relu2", "b2", "r2"),
                {"name": "gap", "op": "GlobalAvgPool", "inputs": ["r2"],
                 "outputs": ["output"]},
            ],
        }


class Inception(nn.Module):
    input_shape = (1, 8, 12, 12)

    def __init__(self):
        super().__init__()
        self.b1 = nn.Conv2d(8, 4, 1)
        self.b2a = nn.Conv2d(8, 4, 1)
        self.b2b = nn.Conv2d(4, 8, 3, padding=1)
        self.b3 = nn.Conv2d(8, 4, 1)
        self.b4 = nn.Conv2d(8, 4, 1)

    def forward(self, x):
        y1 = self.b1(x)
        y2 = self.b2b(torch.relu(self.b2a(x)))
        y3 = self.b3(F.max_pool2d(x, 3, stride=1, padding=1))
        y4 = self.b4(F.avg_pool2d(x, 3, stride=1, padding=1, count_include_pad=True))
        return torch.cat([y1, y2, y3, y4], dim=1)

    def twin(self, w):
        return {
            "nodes": [
                w.conv("b1", "input", "y1", self.b1),
                w.conv("b2a", "input", "p2", self.b2a),
                w.relu("relu2", "p2", "r2"),
                w.conv("b2b", "r2", "y2", self.b2b),
                {"name": "maxpool3", "op": "MaxPool", "inputs": ["input"],
                 "outputs": ["m3"],
                 "attrs": {"kernel": [3, 3], "strides": [1, 1], "pads": [1, 1, 1, 1]}},
                w.conv("b3", "m3", "y3", self.b3),
                {"name": "avgpool4", "op": "AvgPool", "inputs": ["input"],
                 "outputs": ["m4"],
                 "attrs": {"kernel": [3, 3], "strides": [1, 1], "pads": [1, 1, 1, 1]}},
                w.conv("b4", "m4", "y4", self.b4),
                {"name": "cat", "op": "Concat", "inputs": ["y1", "y2", "y3", "y4"],
                 "outputs": ["output"], "attrs": {"axis": 1}},
            ],
        }


class Classifier(nn.Module):
    input_shape = (1, 3, 16, 16)

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.fc = nn.Linear(8 * 4 * 4, 10)

    def forward(self, x):
        x = F.max_pool2d(torch.relu(self.conv(x)), 2, stride=2)
        x = torch.flatten(x, 1)
        return F.softmax(self.fc(x), dim=1)

    def twin(self, w):
        return {
            "nodes": [
                w.conv("conv", "input", "c1", self.conv),
                w.relu("relu", "c1", "r1"),
                {"name": "pool", "op": "MaxPool", "inputs": ["r1"], "outputs": ["p1"],
                 "attrs": {"kernel": [2, 2], "strides": [2, 2]}},
                {"name": "flat", "op": "Flatten", "inputs": ["p1"], "outputs": ["f1"]},
                w.gemm("fc", "f1", "g1", self.fc),
                {"name": "probs", "op": "Softmax", "inputs": ["g1"],
                 "outputs": ["output"], "attrs": {"axis": 1}},
            ],
        }


class ReluMin(nn.Module):
    input_shape = (1, 4)

    def forward(self, x):
        return torch.relu(x)

    def twin(self, w):
        return {"nodes": [w.relu("relu", "input", "output")]}


class ReshapeMin(nn.Module):
    input_shape = (1, 4, 2, 2)

    def forward(self, x):
        return x.reshape(1, 16)

    def twin(self, w):
        return {"nodes": [{"name": "reshape", "op": "Reshape",
                           "inputs": ["input"], "outputs": ["output"],
                           "attrs": {"shape": [1, 16]}}]}


FIXTURES = [
    ("convbn", ConvBn),
    ("residual", Residual),
    ("dwsep", DwSep),
    ("inception", Inception),
    ("classifier", Classifier),
    ("relu_min", ReluMin),
    ("reshape_min", ReshapeMin),
]


class TwinWriter:
    """Collects initializers while the twin node list is being built."""

    def __init__(self, name: str):
        self.model_name = name
        self.inits: list[dict] = []
        self.weights: dict[str, np.ndarray] = {}

    def tensor(self, name: str, arr: torch.Tensor) -> None:
        a = arr.detach().numpy().astype(np.float32)
        entry = {"name": name, "shape": list(a.shape)}
        if a.size > INLINE_LIMIT:
            entry["data_file"] = f"weights/{self.model_name}/{name}.bin"
            self.weights[name] = a
        else:
            entry["data"] = [float(v) for v in a.ravel()]
        self.inits.append(entry)

    def conv(self, name: str, src: str, dst: str, mod: nn.Conv2d) -> dict:
        self.tensor(f"{name}.weight", mod.weight)
        self.tensor(f"{name}.bias", mod.bias)
        return {
            "name": name, "op": "Conv",
            "inputs": [src, f"{name}.weight", f"{name}.bias"], "outputs": [dst],
            "attrs": {"kernel": list(mod.kernel_size), "strides": list(mod.stride),
                      "pads": [mod.padding[0], mod.padding[1],
                               mod.padding[0], mod.padding[1]],
                      "groups": mod.groups},
        }

    def bn(self, name: str, src: str, dst: str, mod: nn.BatchNorm2d) -> dict:
        self.tensor(f"{name}.gamma", mod.weight)
        self.tensor(f"{name}.beta", mod.bias)
        self.tensor(f"{name}.mean", mod.running_mean)
        self.tensor(f"{name}.var", mod.running_var)
        return {
            "name": name, "op": "BatchNorm",
            "inputs": [src, f"{name}.gamma", f"{name}.beta",
                       f"{name}.mean", f"{name}.var"],
            "outputs": [dst], "attrs": {"epsilon": mod.eps},
        }

    def relu(self, name: str, src: str, dst: str) -> dict:
        return {"name": name, "op": "Relu", "inputs": [src], "outputs": [dst]}

    def gemm(self, name: str, src: str, dst: str, mod: nn.Linear) -> dict:
        self.tensor(f"{name}.weight", mod.weight)
        self.tensor(f"{name}.bias", mod.bias)
        return {
            "name": name, "op": "Gemm",
            "inputs": [src, f"{name}.weight", f"{name}.bias"], "outputs": [dst],
            "attrs": {"trans_b": True},
        }


def randomize_bn(module: nn.Module, gen: torch.Generator) -> None:
    # realistic, non-identity statistics so folding is a meaningful rewrite
    for m in module.modules():
        if isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.uniform_(0.5, 1.5, generator=gen)
                m.bias.uniform_(-0.5, 0.5, generator=gen)
                m.running_mean.uniform_(-0.5, 0.5, generator=gen)
                m.running_var.uniform_(0.5, 1.5, generator=gen)


def check_equivalent(name, onnx_graph, twin_graph, module, shape):
    k1 = [n.kind for n in topo_sort(onnx_graph)]
    k2 = [n.kind for n in topo_sort(twin_graph)]
    assert k1 == k2, f"{name}: node kinds differ:\n  onnx: {k1}\n  twin: {k2}"

    def weight_sequence(g):
        return [g.initializers[i] for n in topo_sort(g) for i in n.inputs
                if i in g.initializers]

    w1, w2 = weight_sequence(onnx_graph), weight_sequence(twin_graph)
    assert len(w1) == len(w2), f"{name}: initializer count differs"
    for a, b in zip(w1, w2):
        assert a.shape == b.shape and a.tobytes() == b.tobytes(), \
            f"{name}: weights differ for shape {a.shape}"

    x = Tensor.seeded_uniform(shape, seed=0)
    cfg = RunConfig()
    out1 = next(iter(execute(plan(onnx_graph, cfg=cfg), _inputs(onnx_graph, x)).values()))
    out2 = next(iter(execute(plan(twin_graph, cfg=cfg), _inputs(twin_graph, x)).values()))
    assert out1.tobytes() == out2.tobytes(), f"{name}: executed outputs differ"

    with torch.no_grad():
        ref = module(torch.from_numpy(x.data.copy())).numpy()
    diff = float(np.abs(ref - out1.data).max())
    assert diff <= 1e-4, f"{name}: torch parity {diff} > 1e-4"
    print(f"  {name}: {len(k1)} nodes, torch parity {diff:.2e}")
    return ref


def _inputs(g, x):
    return {g.inputs[0][0]: x}


def main():
    os.makedirs(FIXDIR, exist_ok=True)
    os.makedirs(os.path.join(FIXDIR, "expected"), exist_ok=True)
    gen = torch.Generator().manual_seed(1234)
    torch.manual_seed(1234)

    for name, cls in FIXTURES:
        module = cls().eval()
        randomize_bn(module, gen)
        shape = cls.input_shape

        onnx_path = os.path.join(FIXDIR, f"{name}.onnx")
        x = torch.zeros(*shape)
        torch.onnx.export(module, x, onnx_path, opset_version=13, dynamo=False,
                          do_constant_folding=False,
                          input_names=["input"], output_names=["output"])

        writer = TwinWriter(name)
        doc = module.twin(writer)
        doc = {
            "name": name,
            "inputs": [{"name": "input", "shape": list(shape)}],
            "outputs": ["output"],
            "nodes": doc["nodes"],
            "initializers": writer.inits,
        }
        if writer.weights:
            wdir = os.path.join(FIXDIR, "weights", name)
            os.makedirs(wdir, exist_ok=True)
            for wname, arr in writer.weights.items():
                arr.astype("<f4").tofile(os.path.join(wdir, f"{wname}.bin"))
        json_path = os.path.join(FIXDIR, f"{name}.json")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

        with open(onnx_path, "rb") as fh:
            onnx_graph = weft.parse_onnx(fh.read())
        twin_graph = weft.load_json_model(json_path)
        ref = check_equivalent(name, onnx_graph, twin_graph, module, shape)
        ref.astype("<f4").tofile(os.path.join(FIXDIR, "expected", f"{name}.bin"))

    print(f"wrote fixtures to {os.path.abspath(FIXDIR)}")


if __name__ == "__main__":
    main()
