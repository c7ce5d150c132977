import os

import pytest

from weft import Graph, Node, OpKind, Tensor


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        status = "PASS" if report.passed else "FAIL"
        name = report.nodeid.split("::")[-1]
        print(f"\n[{status}] {name}", flush=True)

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")

MODEL_NAMES = ["convbn", "residual", "dwsep", "inception", "classifier"]


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURE_DIR, name)


def read_fixture(name: str) -> bytes:
    with open(fixture_path(name), "rb") as fh:
        return fh.read()


@pytest.fixture
def relu_graph():
    return Graph(
        name="relu",
        inputs=[("x", (1, 4))],
        outputs=["y"],
        nodes=[Node(name="r", kind=OpKind.RELU, inputs=("x",), outputs=("y",))],
    )


def make_conv_graph(c_in=2, c_out=3, hw=6, k=3, pad=1, seed=0, bias=True,
                    name="conv_toy"):
    from weft import ConvAttrs

    inits = {"w": Tensor.seeded_uniform((c_out, c_in, k, k), seed=seed + 1)}
    inputs = ("x", "w", "b") if bias else ("x", "w")
    if bias:
        inits["b"] = Tensor.seeded_uniform((c_out,), seed=seed + 2)
    return Graph(
        name=name,
        inputs=[("x", (1, c_in, hw, hw))],
        outputs=["y"],
        nodes=[Node(name="conv", kind=OpKind.CONV, inputs=inputs, outputs=("y",),
                    attrs=ConvAttrs(kernel_h=k, kernel_w=k, pads=(pad,) * 4))],
        initializers=inits,
    )
