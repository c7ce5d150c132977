"""Embedded golden-vector suite.

A deployed binary can verify itself with `weft selftest` and no test
framework: each check runs a tiny fixed input through one operation and
compares against a frozen expected value.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .graph import ConvAttrs, PoolAttrs
from .onnx import decode_varint
from .tensor import Tensor, tensor_compare


def _close(got, want, tol=1e-6) -> bool:
    return bool(np.all(np.abs(np.asarray(got, dtype=np.float64)
                              - np.asarray(want, dtype=np.float64)) <= tol))


def _check_varint():
    cases = [(bytes([0x00]), 0), (bytes([0x96, 0x01]), 150), (bytes([0xAC, 0x02]), 300)]
    for raw, want in cases:
        got, _ = decode_varint(raw, 0)
        if got != want:
            return False, f"varint {raw.hex()} -> {got}, want {want}"
    return True, "3 vectors"


def _check_conv_ones():
    x = Tensor.full((1, 1, 3, 3), 1.0)
    w = Tensor.full((1, 1, 2, 2), 1.0)
    p = ConvAttrs(kernel_h=2, kernel_w=2)
    for name, fn in (("direct", kernels.conv2d_direct), ("gemm", kernels.conv2d_gemm)):
        y = fn(x, w, None, p)
        if y.shape != (1, 1, 2, 2) or not _close(y.data, 4.0):
            return False, f"conv/{name} expected all 4.0, got {y.data.ravel()}"
    return True, "all-ones 3x3 * 2x2 = 4.0 on both conv backends"


def _check_conv_identity():
    x = Tensor.sequence((1, 1, 3, 3))
    w = Tensor.full((1, 1, 1, 1), 1.0)
    y = kernels.conv2d_direct(x, w, None, ConvAttrs(kernel_h=1, kernel_w=1))
    ok = np.array_equal(y.data, x.data)
    return ok, "1x1 weight-1.0 conv is the identity"


def _check_conv_bias():
    x = Tensor.sequence((1, 2, 3, 3))
    w = Tensor.zeros((3, 2, 2, 2))
    b = Tensor.full((3,), 0.5)
    y = kernels.conv2d_direct(x, w, b, ConvAttrs(kernel_h=2, kernel_w=2))
    return _close(y.data, 0.5), "zero weights and bias 0.5 -> all 0.5"


def _check_gemm():
    a = Tensor(np.array([[1, 2], [3, 4]], dtype=np.float32))
    b = Tensor(np.array([[5, 6], [7, 8]], dtype=np.float32))
    want = np.array([[19, 22], [43, 50]], dtype=np.float32)
    naive = kernels.gemm_naive(a, b)
    blocked = kernels.gemm_blocked(a, b)
    ok = np.array_equal(naive.data, want) and np.array_equal(blocked.data, naive.data)
    return ok, "2x2 hand product; blocked bitwise equals naive"


def _check_im2col():
    x = Tensor(np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3))
    m = kernels.im2col(x, ConvAttrs(kernel_h=2, kernel_w=2))
    want = np.array([[1, 2, 4, 5], [2, 3, 5, 6], [4, 5, 7, 8], [5, 6, 8, 9]],
                    dtype=np.float32)
    return np.array_equal(m.data, want), "3x3 input, 2x2 patches"


def _check_depthwise():
    x = Tensor.full((1, 2, 2, 2), 1.0)
    w = Tensor(np.array([2.0, 3.0], dtype=np.float32).reshape(2, 1, 1, 1))
    y = kernels.depthwise_conv2d(x, w, None,
                                 ConvAttrs(kernel_h=1, kernel_w=1, groups=2))
    ok = _close(y.data[0, 0], 2.0) and _close(y.data[0, 1], 3.0)
    return ok, "per-channel 1x1 scaling"


def _check_pools():
    x = Tensor(np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(1, 1, 2, 2))
    p = PoolAttrs(kernel_h=2, kernel_w=2, stride_h=2, stride_w=2)
    mx = kernels.maxpool2d(x, p)
    av = kernels.avgpool2d(x, p)
    ga = kernels.global_avg_pool(x)
    ok = _close(mx.data, 4.0) and _close(av.data, 2.5) and _close(ga.data, 2.5)
    return ok, "max 4.0, avg 2.5, global avg 2.5"


def _check_softmax():
    flat = kernels.softmax(Tensor(np.array([0.0, 0.0], dtype=np.float32)))
    big = kernels.softmax(Tensor(np.array([1000.0, 1000.0], dtype=np.float32)))
    skew = kernels.softmax(Tensor(np.array([0.0, math.log(3.0)], dtype=np.float32)))
    ok = (_close(flat.data, [0.5, 0.5]) and _close(big.data, [0.5, 0.5])
          and _close(skew.data, [0.25, 0.75], tol=1e-6))
    return ok, "[0,0], [1000,1000] -> halves; [0, ln 3] -> [0.25, 0.75]"


def _check_batch_norm():
    one = Tensor.full((1,), 1.0)
    zero = Tensor.zeros((1,))
    x = Tensor(np.array([[2.0]], dtype=np.float32))
    y = kernels.batch_norm_inference(
        x, Tensor.full((1,), 3.0), Tensor.full((1,), 0.5), one, one, epsilon=0.0)
    # gamma*(x-mean)/sqrt(var)+beta = 3*(2-1)/1+0.5
    if not _close(y.data, 3.5):
        return False, f"expected 3.5, got {y.data.ravel()}"
    ident_in = Tensor.seeded_uniform((1, 2, 3, 3), seed=7)
    ident = kernels.batch_norm_inference(
        ident_in, Tensor.full((2,), 1.0), Tensor.zeros((2,)), Tensor.zeros((2,)),
        Tensor.full((2,), 1.0), epsilon=0.0)
    if not np.array_equal(ident.data, ident_in.data):
        return False, "identity normalization is not bitwise identity"
    return True, "formula vector and bitwise identity case"


def _check_seeded_uniform():
    a = Tensor.seeded_uniform((4,), seed=42)
    b = Tensor.seeded_uniform((4,), seed=42)
    ok = a.tobytes() == b.tobytes() and bool(np.all(np.abs(a.data) <= 1.0))
    return ok, "seed 42 reproduces bit-identically"


def _check_compare():
    a = Tensor(np.array([1.0], dtype=np.float32))
    b = Tensor(np.array([1.001], dtype=np.float32))
    rep = tensor_compare(a, b, rel_floor=1e-9)
    ok = abs(rep.max_abs_diff - 0.001) < 1e-6
    mism = tensor_compare(Tensor(np.array([0.0, 1.0], dtype=np.float32)),
                          Tensor(np.array([1.0, 0.0], dtype=np.float32)))
    return ok and not mism.argmax_match, "abs diff and argmax mismatch vectors"


CHECKS = [
    ("varint-decode", _check_varint),
    ("conv-all-ones", _check_conv_ones),
    ("conv-identity", _check_conv_identity),
    ("conv-bias-only", _check_conv_bias),
    ("gemm-2x2", _check_gemm),
    ("im2col-patches", _check_im2col),
    ("depthwise-scale", _check_depthwise),
    ("pooling", _check_pools),
    ("softmax", _check_softmax),
    ("batch-norm", _check_batch_norm),
    ("seeded-uniform", _check_seeded_uniform),
    ("tensor-compare", _check_compare),
]


def run_selftest() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - report, do not abort the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
