"""Operator implementations with interchangeable backends.

Every kernel fixes its per-element accumulation order as part of its
contract, so results are bitwise reproducible across runs and across thread
counts: parallelism only partitions output elements, never the order in
which any single element is accumulated.

Hot loops are compiled with numba; the wrappers validate shapes and handle
threading.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np

from .errors import NumericError, RegistrationError, ShapeError, UnknownBackendError
from .graph import (
    ConcatAttrs,
    ConvAttrs,
    GemmAttrs,
    PoolAttrs,
    conv_out_extent,
    normalize_axis,
)
from .tensor import Tensor

DEFAULT_GEMM_BLOCK = (64, 64, 64)

_jit = numba.njit(cache=True, nogil=True)


# --- numba workers -----------------------------------------------------------

@_jit
def _conv_direct_worker(x, w, b, out, sh, sw, pt, pl, groups, fused_relu,
                        co_start, co_end):
    n_batch, c_in, h, wd = x.shape
    c_out, c_per_group, kh, kw = w.shape
    ho, wo = out.shape[2], out.shape[3]
    cog = c_out // groups
    for n in range(n_batch):
        for co in range(co_start, co_end):
            ci_base = (co // cog) * c_per_group
            for oh in range(ho):
                for ow in range(wo):
                    acc = b[co]
                    # accumulation order: ci outer, kh, kw inner
                    for ci in range(c_per_group):
                        for dh in range(kh):
                            hi = oh * sh + dh - pt
                            if hi < 0 or hi >= h:
                                continue
                            for dw in range(kw):
                                wi = ow * sw + dw - pl
                                if 0 <= wi < wd:
                                    acc += x[n, ci_base + ci, hi, wi] * w[co, ci, dh, dw]
                    if fused_relu and acc < np.float32(0.0):
                        acc = np.float32(0.0)
                    out[n, co, oh, ow] = acc


@_jit
def _im2col_worker(x, kh, kw, sh, sw, pt, pl, ho, wo, out):
    # x: one (C, H, W) group slice; out: (C*kh*kw, ho*wo)
    c, h, wd = x.shape
    for ci in range(c):
        for dh in range(kh):
            for dw in range(kw):
                row = (ci * kh + dh) * kw + dw
                for oh in range(ho):
                    hi = oh * sh + dh - pt
                    for ow in range(wo):
                        wi = ow * sw + dw - pl
                        if 0 <= hi < h and 0 <= wi < wd:
                            out[row, oh * wo + ow] = x[ci, hi, wi]
                        else:
                            out[row, oh * wo + ow] = np.float32(0.0)


@_jit
def _gemm_naive_worker(a, b, c, i_start, i_end):
    k_dim = a.shape[1]
    n_dim = b.shape[1]
    for i in range(i_start, i_end):
        for j in range(n_dim):
            acc = np.float32(0.0)
            for k in range(k_dim):  # k ascending: fixed accumulation order
                acc += a[i, k] * b[k, j]
            c[i, j] = acc


@_jit
def _gemm_blocked_worker(a, b, c, mb, nb, kb, i_start, i_end):
    # c must be zero-initialized. Per element the k's still arrive in
    # ascending order, so the result is bitwise equal to the naive kernel.
    k_dim = a.shape[1]
    n_dim = b.shape[1]
    for i0 in range(i_start, i_end, mb):
        i1 = min(i0 + mb, i_end)
        for k0 in range(0, k_dim, kb):
            k1 = min(k0 + kb, k_dim)
            for j0 in range(0, n_dim, nb):
                j1 = min(j0 + nb, n_dim)
                for i in range(i0, i1):
                    for k in range(k0, k1):
                        aik = a[i, k]
                        for j in range(j0, j1):
                            c[i, j] += aik * b[k, j]


@_jit
def _depthwise_worker(x, w, b, out, sh, sw, pt, pl, fused_relu, c_start, c_end):
    n_batch, _, h, wd = x.shape
    ho, wo = out.shape[2], out.shape[3]
    kh, kw = w.shape[2], w.shape[3]
    for n in range(n_batch):
        for c in range(c_start, c_end):
            for oh in range(ho):
                for ow in range(wo):
                    acc = b[c]
                    for dh in range(kh):
                        hi = oh * sh + dh - pt
                        if hi < 0 or hi >= h:
                            continue
                        for dw in range(kw):
                            wi = ow * sw + dw - pl
                            if 0 <= wi < wd:
                                acc += x[n, c, hi, wi] * w[c, 0, dh, dw]
                    if fused_relu and acc < np.float32(0.0):
                        acc = np.float32(0.0)
                    out[n, c, oh, ow] = acc


@_jit
def _maxpool_worker(x, out, kh, kw, sh, sw, pt, pl):
    n_batch, c_dim, h, wd = x.shape
    ho, wo = out.shape[2], out.shape[3]
    for n in range(n_batch):
        for c in range(c_dim):
            for oh in range(ho):
                for ow in range(wo):
                    m = np.float32(-np.inf)  # padded taps never win
                    for dh in range(kh):
                        hi = oh * sh + dh - pt
                        if hi < 0 or hi >= h:
                            continue
                        for dw in range(kw):
                            wi = ow * sw + dw - pl
                            if 0 <= wi < wd and x[n, c, hi, wi] > m:
                                m = x[n, c, hi, wi]
                    out[n, c, oh, ow] = m


@_jit
def _avgpool_worker(x, out, kh, kw, sh, sw, pt, pl):
    n_batch, c_dim, h, wd = x.shape
    ho, wo = out.shape[2], out.shape[3]
    divisor = np.float32(kh * kw)  # full kernel size; padded taps contribute 0
    for n in range(n_batch):
        for c in range(c_dim):
            for oh in range(ho):
                for ow in range(wo):
                    acc = np.float32(0.0)
                    for dh in range(kh):
                        hi = oh * sh + dh - pt
                        if hi < 0 or hi >= h:
                            continue
                        for dw in range(kw):
                            wi = ow * sw + dw - pl
                            if 0 <= wi < wd:
                                acc += x[n, c, hi, wi]
                    out[n, c, oh, ow] = acc / divisor


@_jit
def _global_avgpool_worker(x, out):
    n_batch, c_dim, h, wd = x.shape
    divisor = np.float32(h * wd)
    for n in range(n_batch):
        for c in range(c_dim):
            acc = np.float32(0.0)
            for hi in range(h):  # h outer, w inner: same order as avgpool taps
                for wi in range(wd):
                    acc += x[n, c, hi, wi]
            out[n, c, 0, 0] = acc / divisor


# --- threading ---------------------------------------------------------------

def _partitioned(worker, args, total: int, threads: int) -> None:
    """Run worker(*args, lo, hi) over contiguous chunks of [0, total)."""
    if threads <= 1 or total <= 1:
        worker(*args, 0, total)
        return
    nchunks = min(threads, total)
    step = (total + nchunks - 1) // nchunks
    bounds = [(lo, min(lo + step, total)) for lo in range(0, total, step)]
    with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
        for fut in [pool.submit(worker, *args, lo, hi) for lo, hi in bounds]:
            fut.result()


# --- shape checks ------------------------------------------------------------

def _check_conv_shapes(x: Tensor, w: Tensor, b: Tensor | None, p: ConvAttrs):
    if len(x.shape) != 4 or len(w.shape) != 4:
        raise ShapeError(f"conv needs rank-4 input and weight, got {x.shape} and {w.shape}")
    n, c_in, h, wd = x.shape
    c_out, c_per_group, kh, kw = w.shape
    if (kh, kw) != (p.kernel_h, p.kernel_w):
        raise ShapeError(f"weight kernel {kh}x{kw} disagrees with params "
                         f"{p.kernel_h}x{p.kernel_w}")
    if p.groups < 1 or c_in % p.groups or c_out % p.groups:
        raise ShapeError(f"groups={p.groups} does not divide C_in={c_in}, C_out={c_out}")
    if c_per_group != c_in // p.groups:
        raise ShapeError(f"weight has {c_per_group} channels/group, input needs "
                         f"{c_in // p.groups}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"bias shape {b.shape}, expected ({c_out},)")
    pt, pl, pb, pr = p.pads
    ho = conv_out_extent(h, kh, p.stride_h, pt, pb)
    wo = conv_out_extent(wd, kw, p.stride_w, pl, pr)
    return n, c_in, c_out, ho, wo


def _bias_array(b: Tensor | None, c_out: int) -> np.ndarray:
    return np.zeros(c_out, dtype=np.float32) if b is None else b.data


# --- public kernels ----------------------------------------------------------

def conv2d_direct(x: Tensor, w: Tensor, b: Tensor | None, p: ConvAttrs,
                  threads: int = 1) -> Tensor:
    """Reference convolution: explicit loop nest, zero padding, accumulation
    ordered ci then kh then kw. The oracle for every other conv backend."""
    n, _, c_out, ho, wo = _check_conv_shapes(x, w, b, p)
    out = np.empty((n, c_out, ho, wo), dtype=np.float32)
    args = (x.data, w.data, _bias_array(b, c_out), out,
            p.stride_h, p.stride_w, p.pads[0], p.pads[1],
            p.groups, 1 if p.fused_relu else 0)
    _partitioned(_conv_direct_worker, args, c_out, threads)
    return Tensor.wrap(out)


def im2col(x: Tensor, p: ConvAttrs, n: int = 0, group: int = 0) -> Tensor:
    """Column matrix for one (batch, group) slice: row order (ci, kh, kw),
    column j = ho*W_out + wo; padded taps are zero."""
    if len(x.shape) != 4:
        raise ShapeError(f"im2col needs a rank-4 input, got {x.shape}")
    _, c_in, h, wd = x.shape
    if c_in % p.groups:
        raise ShapeError(f"groups={p.groups} does not divide C_in={c_in}")
    cig = c_in // p.groups
    pt, pl, pb, pr = p.pads
    ho = conv_out_extent(h, p.kernel_h, p.stride_h, pt, pb)
    wo = conv_out_extent(wd, p.kernel_w, p.stride_w, pl, pr)
    out = np.empty((cig * p.kernel_h * p.kernel_w, ho * wo), dtype=np.float32)
    sl = x.data[n, group * cig:(group + 1) * cig]
    _im2col_worker(np.ascontiguousarray(sl), p.kernel_h, p.kernel_w,
                   p.stride_h, p.stride_w, pt, pl, ho, wo, out)
    return Tensor.wrap(out)


def _check_gemm_shapes(a: Tensor, b: Tensor):
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"gemm needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"gemm inner dims differ: {a.shape} x {b.shape}")


def gemm_naive(a: Tensor, b: Tensor, threads: int = 1) -> Tensor:
    """C[m,n] = sum_k A[m,k]·B[k,n] with k accumulated in ascending order."""
    _check_gemm_shapes(a, b)
    c = np.empty((a.shape[0], b.shape[1]), dtype=np.float32)
    _partitioned(_gemm_naive_worker, (a.data, b.data, c), a.shape[0], threads)
    return Tensor.wrap(c)


def gemm_blocked(a: Tensor, b: Tensor, block: tuple[int, int, int] = DEFAULT_GEMM_BLOCK,
                 threads: int = 1) -> Tensor:
    """Cache-blocked GEMM. k-blocks run in ascending order with in-order
    accumulation per element, so the result is bitwise equal to gemm_naive."""
    _check_gemm_shapes(a, b)
    mb, nb, kb = block
    if mb < 1 or nb < 1 or kb < 1:
        raise ShapeError(f"block extents must be >= 1, got {block}")
    c = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    _partitioned(_gemm_blocked_worker, (a.data, b.data, c, mb, nb, kb),
                 a.shape[0], threads)
    return Tensor.wrap(c)


_GEMM_IMPLS = {
    "gemm/naive": gemm_naive,
    "gemm/blocked": gemm_blocked,
}


def _resolve_gemm(backend_id: str):
    fn = _GEMM_IMPLS.get(backend_id)
    if fn is None:
        raise UnknownBackendError(f"unknown gemm backend '{backend_id}'")
    return fn


def conv2d_gemm(x: Tensor, w: Tensor, b: Tensor | None, p: ConvAttrs,
                gemm_backend: str = "gemm/blocked", threads: int = 1,
                fast_path_1x1: bool = True) -> Tensor:
    """Convolution lowered to GEMM per (batch, group). 1x1 stride-1 unpadded
    convolutions skip im2col and multiply over flattened spatial dims; both
    paths feed the same GEMM, so they agree bitwise."""
    n, c_in, c_out, ho, wo = _check_conv_shapes(x, w, b, p)
    gemm = _resolve_gemm(gemm_backend)
    cig = c_in // p.groups
    cog = c_out // p.groups
    pt, pl, _, _ = p.pads
    a_all = w.data.reshape(c_out, cig * p.kernel_h * p.kernel_w)
    is_1x1 = (p.kernel_h == 1 and p.kernel_w == 1 and p.stride_h == 1
              and p.stride_w == 1 and not any(p.pads))
    out = np.empty((n, c_out, ho, wo), dtype=np.float32)
    for ni in range(n):
        for g in range(p.groups):
            a = Tensor.wrap(a_all[g * cog:(g + 1) * cog])
            if is_1x1 and fast_path_1x1:
                cols = Tensor.wrap(np.ascontiguousarray(
                    x.data[ni, g * cig:(g + 1) * cig].reshape(cig, ho * wo)))
            else:
                col = np.empty((cig * p.kernel_h * p.kernel_w, ho * wo),
                               dtype=np.float32)
                sl = np.ascontiguousarray(x.data[ni, g * cig:(g + 1) * cig])
                _im2col_worker(sl, p.kernel_h, p.kernel_w, p.stride_h, p.stride_w,
                               pt, pl, ho, wo, col)
                cols = Tensor.wrap(col)
            prod = gemm(a, cols, threads=threads)
            out[ni, g * cog:(g + 1) * cog] = prod.data.reshape(cog, ho, wo)
    if b is not None:
        out += b.data.reshape(1, c_out, 1, 1)
    if p.fused_relu:
        np.maximum(out, np.float32(0.0), out=out)
    return Tensor.wrap(out)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None, p: ConvAttrs,
                     threads: int = 1) -> Tensor:
    """Channelwise convolution (groups == C_in == C_out): each channel is
    convolved with its own filter, no cross-channel accumulation."""
    n, c_in, c_out, ho, wo = _check_conv_shapes(x, w, b, p)
    if not (p.groups == c_in == c_out):
        raise ShapeError(
            f"depthwise needs groups == C_in == C_out, got groups={p.groups}, "
            f"C_in={c_in}, C_out={c_out}")
    out = np.empty((n, c_out, ho, wo), dtype=np.float32)
    args = (x.data, w.data, _bias_array(b, c_out), out,
            p.stride_h, p.stride_w, p.pads[0], p.pads[1],
            1 if p.fused_relu else 0)
    _partitioned(_depthwise_worker, args, c_out, threads)
    return Tensor.wrap(out)


def _check_pool_shapes(x: Tensor, p: PoolAttrs):
    if len(x.shape) != 4:
        raise ShapeError(f"pooling needs a rank-4 input, got {x.shape}")
    pt, pl, pb, pr = p.pads
    ho = conv_out_extent(x.shape[2], p.kernel_h, p.stride_h, pt, pb)
    wo = conv_out_extent(x.shape[3], p.kernel_w, p.stride_w, pl, pr)
    return ho, wo


def maxpool2d(x: Tensor, p: PoolAttrs, threads: int = 1) -> Tensor:
    """Maximum over in-image taps; padded taps are -inf and never win."""
    ho, wo = _check_pool_shapes(x, p)
    out = np.empty((x.shape[0], x.shape[1], ho, wo), dtype=np.float32)
    _maxpool_worker(x.data, out, p.kernel_h, p.kernel_w, p.stride_h, p.stride_w,
                    p.pads[0], p.pads[1])
    return Tensor.wrap(out)


def avgpool2d(x: Tensor, p: PoolAttrs, threads: int = 1) -> Tensor:
    """Average with the full kernel size as divisor; padded taps add zero."""
    ho, wo = _check_pool_shapes(x, p)
    out = np.empty((x.shape[0], x.shape[1], ho, wo), dtype=np.float32)
    _avgpool_worker(x.data, out, p.kernel_h, p.kernel_w, p.stride_h, p.stride_w,
                    p.pads[0], p.pads[1])
    return Tensor.wrap(out)


def global_avg_pool(x: Tensor, threads: int = 1) -> Tensor:
    if len(x.shape) != 4:
        raise ShapeError(f"global average pool needs a rank-4 input, got {x.shape}")
    out = np.empty((x.shape[0], x.shape[1], 1, 1), dtype=np.float32)
    _global_avgpool_worker(x.data, out)
    return Tensor.wrap(out)


def gemm_fc(x: Tensor, w: Tensor, b: Tensor | None, trans_b: bool = False,
            fused_relu: bool = False, gemm_backend: str = "gemm/naive",
            threads: int = 1) -> Tensor:
    """Fully connected layer: y = x·W(ᵀ) + b via a registered gemm backend."""
    if len(x.shape) != 2 or len(w.shape) != 2:
        raise ShapeError(f"fc needs rank-2 input and weight, got {x.shape}, {w.shape}")
    wm = Tensor.wrap(np.ascontiguousarray(w.data.T)) if trans_b else w
    if x.shape[1] != wm.shape[0]:
        raise ShapeError(f"fc inner dims differ: {x.shape} x {w.shape} "
                         f"(trans_b={trans_b})")
    m = wm.shape[1]
    if b is not None and b.shape not in ((m,), (1, m)):
        raise ShapeError(f"fc bias shape {b.shape}, expected ({m},)")
    y = _resolve_gemm(gemm_backend)(x, wm, threads=threads).data.copy()
    if b is not None:
        y += b.data.reshape(1, m)
    if fused_relu:
        np.maximum(y, np.float32(0.0), out=y)
    return Tensor.wrap(y)


def relu(x: Tensor) -> Tensor:
    return Tensor.wrap(np.maximum(x.data, np.float32(0.0)))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add operands differ: {a.shape} vs {b.shape}")
    return Tensor.wrap(a.data + b.data)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one operand")
    rank = len(tensors[0].shape)
    ax = normalize_axis(axis, rank, "concat")
    for t in tensors[1:]:
        if len(t.shape) != rank or any(
                t.shape[d] != tensors[0].shape[d] for d in range(rank) if d != ax):
            raise ShapeError(f"concat operand {t.shape} incompatible with "
                             f"{tensors[0].shape} on axis {ax}")
    return Tensor.wrap(np.concatenate([t.data for t in tensors], axis=ax))


def batch_norm_inference(x: Tensor, gamma: Tensor, beta: Tensor, mean: Tensor,
                         var: Tensor, epsilon: float = 1e-5) -> Tensor:
    if len(x.shape) < 2:
        raise ShapeError(f"batch norm needs a channel axis, got {x.shape}")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if t.shape != (c,):
            raise ShapeError(f"batch norm {name} shape {t.shape}, expected ({c},)")
    denom = var.data + np.float32(epsilon)
    if not np.all(denom > 0):
        raise NumericError("batch norm variance + epsilon must be positive")
    scale = gamma.data / np.sqrt(denom)
    bshape = (1, c) + (1,) * (len(x.shape) - 2)
    y = (x.data - mean.data.reshape(bshape)) * scale.reshape(bshape) \
        + beta.data.reshape(bshape)
    return Tensor.wrap(np.ascontiguousarray(y, dtype=np.float32))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = normalize_axis(axis, len(x.shape), "softmax")
    shifted = x.data - np.max(x.data, axis=ax, keepdims=True)
    e = np.exp(shifted)
    return Tensor.wrap(np.ascontiguousarray(e / np.sum(e, axis=ax, keepdims=True)))


# --- registry ----------------------------------------------------------------

class KernelRegistry:
    """Maps operator-kind strings to ordered interchangeable backends.

    Backend ids are "<kind>/<impl>" strings; the per-kind reference backend is
    the designated testing oracle.
    """

    def __init__(self):
        self._impls: dict[str, object] = {}
        self._by_kind: dict[str, list[str]] = {}
        self._reference: dict[str, str] = {}

    def register(self, backend_id: str, impl, reference: bool = False) -> None:
        if "/" not in backend_id:
            raise RegistrationError(f"backend id '{backend_id}' is not '<kind>/<impl>'")
        if backend_id in self._impls:
            raise RegistrationError(f"backend '{backend_id}' already registered")
        kind = backend_id.split("/", 1)[0]
        self._impls[backend_id] = impl
        self._by_kind.setdefault(kind, []).append(backend_id)
        if reference:
            if kind in self._reference:
                raise RegistrationError(f"kind '{kind}' already has a reference backend")
            self._reference[kind] = backend_id

    def backends(self, kind: str) -> list[str]:
        return list(self._by_kind.get(kind, []))

    def kinds(self) -> list[str]:
        return sorted(self._by_kind)

    def get(self, backend_id: str):
        impl = self._impls.get(backend_id)
        if impl is None:
            raise UnknownBackendError(f"unknown backend '{backend_id}'")
        return impl

    def has(self, backend_id: str) -> bool:
        return backend_id in self._impls

    def reference_backend(self, kind: str) -> str:
        ref = self._reference.get(kind)
        if ref is None:
            raise UnknownBackendError(f"kind '{kind}' has no reference backend")
        return ref


def register_backend(registry: KernelRegistry, backend_id: str, impl,
                     reference: bool = False) -> KernelRegistry:
    registry.register(backend_id, impl, reference=reference)
    return registry


def list_backends(registry: KernelRegistry, kind: str) -> list[str]:
    return registry.backends(kind)


# Uniform backend call interface: fn(inputs: list[Tensor], attrs, threads) -> Tensor.

def _as_conv_io(inputs):
    x, w = inputs[0], inputs[1]
    b = inputs[2] if len(inputs) > 2 else None
    return x, w, b


def _backend_conv_direct(inputs, attrs: ConvAttrs, threads: int) -> Tensor:
    x, w, b = _as_conv_io(inputs)
    return conv2d_direct(x, w, b, attrs, threads=threads)


def _backend_conv_gemm(inputs, attrs: ConvAttrs, threads: int) -> Tensor:
    x, w, b = _as_conv_io(inputs)
    return conv2d_gemm(x, w, b, attrs, threads=threads)


def _backend_depthwise(inputs, attrs: ConvAttrs, threads: int) -> Tensor:
    x, w, b = _as_conv_io(inputs)
    return depthwise_conv2d(x, w, b, attrs, threads=threads)


def _backend_gemm_naive(inputs, attrs: GemmAttrs, threads: int) -> Tensor:
    x, w, b = _as_conv_io(inputs)
    return gemm_fc(x, w, b, trans_b=attrs.trans_b, fused_relu=attrs.fused_relu,
                   gemm_backend="gemm/naive", threads=threads)


def _backend_gemm_blocked(inputs, attrs: GemmAttrs, threads: int) -> Tensor:
    x, w, b = _as_conv_io(inputs)
    return gemm_fc(x, w, b, trans_b=attrs.trans_b, fused_relu=attrs.fused_relu,
                   gemm_backend="gemm/blocked", threads=threads)


def _backend_maxpool(inputs, attrs: PoolAttrs, threads: int) -> Tensor:
    return maxpool2d(inputs[0], attrs, threads=threads)


def _backend_avgpool(inputs, attrs: PoolAttrs, threads: int) -> Tensor:
    return avgpool2d(inputs[0], attrs, threads=threads)


def _backend_global_avgpool(inputs, attrs, threads: int) -> Tensor:
    return global_avg_pool(inputs[0], threads=threads)


def _backend_relu(inputs, attrs, threads: int) -> Tensor:
    return relu(inputs[0])


def _backend_add(inputs, attrs, threads: int) -> Tensor:
    return add(inputs[0], inputs[1])


def _backend_concat(inputs, attrs: ConcatAttrs, threads: int) -> Tensor:
    return concat(list(inputs), attrs.axis)


def _backend_batch_norm(inputs, attrs, threads: int) -> Tensor:
    x, gamma, beta, mean, var = inputs
    return batch_norm_inference(x, gamma, beta, mean, var, epsilon=attrs.epsilon)


def _backend_softmax(inputs, attrs, threads: int) -> Tensor:
    return softmax(inputs[0], axis=attrs.axis)


def _backend_identity(inputs, attrs, threads: int) -> Tensor:
    return inputs[0]


def _backend_flatten(inputs, attrs, threads: int) -> Tensor:
    x = inputs[0]
    n = 1
    for d in x.shape[1:]:
        n *= d
    return x.reshape((x.shape[0], n))


def _backend_reshape(inputs, attrs, threads: int) -> Tensor:
    x = inputs[0]
    target = list(attrs.target)
    for i, d in enumerate(target):
        if d == 0:
            target[i] = x.shape[i]
    if -1 in target:
        known = 1
        for d in target:
            if d != -1:
                known *= d
        target[target.index(-1)] = x.numel // known
    return x.reshape(target)


def default_registry() -> KernelRegistry:
    """Registry with every shipped backend registered in its stable order."""
    r = KernelRegistry()
    r.register("conv/direct", _backend_conv_direct, reference=True)
    r.register("conv/gemm", _backend_conv_gemm)
    r.register("depthwise/specialized", _backend_depthwise, reference=True)
    r.register("gemm/naive", _backend_gemm_naive, reference=True)
    r.register("gemm/blocked", _backend_gemm_blocked)
    r.register("maxpool/reference", _backend_maxpool, reference=True)
    r.register("avgpool/reference", _backend_avgpool, reference=True)
    r.register("globalavgpool/reference", _backend_global_avgpool, reference=True)
    r.register("relu/reference", _backend_relu, reference=True)
    r.register("add/reference", _backend_add, reference=True)
    r.register("concat/reference", _backend_concat, reference=True)
    r.register("batchnorm/reference", _backend_batch_norm, reference=True)
    r.register("softmax/reference", _backend_softmax, reference=True)
    r.register("identity/reference", _backend_identity, reference=True)
    r.register("flatten/reference", _backend_flatten, reference=True)
    r.register("reshape/reference", _backend_reshape, reference=True)
    return r
