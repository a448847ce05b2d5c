"""Deterministic NCHW float32 kernels.

Every runtime value is a rank-4 ``numpy.ndarray`` of dtype float32 laid out
as (batch, channels, height, width). Kernels never reassociate floating
point sums: convolution accumulates one ``(in_channel, ky, kx)`` tap at a
time, in that nesting order, with a separate multiply and add per tap. The
result for a given output element is therefore independent of how the
output is partitioned across worker threads.
"""
from __future__ import annotations

import functools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError

Tensor = np.ndarray

DEFAULT_BN_EPS = 1e-3
THREADS_ENV = "LEYOLO_THREADS"


def as_tensor(x, name: Optional[str] = None) -> Tensor:
    """Return ``x`` as a C-contiguous float32 rank-4 array, validating its shape."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 NCHW tensor, got rank {arr.ndim}", layer=name)
    if min(arr.shape) < 1:
        raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}", layer=name)
    return arr


@dataclass(frozen=True, eq=False)
class ConvWeights:
    """Kernel of shape (out_ch, in_ch // groups, k, k) plus optional BN statistics or bias.

    A convolution either carries inference batch-norm (all four ``bn_*``
    vectors) or a plain ``bias``; prediction layers use the latter.
    """

    kernel: np.ndarray
    bn_gamma: Optional[np.ndarray] = None
    bn_beta: Optional[np.ndarray] = None
    bn_mean: Optional[np.ndarray] = None
    bn_var: Optional[np.ndarray] = None
    bn_eps: float = DEFAULT_BN_EPS
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float32)
        if k.ndim != 4 or k.shape[2] != k.shape[3]:
            raise ConfigError(f"kernel must be (out, in/groups, k, k), got {k.shape}")
        object.__setattr__(self, "kernel", k)
        stats = (self.bn_gamma, self.bn_beta, self.bn_mean, self.bn_var)
        present = [s is not None for s in stats]
        if any(present) and not all(present):
            raise ConfigError("batch-norm needs gamma, beta, mean and var together")
        out_ch = k.shape[0]
        for field in ("bn_gamma", "bn_beta", "bn_mean", "bn_var", "bias"):
            v = getattr(self, field)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.float32).reshape(-1)
            if v.shape[0] != out_ch:
                raise ConfigError(f"{field} has {v.shape[0]} entries, kernel has {out_ch} outputs")
            object.__setattr__(self, field, v)
        if self.bn_var is not None and np.any(self.bn_var < 0):
            raise ConfigError("bn_var must be non-negative")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def ksize(self) -> int:
        return self.kernel.shape[2]

    @property
    def has_bn(self) -> bool:
        return self.bn_gamma is not None


def num_threads() -> int:
    """Intra-op worker count from ``LEYOLO_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


@functools.lru_cache(maxsize=None)
def _executor(n: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=n, thread_name_prefix="leyolo")


def _chunks(n: int, parts: int):
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def conv2d(
    x: Tensor,
    w: ConvWeights,
    stride: int = 1,
    padding: Optional[int] = None,
    groups: int = 1,
    name: Optional[str] = None,
    threads: Optional[int] = None,
) -> Tensor:
    """Direct 2-D convolution (kernel and optional bias; batch-norm is separate).

    ``padding`` defaults to ``k // 2``. Output is
    ``(B, out_ch, (H + 2p - k) // s + 1, (W + 2p - k) // s + 1)``.

    Accumulation order per output element: ``for ci: for ky: for kx:``,
    each step ``acc = acc + w * x`` in float32, bias added last.
    """
    x = as_tensor(x, name)
    B, C, H, W = x.shape
    out_ch, cin_g, k, _ = w.kernel.shape
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if groups < 1 or C % groups or out_ch % groups:
        raise ConfigError(
            f"groups={groups} must divide in_ch={C} and out_ch={out_ch}"
            + (f" (layer {name})" if name else "")
        )
    if cin_g * groups != C:
        raise ShapeError(
            f"input has {C} channels but kernel expects {cin_g * groups} ({cin_g} x {groups} groups)",
            layer=name,
        )
    p = k // 2 if padding is None else padding
    Ho = (H + 2 * p - k) // stride + 1
    Wo = (W + 2 * p - k) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {k} with padding {p} does not fit input {H}x{W}", layer=name)

    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cout_g = out_ch // groups
    xg = xp.reshape(B, groups, cin_g, xp.shape[2], xp.shape[3])
    wg = w.kernel.reshape(groups, cout_g, cin_g, k, k)
    out = np.zeros((B, groups, cout_g, Ho, Wo), dtype=np.float32)
    hspan = stride * (Ho - 1) + 1
    wspan = stride * (Wo - 1) + 1

    def work(gs: slice, os_: slice) -> None:
        acc = out[:, gs, os_]
        tmp = np.empty_like(acc)
        for ci in range(cin_g):
            for ky in range(k):
                for kx in range(k):
                    patch = xg[:, gs, ci, ky:ky + hspan:stride, kx:kx + wspan:stride]
                    wv = wg[gs, os_, ci, ky, kx]
                    np.multiply(wv[None, :, :, None, None], patch[:, :, None], out=tmp)
                    np.add(acc, tmp, out=acc)

    n = num_threads() if threads is None else max(1, threads)
    # Partition over independent outputs only: groups when grouped, else output channels.
    if groups > 1:
        tasks = [(s, slice(None)) for s in _chunks(groups, n)]
    else:
        tasks = [(slice(None), s) for s in _chunks(cout_g, n)]
    if len(tasks) == 1:
        work(*tasks[0])
    else:
        for f in [_executor(n).submit(work, gs, os_) for gs, os_ in tasks]:
            f.result()

    out = out.reshape(B, out_ch, Ho, Wo)
    if w.bias is not None:
        out += w.bias[None, :, None, None]
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    """Overflow-free logistic function."""
    return _sigmoid(np.asarray(x, dtype=np.float32))


def silu(x: Tensor) -> Tensor:
    """Elementwise ``x * sigmoid(x)``."""
    x = np.asarray(x, dtype=np.float32)
    return x * _sigmoid(x)


def batchnorm_infer(x: Tensor, w: ConvWeights) -> Tensor:
    """``gamma * (x - mean) / sqrt(var + eps) + beta`` per channel."""
    if not w.has_bn:
        raise ConfigError("weights carry no batch-norm statistics")
    x = np.asarray(x, dtype=np.float32)
    if x.shape[1] != w.out_channels:
        raise ShapeError(f"batch-norm over {w.out_channels} channels applied to {x.shape[1]}")
    eps = np.float32(w.bn_eps)
    scale = w.bn_gamma / np.sqrt(w.bn_var + eps)
    return (x - w.bn_mean[None, :, None, None]) * scale[None, :, None, None] + w.bn_beta[None, :, None, None]


def fold_batchnorm(w: ConvWeights) -> ConvWeights:
    """Fold inference batch-norm into the kernel, returning a biased convolution."""
    if not w.has_bn:
        return w
    scale = (w.bn_gamma.astype(np.float64) / np.sqrt(w.bn_var.astype(np.float64) + w.bn_eps))
    kernel = w.kernel.astype(np.float64) * scale[:, None, None, None]
    bias = w.bn_beta.astype(np.float64) - w.bn_mean.astype(np.float64) * scale
    if w.bias is not None:
        bias = bias + w.bias.astype(np.float64) * scale
    return ConvWeights(kernel=kernel.astype(np.float32), bias=bias.astype(np.float32))


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate every pixel into a 2x2 block."""
    x = as_tensor(x)
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def concat_channels(a: Tensor, b: Tensor, name: Optional[str] = None) -> Tensor:
    """Stack ``b`` after ``a`` along the channel axis."""
    a = as_tensor(a, name)
    b = as_tensor(b, name)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} with {b.shape}: batch/spatial mismatch", layer=name)
    return np.concatenate([a, b], axis=1)


def add_residual(a: Tensor, b: Tensor, name: Optional[str] = None) -> Tensor:
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"residual shapes differ: {a.shape} vs {b.shape}", layer=name)
    return a + b
