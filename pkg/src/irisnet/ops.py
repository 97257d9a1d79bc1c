"""Differentiable neural primitives on 4-D ``B x C x H x W`` tensors.

Every op computes its forward result eagerly and, if a tape is active,
records a closure for the vector-Jacobian product.  Convolution has two
forward paths: ``direct`` (tap-by-tap accumulation, the reference) and
``lowered`` (patch matrix times kernel matrix, the default).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from irisnet.autodiff import record
from irisnet.tensor import ShapeError, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int = 3
    dilation: int = 1
    stride: int = 1
    padding: int | Literal["same"] = "same"

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be positive, got {self.dilation}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding != "same" and (not isinstance(self.padding, int) or self.padding < 0):
            raise ValueError(f"padding must be 'same' or a non-negative int, got {self.padding!r}")

    @property
    def extent(self) -> int:
        """Span of the kernel taps on the input grid."""
        return (self.kernel_size - 1) * self.dilation + 1

    @property
    def pad(self) -> int:
        return (self.extent - 1) // 2 if self.padding == "same" else int(self.padding)


def _check_4d(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (B, C, H, W), got shape {x.shape}")


def _patches(xpad: np.ndarray, k: int, dilation: int, stride: int) -> np.ndarray:
    """Strided view (B, C, Ho, Wo, k, k) of every kernel placement."""
    e = (k - 1) * dilation + 1
    win = sliding_window_view(xpad, (e, e), axis=(2, 3))
    return win[:, :, ::stride, ::stride, ::dilation, ::dilation]


def _im2col(xpad: np.ndarray, k: int, dilation: int, stride: int) -> np.ndarray:
    """Patch matrix (C*k*k, B*Ho*Wo); rows ordered (c, i, j) to match a flattened kernel."""
    p = _patches(xpad, k, dilation, stride)
    b, c, ho, wo = p.shape[:4]
    return p.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, b * ho * wo)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, dilation: int, stride: int) -> np.ndarray:
    """Scatter-add a (C*k*k, B*Ho*Wo) patch matrix onto a (B, C, H, W) grid; adjoint of :func:`_im2col`."""
    b, c, h, w = shape
    e = (k - 1) * dilation + 1
    ho, wo = (h - e) // stride + 1, (w - e) // stride + 1
    cols = cols.reshape(c, k, k, b, ho, wo)
    out = np.zeros((c, b, h, w))
    for i in range(k):
        r0 = i * dilation
        for j in range(k):
            c0 = j * dilation
            out[:, :, r0 : r0 + stride * (ho - 1) + 1 : stride, c0 : c0 + stride * (wo - 1) + 1 : stride] += cols[:, i, j]
    return out.transpose(1, 0, 2, 3)


def _conv_geometry(x: Tensor, kernel: Tensor, spec: ConvSpec) -> tuple[int, int, int]:
    _check_4d(x, "conv2d input")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (Cout, Cin, k, k), got {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if cin != x.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, kernel expects {cin}")
    if kh != kw or kh != spec.kernel_size:
        raise ShapeError(f"kernel spatial shape {kh}x{kw} does not match kernel_size {spec.kernel_size}")
    p, e, s = spec.pad, spec.extent, spec.stride
    h, w = x.shape[2] + 2 * p, x.shape[3] + 2 * p
    if h < e or w < e:
        raise ShapeError(f"padded input {h}x{w} is smaller than the effective kernel extent {e}")
    return p, (h - e) // s + 1, (w - e) // s + 1


def _conv_direct(xpad: np.ndarray, w: np.ndarray, d: int, s: int, ho: int, wo: int) -> np.ndarray:
    out = np.zeros((xpad.shape[0], w.shape[0], ho, wo))
    k = w.shape[2]
    for i in range(k):
        for j in range(k):
            tap = xpad[:, :, i * d : i * d + s * (ho - 1) + 1 : s, j * d : j * d + s * (wo - 1) + 1 : s]
            out += np.einsum("bchw,oc->bohw", tap, w[:, :, i, j])
    return out


def _conv_lowered(xpad: np.ndarray, w: np.ndarray, d: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    cout, _, k, _ = w.shape
    cols = _im2col(xpad, k, d, s)
    b = xpad.shape[0]
    e = (k - 1) * d + 1
    ho, wo = (xpad.shape[2] - e) // s + 1, (xpad.shape[3] - e) // s + 1
    out = (w.reshape(cout, -1) @ cols).reshape(cout, b, ho, wo).transpose(1, 0, 2, 3)
    return out, cols


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    spec: ConvSpec | None = None,
    method: Literal["lowered", "direct"] = "lowered",
) -> Tensor:
    """Cross-correlation with zero padding, dilation and stride.

    ``out[b,o,y,x] = bias[o] + sum_{c,i,j} xpad[b,c,y*s+i*d,x*s+j*d] * kernel[o,c,i,j]``
    """
    spec = spec or ConvSpec(kernel_size=kernel.shape[-1])
    p, ho, wo = _conv_geometry(x, kernel, spec)
    cout, cin, k, _ = kernel.shape
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    d, s = spec.dilation, spec.stride
    xpad = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    w = kernel.data

    if method == "direct":
        out, cols = _conv_direct(xpad, w, d, s, ho, wo), None
    elif method == "lowered":
        out, cols = _conv_lowered(xpad, w, d, s)
    else:
        raise ValueError(f"unknown conv method {method!r}")
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    result = Tensor._wrap(out)

    def backward(g):
        gm = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        c = cols if cols is not None else _im2col(xpad, k, d, s)
        wmat = w.reshape(cout, -1)
        gk = (gm @ c.T).reshape(kernel.shape)
        gx = _col2im(wmat.T @ gm, xpad.shape, k, d, s)
        if p:
            gx = gx[:, :, p : p + x.shape[2], p : p + x.shape[3]]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gk, gb

    def replay():
        r = _conv_direct(xpad, w, d, s, ho, wo) if method == "direct" else _conv_lowered(xpad, w, d, s)[0]
        return r + bias.data[None, :, None, None] if bias is not None else r

    record("conv2d", (x, kernel, bias), result, backward, replay)
    return result


def transposed_conv2d(x: Tensor, kernel: Tensor, stride: int = 2, bias: Tensor | None = None) -> Tensor:
    """Learnable upsampling: every input pixel scatters ``kernel`` onto a stride-spaced grid.

    ``kernel`` is (Cin, Cout, k, k); output extent is ``(H - 1) * stride + k``.
    With the same array, this is the adjoint of :func:`conv2d` at that stride
    and zero padding.
    """
    _check_4d(x, "transposed_conv2d input")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"transposed kernel must be (Cin, Cout, k, k), got {kernel.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    cin, cout, k, _ = kernel.shape
    if k < stride:
        raise ValueError(f"kernel size {k} is smaller than stride {stride}; output would have holes")
    if cin != x.shape[1]:
        raise ShapeError(f"transposed_conv2d channel mismatch: input has {x.shape[1]}, kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    b, _, h, w = x.shape
    out_shape = (b, cout, (h - 1) * stride + k, (w - 1) * stride + k)
    kmat = kernel.data.reshape(cin, -1)
    xm = x.data.transpose(1, 0, 2, 3).reshape(cin, -1)

    def compute():
        o = _col2im(kmat.T @ xm, out_shape, k, 1, stride)
        return o + bias.data[None, :, None, None] if bias is not None else o

    result = Tensor._wrap(compute())

    def backward(g):
        gcols = _im2col(g, k, 1, stride)
        gx = (kmat @ gcols).reshape(cin, b, h, w).transpose(1, 0, 2, 3)
        gk = (xm @ gcols.T).reshape(kernel.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gk, gb

    record("transposed_conv2d", (x, kernel, bias), result, backward, compute)
    return result


def maxpool2d(x: Tensor, window: int = 2) -> tuple[Tensor, np.ndarray]:
    """Non-overlapping max pooling.

    Returns the pooled tensor and the (row, col) input position of each
    maximum, shape (B, C, H/w, W/w, 2).  Ties resolve to the first element of
    the window in row-major order.
    """
    _check_4d(x, "maxpool2d input")
    b, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"maxpool2d needs H and W divisible by {window}, got {h}x{w}; pad the input to even size")
    ho, wo = h // window, w // window
    blocks = x.data.reshape(b, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, -1)
    local = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[None, None, :, None] * window + local // window
    cols = np.arange(wo)[None, None, None, :] * window + local % window
    argmax = np.stack([rows, cols], axis=-1)
    result = Tensor._wrap(out)

    def backward(g):
        gblocks = np.zeros_like(blocks)
        np.put_along_axis(gblocks, local[..., None], g[..., None], axis=-1)
        gx = gblocks.reshape(b, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    record("maxpool2d", (x,), result, backward, lambda: blocks.max(axis=-1))
    return result, argmax


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer.

    Running mean/var start at 0/1 but are flagged uninitialized until the
    first training-mode call; eval mode refuses to use them before that.
    """

    channels: int
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)
    initialized: bool = False

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels)
        if self.running_var is None:
            self.running_var = np.ones(self.channels)

    def copy(self) -> "BatchNormState":
        return BatchNormState(
            self.channels, self.eps, self.momentum, self.running_mean.copy(), self.running_var.copy(), self.initialized
        )


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    mode: Literal["train", "eval"] = "train",
) -> Tensor:
    """Per-channel normalization over batch, height and width, then affine ``gamma, beta``.

    Train mode uses batch statistics and updates the running averages in
    ``state``; eval mode uses the running averages.
    """
    _check_4d(x, "batchnorm2d input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or state.channels != c:
        raise ShapeError(
            f"batchnorm2d: input has {c} channels, gamma {gamma.shape}, beta {beta.shape}, state {state.channels}"
        )
    gm, bt = gamma.data[None, :, None, None], beta.data[None, :, None, None]
    eps = state.eps
    xd = x.data

    if mode == "train":
        n = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
        result = Tensor._wrap(gm * xhat + bt)
        unbiased = var * n / (n - 1) if n > 1 else var
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased
        state.initialized = True

        def backward(g):
            dxhat = g * gm
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = inv[None, :, None, None] / n * (n * dxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        def replay():
            mu_r = xd.mean(axis=(0, 2, 3))[None, :, None, None]
            inv_r = 1.0 / np.sqrt(xd.var(axis=(0, 2, 3)) + eps)[None, :, None, None]
            return gm * ((xd - mu_r) * inv_r) + bt

    elif mode == "eval":
        if not state.initialized:
            raise RuntimeError("batchnorm2d eval mode before any training step: running statistics are uninitialized")
        rm, rv = state.running_mean.copy(), state.running_var.copy()
        inv = 1.0 / np.sqrt(rv + eps)
        xhat = (xd - rm[None, :, None, None]) * inv[None, :, None, None]
        result = Tensor._wrap(gm * xhat + bt)

        def backward(g):
            return g * gm * inv[None, :, None, None], (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        def replay():
            return gm * ((xd - rm[None, :, None, None]) * inv[None, :, None, None]) + bt

    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    record("batchnorm2d", (x, gamma, beta), result, backward, replay)
    return result


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor._wrap(np.where(mask, x.data, 0.0))
    record("relu", (x,), out, lambda g: (g * mask,), lambda: np.where(x.data > 0, x.data, 0.0))
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel softmax across the channel axis."""
    _check_4d(x, "softmax_channels input")
    if x.shape[1] < 2:
        raise ShapeError(f"softmax_channels needs at least 2 channels, got {x.shape[1]}")
    s = _softmax(x.data)
    out = Tensor._wrap(s)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    record("softmax_channels", (x,), out, backward, lambda: _softmax(x.data))
    return out


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements as a single-element tensor."""
    out = Tensor._wrap(np.array([x.data.sum()]))
    record("sum", (x,), out, lambda g: (np.full(x.shape, g[0]),), lambda: np.array([x.data.sum()]))
    return out


def weighted_sum(x: Tensor, weights: np.ndarray | Tensor) -> Tensor:
    """``sum(x * weights)`` with constant weights; handy for probing Jacobians."""
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ShapeError(f"weights shape {w.shape} != {x.shape}")
    out = Tensor._wrap(np.array([(x.data * w).sum()]))
    record("weighted_sum", (x,), out, lambda g: (g[0] * w,), lambda: np.array([(x.data * w).sum()]))
    return out
