"""Minimal differentiable tensor kernel.

Tensors are plain C-contiguous ``float64`` numpy arrays shaped
``(channels, height, width)``; a leading batch extent is accepted by the
forward ops and handled sample by sample. Every op has an exact analytic
backward. Convolution is cross-correlation (no kernel flip), padding is zero
padding, and nothing broadcasts: shapes must match exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when tensor extents disagree with an op's contract."""


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0

    @classmethod
    def square(cls, in_channels, out_channels, kernel, stride=1, pad=0):
        return cls(out_channels, in_channels, kernel, kernel, stride, stride, pad, pad)

    def __post_init__(self):
        for name in ("out_channels", "in_channels", "kernel_h", "kernel_w", "stride_h", "stride_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ValueError("padding must be non-negative")

    def conv_out(self, h, w):
        """Output extents of the forward convolution for an ``h x w`` input."""
        num_h = h + 2 * self.pad_h - self.kernel_h
        num_w = w + 2 * self.pad_w - self.kernel_w
        if num_h < 0 or num_h % self.stride_h:
            raise ShapeError(
                f"height {h} with kernel {self.kernel_h}, pad {self.pad_h}, "
                f"stride {self.stride_h} does not tile evenly"
            )
        if num_w < 0 or num_w % self.stride_w:
            raise ShapeError(
                f"width {w} with kernel {self.kernel_w}, pad {self.pad_w}, "
                f"stride {self.stride_w} does not tile evenly"
            )
        return num_h // self.stride_h + 1, num_w // self.stride_w + 1

    def transpose_out(self, h, w):
        """Output extents of the transposed convolution for an ``h x w`` input."""
        oh = (h - 1) * self.stride_h + self.kernel_h - 2 * self.pad_h
        ow = (w - 1) * self.stride_w + self.kernel_w - 2 * self.pad_w
        if oh < 1 or ow < 1:
            raise ShapeError(f"transposed convolution of {h}x{w} has empty output")
        return oh, ow


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _check_shape(name, arr, expected):
    if arr.shape != tuple(expected):
        raise ShapeError(f"{name} has shape {arr.shape}, expected {tuple(expected)}")


def _check_input(x, channels, what="input"):
    if x.ndim != 3:
        raise ShapeError(f"{what} must be (channels, height, width), got ndim={x.ndim}")
    if x.shape[0] != channels:
        raise ShapeError(f"{what} channel dimension is {x.shape[0]}, expected {channels}")


def _check_params(weights, bias, expected_w, n_bias):
    _check_shape("weights", weights, expected_w)
    if bias is not None:
        _check_shape("bias", bias, (n_bias,))


def _batched(fn, x, *args):
    if x.ndim == 4:
        return np.stack([fn(xi, *args) for xi in x])
    return fn(x, *args)


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


def _windows(xp, kh, kw, sh, sw, oh, ow):
    # (C, oh, ow, kh, kw) strided view, no copy
    v = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return v[:, : (oh - 1) * sh + 1 : sh, : (ow - 1) * sw + 1 : sw]


# Above this many taps per output (C * kh * kw) a stride-1 correlation runs one
# GEMM per kernel tap over a flattened view instead of copying out windows.
_WINDOW_COPY_LIMIT = 256


def _flat_view(xp):
    # one spare zero row so every tap's shifted slice stays in bounds
    c, hp, wp = xp.shape
    buf = np.zeros((c, hp + 1, wp))
    buf[:, :hp] = xp
    return buf.reshape(c, -1)


def _corr_s1(xp, weights, oh, ow):
    """Stride-1 valid correlation of a pre-padded input."""
    o, c, kh, kw = weights.shape
    if c * kh * kw <= _WINDOW_COPY_LIMIT:
        win = _windows(xp, kh, kw, 1, 1, oh, ow)
        return np.tensordot(weights, win, axes=([1, 2, 3], [0, 3, 4]))
    wp = xp.shape[2]
    flat = _flat_view(xp)
    n = oh * wp
    out = np.zeros((o, n))
    if 8 * o <= c:
        # few outputs: one tall GEMM for every tap, then shift and add its rows
        z = (np.ascontiguousarray(weights.transpose(2, 3, 0, 1)).reshape(kh * kw * o, c) @ flat).reshape(kh, kw, o, -1)
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                out += z[i, j, :, off : off + n]
    elif 16 <= c < o:
        # thin inputs: stack a kernel row's shifts so each GEMM has depth kw * c
        rows = np.ascontiguousarray(weights.transpose(2, 0, 3, 1)).reshape(kh, o, kw * c)
        stack = np.empty((kw, c, n))
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                stack[j] = flat[:, off : off + n]
            out += rows[i] @ stack.reshape(kw * c, n)
    else:
        taps = np.ascontiguousarray(weights.transpose(2, 3, 0, 1))
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                out += taps[i, j] @ flat[:, off : off + n]
    return out.reshape(o, oh, wp)[:, :, :ow]


def _corr_weight_grad(x, g, spec):
    """sum_{y,x} g[a, y, x] * xpad[b, s*y + i, s*x + j] -> (A, B, kh, kw)."""
    xp = _pad(x, spec.pad_h, spec.pad_w)
    kh, kw = spec.kernel_h, spec.kernel_w
    a, oh, ow = g.shape
    b = xp.shape[0]
    if spec.stride_h != 1 or spec.stride_w != 1 or b * kh * kw <= _WINDOW_COPY_LIMIT:
        win = _windows(xp, kh, kw, spec.stride_h, spec.stride_w, oh, ow)
        return np.tensordot(g, win, axes=([1, 2], [1, 2]))
    wp = xp.shape[2]
    flat = _flat_view(xp)
    n = oh * wp
    gflat = np.zeros((a, oh, wp))
    gflat[:, :, :ow] = g
    gflat = gflat.reshape(a, n)
    grad = np.empty((kh, kw, a, b))
    for i in range(kh):
        for j in range(kw):
            off = i * wp + j
            grad[i, j] = gflat @ flat[:, off : off + n].T
    return grad.transpose(2, 3, 0, 1)


def _conv2d(x, weights, bias, spec):
    _check_input(x, spec.in_channels)
    oh, ow = spec.conv_out(x.shape[1], x.shape[2])
    xp = _pad(x, spec.pad_h, spec.pad_w)
    if spec.stride_h == 1 and spec.stride_w == 1:
        out = _corr_s1(xp, weights, oh, ow)
    else:
        win = _windows(xp, spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w, oh, ow)
        out = np.tensordot(weights, win, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        out += bias[:, None, None]
    return np.ascontiguousarray(out)


def conv2d(x, weights, bias, spec: ConvSpec):
    """Cross-correlate ``x`` with ``weights`` shaped (out, in, kh, kw)."""
    x = as_tensor(x)
    weights = as_tensor(weights)
    bias = None if bias is None else as_tensor(bias)
    _check_params(weights, bias, (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w), spec.out_channels)
    return _batched(_conv2d, x, weights, bias, spec)


def _scatter_taps(y, weights, spec):
    # Direct one-to-many mapping: every input sample spreads a kh x kw patch.
    cout = weights.shape[1]
    hy, wy = y.shape[1], y.shape[2]
    sh, sw = spec.stride_h, spec.stride_w
    fh = (hy - 1) * sh + spec.kernel_h
    fw = (wy - 1) * sw + spec.kernel_w
    if sh == spec.kernel_h and sw == spec.kernel_w:
        # non-overlapping patches: one contraction, then interleave
        full = np.einsum("chw,coij->ohiwj", y, weights, optimize=True).reshape(cout, fh, fw)
    else:
        full = np.zeros((cout, fh, fw))
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                full[:, i : i + (hy - 1) * sh + 1 : sh, j : j + (wy - 1) * sw + 1 : sw] += np.tensordot(
                    weights[:, :, i, j], y, axes=([0], [0])
                )
    return full


def _flip_correlate(y, weights, spec, oh, ow):
    # stride 1: transposed conv is a correlation with the flipped, swapped kernel
    # over the input padded by kernel - 1 - pad (cropping folded into the pad)
    kh, kw = spec.kernel_h, spec.kernel_w
    eh, ew = kh - 1 - spec.pad_h, kw - 1 - spec.pad_w
    if eh >= 0 and ew >= 0:
        yp = np.pad(y, ((0, 0), (eh, eh), (ew, ew)))
    else:
        full = np.pad(y, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        yp = full[:, spec.pad_h :, spec.pad_w :]
    flipped = np.ascontiguousarray(weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _corr_s1(yp, flipped, oh, ow)


def _conv_transpose2d(y, weights, bias, spec):
    _check_input(y, spec.in_channels)
    oh, ow = spec.transpose_out(y.shape[1], y.shape[2])
    if spec.stride_h == 1 and spec.stride_w == 1:
        out = np.ascontiguousarray(_flip_correlate(y, weights, spec, oh, ow))
    else:
        full = _scatter_taps(y, weights, spec)
        out = np.ascontiguousarray(full[:, spec.pad_h : spec.pad_h + oh, spec.pad_w : spec.pad_w + ow])
    if bias is not None:
        out += bias[:, None, None]
    return out


def conv_transpose2d(y, weights, bias, spec: ConvSpec):
    """Multiply by the transpose of the convolution matrix of ``weights``.

    ``weights`` is shaped (in, out, kh, kw); ``spec.in_channels`` and
    ``spec.out_channels`` describe this op, not the convolution it transposes.
    Output extents are ``(H - 1) * stride + kernel - 2 * pad``.
    """
    y = as_tensor(y)
    weights = as_tensor(weights)
    bias = None if bias is None else as_tensor(bias)
    _check_params(weights, bias, (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w), spec.out_channels)
    return _batched(_conv_transpose2d, y, weights, bias, spec)


def _transposed(spec):
    return ConvSpec(
        spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w,
        spec.stride_h, spec.stride_w, spec.pad_h, spec.pad_w,
    )


def conv2d_backward(x, weights, spec: ConvSpec, grad_out):
    """Return ``(grad_input, grad_weights, grad_bias)`` for one sample."""
    x = as_tensor(x)
    weights = as_tensor(weights)
    grad_out = as_tensor(grad_out)
    _check_params(weights, None, (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w), 0)
    _check_input(x, spec.in_channels)
    _check_shape("grad_out", grad_out, (spec.out_channels, *spec.conv_out(x.shape[1], x.shape[2])))

    grad_w = _corr_weight_grad(x, grad_out, spec)
    grad_b = grad_out.sum(axis=(1, 2))
    # adjoint of the forward map; conv_transpose2d yields exactly the input extents
    # because conv_out() already required an even tiling
    grad_x = _conv_transpose2d(grad_out, weights, None, _transposed(spec))
    return grad_x, np.ascontiguousarray(grad_w), grad_b


def conv_transpose2d_backward(y, weights, spec: ConvSpec, grad_out):
    """Return ``(grad_input, grad_weights, grad_bias)`` for one sample.

    The input gradient is gathered tap by tap from the padded output
    gradient, which is the forward convolution with the same weights
    written out directly.
    """
    y = as_tensor(y)
    weights = as_tensor(weights)
    grad_out = as_tensor(grad_out)
    _check_params(weights, None, (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w), 0)
    _check_input(y, spec.in_channels)
    _check_shape("grad_out", grad_out, (spec.out_channels, *spec.transpose_out(y.shape[1], y.shape[2])))

    hy, wy = y.shape[1], y.shape[2]
    sh, sw = spec.stride_h, spec.stride_w
    gp = _pad(grad_out, spec.pad_h, spec.pad_w)
    grad_y = np.zeros(y.shape)
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            grad_y += np.tensordot(
                weights[:, :, i, j], gp[:, i : i + (hy - 1) * sh + 1 : sh, j : j + (wy - 1) * sw + 1 : sw],
                axes=([1], [0]),
            )
    grad_w = _corr_weight_grad(grad_out, y, spec)
    grad_b = grad_out.sum(axis=(1, 2))
    return grad_y, np.ascontiguousarray(grad_w), grad_b


def relu(x):
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, grad_out):
    x = as_tensor(x)
    grad_out = as_tensor(grad_out)
    _check_shape("grad_out", grad_out, x.shape)
    return np.where(x > 0, grad_out, 0.0)


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    _check_shape("right operand", b, a.shape)
    return a + b


def add_backward(grad_out):
    return grad_out, grad_out


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = as_tensor(pred)
    target = as_tensor(target)
    _check_shape("target", target, pred.shape)
    diff = pred - target
    n = diff.size
    return float(np.dot(diff.ravel(), diff.ravel()) / n), 2.0 * diff / n
