"""Differentiable layer primitives built on :mod:`avlae.tensor`.

Video tensors use the layout ``[N, C, T, H, W]``; rank-4 ``[C, T, H, W]``
inputs are accepted by the convolution helpers and returned unbatched.
Convolution weights follow ``[C_out, C_in, kT, kH, kW]`` and transposed
convolution weights ``[C_in, C_out, kT, kH, kW]`` (the adjoint of a
convolution that uses the same array).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _sigmoid, as_tensor


# ---------------------------------------------------------------- dense ops
def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2:
        raise ValueError(f"linear expects x [n, in] and weight [out, in], got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear inner extents disagree: x {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope).astype(xd.dtype)
    return Tensor._from_op(xd * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    xd = x.data
    out = np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))
    return Tensor._from_op(out, (x,), lambda g: (g * _sigmoid(xd),))


def log_sigmoid(x: Tensor) -> Tensor:
    return -softplus(-x)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return x.sum(axis=axis, keepdims=keepdims)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return x.mean(axis=axis, keepdims=keepdims)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return x.reshape(tuple(shape))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(out, tensors, lambda g: np.split(g, bounds, axis=axis))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([t.reshape(_insert(t.shape, axis)) for t in tensors], axis=axis)


def _insert(shape, axis):
    shape = list(shape)
    axis = axis if axis >= 0 else len(shape) + 1 + axis
    shape.insert(axis, 1)
    return tuple(shape)


def pad(x: Tensor, widths: Sequence[tuple[int, int]], mode: str = "constant") -> Tensor:
    """Pad with zeros (``constant``) or by replicating border values (``edge``)."""
    widths = tuple((int(a), int(b)) for a, b in widths)
    if len(widths) != x.ndim:
        raise ValueError("pad needs one (before, after) pair per axis")
    out = np.pad(x.data, widths, mode=mode)
    crop = tuple(slice(a, a + n) for (a, _), n in zip(widths, x.shape))
    if mode == "constant":
        return Tensor._from_op(out, (x,), lambda g: (g[crop],))
    if mode != "edge":
        raise ValueError(f"unsupported pad mode {mode!r}")
    shape = x.shape

    def backward(g):
        # fold every replicated border cell back onto the edge it copied
        g = g.copy()
        for axis, ((before, after), n) in enumerate(zip(widths, shape)):
            if before:
                head = [slice(None)] * g.ndim
                head[axis] = slice(0, before)
                edge = [slice(None)] * g.ndim
                edge[axis] = slice(before, before + 1)
                g[tuple(edge)] += g[tuple(head)].sum(axis=axis, keepdims=True)
            if after:
                tail = [slice(None)] * g.ndim
                tail[axis] = slice(before + n, None)
                edge = [slice(None)] * g.ndim
                edge[axis] = slice(before + n - 1, before + n)
                g[tuple(edge)] += g[tuple(tail)].sum(axis=axis, keepdims=True)
        return (g[crop],)

    return Tensor._from_op(out, (x,), backward)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Average non-overlapping ``factor x factor`` blocks of the last two axes."""
    if factor == 1:
        return x
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"pool factor {factor} must divide spatial extents {h}x{w}")
    blocks = x.reshape(*lead, h // factor, factor, w // factor, factor)
    n = len(lead)
    return blocks.mean(axis=(n + 1, n + 3))


# -------------------------------------------------------------- convolution
def _triple(value, name: str) -> tuple[int, int, int]:
    if np.isscalar(value):
        value = (value,) * 3
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise ValueError(f"{name} needs 3 entries, got {value}")
    return value


def _conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _check_conv(in_shape, kernel, stride, padding):
    for s in stride:
        if s < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
    for k, p in zip(kernel, padding):
        if p < 0 or p >= k:
            raise ValueError(f"padding {padding} invalid for kernel {kernel}")
    for n, k, p in zip(in_shape, kernel, padding):
        if k > n + 2 * p:
            raise ValueError(f"kernel {kernel} exceeds padded input {in_shape} (padding {padding})")


def _windows(xp: np.ndarray, kernel, stride, out_shape) -> np.ndarray:
    # [N, C, To, Ho, Wo, kT, kH, kW] view, no copy
    win = sliding_window_view(xp, kernel, axis=(2, 3, 4))
    st, sh, sw = stride
    to, ho, wo = out_shape
    return win[:, :, : (to - 1) * st + 1 : st, : (ho - 1) * sh + 1 : sh, : (wo - 1) * sw + 1 : sw]


def _pad5(x: np.ndarray, padding) -> np.ndarray:
    pt, ph, pw = padding
    if not (pt or ph or pw):
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _conv_forward(x: np.ndarray, w: np.ndarray, stride, padding) -> np.ndarray:
    kernel = w.shape[2:]
    out_shape = tuple(_conv_out(n, k, s, p) for n, k, s, p in zip(x.shape[2:], kernel, stride, padding))
    win = _windows(_pad5(x, padding), kernel, stride, out_shape)
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # N,To,Ho,Wo,O
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, stride, padding, in_shape) -> np.ndarray:
    """Adjoint of :func:`_conv_forward` with respect to its input."""
    n, c = in_shape[:2]
    kt, kh, kw = w.shape[2:]
    st, sh, sw = stride
    pt, ph, pw = padding
    to, ho, wo = g.shape[2:]
    cols = np.tensordot(g, w, axes=([1], [0]))  # N,To,Ho,Wo,C,kT,kH,kW
    cols = cols.transpose(0, 4, 1, 2, 3, 5, 6, 7)
    padded = np.zeros(
        (n, c, in_shape[2] + 2 * pt, in_shape[3] + 2 * ph, in_shape[4] + 2 * pw), dtype=g.dtype
    )
    for a in range(kt):
        for b in range(kh):
            for d in range(kw):
                padded[
                    :, :, a : a + (to - 1) * st + 1 : st, b : b + (ho - 1) * sh + 1 : sh, d : d + (wo - 1) * sw + 1 : sw
                ] += cols[..., a, b, d]
    return padded[:, :, pt : pt + in_shape[2], ph : ph + in_shape[3], pw : pw + in_shape[4]]


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, kernel, stride, padding) -> np.ndarray:
    win = _windows(_pad5(x, padding), kernel, stride, g.shape[2:])
    return np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))  # O,C,kT,kH,kW


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return x.reshape(1, *x.shape), True
    if x.ndim != 5:
        raise ValueError(f"expected a [C, T, H, W] or [N, C, T, H, W] tensor, got shape {x.shape}")
    return x, False


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    x, squeeze = _batched(x)
    stride, padding = _triple(stride, "stride"), _triple(padding, "padding")
    if weight.ndim != 5 or weight.shape[1] != x.shape[1]:
        raise ValueError(f"weight {weight.shape} incompatible with input channels {x.shape[1]}")
    kernel = weight.shape[2:]
    _check_conv(x.shape[2:], kernel, stride, padding)
    xd, wd = x.data, weight.data
    out = _conv_forward(xd, wd, stride, padding)

    def backward(g):
        return (
            _conv_input_grad(g, wd, stride, padding, xd.shape),
            _conv_weight_grad(xd, g, kernel, stride, padding),
        )

    y = Tensor._from_op(out, (x, weight), backward)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1, 1)
    return y[0] if squeeze else y


def conv_transpose3d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0, output_padding=0
) -> Tensor:
    x, squeeze = _batched(x)
    stride, padding = _triple(stride, "stride"), _triple(padding, "padding")
    output_padding = _triple(output_padding, "output_padding")
    if weight.ndim != 5 or weight.shape[0] != x.shape[1]:
        raise ValueError(f"weight {weight.shape} incompatible with input channels {x.shape[1]}")
    kernel = weight.shape[2:]
    for op, s in zip(output_padding, stride):
        if op < 0 or op >= s:
            raise ValueError(f"output_padding {output_padding} must be smaller than stride {stride}")
    for s in stride:
        if s < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
    for k, p in zip(kernel, padding):
        if p < 0 or p >= k:
            raise ValueError(f"padding {padding} invalid for kernel {kernel}")
    spatial = tuple(
        (n - 1) * s - 2 * p + k + op
        for n, k, s, p, op in zip(x.shape[2:], kernel, stride, padding, output_padding)
    )
    if min(spatial) < 1:
        raise ValueError(f"transposed convolution would produce empty output {spatial}")
    out_shape = (x.shape[0], weight.shape[1]) + spatial
    xd, wd = x.data, weight.data
    out = _conv_input_grad(xd, wd, stride, padding, out_shape)

    def backward(g):
        return (
            _conv_forward(g, wd, stride, padding),
            _conv_weight_grad(g, xd, kernel, stride, padding),
        )

    y = Tensor._from_op(np.ascontiguousarray(out), (x, weight), backward)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1, 1)
    return y[0] if squeeze else y


def _pair(value) -> tuple[int, int]:
    if np.isscalar(value):
        return int(value), int(value)
    t, s = value
    return int(t), int(s)


def conv_1p2d(
    x: Tensor,
    spatial_kernel: Tensor,
    temporal_kernel: Tensor,
    stride=1,
    padding=0,
    bias: Tensor | None = None,
) -> Tensor:
    """Factorized spatio-temporal convolution.

    A ``1 x kH x kW`` spatial convolution with ``spatial_kernel``
    ``[C_mid, C_in, kH, kW]`` is followed by a ``kT x 1 x 1`` temporal
    convolution with ``temporal_kernel`` ``[C_out, C_mid, kT]``. ``stride``
    and ``padding`` are ``(temporal, spatial)`` pairs or a single int.
    """
    st, ss = _pair(stride)
    pt, ps = _pair(padding)
    h = conv3d(x, spatial_kernel.reshape(*spatial_kernel.shape[:2], 1, *spatial_kernel.shape[2:]),
               stride=(1, ss, ss), padding=(0, ps, ps))
    return conv3d(h, temporal_kernel.reshape(*temporal_kernel.shape, 1, 1), bias,
                  stride=(st, 1, 1), padding=(pt, 0, 0))


def conv_transpose_1p2d(
    x: Tensor,
    spatial_kernel: Tensor,
    temporal_kernel: Tensor,
    stride=1,
    padding=0,
    output_padding=0,
    bias: Tensor | None = None,
) -> Tensor:
    """Adjoint of :func:`conv_1p2d` for the same kernels and hyperparameters.

    The temporal factor is transposed first (``temporal_kernel`` is
    ``[C_in, C_mid, kT]``), then the spatial factor (``spatial_kernel`` is
    ``[C_mid, C_out, kH, kW]``).
    """
    st, ss = _pair(stride)
    pt, ps = _pair(padding)
    opt, ops = _pair(output_padding)
    h = conv_transpose3d(x, temporal_kernel.reshape(*temporal_kernel.shape, 1, 1),
                         stride=(st, 1, 1), padding=(pt, 0, 0), output_padding=(opt, 0, 0))
    return conv_transpose3d(h, spatial_kernel.reshape(*spatial_kernel.shape[:2], 1, *spatial_kernel.shape[2:]),
                            bias, stride=(1, ss, ss), padding=(0, ps, ps), output_padding=(0, ops, ops))
