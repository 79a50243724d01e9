"""Differentiable operations over :class:`~bevbeam.nd.tensor.Tensor`.

Every op validates shapes, computes the forward value with numpy, and (when a
tape is active and an input requires gradients) records a closure that
propagates the upstream gradient to its inputs.  Backward formulas are the
standard analytic ones; all of them are exercised against central finite
differences in the test suite.
"""

from __future__ import annotations

import logging

import numpy as np

from ..errors import ContractError, DimensionError, NumericError
from .tensor import FLOAT_DTYPES, Tensor, active_tape

logger = logging.getLogger(__name__)


# -- plumbing --------------------------------------------------------------


def _check_float(t: Tensor, op: str):
    if t.dtype not in FLOAT_DTYPES:
        raise ContractError(f"{op}: requires a float tensor, got dtype {t.dtype}")


def _same_dtype(a: Tensor, b: Tensor, op: str):
    if a.dtype != b.dtype:
        raise ContractError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _result(data: np.ndarray, *inputs: Tensor):
    """Wrap op output; returns (tensor, record?) based on the active tape."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._is_leaf = False
        return out, tape
    return out, None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out dimensions that numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_float(a, "add"), _check_float(b, "add")
    _same_dtype(a, b, "add")
    out, tape = _result(a.data + b.data, a, b)
    if tape is not None:
        def backward(g, acc):
            acc(a, _unbroadcast(g, a.data.shape))
            acc(b, _unbroadcast(g, b.data.shape))
        tape.record(out, backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_float(a, "sub"), _check_float(b, "sub")
    _same_dtype(a, b, "sub")
    out, tape = _result(a.data - b.data, a, b)
    if tape is not None:
        def backward(g, acc):
            acc(a, _unbroadcast(g, a.data.shape))
            acc(b, _unbroadcast(-g, b.data.shape))
        tape.record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_float(a, "mul"), _check_float(b, "mul")
    _same_dtype(a, b, "mul")
    out, tape = _result(a.data * b.data, a, b)
    if tape is not None:
        def backward(g, acc):
            acc(a, _unbroadcast(g * b.data, a.data.shape))
            acc(b, _unbroadcast(g * a.data, b.data.shape))
        tape.record(out, backward)
    return out


def neg(a: Tensor) -> Tensor:
    _check_float(a, "neg")
    out, tape = _result(-a.data, a)
    if tape is not None:
        tape.record(out, lambda g, acc: acc(a, -g))
    return out


def scale(a: Tensor, k: float) -> Tensor:
    """Multiply by a python scalar constant."""
    _check_float(a, "scale")
    k = a.dtype.type(k)
    out, tape = _result(a.data * k, a)
    if tape is not None:
        tape.record(out, lambda g, acc: acc(a, g * k))
    return out


def add_scalar(a: Tensor, k: float) -> Tensor:
    _check_float(a, "add_scalar")
    out, tape = _result(a.data + a.dtype.type(k), a)
    if tape is not None:
        tape.record(out, lambda g, acc: acc(a, g))
    return out


def pow_const(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with constant exponent; grad is 0 when exponent is 0."""
    _check_float(a, "pow_const")
    out, tape = _result(a.data ** exponent, a)
    if tape is not None:
        def backward(g, acc):
            if exponent == 0:
                acc(a, np.zeros_like(a.data))
            else:
                acc(a, g * exponent * a.data ** (exponent - 1))
        tape.record(out, backward)
    return out


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` set, inputs are clamped from below first."""
    _check_float(a, "log")
    if floor is not None:
        clamped = np.maximum(a.data, a.dtype.type(floor))
    else:
        clamped = a.data
    out, tape = _result(np.log(clamped), a)
    if tape is not None:
        def backward(g, acc):
            grad = g / clamped
            if floor is not None:
                grad = np.where(a.data >= floor, grad, 0.0)
            acc(a, grad.astype(a.dtype, copy=False))
        tape.record(out, backward)
    return out


def relu(a: Tensor) -> Tensor:
    _check_float(a, "relu")
    out, tape = _result(np.maximum(a.data, 0), a)
    if tape is not None:
        mask = a.data > 0
        tape.record(out, lambda g, acc: acc(a, g * mask))
    return out


def tanh(a: Tensor) -> Tensor:
    _check_float(a, "tanh")
    y = np.tanh(a.data)
    out, tape = _result(y, a)
    if tape is not None:
        tape.record(out, lambda g, acc: acc(a, g * (1.0 - y * y)))
    return out


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    _check_float(a, "gelu")
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    out, tape = _result(0.5 * x * (1.0 + t), a)
    if tape is not None:
        def backward(g, acc):
            d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
            grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            acc(a, (g * grad).astype(a.dtype, copy=False))
        tape.record(out, backward)
    return out


# -- shape manipulation ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    _check_float(a, "reshape")
    out, tape = _result(a.data.reshape(shape), a)
    if tape is not None:
        tape.record(out, lambda g, acc: acc(a, g.reshape(a.data.shape)))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    _check_float(a, "transpose")
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out, tape = _result(np.ascontiguousarray(a.data.transpose(axes)), a)
    if tape is not None:
        tape.record(out, lambda g, acc: acc(a, np.ascontiguousarray(g.transpose(inverse))))
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    for t in tensors:
        _check_float(t, "concat")
    out, tape = _result(np.concatenate([t.data for t in tensors], axis=axis), *tensors)
    if tape is not None:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward(g, acc):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                acc(t, np.ascontiguousarray(g[tuple(index)]))
        tape.record(out, backward)
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors:
        _check_float(t, "stack")
    out, tape = _result(np.stack([t.data for t in tensors], axis=axis), *tensors)
    if tape is not None:
        def backward(g, acc):
            for i, t in enumerate(tensors):
                acc(t, np.ascontiguousarray(np.take(g, i, axis=axis)))
        tape.record(out, backward)
    return out


def take_rows(a: Tensor, indices) -> Tensor:
    """Select rows along the first axis; backward scatter-adds."""
    _check_float(a, "take_rows")
    idx = np.asarray(indices, dtype=np.int64)
    out, tape = _result(a.data[idx], a)
    if tape is not None:
        def backward(g, acc):
            grad = np.zeros_like(a.data)
            np.add.at(grad, idx, g)
            acc(a, grad)
        tape.record(out, backward)
    return out


def gather_labels(probs: Tensor, labels) -> Tensor:
    """Pick probs[i, labels[i]] for each row i of a (B, M) tensor."""
    _check_float(probs, "gather_labels")
    if probs.ndim != 2:
        raise DimensionError(f"gather_labels: expected a 2-d tensor, got shape {tuple(probs.shape)}")
    idx = np.asarray(labels, dtype=np.int64)
    b, m = probs.shape
    if idx.shape != (b,):
        raise DimensionError(f"gather_labels: labels shape {idx.shape} does not match batch {b}")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= m:
        raise ContractError(f"gather_labels: label out of range [0, {m})")
    rows = np.arange(b)
    out, tape = _result(probs.data[rows, idx], probs)
    if tape is not None:
        def backward(g, acc):
            grad = np.zeros_like(probs.data)
            grad[rows, idx] = g
            acc(probs, grad)
        tape.record(out, backward)
    return out


# -- reductions --------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_float(a, "reduce_sum")
    out, tape = _result(a.data.sum(axis=axis, keepdims=keepdims), a)
    if tape is not None:
        def backward(g, acc):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            acc(a, np.broadcast_to(g, a.data.shape).copy())
        tape.record(out, backward)
    return out


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_float(a, "reduce_mean")
    out, tape = _result(a.data.mean(axis=axis, keepdims=keepdims), a)
    if tape is not None:
        count = a.data.size if axis is None else np.prod(
            [a.data.shape[ax] for ax in np.atleast_1d(axis)])
        def backward(g, acc):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            acc(a, (np.broadcast_to(g, a.data.shape) / count).astype(a.dtype, copy=False))
        tape.record(out, backward)
    return out


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes; leading axes broadcast."""
    _check_float(a, "matmul"), _check_float(b, "matmul")
    _same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul: operands must be at least 2-d, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for shapes {tuple(a.shape)} and {tuple(b.shape)}")
    out, tape = _result(np.matmul(a.data, b.data), a, b)
    if tape is not None:
        def backward(g, acc):
            acc(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape))
            acc(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape))
        tape.record(out, backward)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w.T + b for a (.., in) input and (out, in) weight."""
    y = matmul(x, transpose(w, (1, 0)))
    if b is not None:
        y = add(y, b)
    return y


# -- softmax / normalization ---------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; slices sum to 1."""
    _check_float(a, "softmax")
    if np.isnan(a.data).any():
        raise NumericError("softmax: NaN in input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out, tape = _result(y, a)
    if tape is not None:
        def backward(g, acc):
            dot = (g * y).sum(axis=axis, keepdims=True)
            acc(a, (g - dot) * y)
        tape.record(out, backward)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    _check_float(x, "layer_norm")
    d = gamma.shape[0]
    if x.shape[-1] != d or beta.shape != (d,) or gamma.shape != (d,):
        raise DimensionError(
            f"layer_norm: feature dim mismatch x={tuple(x.shape)} gamma={tuple(gamma.shape)} "
            f"beta={tuple(beta.shape)}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out, tape = _result(xhat * gamma.data + beta.data, x, gamma, beta)
    if tape is not None:
        def backward(g, acc):
            lead = tuple(range(g.ndim - 1))
            acc(gamma, (g * xhat).sum(axis=lead))
            acc(beta, g.sum(axis=lead))
            gh = g * gamma.data
            dx = (gh - gh.mean(axis=-1, keepdims=True)
                  - xhat * (gh * xhat).mean(axis=-1, keepdims=True)) * inv_std
            acc(x, dx.astype(x.dtype, copy=False))
        tape.record(out, backward)
    return out


class BatchNormState:
    """Per-channel running statistics for batch normalization."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.batches_tracked = 0
        self._warned_fresh_eval = False

    def copy(self) -> "BatchNormState":
        dup = BatchNormState(len(self.running_mean), self.momentum, self.eps,
                             self.running_mean.dtype)
        dup.running_mean = self.running_mean.copy()
        dup.running_var = self.running_var.copy()
        dup.batches_tracked = self.batches_tracked
        return dup


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool) -> Tensor:
    """Batch normalization over (B, H, W) per channel of a (B, C, H, W) input.

    Train mode normalizes by batch statistics (biased variance) and updates
    the running stats with the state's momentum; eval mode uses running stats.
    """
    _check_float(x, "batch_norm")
    if x.ndim != 4:
        raise DimensionError(f"batch_norm: expected (B, C, H, W), got {tuple(x.shape)}")
    b, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batch_norm: channel mismatch x has {c} channels, gamma {tuple(gamma.shape)}")
    n = b * h * w
    if training:
        if n < 2:
            raise ContractError(f"batch_norm: train mode needs >= 2 values per channel, got {n}")
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean[None, :, None, None]
        var = np.einsum("bchw,bchw->c", centered, centered) / n
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(
            state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var).astype(
            state.running_var.dtype)
        state.batches_tracked += 1
    else:
        if state.batches_tracked == 0 and not state._warned_fresh_eval:
            logger.warning("batch_norm: eval before any train step; using initialized stats")
            state._warned_fresh_eval = True
        mean = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
        centered = x.data - mean[None, :, None, None]
    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    xhat = centered * inv_std[None, :, None, None]
    out, tape = _result(xhat * gamma.data[None, :, None, None]
                        + beta.data[None, :, None, None], x, gamma, beta)
    if tape is not None:
        def backward(g, acc):
            acc(gamma, (g * xhat).sum(axis=(0, 2, 3)))
            acc(beta, g.sum(axis=(0, 2, 3)))
            gi = gamma.data * inv_std
            if training:
                gsum = g.sum(axis=(0, 2, 3), keepdims=True)
                gx = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = gi[None, :, None, None] * (g - gsum / n - xhat * gx / n)
            else:
                dx = g * gi[None, :, None, None]
            acc(x, dx.astype(x.dtype, copy=False))
        tape.record(out, backward)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    _check_float(x, "dropout")
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    out, tape = _result(x.data * keep, x)
    if tape is not None:
        tape.record(out, lambda g, acc: acc(x, g * keep))
    return out


# -- convolution ---------------------------------------------------------------


def _im2col(x_pad: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int):
    # one contiguous block copy per kernel tap; much faster than reshaping a
    # 6-d strided view
    b, c, _, _ = x_pad.shape
    cols = np.empty((b, c, kh * kw, out_h, out_w), dtype=x_pad.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki * kw + kj] = x_pad[:, :, ki:ki + stride * out_h:stride,
                                             kj:kj + stride * out_w:stride]
    return cols.reshape(b, c * kh * kw, out_h * out_w)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 1) -> Tensor:
    """2-d convolution (cross-correlation) with square kernel.

    The default 3x3 / stride 1 / padding 1 configuration preserves spatial
    size; the camera backbone also uses stride 2.
    """
    _check_float(x, "conv2d"), _check_float(w, "conv2d")
    _same_dtype(x, w, "conv2d")
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(
            f"conv2d: expected 4-d input and weight, got {tuple(x.shape)} and {tuple(w.shape)}")
    b, c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise DimensionError(
            f"conv2d: input has {c_in} channels but weight expects {c_in_w} "
            f"(input {tuple(x.shape)}, weight {tuple(w.shape)})")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {tuple(bias.shape)} != ({c_out},)")
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wd + 2 * padding - kw) // stride + 1
    n = out_h * out_w

    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        x_pad = x.data
        cols = x.data.reshape(b, c_in, n)
    else:
        if padding > 0:
            x_pad = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        else:
            x_pad = x.data
        cols = _im2col(x_pad, kh, kw, stride, out_h, out_w)

    w_mat = w.data.reshape(c_out, -1)
    y = np.matmul(w_mat, cols).reshape(b, c_out, out_h, out_w)
    if bias is not None:
        y += bias.data[None, :, None, None]
    out, tape = _result(y, x, w, *( [bias] if bias is not None else [] ))
    if tape is not None:
        pad_shape = x_pad.shape
        def backward(g, acc):
            go = g.reshape(b, c_out, n)
            acc(w, np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape))
            if bias is not None:
                acc(bias, g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                d_cols = np.matmul(w_mat.T, go)
                if pointwise:
                    acc(x, d_cols.reshape(x.data.shape))
                    return
                gx_pad = np.zeros(pad_shape, dtype=x.dtype)
                d_patch = d_cols.reshape(b, c_in, kh, kw, out_h, out_w)
                for ki in range(kh):
                    for kj in range(kw):
                        gx_pad[:, :, ki:ki + stride * out_h:stride,
                               kj:kj + stride * out_w:stride] += d_patch[:, :, ki, kj]
                if padding > 0:
                    gx_pad = gx_pad[:, :, padding:padding + h, padding:padding + wd]
                acc(x, np.ascontiguousarray(gx_pad))
        tape.record(out, backward)
    return out


# -- resampling -----------------------------------------------------------------


def _resize_coords(n_in: int, n_out: int):
    """Align-corners source coordinates: output corners map onto input corners."""
    if n_out == 1:
        src = np.zeros(1)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.floor(src).astype(np.int64)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling of (B, C, H, W) with align-corners semantics.

    Resizing to the input size returns the input values exactly.
    """
    _check_float(x, "bilinear_resize")
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize: expected (B, C, H, W), got {tuple(x.shape)}")
    if out_h < 1 or out_w < 1:
        raise ContractError(f"bilinear_resize: output size must be >= 1, got {(out_h, out_w)}")
    b, c, h, w = x.shape
    if out_h == h and out_w == w:
        out, tape = _result(x.data.copy(), x)
        if tape:
            tape.record(out, lambda g, acc: acc(x, g))
        return out
    r0, r1, fr = _resize_coords(h, out_h)
    c0, c1, fc = _resize_coords(w, out_w)
    fr = fr[:, None].astype(x.dtype)
    fc = fc[None, :].astype(x.dtype)
    w00 = (1 - fr) * (1 - fc)
    w01 = (1 - fr) * fc
    w10 = fr * (1 - fc)
    w11 = fr * fc
    y = (x.data[:, :, r0[:, None], c0[None, :]] * w00
         + x.data[:, :, r0[:, None], c1[None, :]] * w01
         + x.data[:, :, r1[:, None], c0[None, :]] * w10
         + x.data[:, :, r1[:, None], c1[None, :]] * w11)
    out, tape = _result(y, x)
    if tape is not None:
        def backward(g, acc):
            grad = np.zeros_like(x.data)
            flat = grad.reshape(b, c, h * w)
            for rows, cols_, wt in ((r0, c0, w00), (r0, c1, w01), (r1, c0, w10), (r1, c1, w11)):
                idx = (rows[:, None] * w + cols_[None, :]).ravel()
                np.add.at(flat, (slice(None), slice(None), idx), (g * wt).reshape(b, c, -1))
            acc(x, grad)
        tape.record(out, backward)
    return out


# -- gated residual ---------------------------------------------------------------


def gated_add(z: Tensor, h: Tensor, s: Tensor) -> Tensor:
    """z + tanh(s) * h with a scalar gate s.

    When tanh(s) is exactly zero the output equals z bit-for-bit while the
    gate still receives its gradient.
    """
    _check_float(z, "gated_add"), _check_float(h, "gated_add")
    if z.shape != h.shape:
        raise DimensionError(f"gated_add: shapes {tuple(z.shape)} and {tuple(h.shape)} differ")
    if s.size != 1:
        raise ContractError(f"gated_add: gate must be a scalar, got shape {tuple(s.shape)}")
    t = float(np.tanh(s.data.reshape(())))
    if t == 0.0:
        y = z.data.copy()
    else:
        y = z.data + z.dtype.type(t) * h.data
    out, tape = _result(y, z, h, s)
    if tape is not None:
        def backward(g, acc):
            acc(z, g)
            acc(h, (g * t).astype(h.dtype, copy=False))
            acc(s, np.asarray((g * h.data).sum() * (1.0 - t * t),
                              dtype=s.dtype).reshape(s.data.shape))
        tape.record(out, backward)
    return out


# -- operator sugar ----------------------------------------------------------------


def _coerce(other, like: Tensor) -> Tensor:
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=like.dtype))


Tensor.__add__ = lambda self, other: add(self, _coerce(other, self))
Tensor.__sub__ = lambda self, other: sub(self, _coerce(other, self))
Tensor.__mul__ = lambda self, other: (
    scale(self, other) if np.isscalar(other) else mul(self, other))
Tensor.__rmul__ = Tensor.__mul__
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.sum = lambda self, axis=None, keepdims=False: reduce_sum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: reduce_mean(self, axis, keepdims)
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 else shape)
Tensor.transpose = lambda self, *axes: transpose(self, axes[0] if len(axes) == 1 else axes)
