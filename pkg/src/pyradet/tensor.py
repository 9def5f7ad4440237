# tensor.py - PyRaDet Dense Tensors with Reverse-Mode Differentiation
# Copyright (C) 2026 PyRaDet contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""
Minimal dense tensor library with reverse-mode automatic differentiation.

Provides exactly the primitives the detection network needs: elementwise math,
reductions, conv2d / conv_transpose2d, batched matmul, softmax, channel layer
norm, PReLU and batch norm, plus Adam and a finite-difference gradient checker.

All data is stored as 64-bit floats. A tape of operations is recorded during the
forward pass and consumed by backward().

Usage:
    from pyradet.tensor import Tensor, backward

    x = Tensor([[1.0, 2.0]], requires_grad=True)
    loss = (x * x).sum()
    backward(loss)
    print(x.grad)  # [[2., 4.]]
"""

import itertools
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Union

import numpy as np

_GRAD_ENABLED = True
_DEBUG = os.environ.get('PYRADET_DEBUG', '') not in ('', '0')
_SEQUENCE = itertools.count()


def set_debug(enabled):
    """
    Enable or disable finite-value checks on every operation output.

    Args:
        enabled: If True, any op producing NaN/Inf raises FloatingPointError
    """
    global _DEBUG
    _DEBUG = bool(enabled)


def is_debug():
    """Return whether finite-value checks are active."""
    return _DEBUG


@contextmanager
def no_grad():
    """Context manager that disables tape recording (inference and finite-difference checks)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _pair(value):
    if isinstance(value, (int, np.integer)):
        return int(value), int(value)
    first, second = value
    return int(first), int(second)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value):
    """Wrap arrays and scalars as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


# ==================== Graph Nodes ====================

class Function:
    """
    Base class of a recorded operation.

    Subclasses implement forward() on numpy arrays and backward() returning one
    gradient (or None) per input. `needs_grad[i]` tells backward which input
    gradients are actually consumed.
    """

    def __init__(self, *inputs):
        self.inputs = inputs
        self.needs_grad = tuple(t.requires_grad for t in inputs)
        self.seq = next(_SEQUENCE)
        self.consumed = False

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError(f'{type(self).__name__}.forward')

    def backward(self, grad):
        raise NotImplementedError(f'{type(self).__name__}.backward')

    @classmethod
    def apply(cls, *inputs, **kwargs):
        tensors = tuple(as_tensor(t) for t in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        if _DEBUG and not np.all(np.isfinite(out)):
            raise FloatingPointError(f'{cls.__name__} produced non-finite values')
        requires_grad = _GRAD_ENABLED and any(fn.needs_grad)
        result = Tensor._wrap(out, requires_grad)
        if requires_grad:
            result._ctx = fn
        return result

    def release(self):
        """Drop saved arrays once backward has visited this node."""
        self.consumed = True
        for name in list(vars(self)):
            if name.startswith('saved_'):
                setattr(self, name, None)


class Graph:
    """
    Ordered record of the operations an output depends on.

    Records are sorted by execution order, so iterating in reverse visits each
    node after every node that consumed its output.
    """

    def __init__(self, output):
        seen = {}
        stack = [output._ctx] if output._ctx is not None else []
        while stack:
            fn = stack.pop()
            if fn.seq in seen:
                continue
            seen[fn.seq] = fn
            for tensor in fn.inputs:
                if tensor._ctx is not None and tensor._ctx.seq not in seen:
                    stack.append(tensor._ctx)
        self.records = [seen[key] for key in sorted(seen)]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


# ==================== Tensor ====================

class Tensor:
    """
    n-dimensional float64 value, optionally a node of the differentiation tape.

    Args:
        data: Array-like contents (copied into a contiguous float64 array)
        requires_grad: Whether backward() should produce a gradient for this tensor
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(np.array(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = None

    @classmethod
    def _wrap(cls, array, requires_grad):
        """Adopt an op result without copying it."""
        tensor = cls.__new__(cls)
        tensor.data = np.ascontiguousarray(array, dtype=np.float64)
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor._ctx = None
        return tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._ctx is None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}{flag})'

    # elementwise arithmetic
    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Add.apply(self, Neg.apply(other))

    def __rsub__(self, other):
        return Add.apply(other, Neg.apply(self))

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __rtruediv__(self, other):
        return Div.apply(other, self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent):
        return Pow.apply(self, exponent=float(exponent))

    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def abs(self):
        return Abs.apply(self)

    def sigmoid(self):
        return Sigmoid.apply(self)

    def tanh(self):
        return Tanh.apply(self)

    def clamp(self, low, high):
        return Clamp.apply(self, low=low, high=high)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return Sum.apply(self, axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes)


# ==================== Elementwise Operations ====================

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Mul(Function):
    def forward(self, a, b):
        self.saved_a, self.saved_b = a, b
        return a * b

    def backward(self, grad):
        a, b = self.saved_a, self.saved_b
        ga = _unbroadcast(grad * b, a.shape) if self.needs_grad[0] else None
        gb = _unbroadcast(grad * a, b.shape) if self.needs_grad[1] else None
        return ga, gb


class Div(Function):
    def forward(self, a, b):
        self.saved_a, self.saved_b = a, b
        return a / b

    def backward(self, grad):
        a, b = self.saved_a, self.saved_b
        ga = _unbroadcast(grad / b, a.shape) if self.needs_grad[0] else None
        gb = _unbroadcast(-grad * a / (b * b), b.shape) if self.needs_grad[1] else None
        return ga, gb


class Pow(Function):
    def forward(self, a, exponent):
        self.saved_a, self.exponent = a, exponent
        return np.power(a, exponent)

    def backward(self, grad):
        a, p = self.saved_a, self.exponent
        return (grad * p * np.power(a, p - 1.0),)


class Exp(Function):
    def forward(self, a):
        self.saved_out = np.exp(a)
        return self.saved_out

    def backward(self, grad):
        return (grad * self.saved_out,)


class Log(Function):
    def forward(self, a):
        self.saved_a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.saved_a,)


class Abs(Function):
    def forward(self, a):
        self.saved_sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad):
        return (grad * self.saved_sign,)


class Sigmoid(Function):
    def forward(self, a):
        # split by sign so neither branch overflows
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        self.saved_out = out
        return out

    def backward(self, grad):
        s = self.saved_out
        return (grad * s * (1.0 - s),)


class Tanh(Function):
    def forward(self, a):
        self.saved_out = np.tanh(a)
        return self.saved_out

    def backward(self, grad):
        t = self.saved_out
        return (grad * (1.0 - t * t),)


class Clamp(Function):
    def forward(self, a, low, high):
        self.saved_pass = (a >= low) & (a <= high)
        return np.clip(a, low, high)

    def backward(self, grad):
        return (grad * self.saved_pass,)


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            axes = sorted(a % len(self.in_shape) for a in np.atleast_1d(self.axis))
            for axis in axes:
                grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, self.in_shape),)


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a, axes):
        self.axes = tuple(axes)
        return np.ascontiguousarray(a.transpose(self.axes))

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.axes)),)


# ==================== Layer Primitives ====================

class Conv2d(Function):
    def forward(self, x, w, b, stride, padding):
        if x.ndim != 4 or w.ndim != 4:
            raise ValueError(f'conv2d expects 4-D input and weight, got {x.shape} and {w.shape}')
        if x.shape[1] != w.shape[1]:
            raise ValueError(
                f'conv2d: channel axis (1) of input has {x.shape[1]} but weight expects {w.shape[1]}')
        if b.shape != (w.shape[0],):
            raise ValueError(f'conv2d: bias axis (0) has {b.shape} but weight has {w.shape[0]} output channels')
        kh, kw = w.shape[2], w.shape[3]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f'conv2d: kernel axes (2, 3) must be odd, got {kh}x{kw}')
        (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
        n, _, h, wd = x.shape
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (wd + 2 * pw - kw) // sw + 1
        if ho < 1:
            raise ValueError(f'conv2d: height axis (2) of size {h} too small for kernel {kh}')
        if wo < 1:
            raise ValueError(f'conv2d: width axis (3) of size {wd} too small for kernel {kw}')

        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        out = np.zeros((n, ho, wo, w.shape[0]))
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
                out += np.tensordot(patch, w[:, :, i, j], axes=([1], [1]))
        self.saved_xp, self.saved_w = xp, w
        self.geometry = (x.shape, (sh, sw), (ph, pw), (ho, wo))
        return out.transpose(0, 3, 1, 2) + b[None, :, None, None]

    def backward(self, grad):
        xp, w = self.saved_xp, self.saved_w
        x_shape, (sh, sw), (ph, pw), (ho, wo) = self.geometry
        kh, kw = w.shape[2], w.shape[3]
        gxp = np.zeros_like(xp) if self.needs_grad[0] else None
        gw = np.zeros_like(w) if self.needs_grad[1] else None
        for i in range(kh):
            for j in range(kw):
                window = (slice(None), slice(None),
                          slice(i, i + sh * (ho - 1) + 1, sh), slice(j, j + sw * (wo - 1) + 1, sw))
                if gw is not None:
                    gw[:, :, i, j] = np.tensordot(grad, xp[window], axes=([0, 2, 3], [0, 2, 3]))
                if gxp is not None:
                    gxp[window] += np.tensordot(grad, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph:ph + x_shape[2], pw:pw + x_shape[3]] if gxp is not None else None
        gb = grad.sum(axis=(0, 2, 3)) if self.needs_grad[2] else None
        return gx, gw, gb


class ConvTranspose2d(Function):
    def forward(self, y, w, b, stride, padding):
        if y.ndim != 4 or w.ndim != 4:
            raise ValueError(f'conv_transpose2d expects 4-D input and weight, got {y.shape} and {w.shape}')
        if y.shape[1] != w.shape[0]:
            raise ValueError(
                f'conv_transpose2d: channel axis (1) of input has {y.shape[1]} but weight expects {w.shape[0]}')
        if b.shape != (w.shape[1],):
            raise ValueError(f'conv_transpose2d: bias axis (0) has {b.shape} but weight has {w.shape[1]} output channels')
        (sh, sw), (ph, pw) = _pair(stride), _pair(padding)
        if sh not in (1, 2) or sw not in (1, 2):
            raise ValueError(f'conv_transpose2d: stride must be 1 or 2 per axis, got {(sh, sw)}')
        n, _, h, wd = y.shape
        kh, kw = w.shape[2], w.shape[3]
        hf, wf = sh * (h - 1) + kh, sw * (wd - 1) + kw
        ho, wo = hf - 2 * ph, wf - 2 * pw
        if ho < 1:
            raise ValueError(f'conv_transpose2d: height axis (2) output would be {ho}')
        if wo < 1:
            raise ValueError(f'conv_transpose2d: width axis (3) output would be {wo}')

        full = np.zeros((n, w.shape[1], hf, wf))
        for i in range(kh):
            for j in range(kw):
                full[:, :, i:i + sh * (h - 1) + 1:sh, j:j + sw * (wd - 1) + 1:sw] += \
                    np.tensordot(y, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        self.saved_y, self.saved_w = y, w
        self.geometry = ((sh, sw), (ph, pw), (hf, wf), (ho, wo))
        return full[:, :, ph:ph + ho, pw:pw + wo] + b[None, :, None, None]

    def backward(self, grad):
        y, w = self.saved_y, self.saved_w
        (sh, sw), (ph, pw), (hf, wf), (ho, wo) = self.geometry
        n, _, h, wd = y.shape
        kh, kw = w.shape[2], w.shape[3]
        full = np.zeros((n, w.shape[1], hf, wf))
        full[:, :, ph:ph + ho, pw:pw + wo] = grad
        gy = np.zeros_like(y) if self.needs_grad[0] else None
        gw = np.zeros_like(w) if self.needs_grad[1] else None
        for i in range(kh):
            for j in range(kw):
                window = full[:, :, i:i + sh * (h - 1) + 1:sh, j:j + sw * (wd - 1) + 1:sw]
                if gy is not None:
                    gy += np.tensordot(window, w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                if gw is not None:
                    gw[:, :, i, j] = np.tensordot(y, window, axes=([0, 2, 3], [0, 2, 3]))
        gb = grad.sum(axis=(0, 2, 3)) if self.needs_grad[2] else None
        return gy, gw, gb


class BatchedMatmul(Function):
    def forward(self, a, b):
        if a.ndim < 3 or b.ndim < 3:
            raise ValueError(f'batched_matmul expects [..., M, K] and [..., K, N], got {a.shape} and {b.shape}')
        if a.shape[:-2] != b.shape[:-2]:
            raise ValueError(f'batched_matmul: leading axes differ, {a.shape[:-2]} vs {b.shape[:-2]}')
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f'batched_matmul: inner axis K differs, {a.shape[-1]} vs {b.shape[-2]}')
        self.saved_a, self.saved_b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved_a, self.saved_b
        ga = np.matmul(grad, np.swapaxes(b, -1, -2)) if self.needs_grad[0] else None
        gb = np.matmul(np.swapaxes(a, -1, -2), grad) if self.needs_grad[1] else None
        return ga, gb


class SoftmaxLastdim(Function):
    def forward(self, x):
        shifted = np.exp(x - x.max(axis=-1, keepdims=True))
        self.saved_out = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.saved_out

    def backward(self, grad):
        s = self.saved_out
        return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


def _normalized_grad(gxhat, xhat, inv_std, axes):
    """Input gradient of (x - mean) * inv_std with statistics over `axes`."""
    count = int(np.prod([gxhat.shape[a] for a in axes]))
    return (inv_std / count) * (count * gxhat
                                - gxhat.sum(axis=axes, keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))


class LayerNormChannels(Function):
    def forward(self, x, gamma, beta, eps):
        if x.ndim != 4:
            raise ValueError(f'layernorm_channels expects [N, C, H, W], got {x.shape}')
        if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ValueError(f'layernorm_channels: gamma/beta must have shape ({x.shape[1]},)')
        mean = x.mean(axis=1, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        self.saved_xhat, self.saved_inv_std, self.saved_gamma = xhat, inv_std, gamma
        return gamma[None, :, None, None] * xhat + beta[None, :, None, None]

    def backward(self, grad):
        xhat, inv_std, gamma = self.saved_xhat, self.saved_inv_std, self.saved_gamma
        gx = None
        if self.needs_grad[0]:
            gx = _normalized_grad(grad * gamma[None, :, None, None], xhat, inv_std, (1,))
        ggamma = (grad * xhat).sum(axis=(0, 2, 3)) if self.needs_grad[1] else None
        gbeta = grad.sum(axis=(0, 2, 3)) if self.needs_grad[2] else None
        return gx, ggamma, gbeta


class PReLU(Function):
    def forward(self, x, alpha):
        if x.ndim >= 2:
            if alpha.shape != (x.shape[1],):
                raise ValueError(f'prelu: alpha must have one value per channel ({x.shape[1]}), got {alpha.shape}')
            slope = alpha.reshape((1, -1) + (1,) * (x.ndim - 2))
        else:
            if alpha.size != 1:
                raise ValueError(f'prelu: 1-D input takes a single alpha, got {alpha.shape}')
            slope = alpha.reshape(1)
        positive = x > 0
        self.saved_x, self.saved_positive, self.saved_slope = x, positive, slope
        self.alpha_shape = alpha.shape
        return np.where(positive, x, slope * x)

    def backward(self, grad):
        x, positive, slope = self.saved_x, self.saved_positive, self.saved_slope
        gx = np.where(positive, grad, slope * grad) if self.needs_grad[0] else None
        galpha = None
        if self.needs_grad[1]:
            contrib = np.where(positive, 0.0, grad * x)
            if x.ndim >= 2:
                galpha = contrib.sum(axis=tuple(a for a in range(x.ndim) if a != 1))
            else:
                galpha = contrib.sum().reshape(self.alpha_shape)
        return gx, galpha


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer."""
    running_mean: np.ndarray
    running_var: np.ndarray
    num_batches: int = 0

    @classmethod
    def create(cls, channels):
        return cls(np.zeros(channels), np.ones(channels))


class BatchNorm2d(Function):
    def forward(self, x, gamma, beta, state, training, momentum, eps):
        if x.ndim != 4:
            raise ValueError(f'batchnorm2d expects [N, C, H, W], got {x.shape}')
        count = x.shape[0] * x.shape[2] * x.shape[3]
        self.training = training
        if training:
            if count < 2:
                raise ValueError(f'batchnorm2d: training needs N*H*W >= 2, got {count}')
            mean = x.mean(axis=(0, 2, 3), keepdims=True)
            var = ((x - mean) ** 2).mean(axis=(0, 2, 3), keepdims=True)
            unbiased = var.reshape(-1) * count / (count - 1)
            state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mean.reshape(-1)
            state.running_var = (1.0 - momentum) * state.running_var + momentum * unbiased
            state.num_batches += 1
        else:
            mean = state.running_mean.reshape(1, -1, 1, 1)
            var = state.running_var.reshape(1, -1, 1, 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        self.saved_xhat, self.saved_inv_std, self.saved_gamma = xhat, inv_std, gamma
        return gamma[None, :, None, None] * xhat + beta[None, :, None, None]

    def backward(self, grad):
        xhat, inv_std, gamma = self.saved_xhat, self.saved_inv_std, self.saved_gamma
        gx = None
        if self.needs_grad[0]:
            gxhat = grad * gamma[None, :, None, None]
            if self.training:
                gx = _normalized_grad(gxhat, xhat, inv_std, (0, 2, 3))
            else:
                gx = gxhat * inv_std
        ggamma = (grad * xhat).sum(axis=(0, 2, 3)) if self.needs_grad[1] else None
        gbeta = grad.sum(axis=(0, 2, 3)) if self.needs_grad[2] else None
        return gx, ggamma, gbeta


# ==================== Functional Interface ====================

def conv2d(input, weight, bias, stride=1, padding=0):
    """
    2-D cross-correlation.

    Args:
        input: Tensor [N, Cin, H, W]
        weight: Tensor [Cout, Cin, kh, kw] with odd kernel sizes
        bias: Tensor [Cout]
        stride: int or (sh, sw)
        padding: int or (ph, pw)

    Returns:
        Tensor [N, Cout, H', W'] with H' = floor((H + 2*ph - kh) / sh) + 1
    """
    return Conv2d.apply(input, weight, bias, stride=stride, padding=padding)


def conv_transpose2d(input, weight, bias, stride=1, padding=0):
    """
    Transposed convolution, the exact adjoint of conv2d with the same weight.

    Args:
        input: Tensor [N, Cin, H, W]
        weight: Tensor [Cin, Cout, kh, kw]
        bias: Tensor [Cout]
        stride: 1 or 2 (int or pair)
        padding: int or pair

    Returns:
        Tensor [N, Cout, stride*(H-1) + kh - 2*padding, ...]
    """
    return ConvTranspose2d.apply(input, weight, bias, stride=stride, padding=padding)


def batched_matmul(a, b):
    """Per-channel matrix product of [..., M, K] and [..., K, N]."""
    return BatchedMatmul.apply(a, b)


def softmax_lastdim(x):
    """Softmax over the last axis with max subtraction."""
    return SoftmaxLastdim.apply(x)


def layernorm_channels(x, gamma, beta, eps=1e-5):
    """Normalise [N, C, H, W] over the channel axis at every location, then scale and shift."""
    return LayerNormChannels.apply(x, gamma, beta, eps=eps)


def prelu(x, alpha):
    """x where x > 0, alpha[c] * x elsewhere (channel axis 1)."""
    return PReLU.apply(x, alpha)


def batchnorm2d(x, gamma, beta, state, training, momentum=0.1, eps=1e-5):
    """
    Batch normalisation over (N, H, W) per channel.

    Training mode normalises with batch statistics and folds them into `state`
    with the given momentum; eval mode uses the running statistics.

    Raises:
        ValueError: If N*H*W < 2 in training mode
    """
    return BatchNorm2d.apply(x, gamma, beta, state=state, training=training,
                             momentum=momentum, eps=eps)


def backward(loss):
    """
    Populate .grad of every requires_grad leaf reachable from a scalar loss.

    Gradients accumulate into existing .grad buffers. The recorded graph is
    consumed: calling backward twice on the same loss raises RuntimeError.

    Args:
        loss: Scalar Tensor

    Raises:
        ValueError: If loss is not a scalar or does not depend on any parameter
    """
    if loss.data.size != 1:
        raise ValueError(f'backward() needs a scalar loss, got shape {loss.shape}')
    if not loss.requires_grad:
        raise ValueError('backward(): loss does not depend on any tensor with requires_grad')
    if loss._ctx is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return

    graph = Graph(loss)
    pending: Dict[int, np.ndarray] = {loss._ctx.seq: np.ones_like(loss.data)}
    for fn in reversed(graph.records):
        if fn.consumed:
            raise RuntimeError('backward() called on a graph that was already consumed')
        grad_out = pending.pop(fn.seq, None)
        if grad_out is None:
            fn.release()
            continue
        input_grads = fn.backward(grad_out)
        for tensor, grad, needed in zip(fn.inputs, input_grads, fn.needs_grad):
            if grad is None or not needed:
                continue
            if tensor._ctx is None:
                grad = np.array(grad, dtype=np.float64)
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad
            else:
                key = tensor._ctx.seq
                pending[key] = grad if key not in pending else pending[key] + grad
        fn.release()


# ==================== Optimisation ====================

@dataclass
class AdamState:
    """First/second moment buffers and the step counter of Adam."""
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def create(cls, params):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One bias-corrected Adam update, in place on params.

    Args:
        params: Sequence of leaf Tensors
        grads: Matching sequence of gradient arrays (None counts as zero)
        state: AdamState with moments shaped like params
        lr: Learning rate

    Raises:
        ValueError: If a moment or gradient shape differs from its parameter
    """
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError(f'adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment buffers')
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for index, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape or state.m[index].shape != param.shape:
            raise ValueError(f'adam_step: parameter {index} has shape {param.shape}, '
                             f'grad {grad.shape}, moment {state.m[index].shape}')
        state.m[index] = beta1 * state.m[index] + (1.0 - beta1) * grad
        state.v[index] = beta2 * state.v[index] + (1.0 - beta2) * grad * grad
        m_hat = state.m[index] / correction1
        v_hat = state.v[index] / correction2
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


class Adam:
    """
    Adam optimizer over a fixed, ordered set of parameters.

    Args:
        params: Iterable of Tensors, or a dict name -> Tensor
        lr: Initial learning rate (mutable attribute, adjusted by schedulers)
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if isinstance(params, dict):
            params = list(params.values())
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState.create(self.params)

    def zero_grad(self):
        for param in self.params:
            param.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr,
                  self.beta1, self.beta2, self.eps)


# ==================== Verification ====================

def grad_check(f, x, h=1e-5):
    """
    Compare the analytic gradient of a scalar function with central differences.

    Args:
        f: Callable Tensor -> scalar Tensor
        x: Point of evaluation (Tensor or array)
        h: Finite-difference step

    Returns:
        Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    """
    base = np.array(as_tensor(x).data, dtype=np.float64)
    point = Tensor(base, requires_grad=True)
    backward(f(point))
    analytic = point.grad if point.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    with no_grad():
        for index in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[index] = base[index] + h
            upper = f(Tensor(shifted)).item()
            shifted[index] = base[index] - h
            lower = f(Tensor(shifted)).item()
            numeric[index] = (upper - lower) / (2.0 * h)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0


def count_parameters(params: Union[Dict[str, Tensor], Iterable[Tensor]]):
    """Total number of scalar entries in a parameter collection."""
    values = params.values() if isinstance(params, dict) else params
    return int(sum(p.size for p in values))
