"""Dense tensor engine with reverse-mode differentiation.

A Tensor wraps a numpy array (f64 by default, f32 allowed for speed) and
records the operations applied to it so that ``backward()`` can replay the
graph in reverse topological order. Only the kernels the model actually
needs are implemented: matmul, standard/grouped/depthwise 2D convolution,
max-pooling, softmax, layer normalization, GELU/ReLU, slicing and channel
concatenation, plus the usual arithmetic glue.

All operations are pure: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ContractError, GeometryError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2D convolution: kernel, stride, symmetric zero padding,
    channel groups. Depthwise is groups == in_channels == out_channels."""

    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if min(self.kernel_h, self.kernel_w, self.stride, self.groups,
               self.in_channels, self.out_channels) < 1 or self.padding < 0:
            raise ContractError(f"bad conv spec: {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ContractError(
                f"channels ({self.in_channels}, {self.out_channels}) not divisible "
                f"by groups ({self.groups})")

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        """Output extents: floor((H + 2p - k) / s) + 1 per axis."""
        if h + 2 * self.padding < self.kernel_h or w + 2 * self.padding < self.kernel_w:
            raise GeometryError(
                f"input {h}x{w} with padding {self.padding} smaller than kernel "
                f"{self.kernel_h}x{self.kernel_w}")
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        return oh, ow


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach grad.shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Node of the autograd graph."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward):
        out = Tensor(data, dtype=data.dtype)
        if any(p.requires_grad or p._parents for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # ---- backward pass ---------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    # ---- arithmetic ------------------------------------------------------

    @staticmethod
    def _wrap(x, like: "Tensor") -> "Tensor":
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=like.data.dtype))

    def __add__(self, other):
        other = Tensor._wrap(other, self)

        def back(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(g, other.shape))
        return Tensor._from_op(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        def back(g):
            self._accum(-g)
        return Tensor._from_op(-self.data, (self,), back)

    def __sub__(self, other):
        return self + (-Tensor._wrap(other, self))

    def __rsub__(self, other):
        return Tensor._wrap(other, self) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other, self)

        def back(g):
            self._accum(_unbroadcast(g * other.data, self.shape))
            other._accum(_unbroadcast(g * self.data, other.shape))
        return Tensor._from_op(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other, self)

        def back(g):
            self._accum(_unbroadcast(g / other.data, self.shape))
            other._accum(_unbroadcast(-g * self.data / (other.data ** 2), other.shape))
        return Tensor._from_op(self.data / other.data, (self, other), back)

    def __rtruediv__(self, other):
        return Tensor._wrap(other, self) / self

    def __matmul__(self, other):
        return matmul(self, other)

    def pow(self, exponent: float):
        def back(g):
            self._accum(g * exponent * self.data ** (exponent - 1))
        return Tensor._from_op(self.data ** exponent, (self,), back)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def back(g):
            self._accum(g * 0.5 / out_data)
        return Tensor._from_op(out_data, (self,), back)

    def exp(self):
        out_data = np.exp(self.data)

        def back(g):
            self._accum(g * out_data)
        return Tensor._from_op(out_data, (self,), back)

    def log(self):
        def back(g):
            self._accum(g / self.data)
        return Tensor._from_op(np.log(self.data), (self,), back)

    # ---- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def back(g):
            self._accum(g.reshape(old))
        return Tensor._from_op(self.data.reshape(shape), (self,), back)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def back(g):
            self._accum(g.transpose(inv))
        return Tensor._from_op(self.data.transpose(axes), (self,), back)

    def __getitem__(self, key):
        def back(g):
            gx = np.zeros_like(self.data)
            np.add.at(gx, key, g)
            self._accum(gx)
        return Tensor._from_op(self.data[key], (self,), back)

    def sum(self, axis=None, keepdims: bool = False):
        def back(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.shape).copy())
        return Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims),
                               (self,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ---- activations -----------------------------------------------------

    def relu(self):
        mask = self.data > 0

        def back(g):
            self._accum(g * mask)
        return Tensor._from_op(np.where(mask, self.data, 0.0), (self,), back)

    def gelu(self):
        """Exact Gaussian-CDF GELU: x * Phi(x)."""
        x = self.data
        phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))

        def back(g):
            dens = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
            self._accum(g * (phi + x * dens))
        return Tensor._from_op(x * phi, (self,), back)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    tensors = tuple(tensors)

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece)
    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis),
                           tensors, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the two trailing axes."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul inner mismatch: {a.shape} @ {b.shape}")

    def back(g):
        a._accum(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        b._accum(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))
    return Tensor._from_op(a.data @ b.data, (a, b), back)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-stabilized softmax over the trailing axis."""
    if not np.isfinite(x.data).all():
        raise ContractError("softmax_rows: non-finite input")
    shift = Tensor(x.data.max(axis=-1, keepdims=True))  # constant, no grad
    e = (x - shift).exp()
    return e / e.sum(axis=-1, keepdims=True)


def layernorm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the trailing (channel) axis to mean 0 / var 1, then affine."""
    if eps <= 0:
        raise ContractError("layernorm: eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gain + shift


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep.astype(x.data.dtype))


# ---- convolution and pooling --------------------------------------------


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, H, W) -> view (N, C, OH, OW, kh, kw)."""
    v = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Grouped 2D convolution. weight is (C_out, C_in/groups, kh, kw)."""
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ContractError(f"conv2d: input {x.shape} does not match spec {spec}")
    cig = spec.in_channels // spec.groups
    cog = spec.out_channels // spec.groups
    wshape = (spec.out_channels, cig, spec.kernel_h, spec.kernel_w)
    if weight.shape != wshape:
        raise ContractError(f"conv2d: weight {weight.shape}, expected {wshape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ContractError(f"conv2d: bias {bias.shape}, expected ({spec.out_channels},)")

    n, _, h, w = x.shape
    oh, ow = spec.out_size(h, w)
    p, s = spec.padding, spec.stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = _windows(xp, spec.kernel_h, spec.kernel_w, s)
    wing = win.reshape(n, spec.groups, cig, oh, ow, spec.kernel_h, spec.kernel_w)
    wg = weight.data.reshape(spec.groups, cog, cig, spec.kernel_h, spec.kernel_w)
    out = np.einsum("ngcpqkl,gockl->ngopq", wing, wg, optimize=True)
    out = out.reshape(n, spec.out_channels, oh, ow)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gg = g.reshape(n, spec.groups, cog, oh, ow)
        weight._accum(
            np.einsum("ngopq,ngcpqkl->gockl", gg, wing, optimize=True).reshape(wshape))
        gwin = np.einsum("ngopq,gockl->ngcpqkl", gg, wg, optimize=True)
        gwin = gwin.reshape(n, spec.in_channels, oh, ow, spec.kernel_h, spec.kernel_w)
        gxp = np.zeros((n, spec.in_channels, h + 2 * p, w + 2 * p), dtype=x.data.dtype)
        for k in range(spec.kernel_h):
            for l in range(spec.kernel_w):
                gxp[:, :, k:k + s * (oh - 1) + 1:s,
                    l:l + s * (ow - 1) + 1:s] += gwin[..., k, l]
        x._accum(gxp[:, :, p:p + h, p:p + w] if p else gxp)
        if bias is not None:
            bias._accum(g.sum(axis=(0, 2, 3)))
    return Tensor._from_op(out, parents, back)


def maxpool2d(x: Tensor, window: int, stride: int) -> Tensor:
    """Max pooling; the gradient flows to the first (row-major) argmax of
    each window."""
    if x.ndim != 4:
        raise ContractError(f"maxpool2d: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise GeometryError(f"pool window {window} exceeds input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    win = _windows(x.data, window, window, stride).reshape(n, c, oh, ow, -1)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gx = np.zeros_like(x.data)
        ni, ci, pi, qi = np.indices(idx.shape)
        rows = pi * stride + idx // window
        cols = qi * stride + idx % window
        np.add.at(gx, (ni, ci, rows, cols), g)
        x._accum(gx)
    return Tensor._from_op(out, (x,), back)
