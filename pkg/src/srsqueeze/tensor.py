"""Minimal dense tensor with reverse-mode autodiff.

Only what the SR networks and their losses need: NCHW convolution, ReLU,
pixel (un)shuffle, reflect padding, stride-2 subsampling / zero insertion,
and a handful of elementwise and reduction ops.

Data is float32 unless a float64 array is passed in explicitly (gradient
checks use that). Convolutions accumulate in float64.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_creation = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data) -> np.ndarray:
    # float64 survives only when handed over explicitly as a numpy value;
    # 0-d arithmetic yields np.float64 scalars, which must not be downcast
    if isinstance(data, (np.ndarray, np.float64)) and data.dtype == np.float64:
        return np.asarray(data)
    return np.asarray(data, dtype=np.float32)


class Tensor:
    """An n-d float array that records how it was computed.

    ``_parents`` and ``_backward`` form the graph node; ``_backward`` maps the
    output gradient to one gradient per parent (None where not needed).
    ``_order`` is a global creation counter, so sorting by it recovers the
    execution order of the forward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_order", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._order = next(_creation)
        self.name = name

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by Python scalars")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a = tensor(a)
    if not isinstance(b, Tensor):
        return _result(a.data + b, (a,), lambda g: (g,))
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a = tensor(a)
    if not isinstance(b, Tensor):
        return _result(a.data - b, (a,), lambda g: (g,))
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = tensor(a)
    if not isinstance(b, Tensor):
        return _result(a.data * b, (a,), lambda g: (g * b,))
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _result(x * x, (a,), lambda g: (2 * x * g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g / (2 * out),))


def tabs(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def relu(a: Tensor) -> Tensor:
    x = a.data
    mask = x > 0  # subgradient at exactly 0 is 0
    return _result(np.where(mask, x, 0).astype(x.dtype), (a,), lambda g: (g * mask,))


# -- reductions & shape ----------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    shape, dtype = a.shape, a.dtype
    return _result(np.asarray(a.data.sum(), dtype=dtype), (a,),
                   lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def mean(a: Tensor) -> Tensor:
    shape, dtype, n = a.shape, a.dtype, a.size
    return _result(np.asarray(a.data.mean(), dtype=dtype), (a,),
                   lambda g: (np.broadcast_to(g / n, shape).astype(dtype),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# -- convolution -------------------------------------------------------------

def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> float64 (N, C*kh*kw, ho*wo), rows ordered (c, i, j)."""
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = np.empty((n, c, kh, kw, ho, wo))
    cols[...] = win.transpose(0, 1, 4, 5, 2, 3)
    return cols.reshape(n, c * kh * kw, ho * wo)


def _pad(a: np.ndarray, p: int) -> np.ndarray:
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p))) if p else a


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, input NCHW, weight OIHW, bias O."""
    x, weight = tensor(x), tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if c != i:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {i} (weight shape {weight.shape})")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    if padding < 0 or stride < 1:
        raise ValueError(f"conv2d: need padding >= 0 and stride >= 1, got {padding}, {stride}")
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")

    out_dtype = np.result_type(x.dtype, weight.dtype)
    cols = _im2col(_pad(x.data, padding), kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(o, -1).astype(np.float64)
    out = wmat @ cols
    if bias is not None:
        out += bias.data.astype(np.float64)[:, None]
    out = out.reshape(n, o, ho, wo).astype(out_dtype)

    def backward_fn(g):
        g3 = g.reshape(n, o, ho * wo).astype(np.float64)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _conv_input_grad(g, wmat, (n, c, h, w), (kh, kw), stride, padding).astype(x.dtype)
        if weight.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape).astype(weight.dtype)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2)).astype(bias.dtype)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _result(out, parents, backward_fn)


def _conv_input_grad(g: np.ndarray, wmat: np.ndarray, xshape, ksize, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = xshape
    kh, kw = ksize
    o, ho, wo = g.shape[1:]
    if stride == 1 and padding <= kh - 1 and padding <= kw - 1 and kh == kw:
        # full correlation of the output grad with the flipped, transposed kernel
        q = kh - 1 - padding
        wf = wmat.reshape(o, c, kh, kw)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
        gcols = _im2col(_pad(g, q), kh, kw, 1, h, w)
        return (wf @ gcols).reshape(n, c, h, w)
    gcols = (wmat.T @ g.reshape(n, o, ho * wo).astype(np.float64)).reshape(n, c, kh, kw, ho, wo)
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    for di in range(kh):
        for dj in range(kw):
            gxp[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += gcols[:, :, di, dj]
    return gxp[:, :, padding:padding + h, padding:padding + w]


# -- rearrangements ----------------------------------------------------------

def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r)."""
    n, cr2, h, w = x.shape
    if r < 1 or cr2 % (r * r):
        raise ValueError(f"pixel_shuffle: {cr2} channels not divisible by r^2 = {r * r}")
    c = cr2 // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)
    return _result(out, (x,), lambda g: (_unshuffle(g, r),))


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, hr, wr = a.shape
    if hr % r or wr % r:
        raise ValueError(f"pixel_unshuffle: spatial dims {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    return a.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, cr2, h, w = a.shape
    c = cr2 // (r * r)
    return a.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(N, C, H*r, W*r) -> (N, C*r*r, H, W); inverse of pixel_shuffle."""
    return _result(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))


def reflect_index(n: int, p: int) -> np.ndarray:
    """Source index for each of the n + 2p positions of a reflect-padded axis.

    Mirrors about the edge pixels (edge not repeated) and keeps bouncing for
    pads wider than the axis; a length-1 axis just repeats its pixel.
    """
    i = np.arange(-p, n + p)
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.mod(i, period)
    return np.where(i < n, i, period - i)


def pad_reflect(x: Tensor, p: int) -> Tensor:
    """Reflect-pad the two spatial dims of an NCHW tensor by ``p``."""
    if p < 0:
        raise ValueError(f"pad_reflect: pad must be >= 0, got {p}")
    h, w = x.shape[2:]
    if h < 1 or w < 1:
        raise ValueError(f"pad_reflect: empty spatial dims {h}x{w}")
    ih, iw = reflect_index(h, p), reflect_index(w, p)
    out = x.data[:, :, ih][:, :, :, iw]

    def backward_fn(g):
        gh = np.zeros(g.shape[:3] + (w,), dtype=g.dtype)
        np.add.at(gh, (slice(None), slice(None), slice(None), iw), g)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), ih), gh)
        return (gx,)

    return _result(out, (x,), backward_fn)


def subsample2(x: Tensor) -> Tensor:
    """Keep every second row and column (starting at 0)."""
    shape = x.shape

    def backward_fn(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[:, :, ::2, ::2] = g
        return (out,)

    return _result(x.data[:, :, ::2, ::2].copy(), (x,), backward_fn)


def zero_insert2(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Place ``x`` on the even grid of an ``out_hw`` canvas, zeros elsewhere."""
    n, c, h, w = x.shape
    oh, ow = out_hw
    if (oh + 1) // 2 != h or (ow + 1) // 2 != w:
        raise ValueError(f"zero_insert2: {h}x{w} does not subsample {oh}x{ow}")
    out = np.zeros((n, c, oh, ow), dtype=x.dtype)
    out[:, :, ::2, ::2] = x.data
    return _result(out, (x,), lambda g: (g[:, :, ::2, ::2].copy(),))


# -- engine ------------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    # reverse execution order
    nodes.sort(key=lambda t: t._order, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    Intermediate tensors get this pass's gradient in ``.grad`` (overwritten,
    not accumulated), so repeated passes only accumulate on leaves.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward(): loss does not depend on any tensor requiring grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in _topo(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
