"""Differentiable primitives.

Each primitive computes its value with numpy and, when a tape is active and
some input requires gradients, records a closure that maps the output
gradient to input gradients.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, active_tape, as_tensor


def _emit(op: str, value: np.ndarray, inputs: tuple, bwd: Callable) -> Tensor:
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, bwd)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.data, b.data
    return _emit("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    av, bv = a.data, b.data
    q = av / bv
    return _emit("div", q, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * q / bv, bv.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data
    return _emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    value = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.asarray(value), (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------- pointwise

def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _emit("exp", e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    v = a.data
    return _emit("log", np.log(v), (a,), lambda g: (g / v,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    r = np.sqrt(a.data)
    return _emit("sqrt", r, (a,), lambda g: (g * 0.5 / r,))


def square(a) -> Tensor:
    a = as_tensor(a)
    v = a.data
    return _emit("square", v * v, (a,), lambda g: (2.0 * g * v,))


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    v = a.data
    return _emit("abs", np.abs(v), (a,), lambda g: (g * np.sign(v),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    v = a.data
    s = 1.0 / (1.0 + np.exp(-v))
    return _emit("softplus", np.logaddexp(0.0, v), (a,), lambda g: (g * s,))


def silu(a) -> Tensor:
    a = as_tensor(a)
    v = a.data
    s = 1.0 / (1.0 + np.exp(-v))
    return _emit("silu", v * s, (a,), lambda g: (g * (s + v * s * (1.0 - s)),))


def magnitude(a, axis: int = 0, eps: float = 1e-12) -> Tensor:
    """Modulus of a packed complex tensor whose ``axis`` holds (real, imag)."""
    a = as_tensor(a)
    if a.shape[axis] != 2:
        raise ShapeError(f"magnitude: axis {axis} of shape {a.shape} is not a (re, im) pair")
    v = a.data
    m = np.sqrt(np.sum(v * v, axis=axis) + eps)
    return _emit("magnitude", m, (a,), lambda g: (np.expand_dims(g / m, axis) * v,))


# ---------------------------------------------------------------- structure

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _emit("reshape", value, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    splits = np.cumsum(sizes)[:-1]
    return _emit("concat", value, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _emit("getitem", np.array(a.data[index]), (a,), bwd)


# ---------------------------------------------------------------- layers

def conv2d(x, w, b=None) -> Tensor:
    """Same-padded, stride-1 2D convolution.

    ``x`` is ``(cin, h, w)`` or ``(n, cin, h, w)``; ``w`` is
    ``(cout, cin, kh, kw)`` with odd kernel sizes.  This is a true
    convolution (kernel flipped), so a centred delta reproduces the kernel.
    """
    x, w = as_tensor(x), as_tensor(w)
    batched = x.ndim == 4
    xv = x.data if batched else x.data[None]
    wv = w.data
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[1] != wv.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    kh, kw = wv.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {w.shape} must have odd spatial size")
    ph, pw = kh // 2, kw // 2
    wf = wv[:, :, ::-1, ::-1]
    xp = np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, cin, h, w, kh, kw
    out = np.einsum("nchwij,ocij->nohw", cols, wf, optimize=True)
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        inputs = (x, w, b)

    def bwd(g):
        gb = g if batched else g[None]
        gw = np.einsum("nchwij,nohw->ocij", cols, gb, optimize=True)[:, :, ::-1, ::-1]
        gp = np.pad(gb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gcols = sliding_window_view(gp, (kh, kw), axis=(2, 3))
        gx = np.einsum("nohwij,ocij->nchw", gcols, wf[:, :, ::-1, ::-1], optimize=True)
        grads = [gx if batched else gx[0], np.ascontiguousarray(gw)]
        if b is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _emit("conv2d", out if batched else out[0], inputs, bwd)


def linear_map(x, forward: Callable, adjoint: Callable, name: str = "linear_map") -> Tensor:
    """Apply a fixed real-linear operator; its adjoint supplies the gradient."""
    x = as_tensor(x)
    return _emit(name, np.asarray(forward(x.data), dtype=np.float64), (x,),
                 lambda g: (np.asarray(adjoint(g), dtype=np.float64),))


# ---------------------------------------------------------------- complex packing

def pack(z: np.ndarray) -> np.ndarray:
    """Complex array ``(...)`` -> real array ``(2, ...)`` holding (real, imag)."""
    z = np.asarray(z)
    return np.stack([z.real, z.imag]).astype(np.float64)


def unpack(r: np.ndarray) -> np.ndarray:
    return r[0] + 1j * r[1]


def complex_linear(x, op: Callable, op_adjoint: Callable, name: str = "complex_linear") -> Tensor:
    """Apply a complex-linear operator to a packed complex tensor.

    Under the real inner product Re<a, b>, the adjoint of a complex-linear
    map is its Hermitian adjoint, so ``op_adjoint`` gives the gradient.
    """
    return linear_map(x, lambda v: pack(op(unpack(v))),
                      lambda g: pack(op_adjoint(unpack(g))), name=name)
