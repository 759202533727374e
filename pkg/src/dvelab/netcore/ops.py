"""Differentiable kernels.

Every op computes its value with plain numpy and, when a tape is supplied,
records a backward rule.  With ``tape=None`` the same kernel runs without
recording and returns a bare ndarray, which is the fast path used during
rollout collection.  Node and ndarray inputs can be mixed freely; ndarrays
are constants.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimMismatchError
from .tape import Node, Tape, val


def _grad_to(x, g):
    if isinstance(x, Node):
        x.add_grad(g)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _outer_t(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """g.T @ x generalized to 1-D operands (outer product)."""
    if g.ndim == 1:
        return np.outer(g, x)
    return g.T @ x


def _sum_rows(g: np.ndarray) -> np.ndarray:
    return g if g.ndim == 1 else g.sum(axis=0)


def constant(tape: Tape | None, value):
    """Wrap a value as a non-differentiable leaf (or pass through untaped)."""
    value = np.asarray(value, dtype=np.float64)
    return tape.add(value) if tape is not None else value


def param_leaf(tape: Tape | None, pv, name: str):
    """Leaf bound to a named ParamVector entry; backward adds into pv.grads."""
    value = pv.view(name)
    if tape is None:
        return value
    gview = pv.grad_view(name)

    def bw(g):
        np.add(gview, g, out=gview)

    return tape.add(value, bw)


def affine(tape, x, W, b):
    """y = x @ W.T + b with W of shape (out, in)."""
    xv, Wv, bv = val(x), val(W), val(b)
    if xv.shape[-1] != Wv.shape[1] or bv.shape[0] != Wv.shape[0]:
        raise DimMismatchError(
            f"affine: x{xv.shape} W{Wv.shape} b{bv.shape}")
    y = xv @ Wv.T + bv
    if tape is None:
        return y

    def bw(g):
        _grad_to(x, g @ Wv)
        _grad_to(W, _outer_t(g, xv))
        _grad_to(b, _sum_rows(g))

    return tape.add(y, bw)


def _unary(tape, x, y, dfn):
    if tape is None:
        return y

    def bw(g):
        _grad_to(x, g * dfn())

    return tape.add(y, bw)


def tanh(tape, x):
    y = np.tanh(val(x))
    return _unary(tape, x, y, lambda: 1.0 - y * y)


def sigmoid(tape, x):
    y = 1.0 / (1.0 + np.exp(-val(x)))
    return _unary(tape, x, y, lambda: y * (1.0 - y))


def exp(tape, x):
    y = np.exp(val(x))
    return _unary(tape, x, y, lambda: y)


def square(tape, x):
    xv = val(x)
    return _unary(tape, x, np.square(xv), lambda: 2.0 * xv)


def reciprocal(tape, x):
    xv = val(x)
    y = 1.0 / xv
    return _unary(tape, x, y, lambda: -y * y)


def log_clipped(tape, x, eps: float):
    """log(max(x, eps)); gradient is zero where the floor binds."""
    xv = val(x)
    clipped = np.maximum(xv, eps)
    y = np.log(clipped)
    return _unary(tape, x, y, lambda: np.where(xv > eps, 1.0 / clipped, 0.0))


def scale(tape, x, s: float):
    y = val(x) * s
    return _unary(tape, x, y, lambda: s)


def add(tape, a, b):
    av, bv = val(a), val(b)
    y = av + bv
    if tape is None:
        return y

    def bw(g):
        _grad_to(a, _unbroadcast(g, av.shape))
        _grad_to(b, _unbroadcast(g, bv.shape))

    return tape.add(y, bw)


def sub(tape, a, b):
    av, bv = val(a), val(b)
    y = av - bv
    if tape is None:
        return y

    def bw(g):
        _grad_to(a, _unbroadcast(g, av.shape))
        _grad_to(b, -_unbroadcast(g, bv.shape))

    return tape.add(y, bw)


def mul(tape, a, b):
    av, bv = val(a), val(b)
    y = av * bv
    if tape is None:
        return y

    def bw(g):
        _grad_to(a, _unbroadcast(g * bv, av.shape))
        _grad_to(b, _unbroadcast(g * av, bv.shape))

    return tape.add(y, bw)


def minimum(tape, a, b):
    """Elementwise min; on ties the gradient goes to ``a``."""
    av, bv = val(a), val(b)
    take_a = av <= bv
    y = np.where(take_a, av, bv)
    if tape is None:
        return y

    def bw(g):
        _grad_to(a, _unbroadcast(g * take_a, av.shape))
        _grad_to(b, _unbroadcast(g * ~take_a, bv.shape))

    return tape.add(y, bw)


def clip(tape, x, lo: float, hi: float):
    """Clamp to [lo, hi]; gradient passes through strictly inside the range."""
    xv = val(x)
    y = np.clip(xv, lo, hi)
    inside = (xv > lo) & (xv < hi)
    return _unary(tape, x, y, lambda: inside.astype(np.float64))


def sum_axis(tape, x, axis: int, keepdims: bool = False):
    xv = val(x)
    y = xv.sum(axis=axis, keepdims=keepdims)
    if tape is None:
        return y

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _grad_to(x, np.broadcast_to(g, xv.shape).copy())

    return tape.add(y, bw)


def vsum(tape, x):
    xv = val(x)
    y = np.asarray(xv.sum())
    if tape is None:
        return y

    def bw(g):
        _grad_to(x, np.broadcast_to(g, xv.shape).copy())

    return tape.add(y, bw)


def mean(tape, x):
    xv = val(x)
    n = xv.size
    y = np.asarray(xv.mean())
    if tape is None:
        return y

    def bw(g):
        _grad_to(x, np.broadcast_to(g / n, xv.shape).copy())

    return tape.add(y, bw)


def mean_axis(tape, x, axis: int):
    xv = val(x)
    n = xv.shape[axis]
    y = xv.mean(axis=axis)
    if tape is None:
        return y

    def bw(g):
        g = np.expand_dims(g, axis) / n
        _grad_to(x, np.broadcast_to(g, xv.shape).copy())

    return tape.add(y, bw)


def softmax(tape, x, axis: int = -1):
    xv = val(x)
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    if tape is None:
        return y

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _grad_to(x, (g - dot) * y)

    return tape.add(y, bw)


def log_softmax(tape, x, axis: int = -1):
    xv = val(x)
    shifted = xv - xv.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    if tape is None:
        return y
    p = np.exp(y)

    def bw(g):
        _grad_to(x, g - p * g.sum(axis=axis, keepdims=True))

    return tape.add(y, bw)


def take_per_row(tape, x, idx):
    """x[(row, idx[row])] for each row of a (T, A) matrix; returns (T,)."""
    xv = val(x)
    rows = np.arange(xv.shape[0])
    idx = np.asarray(idx, dtype=int)
    y = xv[rows, idx]
    if tape is None:
        return y

    def bw(g):
        gx = np.zeros_like(xv)
        gx[rows, idx] = g
        _grad_to(x, gx)

    return tape.add(y, bw)


def row(tape, x, t: int):
    """Row ``t`` of a 2-D value as a 1-D vector."""
    xv = val(x)
    y = xv[t]
    if tape is None:
        return y

    def bw(g):
        gx = np.zeros_like(xv)
        gx[t] = g
        _grad_to(x, gx)

    return tape.add(y, bw)


def stack(tape, xs, axis: int = 0):
    """Stack a list of equally shaped values along a new axis."""
    vals = [val(x) for x in xs]
    y = np.stack(vals, axis=axis)
    if tape is None:
        return y

    def bw(g):
        for i, x in enumerate(xs):
            _grad_to(x, np.take(g, i, axis=axis))

    return tape.add(y, bw)


def lstm_cell(tape, x, h, c, Wx, Wh, b):
    """Standard LSTM cell, fused into two recorded nodes.

    Gate layout along the 4H axis is [input, forget, candidate, output];
    input/forget/output gates are sigmoid, the candidate is tanh, the cell
    update is elementwise, and hidden = output-gate * tanh(cell).
    Returns (h_new, c_new).
    """
    xv, hv, cv = val(x), val(h), val(c)
    Wxv, Whv, bv = val(Wx), val(Wh), val(b)
    H = hv.shape[-1]
    if Wxv.shape != (4 * H, xv.shape[-1]) or Whv.shape != (4 * H, H) \
            or bv.shape != (4 * H,):
        raise DimMismatchError(
            f"lstm_cell: x{xv.shape} h{hv.shape} Wx{Wxv.shape} Wh{Whv.shape}")
    z = xv @ Wxv.T + hv @ Whv.T + bv
    zi, zf, zg, zo = (z[..., 0:H], z[..., H:2 * H],
                      z[..., 2 * H:3 * H], z[..., 3 * H:4 * H])
    gi = 1.0 / (1.0 + np.exp(-zi))
    gf = 1.0 / (1.0 + np.exp(-zf))
    gg = np.tanh(zg)
    go = 1.0 / (1.0 + np.exp(-zo))
    c_new_v = gf * cv + gi * gg
    tc = np.tanh(c_new_v)
    h_new_v = go * tc
    if tape is None:
        return h_new_v, c_new_v

    def _accum_gate_grads(dz, rows):
        """Push gate pre-activation grads dz (block ``rows``) to inputs."""
        _grad_to(x, dz @ Wxv[rows])
        _grad_to(h, dz @ Whv[rows])
        if isinstance(Wx, Node):
            if Wx.grad is None:
                Wx.grad = np.zeros_like(Wxv)
            Wx.grad[rows] += _outer_t(dz, xv)
        if isinstance(Wh, Node):
            if Wh.grad is None:
                Wh.grad = np.zeros_like(Whv)
            Wh.grad[rows] += _outer_t(dz, hv)
        if isinstance(b, Node):
            if b.grad is None:
                b.grad = np.zeros_like(bv)
            b.grad[rows] += _sum_rows(dz)

    def bw_c(g):
        # g is the full cell gradient: external plus the tanh path pushed
        # here by bw_h, which runs first in reverse order.
        _grad_to(c, g * gf)
        dzi = g * gg * gi * (1.0 - gi)
        dzf = g * cv * gf * (1.0 - gf)
        dzg = g * gi * (1.0 - gg * gg)
        _accum_gate_grads(np.concatenate([dzi, dzf, dzg], axis=-1),
                          slice(0, 3 * H))

    c_new = tape.add(c_new_v, bw_c)

    def bw_h(g):
        c_new.add_grad(g * go * (1.0 - tc * tc))
        _accum_gate_grads(g * tc * go * (1.0 - go), slice(3 * H, 4 * H))

    h_new = tape.add(h_new_v, bw_h)
    return h_new, c_new
