"""Differentiable primitives.

Every function takes and returns :class:`~aginet.tensor.Tensor` values. Forward
math is plain numpy; each primitive records a vector-Jacobian closure on the
active tape (if any). Convolutions use NCHW layout and im2col + GEMM.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, active_tape, as_tensor, check_finite

GELU_C = math.sqrt(2.0 / math.pi)  # 0.7978845608028654
GELU_A = 0.044715


def make_op(out: np.ndarray, inputs: Sequence[Tensor], vjp, label: str) -> Tensor:
    """Wrap ``out`` as a Tensor and record ``vjp`` on the active tape."""
    check_finite(out, label)
    t = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None:
        tape.record(t, inputs, vjp, label)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, label: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{label}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_op(out, (a, b), vjp, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    with np.errstate(over="ignore"):
        out = x.data * x.dtype.type(c)
    return make_op(out, (x,), lambda g: (g * x.dtype.type(c),), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return make_op(out, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_op(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU: ``0.5 x (1 + tanh(c (x + 0.044715 x^3)))``, c = sqrt(2/pi)."""
    v = x.data
    c = v.dtype.type(GELU_C)
    a = v.dtype.type(GELU_A)
    t = np.tanh(c * (v + a * v**3))
    out = 0.5 * v * (1 + t)

    def vjp(g):
        d = 0.5 * (1 + t) + 0.5 * v * (1 - t * t) * c * (1 + 3 * a * v * v)
        return (g * d,)

    return make_op(out, (x,), vjp, "gelu")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.abs(x.data)
    return make_op(out, (x,), lambda g: (g * np.sign(x.data),), "abs")


# ---------------------------------------------------------------- reductions

def sum(x: Tensor) -> Tensor:  # noqa: A001
    out = np.sum(x.data).reshape(())
    return make_op(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.mean(x.data).reshape(()).astype(x.dtype)
    return make_op(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),), "mean")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    return mean(abs(sub(pred, target)))


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: (N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-D input, got shape {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.dtype),)

    return make_op(out, (x,), vjp, "global_avg_pool")


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return make_op(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(out, xs, vjp, "concat")


def _shuffle_perm(c: int, n: int) -> np.ndarray:
    return np.arange(c).reshape(n, c // n).T.reshape(-1)


def channel_shuffle(x: Tensor, n: int) -> Tensor:
    """Interleave channel groups: reshape (n, C/n) -> transpose -> flatten.

    Works on any tensor whose axis 1 is the channel axis.
    """
    c = x.shape[1]
    if n < 1 or c % n:
        raise ShapeError(f"channel_shuffle: C={c} not divisible by n={n}")
    perm = _shuffle_perm(c, n)
    inv = np.argsort(perm)
    out = np.take(x.data, perm, axis=1)
    return make_op(out, (x,), lambda g: (np.take(g, inv, axis=1),), "channel_shuffle")


def channel_unshuffle(x: Tensor, n: int) -> Tensor:
    c = x.shape[1]
    if n < 1 or c % n:
        raise ShapeError(f"channel_unshuffle: C={c} not divisible by n={n}")
    perm = _shuffle_perm(c, n)
    inv = np.argsort(perm)
    out = np.take(x.data, inv, axis=1)
    return make_op(out, (x,), lambda g: (np.take(g, perm, axis=1),), "channel_unshuffle")


def upsample_nearest2x(x: Tensor) -> Tensor:
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        n, c, h, w = x.shape
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_op(out, (x,), vjp, "upsample_nearest2x")


# ---------------------------------------------------------------- normalization / affine

def layernorm_channels(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize across C at every (n, h, w) location, then scale/shift per channel."""
    if eps <= 0:
        raise ValueError("layernorm_channels: eps must be positive")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layernorm_channels: C={c} but gamma {gamma.shape}, beta {beta.shape}"
        )
    v = x.data
    mu = v.mean(axis=1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + v.dtype.type(eps))
    xhat = xc * inv
    gshape = (1, c) + (1,) * (v.ndim - 2)
    out = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)
    red = (0,) + tuple(range(2, v.ndim))

    def vjp(g):
        dxhat = g * gamma.data.reshape(gshape)
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_op(out, (x, gamma, beta), vjp, "layernorm_channels")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ w.T + b`` with ``w`` of shape (Dout, Din)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: x {x.shape} (axis 1 = Din) vs w {w.shape} (axis 1 = Din)")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} vs Dout={w.shape[0]}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_op(out, inputs, vjp, "linear")


# ---------------------------------------------------------------- convolution

def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """(N, C, H, W) -> (N, Ho*Wo, C*k*k) patch matrix."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(gcols: np.ndarray, xshape, k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    n, c, h, w = xshape
    g = gcols.reshape(n, ho, wo, c, k, k)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=gcols.dtype)
    for u in range(k):
        for v in range(k):
            out[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += g[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def _check_conv(x: Tensor, w: Tensor, groups: int, label: str, w_lead: int = 0):
    if x.ndim != 4:
        raise ShapeError(f"{label}: x must be N x Cin x H x W, got {x.shape}")
    ws = w.shape[w_lead:]
    if len(ws) != 4:
        raise ShapeError(f"{label}: weight must end in Cout x Cin x k x k, got {w.shape}")
    cout, cin_g, kh, kw = ws
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"{label}: kernel must be square with odd size, got {kh}x{kw}")
    if x.shape[1] != cin_g * groups:
        raise ShapeError(f"{label}: x axis 1 (Cin={x.shape[1]}) != weight axis {w_lead + 1} (Cin/groups={cin_g}) x groups={groups}")
    if cout % groups:
        raise ShapeError(f"{label}: Cout={cout} not divisible by groups={groups}")
    return cout, cin_g, kh


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    Parameters
    ----------
    x : Tensor, shape (N, Cin, H, W)
    w : Tensor, shape (Cout, Cin // groups, k, k)
    bias : Tensor, shape (Cout,), optional
    """
    cout, cin_g, k = _check_conv(x, w, groups, "conv2d")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} vs Cout={cout}")
    n = x.shape[0]
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    kk = cin_g * k * k
    cout_g = cout // groups
    # (g, N*P, K) @ (g, K, Cout_g)
    colsg = cols.reshape(n * ho * wo, groups, kk).transpose(1, 0, 2)
    wg = w.data.reshape(groups, cout_g, kk).transpose(0, 2, 1)
    outg = np.matmul(colsg, wg)
    out = outg.transpose(1, 0, 2).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        go = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, groups, cout_g).transpose(1, 0, 2)
        gw = np.matmul(colsg.transpose(0, 2, 1), go)  # (g, K, Cout_g)
        gw = gw.transpose(0, 2, 1).reshape(w.shape)
        gcols = np.matmul(go, wg.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(n, ho * wo, groups * kk)
        gx = _col2im(gcols, x.shape, k, stride, padding, ho, wo)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_op(out, inputs, vjp, "conv2d")


def conv2d_per_sample(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
                      padding: int = 0) -> Tensor:
    """Convolve sample ``s`` of ``x`` with its own kernel set ``w[s]``.

    ``w`` has shape (N, Cout, Cin, k, k); equivalent to N separate conv2d calls.
    """
    if w.ndim != 5 or w.shape[0] != x.shape[0]:
        raise ShapeError(f"conv2d_per_sample: weight axis 0 ({w.shape[0] if w.ndim else None}) "
                         f"must equal batch axis 0 of x ({x.shape[0]})")
    cout, cin, k = _check_conv(x, w, 1, "conv2d_per_sample", w_lead=1)
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d_per_sample: bias {bias.shape} vs Cout={cout}")
    n = x.shape[0]
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wm = w.data.reshape(n, cout, cin * k * k).transpose(0, 2, 1)
    out = np.matmul(cols, wm)  # (N, P, Cout)
    out = out.transpose(0, 2, 1).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    inputs = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        go = g.reshape(n, cout, ho * wo)  # (N, Cout, P)
        gw = np.matmul(go, cols).reshape(w.shape)
        gcols = np.matmul(go.transpose(0, 2, 1), wm.transpose(0, 2, 1))
        gx = _col2im(gcols, x.shape, k, stride, padding, ho, wo)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_op(out, inputs, vjp, "conv2d_per_sample")
