"""Circular kernel rolls with sub-pixel interpolation.

Axis convention (fixed): the second-to-last axis is y (rows), the last axis is
x (columns). A roll by ``(sx, sy)`` gives::

    out[..., u, v] = w[..., (u - sy) mod k, (v - sx) mod k]

so a positive ``sy`` moves rows down and a positive ``sx`` moves columns right.

Sub-pixel rolls blend the four integer rolls around ``(ox, oy)`` with bilinear
weights. The upper neighbour is always ``floor + 1`` (never ``ceil``), which
leaves values unchanged and gives a well-defined right-hand derivative at
integer offsets.
"""

from __future__ import annotations

import numpy as np

from .functional import make_op
from .tensor import ShapeError, Tensor


def roll_int(w: np.ndarray, sx: int, sy: int) -> np.ndarray:
    """Integer circular roll of the trailing k x k axes."""
    return np.roll(w, (int(sy), int(sx)), axis=(-2, -1))


def _roll_index(sx: np.ndarray, sy: np.ndarray, k: int) -> np.ndarray:
    """Flat gather indices, shape sx.shape + (k*k,)."""
    ar = np.arange(k)
    rows = (ar - sy[..., None]) % k
    cols = (ar - sx[..., None]) % k
    return (rows[..., :, None] * k + cols[..., None, :]).reshape(sx.shape + (k * k,))


def roll_int_batched(w: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Roll every leading-axis slice of ``w`` by its own integer shift.

    Parameters
    ----------
    w : ndarray, shape (S, ..., k, k)
    shifts : int ndarray, shape (S, 2), columns ``(sx, sy)``
    """
    shifts = np.asarray(shifts)
    if shifts.shape != (w.shape[0], 2):
        raise ShapeError(f"roll_int_batched: shifts {shifts.shape} but w has {w.shape[0]} leading slices")
    k = w.shape[-1]
    s = w.shape[0]
    flat = w.reshape(s, -1, k * k)
    sx = shifts[:, 0].astype(np.int64) % k
    sy = shifts[:, 1].astype(np.int64) % k
    # at most k*k distinct rolls: one vectorized gather per shift class
    code = sy * k + sx
    out = np.empty_like(flat)
    for c in np.unique(code):
        sel = np.flatnonzero(code == c)
        idx = _roll_index(np.array(c % k), np.array(c // k), k)
        out[sel] = flat[sel][:, :, idx]
    return out.reshape(w.shape)


def roll_int_loop(w: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Per-slice reference for :func:`roll_int_batched`."""
    shifts = np.asarray(shifts)
    return np.stack([roll_int(w[i], shifts[i, 0], shifts[i, 1]) for i in range(w.shape[0])])


def _split(o):
    fl = np.floor(o)
    return fl.astype(np.int64), o - fl


def float_roll(w: np.ndarray, ox: float, oy: float) -> np.ndarray:
    """Bilinear blend of the four integer rolls surrounding ``(ox, oy)``."""
    (fx0,), (fx,) = _split(np.array([ox], dtype=np.float64))
    (fy0,), (fy,) = _split(np.array([oy], dtype=np.float64))
    fx, fy = w.dtype.type(fx), w.dtype.type(fy)
    return ((1 - fx) * (1 - fy) * roll_int(w, fx0, fy0)
            + fx * (1 - fy) * roll_int(w, fx0 + 1, fy0)
            + (1 - fx) * fy * roll_int(w, fx0, fy0 + 1)
            + fx * fy * roll_int(w, fx0 + 1, fy0 + 1))


def float_roll_backward(grad_out: np.ndarray, w: np.ndarray, ox: float, oy: float):
    """Adjoint of :func:`float_roll`; returns ``(grad_w, grad_ox, grad_oy)``.

    The floor terms are treated as locally constant.
    """
    if grad_out.shape != w.shape:
        raise ShapeError(f"float_roll_backward: grad {grad_out.shape} vs w {w.shape}")
    (x0,), (fx,) = _split(np.array([ox], dtype=np.float64))
    (y0,), (fy,) = _split(np.array([oy], dtype=np.float64))
    fx, fy = w.dtype.type(fx), w.dtype.type(fy)
    grad_w = ((1 - fx) * (1 - fy) * roll_int(grad_out, -x0, -y0)
              + fx * (1 - fy) * roll_int(grad_out, -x0 - 1, -y0)
              + (1 - fx) * fy * roll_int(grad_out, -x0, -y0 - 1)
              + fx * fy * roll_int(grad_out, -x0 - 1, -y0 - 1))
    r00 = roll_int(w, x0, y0)
    r10 = roll_int(w, x0 + 1, y0)
    r01 = roll_int(w, x0, y0 + 1)
    r11 = roll_int(w, x0 + 1, y0 + 1)
    grad_ox = float(np.sum(grad_out * ((1 - fy) * (r10 - r00) + fy * (r11 - r01))))
    grad_oy = float(np.sum(grad_out * ((1 - fx) * (r01 - r00) + fx * (r11 - r10))))
    return grad_w, grad_ox, grad_oy


def assemble_rolled_kernel(groups, scales) -> np.ndarray:
    """Scale each rolled group slice by its factor and concatenate along Cin.

    ``groups`` is a sequence of n arrays of shape (Cout, Cin/n, k, k).
    """
    groups = list(groups)
    scales = np.asarray(scales)
    if len(groups) != scales.shape[0]:
        raise ShapeError(f"assemble_rolled_kernel: {len(groups)} groups but {scales.shape[0]} scales")
    first = groups[0].shape
    for i, g in enumerate(groups):
        if g.shape != first:
            raise ShapeError(f"assemble_rolled_kernel: group {i} shape {g.shape} != group 0 shape {first}")
    return np.concatenate([g * g.dtype.type(s) for g, s in zip(groups, scales)], axis=1)


def split_groups(w: np.ndarray, n: int) -> np.ndarray:
    """(Cout, Cin, k, k) -> (n, Cout, Cin/n, k, k)."""
    cout, cin, k, _ = w.shape
    if cin % n:
        raise ShapeError(f"split_groups: Cin={cin} not divisible by n={n}")
    return w.reshape(cout, n, cin // n, k, k).transpose(1, 0, 2, 3, 4)


# ---------------------------------------------------------------- batched, on tape

def _float_roll_terms(base: np.ndarray, ox: np.ndarray, oy: np.ndarray):
    """Four integer rolls of ``base`` (n, M, k*k) for per-(sample, group) offsets (N, n)."""
    k = int(round(np.sqrt(base.shape[-1])))
    x0, fx = _split(ox)
    y0, fy = _split(oy)
    b = base[None]
    terms = {}
    for a in (0, 1):
        for c in (0, 1):
            idx = _roll_index(x0 + a, y0 + c, k)[:, :, None, :]
            terms[a, c] = np.take_along_axis(b, idx, axis=-1)
    dt = base.dtype
    return terms, fx.astype(dt)[..., None, None], fy.astype(dt)[..., None, None], (x0, y0, k)


def rolled_kernel(w: Tensor, offsets: Tensor, scales: Tensor, n: int) -> Tensor:
    """Per-sample group-rolled kernel.

    Parameters
    ----------
    w : Tensor (Cout, Cin, k, k)
        Shared learnable kernel, split into n groups along Cin.
    offsets : Tensor (N, n, 2)
        ``(ox, oy)`` per sample and group, in kernel cells; unbounded.
    scales : Tensor (N, n)
        Group scale factors.

    Returns
    -------
    Tensor (N, Cout, Cin, k, k)
    """
    cout, cin, k, _ = w.shape
    nb = offsets.shape[0]
    if offsets.shape != (nb, n, 2) or scales.shape != (nb, n):
        raise ShapeError(f"rolled_kernel: offsets {offsets.shape}, scales {scales.shape}, expected ({nb}, {n}, 2) / ({nb}, {n})")
    cg = cin // n
    base = split_groups(w.data, n).reshape(n, cout * cg, k * k)
    od = offsets.data.astype(np.float64)
    terms, fx, fy, (x0, y0, _) = _float_roll_terms(base, od[..., 0], od[..., 1])
    rolled = ((1 - fx) * (1 - fy) * terms[0, 0] + fx * (1 - fy) * terms[1, 0]
              + (1 - fx) * fy * terms[0, 1] + fx * fy * terms[1, 1])  # (N, n, M, kk)
    lam = scales.data[..., None, None]
    out = (lam * rolled).reshape(nb, n, cout, cg, k, k).transpose(0, 2, 1, 3, 4, 5).reshape(nb, cout, cin, k, k)

    def vjp(g):
        gr = g.reshape(nb, cout, n, cg, k * k).transpose(0, 2, 1, 3, 4).reshape(nb, n, cout * cg, k * k)
        g_scales = np.sum(gr * rolled, axis=(2, 3))
        grl = gr * lam
        g_ox = np.sum(grl * ((1 - fy) * (terms[1, 0] - terms[0, 0]) + fy * (terms[1, 1] - terms[0, 1])), axis=(2, 3))
        g_oy = np.sum(grl * ((1 - fx) * (terms[0, 1] - terms[0, 0]) + fx * (terms[1, 1] - terms[1, 0])), axis=(2, 3))
        g_base = np.zeros_like(base)
        for (a, c), coef in (((0, 0), (1 - fx) * (1 - fy)), ((1, 0), fx * (1 - fy)),
                             ((0, 1), (1 - fx) * fy), ((1, 1), fx * fy)):
            inv = _roll_index(-(x0 + a), -(y0 + c), k)[:, :, None, :]
            g_base += np.take_along_axis(coef * grl, inv, axis=-1).sum(axis=0)
        g_w = g_base.reshape(n, cout, cg, k, k).transpose(1, 0, 2, 3, 4).reshape(w.shape)
        g_off = np.stack([g_ox, g_oy], axis=-1).astype(offsets.dtype)
        return g_w, g_off, g_scales.astype(scales.dtype)

    return make_op(np.ascontiguousarray(out), (w, offsets, scales), vjp, "rolled_kernel")
