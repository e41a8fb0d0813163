"""Vectorized numpy twins of the compiled kernels in ``_kernels_numba``.

Signatures and arithmetic order match exactly; see that module for the
meaning of the arguments.
"""
import numpy as np

TINY = 1e-250


def _shape(code, v):
    if code == 0:
        return v * (1.0 - v)
    if code == 1:
        return np.minimum(v, 1.0 - v)
    if code == 2:
        return v * v * (1.0 - v)
    return np.zeros_like(v)


def _finish(w, shape, cm):
    """Flush underflow to zero, then clamp to [0, 1] recording the overshoot."""
    w = np.where(np.abs(w) >= TINY, w, 0.0)
    if shape >= 0:
        lo, hi = float(w.min()), float(w.max())
        if lo < 0.0 or hi > 1.0:
            cm = max(cm, -lo, hi - 1.0)
            w = np.clip(w, 0.0, 1.0)
    return w, cm


def local_1d(u, n_steps, dt, a, bp, bn, r0, r1, s, shape, lo_neu, hi_neu):
    n = u.shape[0]
    pad = np.empty(n + 2)
    cur = u.copy()
    cm = 0.0
    for k in range(n_steps):
        pad[1:-1] = cur
        pad[0] = pad[2] if lo_neu else 0.0
        pad[-1] = pad[-3] if hi_neu else 0.0
        v = pad[1:-1]
        ul = pad[:-2]
        ur = pad[2:]
        diff = a * (ul + ur - 2.0 * v)
        adv = bp * (ur - v) + bn * (ul - v)
        rate = r0 + s[k] * r1
        w = v + dt * (diff + adv + rate * _shape(shape, v))
        cur, cm = _finish(w, shape, cm)
    return cur, cm


def _fill_ghosts_2d(pad, neu):
    pad[0, 1:-1] = pad[2, 1:-1] if neu[0] else 0.0
    pad[-1, 1:-1] = pad[-3, 1:-1] if neu[1] else 0.0
    pad[:, 0] = pad[:, 2] if neu[2] else 0.0
    pad[:, -1] = pad[:, -3] if neu[3] else 0.0


def local_2d(u, n_steps, dt, cx, cy, cd, dpos, bxp, bxn, byp, byn, r0, r1, s, shape, neu):
    nx, ny = u.shape
    pad = np.empty((nx + 2, ny + 2))
    cur = u.copy()
    cm = 0.0
    for k in range(n_steps):
        pad[1:-1, 1:-1] = cur
        _fill_ghosts_2d(pad, neu)
        v = pad[1:-1, 1:-1]
        ue = pad[2:, 1:-1]
        uw = pad[:-2, 1:-1]
        un = pad[1:-1, 2:]
        us = pad[1:-1, :-2]
        dsum = np.where(dpos, pad[2:, 2:] + pad[:-2, :-2], pad[2:, :-2] + pad[:-2, 2:])
        diff = cx * (uw + ue - 2.0 * v) + cy * (us + un - 2.0 * v) + cd * (dsum - 2.0 * v)
        adv = bxp * (ue - v) + bxn * (uw - v) + byp * (un - v) + byn * (us - v)
        rate = r0 + s[k] * r1
        w = v + dt * (diff + adv + rate * _shape(shape, v))
        cur, cm = _finish(w, shape, cm)
    return cur, cm


def _pad_axis(n, p, neu):
    """Source index for each padded position (-1 marks a zero ghost)."""
    idx = np.arange(-p, n + p)
    src = idx.copy()
    lo = idx < 0
    hi = idx >= n
    src[lo] = -idx[lo] if neu[0] else -1
    src[hi] = 2 * (n - 1) - idx[hi] if neu[1] else -1
    return src


def _padded(cur, srcs):
    out = cur
    for axis, src in enumerate(srcs):
        good = src >= 0
        taken = np.take(out, np.where(good, src, 0), axis=axis)
        shape = [1] * cur.ndim
        shape[axis] = -1
        out = np.where(good.reshape(shape), taken, 0.0)
    return out


def nonlocal_1d(u, n_steps, dt, offs, w, m, r0, r1, s, shape, lo_neu, hi_neu):
    n = u.shape[0]
    p = int(offs.max()) if offs.size else 0
    src = _pad_axis(n, p, (lo_neu, hi_neu))
    cur = u.copy()
    cm = 0.0
    for st in range(n_steps):
        pad = _padded(cur, [src])
        v = pad[p:p + n]
        acc = np.zeros(n)
        for k in range(offs.shape[0]):
            o = int(offs[k])
            acc += w[k] * (pad[p + o:p + o + n] + pad[p - o:p - o + n] - 2.0 * v)
        rate = r0 + s[st] * r1
        val = v + dt * (m * acc + rate * _shape(shape, v))
        cur, cm = _finish(val, shape, cm)
    return cur, cm


def nonlocal_2d(u, n_steps, dt, offx, offy, w, m, r0, r1, s, shape, neu):
    nx, ny = u.shape
    px = int(np.abs(offx).max()) if offx.size else 0
    py = int(np.abs(offy).max()) if offy.size else 0
    sx = _pad_axis(nx, px, (neu[0], neu[1]))
    sy = _pad_axis(ny, py, (neu[2], neu[3]))
    cur = u.copy()
    cm = 0.0
    for st in range(n_steps):
        pad = _padded(cur, [sx, sy])
        v = pad[px:px + nx, py:py + ny]
        acc = np.zeros((nx, ny))
        for k in range(offx.shape[0]):
            ox = int(offx[k])
            oy = int(offy[k])
            fwd = pad[px + ox:px + ox + nx, py + oy:py + oy + ny]
            bwd = pad[px - ox:px - ox + nx, py - oy:py - oy + ny]
            acc += w[k] * (fwd + bwd - 2.0 * v)
        rate = r0 + s[st] * r1
        val = v + dt * (m * acc + rate * _shape(shape, v))
        cur, cm = _finish(val, shape, cm)
    return cur, cm


def heat_2d(u, n_steps, dt, ax, ay, r0, r1, s, shape, neu):
    nx, ny = u.shape
    pad = np.zeros((nx + 2, ny + 2))
    cur = u.copy()
    cm = 0.0
    for k in range(n_steps):
        pad[1:-1, 1:-1] = cur
        _fill_ghosts_2d(pad, neu)
        v = pad[1:-1, 1:-1]
        diff = ax * (pad[:-2, 1:-1] + pad[2:, 1:-1] - 2.0 * v) + ay * (pad[1:-1, :-2] + pad[1:-1, 2:] - 2.0 * v)
        rate = r0 + s[k] * r1
        w = v + dt * (diff + rate * _shape(shape, v))
        cur, cm = _finish(w, shape, cm)
    return cur, cm
