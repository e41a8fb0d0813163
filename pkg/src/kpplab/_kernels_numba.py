"""Compiled explicit-update kernels (numba).

Every kernel advances ``n_steps`` explicit Euler steps and returns
``(u_new, clamp_max)``.  The arithmetic mirrors ``_kernels_numpy`` operation by
operation so the two backends agree bitwise.

Reaction shape codes: 0 logistic u(1-u), 1 template min(u, 1-u),
2 cubic u^2(1-u), -1 none (caller adds the reaction and clamps).
"""
import numpy as np
from numba import njit

# values below this magnitude are flushed to zero: subnormal arithmetic in the
# far-field tails otherwise slows the stencil loops by an order of magnitude
TINY = 1e-250


@njit(cache=True, nogil=True)
def _shape(code, v):
    if code == 0:
        return v * (1.0 - v)
    if code == 1:
        return min(v, 1.0 - v)
    if code == 2:
        return v * v * (1.0 - v)
    return 0.0


@njit(cache=True, nogil=True)
def _finish(buf, shape, cm):
    """Flush underflow in the flat array ``buf``, then clamp to [0, 1] recording the overshoot.

    A cheap counting pass keeps the common no-clamp case vectorizable.
    """
    bad = 0
    for i in range(buf.shape[0]):
        w = buf[i]
        bad += (w < 0.0) | (w > 1.0)
        buf[i] = w if abs(w) >= TINY else 0.0
    if shape >= 0 and bad > 0:
        for i in range(buf.shape[0]):
            w = buf[i]
            if w < 0.0:
                cm = max(cm, -w)
                buf[i] = 0.0
            elif w > 1.0:
                cm = max(cm, w - 1.0)
                buf[i] = 1.0
    return cm


@njit(cache=True, nogil=True)
def local_1d(u, n_steps, dt, a, bp, bn, r0, r1, s, shape, lo_neu, hi_neu):
    n = u.shape[0]
    p0 = np.empty(n + 2)
    p1 = np.empty(n + 2)
    p0[1:n + 1] = u
    cm = 0.0
    for k in range(n_steps):
        p0[0] = p0[2] if lo_neu else 0.0
        p0[n + 1] = p0[n - 1] if hi_neu else 0.0
        sk = s[k]
        for i in range(n):
            v = p0[i + 1]
            ul = p0[i]
            ur = p0[i + 2]
            diff = a[i] * (ul + ur - 2.0 * v)
            adv = bp[i] * (ur - v) + bn[i] * (ul - v)
            rate = r0[i] + sk * r1[i]
            p1[i + 1] = v + dt * (diff + adv + rate * _shape(shape, v))
        cm = _finish(p1[1:n + 1], shape, cm)
        p0, p1 = p1, p0
    return p0[1:n + 1].copy(), cm


@njit(cache=True, nogil=True)
def _fill_ghosts_2d(pad, nx, ny, neu):
    # rows first (x ghosts), then columns so corners are consistent
    for j in range(1, ny + 1):
        pad[0, j] = pad[2, j] if neu[0] else 0.0
        pad[nx + 1, j] = pad[nx - 1, j] if neu[1] else 0.0
    for i in range(nx + 2):
        pad[i, 0] = pad[i, 2] if neu[2] else 0.0
        pad[i, ny + 1] = pad[i, ny - 1] if neu[3] else 0.0


@njit(cache=True, nogil=True)
def local_2d(u, n_steps, dt, cx, cy, cd, dpos, bxp, bxn, byp, byn, r0, r1, s, shape, neu):
    nx, ny = u.shape
    pad = np.empty((nx + 2, ny + 2))
    cur = u.copy()
    flat = cur.reshape(-1)
    cm = 0.0
    for k in range(n_steps):
        pad[1:nx + 1, 1:ny + 1] = cur
        _fill_ghosts_2d(pad, nx, ny, neu)
        sk = s[k]
        for i in range(nx):
            for j in range(ny):
                v = pad[i + 1, j + 1]
                ue = pad[i + 2, j + 1]
                uw = pad[i, j + 1]
                un = pad[i + 1, j + 2]
                us = pad[i + 1, j]
                dsum = pad[i + 2, j + 2] + pad[i, j] if dpos[i, j] else pad[i + 2, j] + pad[i, j + 2]
                diff = cx[i, j] * (uw + ue - 2.0 * v) + cy[i, j] * (us + un - 2.0 * v) + cd[i, j] * (dsum - 2.0 * v)
                adv = bxp[i, j] * (ue - v) + bxn[i, j] * (uw - v) + byp[i, j] * (un - v) + byn[i, j] * (us - v)
                rate = r0[i, j] + sk * r1[i, j]
                cur[i, j] = v + dt * (diff + adv + rate * _shape(shape, v))
        cm = _finish(flat, shape, cm)
    return cur, cm


@njit(cache=True, nogil=True)
def _mirror(idx, n, lo_neu, hi_neu):
    # source index along a length-n axis; -1 marks a Dirichlet zero
    if idx < 0:
        return -idx if lo_neu else -1
    if idx >= n:
        return 2 * (n - 1) - idx if hi_neu else -1
    return idx


@njit(cache=True, nogil=True)
def nonlocal_1d(u, n_steps, dt, offs, w, m, r0, r1, s, shape, lo_neu, hi_neu):
    n = u.shape[0]
    p = 0
    for k in range(offs.shape[0]):
        p = max(p, offs[k])
    src = np.empty(n + 2 * p, dtype=np.int64)
    for i in range(n + 2 * p):
        src[i] = _mirror(i - p, n, lo_neu, hi_neu)
    pad = np.zeros(n + 2 * p)
    cur = u.copy()
    cm = 0.0
    for st in range(n_steps):
        for i in range(n + 2 * p):
            pad[i] = cur[src[i]] if src[i] >= 0 else 0.0
        sk = s[st]
        for i in range(n):
            v = pad[i + p]
            acc = 0.0
            for k in range(offs.shape[0]):
                o = offs[k]
                acc += w[k] * (pad[i + p + o] + pad[i + p - o] - 2.0 * v)
            rate = r0[i] + sk * r1[i]
            cur[i] = v + dt * (m[i] * acc + rate * _shape(shape, v))
        cm = _finish(cur, shape, cm)
    return cur, cm


@njit(cache=True, nogil=True)
def nonlocal_2d(u, n_steps, dt, offx, offy, w, m, r0, r1, s, shape, neu):
    nx, ny = u.shape
    px = 0
    py = 0
    for k in range(offx.shape[0]):
        px = max(px, abs(offx[k]))
        py = max(py, abs(offy[k]))
    sx = np.empty(nx + 2 * px, dtype=np.int64)
    sy = np.empty(ny + 2 * py, dtype=np.int64)
    for i in range(nx + 2 * px):
        sx[i] = _mirror(i - px, nx, neu[0], neu[1])
    for j in range(ny + 2 * py):
        sy[j] = _mirror(j - py, ny, neu[2], neu[3])
    pad = np.zeros((nx + 2 * px, ny + 2 * py))
    cur = u.copy()
    flat = cur.reshape(-1)
    cm = 0.0
    for st in range(n_steps):
        for i in range(nx + 2 * px):
            for j in range(ny + 2 * py):
                pad[i, j] = cur[sx[i], sy[j]] if (sx[i] >= 0 and sy[j] >= 0) else 0.0
        sk = s[st]
        for i in range(nx):
            for j in range(ny):
                v = pad[i + px, j + py]
                acc = 0.0
                for k in range(offx.shape[0]):
                    ox = offx[k]
                    oy = offy[k]
                    acc += w[k] * (pad[i + px + ox, j + py + oy] + pad[i + px - ox, j + py - oy] - 2.0 * v)
                rate = r0[i, j] + sk * r1[i, j]
                cur[i, j] = v + dt * (m[i, j] * acc + rate * _shape(shape, v))
        cm = _finish(flat, shape, cm)
    return cur, cm


@njit(cache=True, nogil=True)
def heat_2d(u, n_steps, dt, ax, ay, r0, r1, s, shape, neu):
    """Constant diagonal diffusion without drift (``ax = A11 / h^2``, ``ay = A22 / h^2``)."""
    nx, ny = u.shape
    p0 = np.zeros((nx + 2, ny + 2))
    p1 = np.zeros((nx + 2, ny + 2))
    p0[1:nx + 1, 1:ny + 1] = u
    cm = 0.0
    for k in range(n_steps):
        _fill_ghosts_2d(p0, nx, ny, neu)
        sk = s[k]
        for i in range(nx):
            for j in range(ny):
                v = p0[i + 1, j + 1]
                diff = ax * (p0[i, j + 1] + p0[i + 2, j + 1] - 2.0 * v) + ay * (p0[i + 1, j] + p0[i + 1, j + 2] - 2.0 * v)
                rate = r0[i, j] + sk * r1[i, j]
                p1[i + 1, j + 1] = v + dt * (diff + rate * _shape(shape, v))
        for i in range(nx):
            cm = _finish(p1[i + 1, 1:ny + 1], shape, cm)
        p0, p1 = p1, p0
    return p0[1:nx + 1, 1:ny + 1].copy(), cm
