"""Nonlocal diffusion operators with even kernels and a monotone explicit solver.

The operator is evaluated in second-difference form

    L u(x) = 1/2 int K(x, nu) [u(x + nu) + u(x - nu) - 2 u(x)] dnu,

which removes the principal value.  On a lattice of spacing ``h`` the
second difference ``D(nu)`` is only known at lattice offsets, so we write
``K D = (K |nu|^2) (D / |nu|^2)`` and integrate the smooth factor ``D/|nu|^2``
against the (possibly singular) measure ``K |nu|^2`` by product integration.
The resulting weights are non-negative, so the explicit scheme stays monotone,
and the rule is exact whenever ``D`` is quadratic in ``nu`` (1D) or for
``|x|^2`` (2D).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from . import kernels
from .errors import NumericalInstability
from .fields import ConstantField, Field, KppReaction
from .grid import Grid, GridState
from .local_solver import Trajectory, run_stepper


class KernelError(ValueError):
    """Kernel violates the structural two-sided bounds."""


@dataclass(frozen=True)
class Kernel:
    """Even jump kernel ``K(t, x, nu) = m(t, x) * profile(|nu|)``.

    Parameters
    ----------
    family : str
        Catalogue name (``box``, ``exp_tail``, ``fractional_cutoff``, ``tabulated``).
    dim : int
    profile : callable
        Radial weight ``r -> kappa(r)`` for ``r > 0``.
    singular : callable
        The singular part ``r -> Ksing(r)`` supported on ``(0, alpha]``.
    alpha : float
        Structural constant in ``(0, 1]``.
    support : float or None
        Radius beyond which ``profile`` vanishes; None for unbounded support.
    modulation : Field
        Space-time factor ``m(t, x)``; ``m_bounds`` bounds it.
    breakpoints : tuple of float
        Radii where ``profile`` is not smooth (used to split quadratures).
    """

    family: str
    dim: int
    profile: Callable
    singular: Callable
    alpha: float
    support: float | None = None
    modulation: Field = ConstantField(1.0)
    m_bounds: tuple = (1.0, 1.0)
    breakpoints: tuple = ()

    def K(self, t, x, nu) -> np.ndarray:
        r = np.linalg.norm(np.atleast_1d(np.asarray(nu, dtype=float)), axis=-1)
        return self.modulation(t, x) * self.profile(r)

    def validate(self, r_samples=None, t_samples=None, x_samples=None) -> None:
        """Check the two-sided structural bounds on samples; raise KernelError on failure."""
        a = self.alpha
        if not 0 < a <= 1:
            raise KernelError("alpha must lie in (0, 1]")
        r = np.geomspace(1e-3, 20.0, 400) if r_samples is None else np.asarray(r_samples, dtype=float)
        ks = np.asarray(self.singular(r), dtype=float)
        inside = r <= a
        lower_ok = np.all(ks[inside] >= 1.0 - 1e-12) and np.all(ks[~inside] == 0)
        upper_ok = np.all(ks[inside] <= r[inside] ** (-self.dim - 2 + a) * (1 + 1e-12))
        if not (lower_ok and upper_ok):
            raise KernelError(f"{self.family}: singular part violates its envelope")
        kap = np.asarray(self.profile(r), dtype=float)
        mlo, mhi = self.m_bounds
        lo = a * ks
        hi = np.maximum(ks, np.exp(-a * r)) / a
        if np.any(mlo * kap < lo * (1 - 1e-12)) or np.any(mhi * kap > hi * (1 + 1e-12)):
            bad = r[(mlo * kap < lo * (1 - 1e-12)) | (mhi * kap > hi * (1 + 1e-12))][0]
            raise KernelError(f"{self.family}: kernel leaves the two-sided bound near r={bad:.4g}")
        if t_samples is not None and x_samples is not None:
            m = self.modulation(np.asarray(t_samples)[:, None], np.asarray(x_samples)[None])
            if m.min() < mlo - 1e-12 or m.max() > mhi + 1e-12:
                raise KernelError("kernel modulation leaves its declared bounds")

    def tail_radius(self, eps_tail: float = 1e-8) -> float:
        """Truncation radius: the support, or where the exponential envelope mass drops below eps."""
        if self.support is not None:
            return float(self.support)
        a, d = self.alpha, self.dim
        if d == 1:
            return math.log(2.0 / (a * a * eps_tail)) / a

        def mass(R):
            return 2 * math.pi * math.exp(-a * R) * (R / a + 1 / a ** 2) / a - eps_tail

        return optimize.brentq(mass, 1e-6, 1e4)

    def tail_bound(self, R: float) -> float:
        """Upper bound on ``int_{|nu|>R} K`` from the exponential envelope."""
        if self.support is not None and R >= self.support:
            return 0.0
        a = self.alpha
        if self.dim == 1:
            return 2.0 * math.exp(-a * R) / a ** 2
        return 2 * math.pi * math.exp(-a * R) * (R / a + 1 / a ** 2) / a


# ---------------------------------------------------------------------------
# catalogue


def box_kernel(dim: int = 1, radius: float = 1.0, height: float = 0.5, alpha: float = 0.5) -> Kernel:
    """``K = height`` on ``|nu| <= radius``."""

    def prof(r):
        return np.where((np.asarray(r) > 0) & (np.asarray(r) <= radius), height, 0.0)

    def sing(r):
        return np.where((np.asarray(r) > 0) & (np.asarray(r) <= alpha), 1.0, 0.0)

    k = Kernel("box", dim, prof, sing, alpha, support=radius, breakpoints=(radius,))
    k.validate()
    return k


def exp_tail_kernel(dim: int = 1, alpha: float = 0.5, s: float = 0.0) -> Kernel:
    """``K = max(Ksing, exp(-alpha r))`` with ``Ksing = r^(-d-s)`` on ``(0, alpha]``."""

    def sing(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where((r > 0) & (r <= alpha), np.power(np.maximum(r, 1e-300), -dim - s), 0.0)

    def prof(r):
        return np.maximum(sing(r), np.exp(-alpha * np.asarray(r, dtype=float)))

    k = Kernel("exp_tail", dim, prof, sing, alpha, support=None, breakpoints=(alpha,))
    k.validate()
    return k


def fractional_cutoff_kernel(dim: int = 1, s: float = 0.5, cutoff: float = 1.0) -> Kernel:
    """``K = r^(-d-s)`` on ``(0, cutoff]`` (fractional-type, compactly supported)."""
    alpha = min(1.0, cutoff)

    def prof(r):
        r = np.asarray(r, dtype=float)
        return np.where((r > 0) & (r <= cutoff), np.power(np.maximum(r, 1e-300), -dim - s), 0.0)

    def sing(r):
        r = np.asarray(r, dtype=float)
        return np.where((r > 0) & (r <= alpha), np.power(np.maximum(r, 1e-300), -dim - s), 0.0)

    k = Kernel("fractional_cutoff", dim, prof, sing, alpha, support=cutoff, breakpoints=(alpha, cutoff))
    k.validate()
    return k


def tabulated_kernel(path, dim: int = 1, alpha: float = 0.5) -> Kernel:
    """Radial profile from a CSV with columns ``r,weight`` (linear interpolation, zero beyond)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    rr, ww = data[:, 0], data[:, 1]
    r_max = float(rr[-1])

    def prof(r):
        r = np.asarray(r, dtype=float)
        return np.where((r > 0) & (r <= r_max), np.interp(r, rr, ww), 0.0)

    def sing(r):
        r = np.asarray(r, dtype=float)
        return np.where((r > 0) & (r <= alpha), np.maximum(np.interp(r, rr, ww) * alpha, 1.0), 0.0)

    k = Kernel("tabulated", dim, prof, sing, alpha, support=r_max, breakpoints=tuple(rr))
    k.validate()
    return k


KERNELS = {"box": box_kernel, "exp_tail": exp_tail_kernel, "fractional_cutoff": fractional_cutoff_kernel}


# ---------------------------------------------------------------------------
# lattice weights


@dataclass(frozen=True)
class LatticeWeights:
    """Half-lattice offsets (integer multiples of h) with their weights.

    ``L u(x) ~ m(x) * sum_k w_k (u(x + o_k h) + u(x - o_k h) - 2 u(x))``.
    """

    offsets: np.ndarray  # (K, dim) int64
    weights: np.ndarray  # (K,)
    h: float
    radius: float
    eps_tail: float

    @property
    def diagonal(self) -> float:
        """``2 sum w``: the discrete total mass (coefficient of -u(x))."""
        return 2.0 * float(self.weights.sum())


def _cell_quad(func, a, b, breaks):
    pts = [a] + [p for p in breaks if a < p < b] + [b]
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(func, lo, hi, limit=200, epsabs=1e-15, epsrel=1e-12)
        total += val
    return total


def _weights_1d(k: Kernel, h: float, R: float) -> tuple:
    n = int(math.ceil(R / h - 1e-12))
    omega = np.zeros(n + 1)
    breaks = tuple(k.breakpoints) + (R,)
    prof = k.profile

    def mom(nu):
        return float(prof(nu)) * nu * nu

    for j in range(n):
        a, b = j * h, min((j + 1) * h, R)
        if b <= a:
            continue
        up = _cell_quad(lambda nu: mom(nu) * (nu - a) / h, a, b, breaks)
        down = _cell_quad(lambda nu: mom(nu) * (a + h - nu) / h, a, b, breaks)
        omega[j] += down
        omega[j + 1] += up
    w = omega[1:] / (h * np.arange(1, n + 1)) ** 2
    w[0] += omega[0] / (h * h)
    offs = np.arange(1, n + 1, dtype=np.int64)[:, None]
    keep = w > 0
    return offs[keep], w[keep]


def _gauss_square(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * x, 0.5 * w  # nodes/weights on [-1/2, 1/2]


def _weights_2d(k: Kernel, h: float, R: float) -> tuple:
    n = int(math.ceil(R / h + 1))
    ii, jj = np.meshgrid(np.arange(-n, n + 1), np.arange(0, n + 1), indexing="ij")
    half = (jj > 0) | ((jj == 0) & (ii > 0))
    ii, jj = ii[half], jj[half]
    centre = h * np.hypot(ii, jj)
    near = centre - h / math.sqrt(2) < R
    ii, jj = ii[near], jj[near]
    xq, wq = _gauss_square(8)
    # split each cell into sub-cells where the profile has a breakpoint inside
    out = np.zeros(ii.size)
    breaks = np.array(tuple(k.breakpoints) + (R,))
    for idx in range(ii.size):
        cx, cy = ii[idx] * h, jj[idx] * h
        rmin = max(math.hypot(max(abs(cx) - h / 2, 0), max(abs(cy) - h / 2, 0)), 0.0)
        rmax = math.hypot(abs(cx) + h / 2, abs(cy) + h / 2)
        sub = 8 if np.any((breaks > rmin) & (breaks < rmax)) else 1
        hs = h / sub
        offs_sub = (np.arange(sub) - (sub - 1) / 2) * hs
        X = (cx + offs_sub[:, None, None, None] + hs * xq[None, None, :, None])
        Y = (cy + offs_sub[None, :, None, None] + hs * xq[None, None, None, :])
        X, Y = np.broadcast_arrays(X, Y)
        r = np.hypot(X, Y)
        f = np.where(r <= R, k.profile(r) * r * r, 0.0)
        ww = (hs * hs) * wq[None, None, :, None] * wq[None, None, None, :]
        out[idx] = float((f * ww).sum())
    w = out / (h * h * (ii * ii + jj * jj))
    # central cell second moment, integrated in polar coordinates (singular at 0)
    tq, tw = np.polynomial.legendre.leggauss(64)
    theta = (tq + 1) * math.pi / 4  # [0, pi/2], one quadrant
    tw = tw * math.pi / 4
    m0 = 0.0
    for th, wt in zip(theta, tw):
        rho = (h / 2) / max(abs(math.cos(th)), abs(math.sin(th)))
        rho = min(rho, R)
        val = _cell_quad(lambda r: float(k.profile(r)) * r ** 3, 0.0, rho, tuple(k.breakpoints))
        m0 += wt * val
    m0 *= 4.0
    for target in ((1, 0), (0, 1)):
        sel = (ii == target[0]) & (jj == target[1])
        w[sel] += m0 / (4 * h * h)
    offs = np.stack([ii, jj], axis=-1).astype(np.int64)
    keep = w > 0
    return offs[keep], w[keep]


_WEIGHT_CACHE: dict = {}


def lattice_weights(k: Kernel, h: float, eps_tail: float = 1e-8) -> LatticeWeights:
    """Non-negative half-lattice weights of ``k`` at spacing ``h`` (cached per kernel object)."""
    key = (id(k), float(h), float(eps_tail))
    hit = _WEIGHT_CACHE.get(key)
    if hit is not None and hit[0] is k:
        return hit[1]
    R = k.tail_radius(eps_tail)
    offs, w = (_weights_1d if k.dim == 1 else _weights_2d)(k, h, R)
    lw = LatticeWeights(offs, w, float(h), float(R), k.tail_bound(R) * k.m_bounds[1])
    _WEIGHT_CACHE[key] = (k, lw)
    return lw


# ---------------------------------------------------------------------------
# operator


@dataclass
class OperatorValue:
    """Values of ``L u`` on the grid plus the tail truncation bound."""

    time: float
    values: np.ndarray
    eps_tail: float
    radius: float


def apply(k: Kernel, state: GridState, t: float | None = None, eps_tail: float = 1e-8) -> OperatorValue:
    """Evaluate the discrete nonlocal operator on ``state`` (boundary extension per grid policy)."""
    if k.dim != state.grid.dim:
        raise ValueError("kernel and grid dimensions differ")
    t = state.time if t is None else t
    vals = _apply_values(k, state.grid, state.values, t, eps_tail)
    lw = lattice_weights(k, state.grid.h, eps_tail)
    return OperatorValue(t, vals, lw.eps_tail, lw.radius)


def _apply_values(k: Kernel, grid: Grid, u, t, eps_tail=1e-8):
    stepper = _NonlocalStepper(k, None, grid, eps_tail)
    lin, _ = stepper.kernel(np.ascontiguousarray(u, dtype=float), 1, 1.0, np.zeros(1), -1, stepper.m_at(t))
    return lin - u


class _NonlocalStepper:
    def __init__(self, k: Kernel, reaction: KppReaction | None, grid: Grid, eps_tail: float = 1e-8):
        self.k, self.grid = k, grid
        self.lw = lattice_weights(k, grid.h, eps_tail)
        self.flags = grid.neumann_flags()
        self.pts = grid.points()
        shape = grid.shape
        pad = self.lw.offsets.max(axis=0)
        if np.any(pad >= np.asarray(shape)):
            raise ValueError("grid is narrower than the kernel reach")
        self.m_static = not k.modulation.time_dependent
        self._m = self.m_at(0.0) if self.m_static else None
        self.code = -1
        self.r0 = np.zeros(shape)
        self.r1 = np.zeros(shape)
        self.mod = None
        self.reaction = reaction
        if reaction is not None:
            split = reaction.rate.split() if reaction.shape != "custom" else None
            if split is not None:
                base, pert, mod = split
                self.code = kernels.SHAPE_CODES[reaction.shape]
                self.r0 = np.ascontiguousarray(np.broadcast_to(base(self.pts), shape), dtype=float)
                if pert is not None:
                    self.r1 = np.ascontiguousarray(np.broadcast_to(pert(self.pts), shape), dtype=float)
                    self.mod = mod

    def m_at(self, t):
        return np.ascontiguousarray(np.broadcast_to(self.k.modulation(t, self.pts), self.grid.shape), dtype=float)

    def kernel(self, u, n, dt, s, code, m):
        lw = self.lw
        if self.grid.dim == 1:
            return kernels.nonlocal_1d(u, n, dt, np.ascontiguousarray(lw.offsets[:, 0]), lw.weights, m,
                                       self.r0, self.r1, s, code, self.flags[0], self.flags[1])
        return kernels.nonlocal_2d(u, n, dt, np.ascontiguousarray(lw.offsets[:, 0]),
                                   np.ascontiguousarray(lw.offsets[:, 1]), lw.weights, m, self.r0, self.r1, s,
                                   code, self.flags)

    def modulation(self, t0, n, dt):
        if self.mod is None:
            return np.zeros(n)
        return np.ascontiguousarray(np.asarray(self.mod(t0 + dt * np.arange(n)), dtype=float) * np.ones(n))

    def advance(self, u, t0, n, dt):
        u = np.ascontiguousarray(u, dtype=float)
        if self.m_static and self.code >= 0:
            return self.kernel(u, n, dt, self.modulation(t0, n, dt), self.code, self._m)
        cm = 0.0
        for j in range(n):
            t = t0 + j * dt
            m = self._m if self.m_static else self.m_at(t)
            s = self.modulation(t, 1, dt)
            if self.code >= 0:
                u, c = self.kernel(u, 1, dt, s, self.code, m)
            else:
                lin, _ = self.kernel(u, 1, dt, s, -1, m)
                w = lin + dt * self.reaction.eval(t, self.pts, u)
                c = max(float(-w.min()), float(w.max() - 1.0), 0.0)
                u = np.clip(w, 0.0, 1.0)
            cm = max(cm, c)
        return u, cm


def nonlocal_stable_dt(k: Kernel, reaction: KppReaction, grid: Grid, eps_tail: float = 1e-8) -> float:
    """``1 / (2 ||K||_op + L_f)`` with ``||K||_op`` the discrete total mass times ``sup m``."""
    lw = lattice_weights(k, grid.h, eps_tail)
    return 1.0 / (2.0 * k.m_bounds[1] * lw.diagonal + reaction.lipschitz_bound)


def solve_nonlocal(k: Kernel, reaction: KppReaction, grid: Grid, initial: GridState, t_end: float,
                   cadence: float | None = None, *, times=None, dt: float | None = None, store: bool = True,
                   observer=None, eps_tail: float = 1e-8) -> Trajectory:
    """Explicit Euler for ``u_t = L u + f`` with the nonlocal operator; clamps to [0, 1].

    The default step is the monotone limit.  Front speeds carry a first-order
    bias in ``dt`` that is large at that limit (about 20% for the box kernel),
    so pass a fraction of it when speeds matter.
    """
    if initial.grid != grid:
        raise ValueError("initial state lives on a different grid")
    limit = nonlocal_stable_dt(k, reaction, grid, eps_tail)
    if dt is not None and dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the monotone limit {limit}")
    dt_max = dt if dt is not None else limit
    if times is None and cadence is not None and dt is None:
        dt_max = cadence / math.ceil(cadence / limit - 1e-12)
    traj = run_stepper(_NonlocalStepper(k, reaction, grid, eps_tail), initial, t_end, dt_max, cadence, times,
                       store, observer)
    return traj


def supersolution_rate(k: Kernel, reaction: KppReaction, h: float, gamma: float | None = None,
                       eps_tail: float = 1e-8) -> float:
    """Growth rate ``a`` making ``exp(a t - gamma x / 2)`` a discrete supersolution in 1D.

    ``a = sup m * sum_k w_k (2 cosh(gamma nu_k / 2) - 2) + sup f_u(0)``.
    """
    if k.dim != 1:
        raise ValueError("implemented for 1D kernels")
    g = k.alpha if gamma is None else gamma
    lw = lattice_weights(k, h, eps_tail)
    nu = lw.offsets[:, 0] * h
    lam = float(np.sum(lw.weights * (2 * np.cosh(g * nu / 2) - 2)))
    F = reaction.rate_max if reaction.shape == "custom" else reaction.lipschitz_bound
    return k.m_bounds[1] * lam + F


# ---------------------------------------------------------------------------
# profile with plateau, convex tail and a linear-curvature stretch


_SMOOTH_INT1 = 0.5  # int_0^1 S
_SMOOTH_INT2 = 0.15  # int_0^1 int_0^t S


def _smooth(tau):
    return tau * tau * (3.0 - 2.0 * tau)


@dataclass(frozen=True)
class _Piece:
    start: float
    length: float
    v0: float  # zeta at start
    d0: float  # zeta' at start
    poly: np.polynomial.Polynomial  # zeta'' = poly(tau) + trig * cos(2 pi tau)
    trig: float

    def eval(self, y, order=0):
        L = self.length
        tau = (y - self.start) / L
        p2 = self.poly
        p1 = p2.integ()
        p0 = p1.integ()
        c = self.trig
        tp = 2 * math.pi
        if order == 2:
            return p2(tau) + c * np.cos(tp * tau)
        if order == 3:
            return (p2.deriv()(tau) - c * tp * np.sin(tp * tau)) / L
        if order == 1:
            return self.d0 + L * (p1(tau) + c * np.sin(tp * tau) / tp)
        return self.v0 + L * self.d0 * tau + L * L * (p0(tau) + c * (1 - np.cos(tp * tau)) / tp ** 2)


class ZetaProfile:
    """Smooth non-increasing step from 1/2 to -1/2.

    Built from five pieces of prescribed curvature: flat, concave bump,
    curvature ramp up to 1/100, constant curvature 1/100 (where the value
    falls from 1/4 to 0), curvature ramp down to 0 while flattening out.
    """

    CURV = 0.01

    def __init__(self, bump: float = 2.0):
        k = self.CURV
        L34 = math.sqrt(0.5 / (k * _SMOOTH_INT2))
        s3 = k * L34 * _SMOOTH_INT1  # slope magnitude at y3
        L23 = (-s3 + math.sqrt(s3 * s3 + 4 * (k / 2) * 0.25)) / k
        s2 = s3 + k * L23

        def drop02(L12):
            s1 = s2 + k * L12 * _SMOOTH_INT1
            return s1 * bump / 2 + s1 * L12 - k * L12 * L12 * _SMOOTH_INT2 - 0.25

        L12 = optimize.brentq(drop02, 1e-6, 100.0)
        s1 = s2 + k * L12 * _SMOOTH_INT1
        a = 2 * s1 / bump
        P = np.polynomial.Polynomial
        smooth = P([0.0, 0.0, 3.0, -2.0])
        y1, y2 = bump, bump + L12
        y3, y4 = y2 + L23, y2 + L23 + L34
        pieces = []
        # concave bump: zeta'' = -a sin^2(pi tau) = -a/2 + (a/2) cos(2 pi tau)
        pieces.append(_Piece(0.0, bump, 0.5, 0.0, P([-a / 2]), a / 2))
        v, d = pieces[-1].eval(y1), pieces[-1].eval(y1, 1)
        pieces.append(_Piece(y1, L12, float(v), float(d), k * smooth, 0.0))
        v, d = pieces[-1].eval(y2), pieces[-1].eval(y2, 1)
        pieces.append(_Piece(y2, L23, float(v), float(d), P([k]), 0.0))
        v, d = pieces[-1].eval(y3), pieces[-1].eval(y3, 1)
        pieces.append(_Piece(y3, L34, float(v), float(d), k * (1 - smooth), 0.0))
        self.pieces = pieces
        self.anchors = (0.0, y1, y2, y3, y4)
        self.slope_max = s1

    def __call__(self, y, order: int = 0):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        y0, *_, y4 = self.anchors
        if order == 0:
            out = np.where(y <= y0, 0.5, -0.5).astype(float)
        for pc in self.pieces:
            sel = (y > pc.start) & (y <= pc.start + pc.length)
            if np.any(sel):
                out[sel] = pc.eval(y[sel], order)
        return np.clip(out, -0.5, 0.5) if order == 0 else out


@dataclass
class NonlocalSubsolution:
    """``u(t, x) = (min(exp(C t / 2) v, v0) * 2 zeta(eta |x| - shift - C t))_+``."""

    zeta: ZetaProfile
    eta: float
    C: float
    v: float
    v0: float = 0.5
    shift: float = 200.0
    min_residual: float = float("nan")

    def level(self, t):
        return np.minimum(np.exp(self.C * np.asarray(t, dtype=float) / 2) * self.v, self.v0)

    def argument(self, t, x):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return self.eta * r - self.shift - self.C * np.asarray(t, dtype=float)

    def value(self, t, x):
        return np.maximum(self.level(t) * 2 * self.zeta(self.argument(t, x)), 0.0)

    def time_derivative(self, t, x):
        """Left time derivative (the level's growth switches off at saturation)."""
        t = np.asarray(t, dtype=float)
        y = self.argument(t, x)
        m = self.level(t)
        z = self.zeta(y)
        growing = np.exp(self.C * t / 2) * self.v <= self.v0
        dm = np.where(growing, self.C / 2 * m, 0.0)
        val = dm * 2 * z - m * 2 * self.C * self.zeta(y, 1)
        return np.where(z > 0, val, 0.0)

    def front_radius(self, t, level: float = 0.25):
        """Radius where the saturated profile equals ``level`` (closed form via root finding)."""
        target = level / (2 * self.level(t))
        y = optimize.brentq(lambda s: float(self.zeta(np.array(s))) - target, self.zeta.anchors[0] + 1e-12,
                            self.zeta.anchors[3])
        return (y + self.shift + self.C * t) / self.eta


def _residual(sub: NonlocalSubsolution, k: Kernel, reaction: KppReaction, grid: Grid, times) -> float:
    pts = grid.points()
    worst = math.inf
    for t in times:
        u = sub.value(t, pts)
        Lu = _apply_values(k, grid, u, t)
        res = Lu + reaction.eval(t, pts, u) - sub.time_derivative(t, pts)
        worst = min(worst, float(res.min()))
    return worst


def zeta_profile(k: Kernel, reaction: KppReaction, grid: Grid, v: float = 0.25, eta_list=None,
                 n_times: int = 9, tol: float = 0.0) -> NonlocalSubsolution:
    """Pick ``eta`` (largest of the candidates) and ``C`` (largest by bisection) with discrete residual >= tol.

    ``C`` is searched in ``(0, C']`` where ``C' = 1/2 inf_{u <= 1/2} f_0(u)/u`` is
    measured on the reaction (infimum over a coarse space-time sample).
    """
    zeta = ZetaProfile()
    u_s = np.linspace(1e-4, 0.5, 200)
    pts = grid.points().reshape(-1, grid.dim)[:: max(1, grid.size // 256)]
    fu = reaction.eval(0.0, pts[:, None, :], u_s[None, :])
    c_prime = 0.5 * float((fu / u_s).min())
    if c_prime <= 0:
        raise ValueError("reaction has no positive growth below 1/2")
    if eta_list is None:
        eta_list = [2.0 ** -j for j in range(6)]
    for eta in eta_list:
        def times_for(C):
            t_sat = 2.0 / C * math.log(0.5 / v)
            return np.linspace(0.0, 2.0 * t_sat, n_times)

        def ok(C):
            sub = NonlocalSubsolution(zeta, eta, C, v)
            return _residual(sub, k, reaction, grid, times_for(C)) >= tol

        reach = (200.0 + zeta.anchors[4]) / eta
        if grid.half_width() < reach + 4:
            raise ValueError(f"grid half-width {grid.half_width():.1f} too small for eta={eta} (need {reach + 4:.1f})")
        lo, hi = 0.0, c_prime
        if ok(hi):
            lo = hi
        else:
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                if ok(mid):
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 1e-4 * c_prime:
                    break
        if lo > 0:
            sub = NonlocalSubsolution(zeta, eta, lo, v)
            sub.min_residual = _residual(sub, k, reaction, grid, times_for(lo))
            return sub
    raise ValueError("no eta in the candidate list gives a non-negative residual; the kernel is too weak near 0")


def reach_warning(k: Kernel, grid: Grid):
    lw = lattice_weights(k, grid.h)
    if lw.radius > 0.25 * float(np.min(np.asarray(grid.extents) * grid.h)):
        warnings.warn("kernel reach is a sizeable fraction of the domain", stacklevel=2)
