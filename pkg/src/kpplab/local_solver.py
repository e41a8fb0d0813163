"""Monotone explicit finite-difference solver for local KPP equations.

Solves ``u_t = sum A_ij u_ij + sum b_i u_i + f(t, x, u)`` on a truncated grid:
centered second differences (a sign-adapted seven-point stencil for the mixed
derivative), per-node upwind advection, explicit Euler in time and a clamp to
[0, 1] after every step.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import kernels
from .errors import DomainTooSmall, NumericalInstability
from .fields import CoefficientField, KppReaction
from .grid import Grid, GridState


@dataclass(frozen=True, eq=False)
class LocalProblem:
    """Coefficients, reaction, grid and initial state of a local run."""

    field: CoefficientField
    reaction: KppReaction
    grid: Grid
    initial: GridState

    def __post_init__(self):
        if self.field.dim != self.grid.dim:
            raise ValueError("field and grid dimensions differ")
        if self.initial.grid != self.grid:
            raise ValueError("initial state lives on a different grid")
        if self.grid.h > math.sqrt(self.field.lam) / 4:
            warnings.warn(f"spacing h={self.grid.h} is coarse relative to sqrt(lam)/4", stacklevel=2)

    def with_initial(self, initial: GridState) -> "LocalProblem":
        return LocalProblem(self.field, self.reaction, self.grid, initial)

    def with_reaction(self, reaction: KppReaction) -> "LocalProblem":
        return LocalProblem(self.field, reaction, self.grid, self.initial)


def stable_dt(p: LocalProblem, cadence: float | None = None) -> float:
    """Largest monotone time step ``h^2 / (2 d Lam + h d b_sup + h^2 L_f)``.

    With ``cadence`` given, the step is reduced so that it divides the cadence.
    """
    d, h = p.grid.dim, p.grid.h
    dt = h * h / (2 * d * p.field.Lam + h * d * p.field.b_sup + h * h * p.reaction.lipschitz_bound)
    if cadence is not None:
        dt = cadence / math.ceil(cadence / dt - 1e-12)
    return dt


def supersolution_horizon(p: LocalProblem, t_end: float, eps: float = 1e-8) -> float:
    """Distance beyond the initial support where the solution stays below ``eps`` up to ``t_end``.

    Uses the exponential supersolution ``exp(-mu (x - x0) + (Lam mu^2 + b mu + F) t)``
    with ``F = sup f_u(0)`` minimized over the decay rate ``mu``.
    """
    F = p.reaction.rate_max if p.reaction.shape == "custom" else p.reaction.lipschitz_bound
    T = max(t_end, 1e-12)
    return p.field.b_sup * T + 2.0 * math.sqrt(p.field.Lam * T * (F * T + math.log(1.0 / eps)))


def check_horizon(p: LocalProblem, t_end: float, eps: float = 1e-8) -> float:
    """Raise DomainTooSmall unless the grid contains the horizon around the initial support."""
    need = supersolution_horizon(p, t_end, eps)
    pts = p.grid.points()
    support = pts[p.initial.values > 0]
    if support.size == 0:
        return need
    flags = p.grid.neumann_flags()
    for k in range(p.grid.dim):
        lo, hi = support[:, k].min(), support[:, k].max()
        if not flags[2 * k] and lo - need < p.grid.lower[k]:
            raise DomainTooSmall(f"axis {k}: need {need:.1f} below the support, grid ends at {p.grid.lower[k]:.1f}")
        if not flags[2 * k + 1] and hi + need > p.grid.upper[k]:
            raise DomainTooSmall(f"axis {k}: need {need:.1f} above the support, grid ends at {p.grid.upper[k]:.1f}")
    return need


def _uniform_diagonal(coefs):
    """``(ax, ay)`` when the 2D stencil has constant axis weights, no cross term and no drift."""
    cx, cy, cd, _, *drift = coefs
    if cd.any() or any(b.any() for b in drift):
        return None
    ax, ay = cx.flat[0], cy.flat[0]
    if np.all(cx == ax) and np.all(cy == ay):
        return float(ax), float(ay)
    return None


class _Stepper:
    """Precomputed stencil coefficients plus the reaction fast path."""

    def __init__(self, p: LocalProblem):
        self.p = p
        self.pts = p.grid.points()
        self.flags = p.grid.neumann_flags()
        self.static = not p.field.time_dependent
        self._coefs = self._coefficients(0.0) if self.static else None
        self._simple = _uniform_diagonal(self._coefs) if self.static and p.grid.dim == 2 else None
        r = p.reaction
        split = r.rate.split() if r.shape != "custom" else None
        shape = self.pts.shape[:-1]
        if split is None:
            self.code = -1
            self.r0 = np.zeros(shape)
            self.r1 = np.zeros(shape)
            self.mod = None
        else:
            base, pert, mod = split
            self.code = kernels.SHAPE_CODES[r.shape]
            self.r0 = np.ascontiguousarray(np.broadcast_to(base(self.pts), shape), dtype=float)
            self.r1 = (np.zeros(shape) if pert is None
                       else np.ascontiguousarray(np.broadcast_to(pert(self.pts), shape), dtype=float))
            self.mod = mod if pert is not None else None

    def _coefficients(self, t):
        g, h = self.p.grid, self.p.grid.h
        A = self.p.field.A(t, self.pts)
        b = self.p.field.b(t, self.pts)
        shape = self.pts.shape[:-1]
        A = np.broadcast_to(A, shape + (g.dim, g.dim))
        b = np.broadcast_to(b, shape + (g.dim,))
        bp = np.ascontiguousarray(np.maximum(b, 0.0) / h)
        bn = np.ascontiguousarray(np.maximum(-b, 0.0) / h)
        if g.dim == 1:
            return (np.ascontiguousarray(A[..., 0, 0] / (h * h)), bp[..., 0], bn[..., 0])
        a11, a22 = A[..., 0, 0], A[..., 1, 1]
        a12 = 0.5 * (A[..., 0, 1] + A[..., 1, 0])
        m = np.abs(a12)
        if np.any(2 * m > np.minimum(a11, a22)):
            warnings.warn("mixed-derivative coefficient is not diagonally dominant; monotonicity may fail",
                          stacklevel=3)
        return (np.ascontiguousarray((a11 - m) / (h * h)), np.ascontiguousarray((a22 - m) / (h * h)),
                np.ascontiguousarray(m / (h * h)), np.ascontiguousarray(a12 >= 0),
                np.ascontiguousarray(bp[..., 0]), np.ascontiguousarray(bn[..., 0]),
                np.ascontiguousarray(bp[..., 1]), np.ascontiguousarray(bn[..., 1]))

    def _kernel(self, u, n, dt, coefs, s, code):
        if self.p.grid.dim == 1:
            a, bp, bn = coefs
            return kernels.local_1d(u, n, dt, a, bp, bn, self.r0, self.r1, s, code, self.flags[0], self.flags[1])
        simple = self._simple if coefs is self._coefs else _uniform_diagonal(coefs)
        if simple is not None:
            return kernels.heat_2d(u, n, dt, simple[0], simple[1], self.r0, self.r1, s, code, self.flags)
        return kernels.local_2d(u, n, dt, *coefs, self.r0, self.r1, s, code, self.flags)

    def modulation(self, t0, n, dt):
        if self.mod is None:
            return np.zeros(n)
        return np.ascontiguousarray(np.asarray(self.mod(t0 + dt * np.arange(n)), dtype=float) * np.ones(n))

    def advance(self, u, t0, n, dt):
        """Take ``n`` steps of size ``dt`` from time ``t0``; returns (values, clamp_max)."""
        u = np.ascontiguousarray(u, dtype=float)
        if self.static and self.code >= 0:
            return self._kernel(u, n, dt, self._coefs, self.modulation(t0, n, dt), self.code)
        cm = 0.0
        for j in range(n):
            t = t0 + j * dt
            coefs = self._coefs if self.static else self._coefficients(t)
            s = self.modulation(t, 1, dt)
            if self.code >= 0:
                u, c = self._kernel(u, 1, dt, coefs, s, self.code)
            else:
                lin, _ = self._kernel(u, 1, dt, coefs, s, -1)
                w = lin + dt * self.p.reaction.eval(t, self.pts, u)
                c = max(float(-w.min()), float(w.max() - 1.0), 0.0)
                u = np.clip(w, 0.0, 1.0)
            cm = max(cm, c)
        return u, cm

    def operator(self, u, t):
        """Discrete ``L u`` without the reaction term."""
        coefs = self._coefs if self.static else self._coefficients(t)
        lin, _ = self._kernel(np.ascontiguousarray(u, dtype=float), 1, 1.0, coefs, np.zeros(1), -1)
        return lin - u


@dataclass
class Trajectory:
    """Snapshots of a run at the requested output times.

    ``values`` holds one array per output time (empty when the run was made
    with ``store=False``); ``final`` is always the last state.
    """

    grid: Grid
    times: list = dc_field(default_factory=list)
    snapshots: list = dc_field(default_factory=list)
    dt: float = 0.0
    steps: int = 0
    clamp_max: float = 0.0
    final: GridState | None = None

    def __len__(self):
        return len(self.times)

    @property
    def values(self) -> np.ndarray:
        return np.stack(self.snapshots)

    def state(self, i: int) -> GridState:
        return GridState(self.grid, float(self.times[i]), self.snapshots[i])

    def __iter__(self):
        for i in range(len(self.snapshots)):
            yield self.state(i)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        ts = np.asarray(self.times)
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not an output time")
        return i

    def at(self, t: float) -> np.ndarray:
        """Values at time ``t``; linear interpolation between bracketing snapshots."""
        ts = np.asarray(self.times)
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"time {t} outside stored range [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t))
        if j < ts.size and abs(ts[j] - t) <= 1e-12 * max(1.0, t):
            return self.snapshots[j]
        if j > 0 and abs(ts[j - 1] - t) <= 1e-12 * max(1.0, t):
            return self.snapshots[j - 1]
        w = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
        return (1 - w) * self.snapshots[j - 1] + w * self.snapshots[j]

    def manifest(self) -> dict:
        return {"h": self.grid.h, "dt": self.dt, "steps": self.steps, "clamp_max": self.clamp_max,
                "outputs": len(self.times), "dim": self.grid.dim, "extents": list(self.grid.extents)}


def output_times(t0: float, t_end: float, cadence: float | None = None, times=None) -> list:
    if times is not None:
        out = sorted({float(t) for t in times if t0 - 1e-12 <= t <= t_end + 1e-12})
    else:
        if not cadence or cadence <= 0:
            raise ValueError("cadence must be positive")
        k = int(math.floor((t_end - t0) / cadence + 1e-9))
        out = [t0 + cadence * i for i in range(k + 1)]
        if t_end - out[-1] > 1e-9 * max(1.0, t_end):
            out.append(float(t_end))
    return out


def run_stepper(stepper, initial: GridState, t_end: float, dt_max: float, cadence=None, times=None,
                store: bool = True, observer: Callable | None = None) -> Trajectory:
    """Shared time loop: land exactly on every output time with the largest admissible uniform sub-step."""
    outs = output_times(initial.time, t_end, cadence, times)
    traj = Trajectory(initial.grid)
    u = initial.values.copy()
    t = initial.time
    for target in outs:
        span = target - t
        if span > 1e-12:
            n = max(1, math.ceil(span / dt_max - 1e-9))
            dt = span / n
            u, cm = stepper.advance(u, t, n, dt)
            if not np.all(np.isfinite(u)):
                raise NumericalInstability(f"non-finite values between t={t:g} and t={target:g}")
            traj.steps += n
            traj.dt = max(traj.dt, dt)
            traj.clamp_max = max(traj.clamp_max, cm)
        t = target
        if store:
            traj.times.append(t)
            traj.snapshots.append(u)
        if observer is not None and observer(GridState(initial.grid, t, u)):
            break
    if not store:
        traj.times.append(t)
        traj.snapshots.append(u)
    traj.final = GridState(initial.grid, t, u)
    return traj


def solve(p: LocalProblem, t_end: float, cadence: float | None = None, *, times=None, dt: float | None = None,
          store: bool = True, observer: Callable | None = None) -> Trajectory:
    """Integrate ``p`` up to ``t_end``.

    Parameters
    ----------
    cadence : float, optional
        Spacing of output times (used unless ``times`` is given).
    times : sequence of float, optional
        Explicit output times; each is reached exactly.
    dt : float, optional
        Maximal step; must not exceed ``stable_dt(p)``.
    store : bool
        Keep every snapshot (otherwise only the final one).
    observer : callable, optional
        Called with each output GridState; returning True stops the run.
    """
    limit = stable_dt(p)
    if dt is not None and dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the monotone limit {limit}")
    if times is None and cadence is not None and dt is None:
        dt_max = stable_dt(p, cadence)
    else:
        dt_max = dt if dt is not None else limit
    return run_stepper(_Stepper(p), p.initial, t_end, dt_max, cadence, times, store, observer)


def step(state: GridState, p: LocalProblem, dt: float) -> GridState:
    """One explicit step from ``state``."""
    if dt > stable_dt(p) * (1 + 1e-12):
        raise ValueError("dt exceeds the monotone limit")
    u, _ = _Stepper(p).advance(state.values, state.time, 1, dt)
    if not np.all(np.isfinite(u)):
        raise NumericalInstability("non-finite values after one step")
    return GridState(state.grid, state.time + dt, u)


def discrete_operator(p: LocalProblem, values, t: float = 0.0) -> np.ndarray:
    """Apply the discrete diffusion-advection operator (no reaction) to ``values``."""
    return _Stepper(p).operator(np.asarray(values, dtype=float), t)


@dataclass
class OrderingReport:
    times: np.ndarray
    violation: np.ndarray  # max_x (a - b)_+ per time

    @property
    def max_violation(self) -> float:
        return float(self.violation.max()) if self.violation.size else 0.0


def compare(traj_a: Trajectory, traj_b: Trajectory) -> OrderingReport:
    """Node-wise ordering check ``a <= b`` at the common output times."""
    if traj_a.grid != traj_b.grid:
        raise ValueError("trajectories live on different grids")
    ta, tb = np.asarray(traj_a.times), np.asarray(traj_b.times)
    if ta.shape != tb.shape or np.any(np.abs(ta - tb) > 1e-12):
        raise ValueError("trajectories have different output times")
    viol = np.array([max(float((a - b).max()), 0.0) for a, b in zip(traj_a.snapshots, traj_b.snapshots)])
    return OrderingReport(ta, viol)
