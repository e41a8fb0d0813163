"""Level-set tracking, front asymptotics fits and the advection sharpness experiment."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write, csv_text
from .fields import CoefficientField, KppReaction, make_reaction
from .grid import Grid, GridState, crossings
from .local_solver import LocalProblem, Trajectory, check_horizon, solve


@dataclass
class FrontTrack:
    """Rightmost crossing positions of level ``theta`` and the fit ``s t - k ln t + q``."""

    theta: float
    times: np.ndarray
    positions: np.ndarray  # nan where the level is absent
    window: tuple
    speed: float = float("nan")
    log_coeff: float = float("nan")
    offset: float = float("nan")
    residual: float = float("nan")

    @property
    def fit(self) -> tuple:
        return self.speed, self.log_coeff, self.offset

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        return self.speed * t - self.log_coeff * np.log(t) + self.offset

    def csv(self) -> str:
        res = self.positions - np.where(self.times > 0, self.predict(np.maximum(self.times, 1e-300)), np.nan)
        meta = [f"theta={self.theta!r}", f"speed={self.speed!r}", f"log_coeff={self.log_coeff!r}",
                f"offset={self.offset!r}", f"window={self.window!r}"]
        return csv_text(["t", "x_theta", "residual"], zip(self.times, self.positions, res), meta)

    def to_csv(self, path) -> None:
        atomic_write(path, self.csv())


def fit_front(times, positions, log_term: bool = True) -> tuple:
    """Least squares of ``x = s t - k ln t + q``; returns ``(s, k, q, rms)``."""
    t = np.asarray(times, dtype=float)
    x = np.asarray(positions, dtype=float)
    cols = [t, -np.log(t), np.ones_like(t)] if log_term else [t, np.ones_like(t)]
    M = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(M, x, rcond=None)
    rms = float(np.sqrt(np.mean((M @ coef - x) ** 2)))
    if log_term:
        return float(coef[0]), float(coef[1]), float(coef[2]), rms
    return float(coef[0]), 0.0, float(coef[1]), rms


def track(traj: Trajectory, theta: float, t_min: float = 20.0, t_max: float | None = None,
          log_term: bool = True) -> FrontTrack:
    """Rightmost level crossings of a 1D trajectory with the asymptotic fit over ``[t_min, t_max]``."""
    if traj.grid.dim != 1:
        raise ValueError("front tracking is one-dimensional")
    times = np.asarray(traj.times, dtype=float)
    pos = np.full(times.size, np.nan)
    for i, st in enumerate(traj):
        c = crossings(st, theta)
        if c is not None and c[1] is not None:
            pos[i] = c[1]
    t_max = float(times[-1]) if t_max is None else t_max
    sel = (times >= t_min - 1e-9) & (times <= t_max + 1e-9) & np.isfinite(pos) & (times > 0)
    ft = FrontTrack(theta, times, pos, (t_min, t_max))
    if sel.sum() >= (3 if log_term else 2):
        ft.speed, ft.log_coeff, ft.offset, ft.residual = fit_front(times[sel], pos[sel], log_term)
    return ft


def step_problem(h: float, length: float, drift: float = 0.0, reaction: KppReaction | None = None) -> LocalProblem:
    """``u_t = u_xx + drift u_x + g(u)`` from the indicator of ``(0, 1)``.

    Without drift the datum is symmetric about 1/2, so only ``[1/2, 1/2 + length]``
    is simulated with a mirror condition on the left.  With drift the domain is
    ``[-length, length]``.
    """
    r = make_reaction("logistic") if reaction is None else reaction
    fld = CoefficientField.isotropic(1, 1.0, drift)
    if drift == 0:
        g = Grid.box([0.5], [0.5 + length], h, ("neumann_zero", "dirichlet_zero"))
    else:
        g = Grid.box([-length], [length], h)
    x = g.axes()[0]
    u0 = GridState(g, 0.0, ((x > 0) & (x < 1)).astype(float))
    return LocalProblem(fld, r, g, u0)


@dataclass
class SharpnessReport:
    """Values of the single member at the shifted times along the moving point ``y_t``."""

    b_bar: float
    delta: float
    times: np.ndarray
    y: np.ndarray
    lower_expr: np.ndarray  # u_0'(t - delta t, y_t)
    upper_expr: np.ndarray  # u_0'(t + t^delta, y_t)
    at_point: np.ndarray  # u(t, y_t)
    fit: tuple  # (speed, log_coeff, q) of the undrifted level-1/2 front

    def csv(self) -> str:
        meta = [f"b_bar={self.b_bar!r}", f"delta={self.delta!r}", f"fit={self.fit!r}"]
        return csv_text(["t", "lower_expr", "upper_expr"], zip(self.times, self.lower_expr, self.upper_expr), meta)

    def to_csv(self, path) -> None:
        atomic_write(path, self.csv())


def sharpness_run(b_bar: float, delta: float, t_end: float, *, h: float = 0.02, times=None, t_min: float = 20.0,
                  reaction: KppReaction | None = None) -> SharpnessReport:
    """Evaluate the sandwich expressions for the constant-drift step datum.

    The drifted solution is the undrifted one ``w`` read at ``x + b t``, so a
    single undrifted run (on the symmetric half line) supplies every member
    value exactly at the requested times.
    """
    if b_bar < 0:
        raise ValueError("b_bar must be non-negative")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if times is None:
        times = np.linspace(max(t_min, 10.0), t_end, 10)
    times = np.asarray(times, dtype=float)
    back = times - delta * times
    fwd = times + times ** delta
    t_top = float(fwd.max())
    span = 2.0 * t_top + 2.0 * math.sqrt(t_top * (t_top + math.log(1e8))) + 10.0
    prob = step_problem(h, span, 0.0, reaction)
    check_horizon(prob, t_top)
    fit_times = np.arange(t_min, t_end + 1e-9, max(1.0, (t_end - t_min) / 200))
    grid_times = sorted(set(fit_times) | set(times) | set(back) | set(fwd))
    traj = solve(prob, t_top, times=grid_times)
    ft = track(traj, 0.5, t_min, t_end)
    s, k, q = ft.fit
    y = (s - b_bar) * times - k * np.log(times) + q
    g = prob.grid
    hi_edge = g.upper[0]

    def w_at(t, x):
        xx = np.abs(x - 0.5) + 0.5  # the undrifted solution is symmetric about 1/2
        if np.any(xx > hi_edge):
            raise ValueError(f"evaluation point leaves the grid; extend the domain beyond {hi_edge:.0f}")
        return np.interp(xx, g.axes()[0], traj.snapshots[traj.index_of(t)], left=np.nan)

    lower = np.array([w_at(tb, yt + b_bar * tb) for tb, yt in zip(back, y)])
    upper = np.array([w_at(tf, yt + b_bar * tf) for tf, yt in zip(fwd, y)])
    here = np.array([w_at(t, yt + b_bar * t) for t, yt in zip(times, y)])
    return SharpnessReport(b_bar, delta, times, y, lower, upper, here, ft.fit)
