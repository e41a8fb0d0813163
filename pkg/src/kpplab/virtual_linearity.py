"""Sandwich experiments: the full solution against the envelope of cube-restricted linearized runs.

The initial datum is split into pieces supported on cubes of side ``c``;
each piece is evolved under a reaction with the same slope at zero (by
default the template ``f_u(0) min(u, 1-u)``).  The full solution is then
compared with the node-wise supremum of the pieces at shifted times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._io import atomic_write, csv_text
from .fields import KppReaction, spreading_gate, linearize, validate_kpp
from .grid import GridState, capped_sum, decompose, envelope
from .local_solver import LocalProblem, check_horizon, solve


@dataclass
class SandwichReport:
    """Per-time violations of the two-sided sandwich and the smallest closing error.

    ``phi_est = max(lower_violation, upper_violation)``: the smallest additive
    slack for which both inequalities hold at that time.  ``burn_in`` is the
    time where ``phi_est`` peaks; ``tau_delta`` is the first reported time.
    """

    delta: float
    variant: str
    shift_rule: str
    times: np.ndarray
    lower_violation: np.ndarray
    upper_violation: np.ndarray
    tau_delta: float
    members: int
    cube_scale: float
    clamp_max: float = 0.0
    constants: dict = dc_field(default_factory=dict)

    @property
    def phi_est(self) -> np.ndarray:
        return np.maximum(self.lower_violation, self.upper_violation)

    @property
    def burn_in(self) -> float:
        return float(self.times[int(np.argmax(self.phi_est))]) if self.times.size else float("nan")

    def non_increasing_after(self, t0: float | None = None, tol: float = 1e-8) -> bool:
        """True when ``phi_est`` never rises by more than ``tol`` after ``t0`` (default: the burn-in)."""
        t0 = self.burn_in if t0 is None else t0
        p = self.phi_est[self.times >= t0]
        return bool(np.all(np.diff(p) <= tol))

    def at(self, t: float) -> float:
        i = int(np.argmin(np.abs(self.times - t)))
        return float(self.phi_est[i])

    def csv(self) -> str:
        rows = zip(self.times, self.lower_violation, self.upper_violation, self.phi_est)
        meta = [f"delta={self.delta!r}", f"variant={self.variant}", f"shift_rule={self.shift_rule}",
                f"tau_delta={self.tau_delta!r}", f"burn_in={self.burn_in!r}", f"members={self.members}"]
        return csv_text(["t", "lower_violation", "upper_violation", "phi_est"], rows, meta)

    def to_csv(self, path) -> None:
        atomic_write(path, self.csv())


def _shift(rule: str, delta: float, t: float) -> float:
    if rule == "t_power_delta":
        return t ** delta
    if rule == "delta_t":
        return delta * t
    raise ValueError(f"unknown shift rule {rule!r}")


def _member_runs(problem: LocalProblem, reaction: KppReaction, cube_scale: float, times):
    fam = decompose(problem.initial, cube_scale)
    runs = []
    for key in fam.active_set:
        sub = LocalProblem(problem.field, reaction, problem.grid, fam.members[key])
        runs.append(solve(sub, max(times), times=times))
    return runs


def _family_at(runs, t):
    return [GridState(r.grid, t, r.snapshots[r.index_of(t)]) for r in runs]


def run_sandwich(problem: LocalProblem, delta: float, t_end: float, variant: str = "sup",
                 shift_rule: str = "t_power_delta", *, cube_scale: float = 1.0, times=None,
                 cadence: float = 1.0, tau_delta: float = 1.0, member_reaction: KppReaction | None = None,
                 lower_shift: bool = True, check_gate: bool = True) -> SandwichReport:
    """Measure both sides of the sandwich on the report times.

    Parameters
    ----------
    problem : LocalProblem
        Full problem; members reuse its field and grid.
    delta : float
        In ``(0, 1/2]``.
    variant : {"sup", "capped_sum"}
        How members are combined for the upper bound.
    shift_rule : {"t_power_delta", "delta_t"}
        Forward shift of the upper bound; the lower bound always looks back by ``delta t``.
    times : sequence, optional
        Report times (default: every ``cadence`` from ``tau_delta`` to ``t_end``).
    member_reaction : KppReaction, optional
        Reaction for the members (default: the template with the same slope at zero).
    lower_shift : bool
        Set False to compare members at the same time for the lower bound.
    check_gate : bool
        Refuse drifts outside the spreading gate (disable only for negative controls).
    """
    if not 0 < delta <= 0.5:
        raise ValueError("delta must lie in (0, 1/2]")
    if variant not in ("sup", "capped_sum"):
        raise ValueError(f"unknown variant {variant!r}")
    ok, margin = spreading_gate(problem.reaction, problem.field)
    if check_gate and not ok:
        raise ValueError(f"coefficients fail the structural gate (margin {margin:.3g})")
    if times is None:
        k = int(math.floor((t_end - tau_delta) / cadence + 1e-9))
        times = tau_delta + cadence * np.arange(k + 1)
    times = np.asarray(sorted(float(t) for t in times if t >= tau_delta - 1e-12))
    back = [t - delta * t if lower_shift else t for t in times]
    fwd = [t + _shift(shift_rule, delta, t) for t in times]
    t_max = max(fwd)
    check_horizon(problem, t_max)
    main = solve(problem, float(times[-1]), times=times)
    mr = linearize(problem.reaction) if member_reaction is None else member_reaction
    member_times = sorted(set(back) | set(fwd) | {0.0})
    runs = _member_runs(problem, mr, cube_scale, member_times)
    lower = np.zeros(times.size)
    upper = np.zeros(times.size)
    for i, t in enumerate(times):
        u = main.snapshots[main.index_of(t)]
        lo_env = envelope(_family_at(runs, back[i])).values
        lower[i] = max(float((lo_env - u).max()), 0.0)
        fam = _family_at(runs, fwd[i])
        hi_env = (envelope(fam) if variant == "sup" else capped_sum(fam)).values
        upper[i] = max(float((u - hi_env).max()), 0.0)
    clamp = max([main.clamp_max] + [r.clamp_max for r in runs])
    return SandwichReport(delta, variant, shift_rule, times, lower, upper, float(times[0]), len(runs),
                          cube_scale, clamp, {"h": problem.grid.h, "dt": main.dt})


def run_monotone_variant(problem: LocalProblem, delta: float, t_end: float, **kw) -> SandwichReport:
    """Members evolved under ``f`` itself; the lower bound is then compared at zero shift.

    Refuses reactions whose ``f/u`` is not non-increasing below their ``gamma``,
    or whose ``f/u`` above ``gamma`` exceeds ``f(gamma)/gamma`` at samples.
    """
    r = problem.reaction
    if not r.monotone_flag:
        raise ValueError("reaction has no monotone ratio threshold; refusing the monotone variant")
    g = r.gamma
    pts = problem.grid.points().reshape(-1, problem.grid.dim)[:: max(1, problem.grid.size // 64)]
    u_lo = np.linspace(1e-4, g, 64)
    u_hi = np.linspace(g, 1.0, 64)[1:]
    for t in np.linspace(0.0, problem.field.time_period or 1.0, 8):
        ratio_lo = r.eval(t, pts[:, None, :], u_lo[None, :]) / u_lo
        if np.any(np.diff(ratio_lo, axis=1) > 1e-12):
            raise ValueError("f/u increases below gamma; refusing the monotone variant")
        ref = r.eval(t, pts[:, None, :], np.full((1, 1), g))[:, 0] / g
        ratio_hi = r.eval(t, pts[:, None, :], u_hi[None, :]) / u_hi
        if np.any(ratio_hi > ref[:, None] + 1e-12):
            raise ValueError("f/u above gamma exceeds f(gamma)/gamma; refusing the monotone variant")
    return run_sandwich(problem, delta, t_end, member_reaction=r, lower_shift=False, **kw)


@dataclass
class EnvelopeBoundsReport:
    """Worst violations of ``s exp(-psi(s) t) env <= u <= gamma^-1 sum``."""

    s: np.ndarray
    times: np.ndarray
    lower: np.ndarray  # (n_s, n_t)
    upper: np.ndarray  # (n_t,)
    gamma: float

    @property
    def max_violation(self) -> float:
        return float(max(self.lower.max(initial=0.0), self.upper.max(initial=0.0)))


def structural_gamma(problem: LocalProblem) -> float:
    """Largest admissible threshold: at most 1/2 and at most the reciprocal coefficient bound."""
    fld, r = problem.field, problem.reaction
    bound = max(fld.Lam, fld.b_sup, r.rate_max if r.shape == "custom" else r.lipschitz_bound)
    return min(0.5, 1.0 / bound) if bound > 0 else 0.5


def envelope_bounds(problem: LocalProblem, s_samples, times, *, cube_scale: float = 1.0) -> EnvelopeBoundsReport:
    """Check the two comparison bounds between ``u`` and its linearized cube members."""
    rep = validate_kpp(problem.reaction, problem.field)
    gamma = structural_gamma(problem)
    s = np.asarray(s_samples, dtype=float)
    if np.any(s <= 0) or np.any(s > gamma):
        raise ValueError(f"s samples must lie in (0, {gamma}]")
    times = np.asarray(sorted(times), dtype=float)
    check_horizon(problem, float(times[-1]))
    main = solve(problem, float(times[-1]), times=times)
    runs = _member_runs(problem, linearize(problem.reaction), cube_scale, list(times))
    psi = rep.psi_at(s)
    lower = np.zeros((s.size, times.size))
    upper = np.zeros(times.size)
    for j, t in enumerate(times):
        u = main.snapshots[main.index_of(t)]
        fam = _family_at(runs, t)
        env = envelope(fam).values
        total = np.sum([m.values for m in fam], axis=0)
        for i in range(s.size):
            lower[i, j] = max(float((s[i] * math.exp(-psi[i] * t) * env - u).max()), 0.0)
        upper[j] = max(float((u - np.minimum(total / gamma, 1.0)).max()), 0.0)
    return EnvelopeBoundsReport(s, times, lower, upper, gamma)
