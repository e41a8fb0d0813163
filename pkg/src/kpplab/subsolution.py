"""Explicit radially symmetric plateau subsolutions and the level ladder built from them.

A damped oscillation ``exp(y Re z) sin(y Im z)`` solving a constant-coefficient
second-order ODE is cut at its first zero, extended linearly below its last
inflection point and capped by a smooth concave shoulder.  Rescaled and
translated ballistically it gives plateaus that spread at speed ``q`` while
their height grows like ``exp(C t / 2)``; the ladder stacks such plateaus at
levels ``v_k`` increasing to 1.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import optimize

from ._io import atomic_write, csv_text
from .local_solver import LocalProblem, discrete_operator, solve


def _smooth(tau):
    return tau * tau * (3.0 - 2.0 * tau)


@dataclass
class PlateauProfile:
    """Profile constants and the tabulable functions ``xi_tilde``, ``xi``, ``zeta``.

    ``zeta`` is constant on ``(-inf, y0]``, a concave C2 shoulder on ``[y0, y1]``,
    linear on ``[y1, y2]``, the oscillation on ``[y2, y3]`` and zero beyond.
    """

    beta: float
    lam: float
    B: float
    d: int
    Lam: float
    z: complex
    anchors: tuple  # y0, y1, y2, y3
    margin: float = 0.0

    @property
    def C(self) -> float:
        return self.B / 4 * math.sqrt(self.beta / self.lam)

    @property
    def p(self) -> float:
        return 3 * (self.d + self.Lam) / self.B

    @property
    def q(self) -> float:
        return self.B / 3

    @property
    def a1(self) -> float:
        """First-order coefficient ``2 sqrt(beta lam) - B/3``."""
        return 2 * math.sqrt(self.beta * self.lam) - self.B / 3

    @property
    def discriminant(self) -> float:
        return self.a1 ** 2 - 4 * self.lam * (self.beta - self.C)

    def xi_tilde(self, y, order: int = 0):
        y = np.asarray(y, dtype=float)
        w = self.z ** order * np.exp(self.z * y)
        return w.imag

    def xi(self, y, order: int = 0):
        y = np.asarray(y, dtype=float)
        _, _, y2, y3 = self.anchors
        lin = self.xi_tilde(y2) + self.xi_tilde(y2, 1) * (y - y2) if order == 0 else (
            self.xi_tilde(y2, 1) * np.ones_like(y) if order == 1 else np.zeros_like(y))
        mid = self.xi_tilde(np.clip(y, y2, y3), order)
        return np.where(y > y3, 0.0, np.where(y >= y2, mid, lin))

    def zeta(self, y, order: int = 0):
        y = np.asarray(y, dtype=float)
        y0, y1, y2, _ = self.anchors
        D = y1 - y0
        s = float(self.xi_tilde(y2, 1))
        tau = np.clip((y - y0) / D, 0.0, 1.0)
        if order == 0:
            sh = float(self.xi(y1)) - s * D * (0.5 - tau ** 3 + tau ** 4 / 2)
        elif order == 1:
            sh = s * _smooth(tau)
        else:
            sh = s * 6 * tau * (1 - tau) / D
        return np.where(y >= y1, self.xi(y, order), sh)

    @property
    def top(self) -> float:
        """``zeta(y0)``, the plateau value."""
        return float(self.zeta(self.anchors[0]))

    def profile_inequality(self, y):
        """Left side of the profile inequality (positive where the radial estimate closes)."""
        zpp = self.zeta(y, 2)
        curv = np.where(zpp >= 0, self.lam * zpp, self.Lam * zpp)
        return curv - self.a1 * np.abs(self.zeta(y, 1)) + (self.beta - self.C) * self.zeta(y)

    def extension_inequality_discrete(self, h: float = 1e-3) -> float:
        """Minimum over tabulation nodes of the linear-extension inequality with centered differences."""
        y0, _, _, y3 = self.anchors
        y = np.arange(y0 - 1.0, y3 - h, h)
        xi = self.xi(y)
        xp = self.xi(y + h)
        xm = self.xi(y - h)
        d2 = (xp - 2 * xi + xm) / (h * h)
        d1 = (xp - xm) / (2 * h)
        val = self.lam * np.abs(d2) - self.a1 * np.abs(d1) + (self.beta - self.C) * xi
        return float(val.min())

    def to_csv(self, path, h: float = 0.01) -> None:
        y0, _, _, y3 = self.anchors
        y = np.arange(y0 - 1.0, y3 + 1.0 + h / 2, h)
        meta = [f"z={self.z!r}", f"anchors={tuple(float(a) for a in self.anchors)!r}", f"C={self.C!r}",
                f"p={self.p!r}", f"q={self.q!r}"]
        atomic_write(path, csv_text(["y", "xi", "zeta"], zip(y, self.xi(y), self.zeta(y)), meta))


def build_profile(beta: float, lam: float, B: float, d: int = 1, Lam: float | None = None,
                  h: float = 1e-3) -> PlateauProfile:
    """Construct the profile; the shoulder width is the smallest (times 1.1) with non-negative margin."""
    Lam = lam if Lam is None else Lam
    if not 0 < B <= 2 * math.sqrt(beta * lam) + 1e-12:
        raise ValueError("B must lie in (0, 2 sqrt(beta lam)]")
    C = B / 4 * math.sqrt(beta / lam)
    a1 = 2 * math.sqrt(beta * lam) - B / 3
    disc = a1 * a1 - 4 * lam * (beta - C)
    if disc >= 0:
        raise ValueError("profile quadratic has real roots")
    z = (-a1 + cmath.sqrt(disc)) / (2 * lam)
    if z.imag < 0:
        z = z.conjugate()
    a, b = z.real, z.imag
    y3 = math.pi / b

    def second(y):
        return math.exp(a * y) * ((a * a - b * b) * math.sin(b * y) + 2 * a * b * math.cos(b * y))

    grid = np.linspace(1e-9, y3 - 1e-9, 4001)
    vals = np.array([second(y) for y in grid])
    roots = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    if roots.size == 0:
        raise ValueError("oscillation has no inflection point before its zero")
    i = roots[-1]
    y2 = optimize.brentq(second, grid[i], grid[i + 1], xtol=1e-14)

    def make(D):
        return PlateauProfile(beta, lam, B, d, Lam, z, (y2 - 2 * D, y2 - D, y2, y3))

    def margin(D):
        # elsewhere the inequality holds with equality or better by construction
        prof = make(D)
        y = np.arange(prof.anchors[0], prof.anchors[1] + h / 2, h)
        return float(prof.profile_inequality(y).min())

    lo, hi = 1e-3, 1.0
    while margin(hi) < 0:
        hi *= 2
        if hi > 1e4:
            raise ValueError("shoulder search failed: margin stays negative")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0:
            hi = mid
        else:
            lo = mid
    D = 1.1 * hi
    prof = make(D)
    y = np.arange(prof.anchors[0] - 1.0, y3 - h / 2, h)
    prof.margin = float(prof.profile_inequality(y).min())
    return prof


# ---------------------------------------------------------------------------
# ladder


@dataclass
class PlateauMember:
    """``u(t, x) = base + min(exp(C (t - t0) / 2) amp, cap) / zeta(y0) * zeta(|x| + y0 - p - q (t - t_shift))``.

    ``cutoff`` (when set) zeroes the member beyond radius
    ``y3 - y0 + p + q (t - t0)``.
    """

    profile: PlateauProfile
    base: float
    amp: float
    cap: float
    t0: float
    t_shift: float
    cutoff: bool = False

    def level(self, t):
        return self.base + np.minimum(np.exp(self.profile.C * (np.asarray(t, dtype=float) - self.t0) / 2) * self.amp,
                                      self.cap)

    def _arg(self, t, r):
        pr = self.profile
        return r + pr.anchors[0] - pr.p - pr.q * (t - self.t_shift)

    def _radius(self, x):
        x = np.asarray(x, dtype=float)
        return np.abs(x[..., 0]) if x.shape[-1] == 1 else np.linalg.norm(x, axis=-1)

    def _inside(self, t, r):
        if not self.cutoff:
            return np.ones(np.shape(r), dtype=bool)
        pr = self.profile
        return r < pr.anchors[3] - pr.anchors[0] + pr.p + pr.q * (t - self.t0)

    def value(self, t, x):
        pr = self.profile
        r = self._radius(x)
        g = np.minimum(np.exp(pr.C * (t - self.t0) / 2) * self.amp, self.cap)
        val = self.base + g / pr.top * pr.zeta(self._arg(t, r))
        return np.where(self._inside(t, r), val, 0.0)

    def time_derivative(self, t, x):
        """Worse (larger) of the one-sided time derivatives."""
        pr = self.profile
        r = self._radius(x)
        e = math.exp(pr.C * (t - self.t0) / 2) * self.amp
        g = min(e, self.cap)
        dg = pr.C / 2 * e if e <= self.cap * (1 + 1e-12) else 0.0
        y = self._arg(t, r)
        dval = dg / pr.top * pr.zeta(y) - g / pr.top * pr.zeta(y, 1) * pr.q
        return np.where(self._inside(t, r), dval, 0.0)


@dataclass
class LadderRung:
    """Subsolution ``max`` of a plateau stack, valid from ``t_start``."""

    k: int
    parts: list
    t_start: float

    def _eval(self, t, x):
        vals = np.stack([p.value(t, x) for p in self.parts])
        ders = np.stack([p.time_derivative(t, x) for p in self.parts])
        return vals, ders

    def value(self, t, x):
        return self._eval(t, x)[0].max(axis=0)

    def time_derivative(self, t, x):
        """Derivative of the maximal branch; on ties the largest derivative (worse case)."""
        vals, ders = self._eval(t, x)
        top = vals.max(axis=0)
        tie = vals >= top - 1e-14
        return np.where(tie, ders, -np.inf).max(axis=0)


@dataclass
class Ladder:
    profile: PlateauProfile
    v: float
    v0: float
    levels: np.ndarray  # v_0, v_1, ...
    times: np.ndarray  # t_{v,0}, t_{v,1}, ...
    sigma: float
    lipschitz: float
    members: list = dc_field(default_factory=list)  # LadderRung per k

    @property
    def K(self) -> int:
        return int(self.levels.size - 1)

    def start_time(self, k: int) -> float:
        """``t_{v,k-1}`` (0 for the first rung)."""
        return 0.0 if k == 0 else float(self.times[k - 1])

    def to_csv(self, path) -> None:
        rows = [(k, self.levels[k], self.times[k]) for k in range(self.levels.size)]
        meta = [f"v={self.v!r}", f"v0={self.v0!r}", f"sigma={self.sigma!r}"]
        atomic_write(path, csv_text(["k", "v_k", "t_vk"], rows, meta))


def choose_v0(profile: PlateauProfile, u, psi) -> float:
    """Largest tabulated level whose defect modulus is at most ``C/2``."""
    u = np.asarray(u, dtype=float)
    ok = np.asarray(psi) <= profile.C / 2
    if not np.any(ok):
        raise ValueError("defect modulus exceeds C/2 at every sampled level")
    return float(u[ok].max())


def build_ladder(profile: PlateauProfile, f0, v: float, v0: float, lipschitz: float = 1.0,
                 top: float = 0.99, max_rungs: int = 500) -> Ladder:
    """Generate levels ``v_{k+1} = v_k + f0(v_k) / (2 beta - C + L)`` until ``v_K >= top``.

    ``f0`` is a callable lower reaction envelope; ``lipschitz`` (at least 1) its Lipschitz constant.
    """
    if not 0 < v <= v0:
        raise ValueError("need 0 < v <= v0")
    probe = np.linspace(1e-3, 1 - 1e-3, 999)
    if np.any(np.asarray(f0(probe)) <= 0):
        raise ValueError("f0 must be strictly positive on (0, 1)")
    pr = profile
    L = max(1.0, lipschitz)
    denom = 2 * pr.beta - pr.C + L
    y0, y3 = pr.anchors[0], pr.anchors[3]
    t00 = max(2 / pr.C * math.log(v0 / v), (y3 - y0) / pr.q)
    sigma = max(2 / pr.C * math.log(2.0), (y3 - y0) / pr.q)
    levels = [v0]
    while levels[-1] < top:
        if len(levels) > max_rungs:
            raise ValueError("ladder does not reach the top level within the rung budget")
        levels.append(levels[-1] + float(f0(levels[-1])) / denom)
    levels = np.array(levels)
    times = t00 + sigma * np.arange(levels.size)
    parts = [PlateauMember(pr, 0.0, v, v0, 0.0, 0.0)]
    rungs = [LadderRung(0, list(parts), 0.0)]
    for k in range(1, levels.size):
        r = levels[k] - levels[k - 1]
        tk = float(times[k - 1])
        parts.append(PlateauMember(pr, levels[k - 1] - r, r, 2 * r, tk, tk, cutoff=True))
        rungs.append(LadderRung(k, list(parts), tk))
    return Ladder(pr, v, v0, levels, times, sigma, L, rungs)


# ---------------------------------------------------------------------------
# verification


@dataclass
class ResidualReport:
    """Minimum of ``L u + f(u) - u_t`` over nodes and times, split by radius."""

    min_residual: float
    min_outer: float  # |x| >= p
    min_inner: float
    worst_time: float
    worst_x: np.ndarray
    times: np.ndarray

    def passed(self, tol: float) -> bool:
        return self.min_residual >= -tol


def verify_subsolution(member, problem: LocalProblem, t_window, n_times: int = 41) -> ResidualReport:
    """Evaluate the discrete residual of a closed-form member on the problem grid.

    ``member`` exposes ``value(t, x)`` and ``time_derivative(t, x)``; the
    spatial operator is the same discrete stencil the solver uses, so kinks
    are seen through both neighbouring differences.
    """
    t_lo, t_hi = t_window
    times = np.linspace(t_lo, t_hi, n_times)
    pts = problem.grid.points()
    r = np.linalg.norm(pts, axis=-1)
    p_rad = getattr(getattr(member, "profile", None), "p", None)
    if p_rad is None:
        p_rad = member.parts[0].profile.p
    worst = (math.inf, 0.0, None)
    outer = inner = math.inf
    for t in times:
        u = member.value(t, pts)
        res = discrete_operator(problem, u, t) + problem.reaction.eval(t, pts, u) - member.time_derivative(t, pts)
        i = np.unravel_index(int(np.argmin(res)), res.shape)
        if res[i] < worst[0]:
            worst = (float(res[i]), float(t), pts[i])
        far = r >= p_rad
        if np.any(far):
            outer = min(outer, float(res[far].min()))
        if np.any(~far):
            inner = min(inner, float(res[~far].min()))
    return ResidualReport(worst[0], outer, inner, worst[1], worst[2], times)


def ladder_ordering(ladder: Ladder, grid, k_max: int = 5) -> np.ndarray:
    """``max_x (u_{v,k} - u_{v,k-1})_+`` at ``t_{v,k-1}`` for ``k = 1..k_max``."""
    pts = grid.points()
    out = []
    for k in range(1, min(k_max, ladder.K) + 1):
        t = ladder.start_time(k)
        a = ladder.members[k].value(t, pts)
        b = ladder.members[k - 1].value(t, pts)
        out.append(max(float((a - b).max()), 0.0))
    return np.array(out)


def ride_ladder(ladder: Ladder, problem: LocalProblem, k_max: int = 5) -> np.ndarray:
    """Solve from ``u_{v,0}(0)`` and return ``max_x (u_{v,k+1} - u)_+`` at ``t_{v,k}`` for ``k = 0..k_max``."""
    pts = problem.grid.points()
    init = problem.initial.with_values(np.clip(ladder.members[0].value(0.0, pts), 0.0, 1.0), 0.0)
    ks = list(range(0, min(k_max, ladder.K - 1) + 1))
    times = [float(ladder.times[k]) for k in ks]
    traj = solve(problem.with_initial(init), max(times), times=times)
    out = []
    for k, t in zip(ks, times):
        u = traj.snapshots[traj.index_of(t)]
        sub = ladder.members[k + 1].value(t, pts)
        out.append(max(float((sub - u).max()), 0.0))
    return np.array(out)


# ---------------------------------------------------------------------------
# hair trigger


@dataclass
class TriggerTable:
    thetas: np.ndarray
    times: np.ndarray  # nan where not triggered by t_end
    t_end: float

    @property
    def missing(self) -> list:
        return [float(th) for th, t in zip(self.thetas, self.times) if not np.isfinite(t)]

    def at(self, theta: float) -> float:
        i = int(np.argmin(np.abs(self.thetas - theta)))
        return float(self.times[i])


def hair_trigger_probe(problem: LocalProblem, theta_levels=(0.5, 0.7, 0.9, 0.99), radius: float = 1.0,
                       t_end: float = 50.0, cadence: float = 0.05, center=None) -> TriggerTable:
    """First output time at which ``u >= theta'`` on the whole ball ``B_radius(center)``."""
    thetas = np.asarray(sorted(theta_levels), dtype=float)
    pts = problem.grid.points()
    c = np.zeros(problem.grid.dim) if center is None else np.asarray(center, dtype=float)
    ball = np.linalg.norm(pts - c, axis=-1) <= radius
    if not np.any(ball):
        raise ValueError("probe ball contains no grid nodes")
    hit = np.full(thetas.size, np.nan)

    def observe(state):
        low = float(state.values[ball].min())
        new = np.isnan(hit) & (low >= thetas)
        hit[new] = state.time
        return bool(np.all(np.isfinite(hit)))

    observe(problem.initial)
    if not np.all(np.isfinite(hit)):
        solve(problem, t_end, cadence, store=False, observer=observe)
    return TriggerTable(thetas, hit, t_end)
