"""Random time-periodic environments, passage times, spreading speeds and the Wulff shape.

Environments are evaluated pointwise from a counter-based hash of
``(seed, lattice index)``, so translating the environment is the same
arithmetic as translating the evaluation point.  On dyadic grids with
integer shifts every passage-time run is reproduced bit for bit.
"""
from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy import ndimage, signal, stats
from scipy.spatial import ConvexHull
from scipy.spatial.distance import directed_hausdorff

from ._io import atomic_write, csv_text
from .fields import CoefficientField, KppReaction, SeparableField, spreading_gate, make_reaction, periodic_modulation
from .fronts import fit_front
from .grid import Grid, GridState, pgm_bytes
from .local_solver import LocalProblem, solve

# ---------------------------------------------------------------------------
# counter-based hashing

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def hash_uniform(seed: int, salt: int, *index) -> np.ndarray:
    """Uniforms in [0, 1) keyed by ``(seed, salt, index...)``; integer index arrays broadcast."""
    with np.errstate(over="ignore"):
        h = _mix(np.atleast_1d(np.uint64(seed % 2 ** 64)) * _GOLD + np.uint64(salt))
        for a in index:
            k = np.atleast_1d(np.asarray(a, dtype=np.int64)).view(np.uint64)
            h = _mix(h ^ (k + _GOLD))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def _smoothstep(s):
    return s * s * (3.0 - 2.0 * s)


# ---------------------------------------------------------------------------
# textures: functions of points (..., d) with values in [0, 1]


def _checkerboard(seed, P, cell=2.0, blend=0.5):
    """Random cell values with smoothed transitions of relative width ``blend`` at cell faces."""
    q = P / cell - 0.5
    i = np.floor(q)
    f = q - i
    i = i.astype(np.int64)
    up = _smoothstep(np.clip((f - 0.5) / blend + 0.5, 0.0, 1.0))
    out = np.zeros(P.shape[:-1])
    for corner in itertools.product((0, 1), repeat=P.shape[-1]):
        wt = np.ones(P.shape[:-1])
        idx = []
        for k, c in enumerate(corner):
            wt = wt * (up[..., k] if c else 1.0 - up[..., k])
            idx.append(i[..., k] + c)
        out += wt * hash_uniform(seed, 1, *idx).reshape(out.shape)
    return np.clip(out, 0.0, 1.0)


def _random_fourier(seed, P, n_modes=16, wavelength=4.0):
    """Average of ``n_modes`` plane cosines with hashed directions and phases, mapped to [0, 1]."""
    d = P.shape[-1]
    j = np.arange(int(n_modes))
    phase = 2.0 * np.pi * hash_uniform(seed, 3, j)
    if d == 1:
        dirs = np.where(hash_uniform(seed, 4, j) < 0.5, -1.0, 1.0)[:, None]
    else:
        ang = 2.0 * np.pi * hash_uniform(seed, 2, j)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    k = 2.0 * np.pi / wavelength
    acc = np.zeros(P.shape[:-1])
    for m in range(j.size):
        acc += np.cos(k * (P @ dirs[m]) + phase[m])
    return np.clip(0.5 + 0.5 * acc / j.size, 0.0, 1.0)


def _poisson_bumps(seed, P, density=0.3, radius=1.0, cell=1.0, n_max=4):
    """Sum of ``(1 - r^2/radius^2)^2`` bumps at Poisson points (``density`` per unit volume), capped at 1."""
    d = P.shape[-1]
    lam = density * cell ** d
    # inverse Poisson CDF, truncated at n_max
    cdf = np.cumsum([math.exp(-lam) * lam ** k / math.factorial(k) for k in range(int(n_max))])
    i = np.floor(P / cell).astype(np.int64)
    reach = int(math.ceil(radius / cell))
    acc = np.zeros(P.shape[:-1])
    for off in itertools.product(range(-reach, reach + 1), repeat=d):
        c = [i[..., k] + off[k] for k in range(d)]
        count = np.searchsorted(cdf, hash_uniform(seed, 5, *c), side="right").reshape(acc.shape)
        for b in range(int(n_max)):
            live = count > b
            if not live.any():
                break
            r2 = np.zeros(acc.shape)
            for k in range(d):
                ck = (c[k] + hash_uniform(seed, 10 + 2 * b + k, *c).reshape(acc.shape)) * cell
                r2 += (P[..., k] - ck) ** 2
            s = np.clip(1.0 - r2 / (radius * radius), 0.0, None)
            acc += np.where(live, s * s, 0.0)
    return np.minimum(acc, 1.0)


def _stripes(seed, P, wavelength=2.0 * math.pi, phase=0.0):
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * P[..., 0] / wavelength + phase)


def _constant(seed, P, level=0.0):
    return np.full(P.shape[:-1], float(level))


GENERATORS = {
    "checkerboard_smoothed": _checkerboard,
    "random_fourier": _random_fourier,
    "poisson_bumps": _poisson_bumps,
    "stripes": _stripes,
    "constant": _constant,
}


# ---------------------------------------------------------------------------
# environments


@dataclass(frozen=True)
class RandomEnvironment:
    """Logistic reaction rate ``f_u(t, x, 0)`` drawn from a stationary generator.

    ``rate(t, x) = m + (M - m) V(x + shift) (1 - a/2 + (a/2) sin(2 pi t / period))``
    with texture ``V`` in [0, 1] and time amplitude ``a`` in [0, 1], so the rate
    stays in ``[m, M]``.  Diffusion is ``diffusivity * I`` and there is no drift.
    """

    kind: str
    seed: int = 0
    dim: int = 2
    m: float = 1.0
    M: float = 2.0
    params: tuple = ()
    time_period: float = 1.0
    time_amplitude: float = 0.0
    diffusivity: float = 1.0
    shift: tuple = ()

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if not self.shift:
            object.__setattr__(self, "shift", (0.0,) * self.dim)
        if len(self.shift) != self.dim:
            raise ValueError("shift length must equal dim")

    @property
    def options(self) -> dict:
        return dict(self.params)

    def texture(self, x) -> np.ndarray:
        P = np.asarray(x, dtype=float) + np.asarray(self.shift, dtype=float)
        return GENERATORS[self.kind](self.seed, P, **self.options)

    def _base(self, x):
        return self.m + (self.M - self.m) * (1.0 - 0.5 * self.time_amplitude) * self.texture(x)

    def _pert(self, x):
        return (self.M - self.m) * (0.5 * self.time_amplitude) * self.texture(x)

    def rate_field(self) -> SeparableField:
        if self.time_amplitude > 0:
            return SeparableField(self._base, self._pert, periodic_modulation(self.time_period), name=self.kind)
        return SeparableField(self._base, name=self.kind)

    def __call__(self, t, x) -> np.ndarray:
        return self.rate_field()(t, x)

    def shifted(self, y) -> "RandomEnvironment":
        """The translated environment ``x -> env(x + y)``."""
        y = np.broadcast_to(np.asarray(y, dtype=float), (self.dim,))
        return replace(self, shift=tuple(float(s + v) for s, v in zip(self.shift, y)))

    def reaction(self) -> KppReaction:
        return make_reaction("logistic", self.rate_field(), rate_max=self.M, name=f"logistic[{self.kind}]")

    def coefficients(self) -> CoefficientField:
        tp = self.time_period if self.time_amplitude > 0 else None
        return CoefficientField.isotropic(self.dim, self.diffusivity, 0.0, tp)

    def problem(self, grid: Grid, initial: GridState) -> LocalProblem:
        return LocalProblem(self.coefficients(), self.reaction(), grid, initial)

    def horizon(self, t_end: float, eps: float = 1e-8) -> float:
        """Distance beyond which the solution from a bounded datum stays below ``eps`` up to ``t_end``."""
        T = max(t_end, 1e-12)
        return 2.0 * math.sqrt(self.diffusivity * T * (self.M * T + math.log(1.0 / eps)))

    @property
    def slowest_speed(self) -> float:
        """Spreading speed of the homogeneous problem with the lower rate bound."""
        return 2.0 * math.sqrt(self.m * self.diffusivity)

    @property
    def gamma(self) -> float:
        """Structural threshold: at most 1/2 and at most the reciprocal of the coefficient bounds."""
        return min(0.5, 1.0 / max(self.diffusivity, self.M))

    def describe(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "dim": self.dim, "m": self.m, "M": self.M,
                "params": self.options, "time_period": self.time_period, "time_amplitude": self.time_amplitude,
                "diffusivity": self.diffusivity, "shift": list(self.shift)}


def sample_environment(kind: str, params: dict | None = None, seed: int = 0, *, dim: int = 2, m: float = 1.0,
                       M: float = 2.0, time_period: float = 1.0, time_amplitude: float = 0.0,
                       diffusivity: float = 1.0, n_probe: int = 4096) -> RandomEnvironment:
    """Build an environment and self-check its bounds at hashed probe points.

    Raises
    ------
    ValueError
        For invalid bounds, or when a probe leaves ``[m, M]`` or the spreading gate fails.
    """
    if not 0 < m <= M:
        raise ValueError("need 0 < m <= M")
    if not 0 <= time_amplitude <= 1:
        raise ValueError("time_amplitude must lie in [0, 1]")
    if time_period <= 0 or diffusivity <= 0:
        raise ValueError("time_period and diffusivity must be positive")
    env = RandomEnvironment(kind, int(seed), dim, float(m), float(M), tuple(sorted((params or {}).items())),
                            float(time_period), float(time_amplitude), float(diffusivity))
    j = np.arange(n_probe)
    x = np.stack([2000.0 * hash_uniform(seed, 90 + k, j) - 1000.0 for k in range(dim)], axis=-1)
    t = time_period * hash_uniform(seed, 99, j)
    vals = env(t, x)
    if not np.all(np.isfinite(vals)) or vals.min() < m - 1e-12 or vals.max() > M + 1e-12:
        raise ValueError(f"environment leaves [{m}, {M}] at probe points: [{vals.min()}, {vals.max()}]")
    ok, margin = spreading_gate(env.reaction(), env.coefficients())
    if not ok:
        raise ValueError(f"environment fails the spreading gate (margin {margin:.3g})")
    return env


def ensemble(kind: str, seeds, params: dict | None = None, **kw) -> list:
    return [sample_environment(kind, params, s, **kw) for s in seeds]


# ---------------------------------------------------------------------------
# passage times


@dataclass(frozen=True)
class PassageEntry:
    """Passage time from the ball around ``y`` to the ball around ``z``.

    ``status`` is ``"ok"``, ``"budget"`` (not confirmed before the time budget)
    or ``"unreachable"`` (target ball holds no grid node, or the run died out).
    ``burn_in`` is the confirmed hitting time of the source ball itself, only
    for ``y == z`` where ``tau`` is 0 by definition.
    """

    y: tuple
    z: tuple
    tau: float
    status: str
    burn_in: float = float("nan")
    seed: int = 0

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.z, self.y)))

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class PassageRun:
    entries: list
    grid: Grid
    t_stop: float
    steps: int
    dt: float


def default_budget(env: RandomEnvironment, distance: float) -> float:
    """Generous time budget: 1.25 times the travel time at the slowest spreading speed, plus 8."""
    return float(math.ceil(1.25 * distance / env.slowest_speed + 8.0))


def _key(p) -> tuple:
    return tuple(round(float(v), 9) for v in np.atleast_1d(p))


def passage_times(env: RandomEnvironment, y, targets, *, h: float = 0.25, budget: float | None = None,
                  window: float = 3.0, cadence: float = 0.125, theta: float = 0.5, radius: float = 1.0,
                  eps: float = 1e-8) -> PassageRun:
    """All passage times from source ``y`` with one solve.

    The datum is ``theta`` on the open ball ``B_radius(y)``.  The time for a
    target ``z`` is the first integer ``t`` such that ``u >= theta`` on every
    node of ``B_radius(z)`` at all sampled times in ``[t, t + window * period]``.

    Parameters
    ----------
    h : float
        Spacing; the grid is aligned to multiples of ``h`` and sized to contain
        the farthest target plus the supersolution horizon of the run.
    budget : float, optional
        Largest passage time searched for (default ``default_budget``).
    cadence : float
        Sampling interval of the confirmation test.
    """
    d = env.dim
    y = np.broadcast_to(np.asarray(y, dtype=float), (d,))
    Z = np.asarray(targets, dtype=float).reshape(-1, d)
    dist = np.linalg.norm(Z - y, axis=1)
    dmax = float(dist.max(initial=0.0))
    if budget is None:
        budget = default_budget(env, dmax)
    confirm = window * env.time_period
    t_end = float(budget) + confirm
    L = h * math.ceil((dmax + radius + env.horizon(t_end, eps)) / h)
    grid = Grid.box(y - L, y + L, h)
    pts = grid.points().reshape(-1, d)
    r2 = radius * radius
    u0 = np.where(np.sum((pts - y) ** 2, axis=1) < r2, theta, 0.0).reshape(grid.shape)
    balls = [np.flatnonzero(np.sum((pts - z) ** 2, axis=1) < r2) for z in Z]
    n = len(balls)
    last_fail = np.full(n, -1.0)
    tau = np.full(n, np.nan)
    open_ = np.array([b.size > 0 for b in balls])
    died = [False]

    def observe(st: GridState) -> bool:
        s = st.time
        u = st.values.reshape(-1)
        if u.max() < 1e-12:
            died[0] = True
            return True
        for j in np.flatnonzero(open_):
            if u[balls[j]].min() < theta:
                last_fail[j] = s
            cand = 0.0 if last_fail[j] < 0 else math.floor(last_fail[j]) + 1.0
            if s >= cand + confirm - 1e-9:
                tau[j] = cand
                open_[j] = False
        return not open_.any()

    traj = solve(env.problem(grid, GridState(grid, 0.0, u0)), t_end, cadence, store=False, observer=observe)
    entries = []
    for j, z in enumerate(Z):
        same = dist[j] == 0
        if np.isfinite(tau[j]):
            e = PassageEntry(_key(y), _key(z), 0.0 if same else float(tau[j]), "ok",
                             float(tau[j]) if same else float("nan"), env.seed)
        else:
            status = "unreachable" if (balls[j].size == 0 or died[0]) else "budget"
            e = PassageEntry(_key(y), _key(z), float("nan"), status, float("nan"), env.seed)
        entries.append(e)
    return PassageRun(entries, grid, float(traj.final.time), traj.steps, traj.dt)


def passage_time(env: RandomEnvironment, y, z, solver_budget: float | None = None, **kw) -> PassageEntry:
    """Single passage time (see ``passage_times``)."""
    return passage_times(env, y, [z], budget=solver_budget, **kw).entries[0]


def shift_pair(env: RandomEnvironment, x, y, z, *, h: float = 0.25, **kw) -> tuple:
    """``(tau(y, z) in env shifted by x, tau(x + y, x + z) in env)``; ``x`` must be a multiple of ``h``."""
    x = np.broadcast_to(np.asarray(x, dtype=float), (env.dim,))
    if np.any(x / h != np.round(x / h)):
        raise ValueError("shift must be a multiple of the grid spacing")
    a = passage_time(env.shifted(x), y, z, h=h, **kw)
    b = passage_time(env, x + np.asarray(y, dtype=float), x + np.asarray(z, dtype=float), h=h, **kw)
    return a, b


@dataclass
class PassageTimeTable:
    """Collected passage-time entries with lookup by ``(y, z)``."""

    theta: float = 0.5
    radius: float = 1.0
    window: float = 3.0
    entries: list = dc_field(default_factory=list)

    def add(self, entries) -> "PassageTimeTable":
        self.entries.extend(entries.entries if isinstance(entries, PassageRun) else entries)
        return self

    def lookup(self, y, z, seed: int | None = None) -> PassageEntry | None:
        ky, kz = _key(y), _key(z)
        for e in self.entries:
            if e.y == ky and e.z == kz and (seed is None or e.seed == seed):
                return e
        return None

    def csv(self) -> str:
        d = len(self.entries[0].y) if self.entries else 2
        ax = ["x", "y"][:d]
        head = ["seed"] + [f"y_{a}" for a in ax] + [f"z_{a}" for a in ax] + ["tau", "status", "burn_in"]
        rows = [[e.seed, *e.y, *e.z, e.tau, e.status, e.burn_in] for e in self.entries]
        meta = [f"theta={self.theta!r}", f"radius={self.radius!r}", f"window={self.window!r}"]
        return csv_text(head, rows, meta)

    def to_csv(self, path) -> None:
        atomic_write(path, self.csv())


@dataclass
class TauLawsReport:
    """Empirical checks of subadditivity, linear growth, Lipschitz bound and shift covariance."""

    triples: int
    max_subadditivity_violation: float
    C_fit: float
    linear_bound_ok: bool
    lipschitz_fit: float
    lipschitz_ok: bool
    shift_pairs: int
    shift_exact: bool
    enough_data: bool

    @property
    def c(self) -> float:
        return 1.0 / self.C_fit if self.C_fit > 0 else float("inf")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_tau_laws(table: PassageTimeTable, shift_pairs=()) -> TauLawsReport:
    """Scan a table (one environment per seed) for the passage-time laws.

    Triples ``(y, x, z)`` use entries of the same seed.  The linear-growth
    constant is ``C = max tau / (|y - z| + 1)``; the Lipschitz constant is the
    largest ``|tau - tau'| / (|y - y'| + |z - z'| + 2)`` over entry pairs.
    """
    ok = [e for e in table.entries if e.ok]
    by_seed: dict = {}
    for e in ok:
        by_seed.setdefault(e.seed, {})[(e.y, e.z)] = e.tau
    triples, worst = 0, -math.inf
    for taus in by_seed.values():
        for (y, x), t1 in taus.items():
            if x == y:
                continue
            for (x2, z), t2 in taus.items():
                if x2 != x or z == x or (y, z) not in taus:
                    continue
                triples += 1
                worst = max(worst, taus[(y, z)] - t1 - t2)
    C = max((e.tau / (e.distance + 1.0) for e in ok), default=float("nan"))
    lin_ok = all(e.tau <= C * (e.distance + 1.0) + 1e-12 for e in ok)
    lip = 0.0
    for taus in by_seed.values():
        items = list(taus.items())
        for (a, ta), (b, tb) in itertools.combinations(items, 2):
            gap = np.linalg.norm(np.subtract(a[0], b[0])) + np.linalg.norm(np.subtract(a[1], b[1])) + 2.0
            lip = max(lip, abs(ta - tb) / gap)
    exact = all((p.status == q.status and (p.tau == q.tau or (math.isnan(p.tau) and math.isnan(q.tau)))
                 and (p.burn_in == q.burn_in or (math.isnan(p.burn_in) and math.isnan(q.burn_in))))
                for p, q in shift_pairs)
    return TauLawsReport(triples, float(max(worst, 0.0)) if triples else float("nan"), float(C), lin_ok,
                         float(lip), bool(lip <= C + 1e-12), len(shift_pairs), bool(exact),
                         triples >= 3 and len(shift_pairs) >= 2)


# ---------------------------------------------------------------------------
# spreading speeds


def pool_map(func, jobs, threads: int = 1) -> list:
    """Map over independent jobs; results are returned in job order whatever the completion order."""
    jobs = list(jobs)
    if threads <= 1 or len(jobs) <= 1:
        return [func(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(func, jobs))


def unit_directions(count: int, offset: float = 0.0) -> np.ndarray:
    ang = offset + 2.0 * np.pi * np.arange(count) / count
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def travel_times(envs, directions, n_list, *, threads: int = 1, **kw) -> np.ndarray:
    """``tau(0, n e)`` with shape ``(len(envs), len(directions), len(n_list))``; nan when unresolved.

    One solve per environment covers every direction and radius.
    """
    E = np.asarray(directions, dtype=float).reshape(-1, envs[0].dim)
    n = np.asarray(n_list, dtype=float)
    targets = (E[:, None, :] * n[None, :, None]).reshape(-1, E.shape[1])
    origin = np.zeros(E.shape[1])

    def job(env):
        run = passage_times(env, origin, targets, **kw)
        return np.array([e.tau for e in run.entries]).reshape(E.shape[0], n.size)

    return np.stack(pool_map(job, envs, threads))


LOG_MODES = ("bramson", "free", "none")


def kingman_fit(n_list, taus, log_term="bramson", dim: int = 2, diffusivity: float = 1.0,
                iterations: int = 60) -> np.ndarray:
    """Fit ``tau/n = a + b/n + c ln(n)/n``; returns ``(a, b, c)`` with the slowness ``a`` first.

    ``log_term`` selects the logarithmic column: ``"free"`` fits ``c``,
    ``"none"`` drops it, and ``"bramson"`` (default) fixes it at the lag of a
    front launched from compact data, ``c = (d + 2) D / w^2``, iterated to
    consistency with ``w = 1/a``.  Fixing ``c`` removes the near-collinearity
    of ``1/n`` and ``ln(n)/n`` over desk-scale radii.
    """
    if log_term is True:
        log_term = "free"
    elif log_term is False:
        log_term = "none"
    if log_term not in LOG_MODES:
        raise ValueError(f"log_term must be one of {LOG_MODES}")
    n = np.asarray(n_list, dtype=float)
    y = np.asarray(taus, dtype=float) / n
    if log_term == "free":
        coef, *_ = np.linalg.lstsq(np.stack([np.ones_like(n), 1.0 / n, np.log(n) / n], axis=1), y, rcond=None)
        return coef
    A = np.stack([np.ones_like(n), 1.0 / n], axis=1)
    if log_term == "none":
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        return np.array([coef[0], coef[1], 0.0])
    c = 0.0
    coef = np.zeros(2)
    for _ in range(iterations):
        coef, *_ = np.linalg.lstsq(A, y - c * np.log(n) / n, rcond=None)
        c_new = (dim + 2) * diffusivity * coef[0] ** 2 if coef[0] > 0 else 0.0
        if abs(c_new - c) < 1e-14:
            break
        c = c_new
    return np.array([coef[0], coef[1], c])


@dataclass
class SpeedEstimate:
    """Spreading speed in one direction from an ensemble of passage-time sequences."""

    e: tuple
    n_list: tuple
    taus: np.ndarray  # (draws, len(n_list))
    w: float
    ci: tuple
    per_draw: np.ndarray
    monotone: bool
    log_term: str

    def rows(self):
        return [(*self.e, self.w, *self.ci)]


def _speed_from(e, n_list, taus, log_term="bramson", conf: float = 0.95, dim: int = 2,
                diffusivity: float = 1.0) -> SpeedEstimate:
    taus = np.atleast_2d(np.asarray(taus, dtype=float))
    if len(n_list) < 3:
        raise ValueError("need at least three radii")
    if np.any(np.diff(np.asarray(n_list, dtype=float)) <= 0):
        raise ValueError("radii must increase")
    good = np.all(np.isfinite(taus), axis=1)
    if not good.any():
        return SpeedEstimate(tuple(e), tuple(n_list), taus, float("nan"), (float("nan"),) * 2,
                             np.full(taus.shape[0], np.nan), False, str(log_term))
    a = np.array([kingman_fit(n_list, row, log_term, dim, diffusivity)[0] if g else np.nan
                  for row, g in zip(taus, good)])
    monotone = bool(np.all(np.diff(taus[good], axis=1) >= 0))
    mean = float(np.nanmean(a))
    k = int(good.sum())
    half = float(stats.t.ppf(0.5 + conf / 2, k - 1) * np.nanstd(a, ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    if not monotone:
        warnings.warn(f"passage times along {tuple(np.round(e, 3))} are not monotone in n; widening the interval",
                      stacklevel=3)
        half = 2.0 * half + 1.0 / max(n_list)
    lo = 1.0 / (mean + half)
    hi = 1.0 / (mean - half) if mean - half > 0 else float("inf")
    return SpeedEstimate(tuple(float(v) for v in e), tuple(n_list), taus, 1.0 / mean, (lo, hi), 1.0 / a,
                         monotone, str(log_term))


def estimate_speed(envs, e, n_list, *, log_term="bramson", threads: int = 1, **kw) -> SpeedEstimate:
    """``w(e)`` from the intercept of the fit of ``tau(0, n e)/n`` in ``1/n`` (and ``ln n / n``).

    The ``ln n / n`` term accounts for the logarithmic lag of fronts emitted
    by compact data; without it the intercept is biased at moderate ``n``
    (see ``kingman_fit``).  The interval is a Student-t interval over the
    draws, mapped through ``1/a``.
    """
    if len(envs) < 4:
        warnings.warn("fewer than four environment draws; the interval is unreliable", stacklevel=2)
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    taus = travel_times(envs, e[None, :], n_list, threads=threads, **kw)[:, 0, :]
    return _speed_from(e, n_list, taus, log_term, dim=envs[0].dim, diffusivity=envs[0].diffusivity)


# ---------------------------------------------------------------------------
# Wulff shape


@dataclass
class WulffEstimate:
    """Star-shaped set ``{s e : 0 <= s < w(e)}`` from speeds in finitely many directions.

    The radial function is interpolated linearly in angle between the
    measured directions and sampled at ``dense`` angles.
    """

    directions: np.ndarray  # (D, 2)
    speeds: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    taus: np.ndarray | None = None
    n_list: tuple = ()
    seeds: tuple = ()
    dense: int = 720

    @classmethod
    def from_speeds(cls, directions, speeds, dense: int = 720) -> "WulffEstimate":
        s = np.asarray(speeds, dtype=float)
        return cls(np.asarray(directions, dtype=float), s, s.copy(), s.copy(), dense=dense)

    @classmethod
    def disk(cls, radius: float, count: int = 64) -> "WulffEstimate":
        return cls.from_speeds(unit_directions(count), np.full(count, float(radius)))

    @property
    def angles(self) -> np.ndarray:
        return np.arctan2(self.directions[:, 1], self.directions[:, 0])

    @property
    def vertices(self) -> np.ndarray:
        return self.directions * self.speeds[:, None]

    def radial(self, angles) -> np.ndarray:
        a = np.mod(self.angles, 2 * np.pi)
        order = np.argsort(a)
        return np.interp(np.mod(angles, 2 * np.pi), a[order], self.speeds[order], period=2 * np.pi)

    def boundary(self, n: int | None = None) -> np.ndarray:
        ang = 2 * np.pi * np.arange(n or self.dense) / (n or self.dense)
        r = self.radial(ang)
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)

    def contains(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.hypot(v[..., 0], v[..., 1]) < self.radial(np.arctan2(v[..., 1], v[..., 0]))

    def support(self, e) -> float:
        e = np.asarray(e, dtype=float)
        return float((self.boundary() @ (e / np.linalg.norm(e))).max())

    def distance_to_disk(self, R: float) -> float:
        """Hausdorff distance to the centered disk of radius ``R`` (exact for star-shaped sets)."""
        return float(np.abs(self.radial(2 * np.pi * np.arange(self.dense) / self.dense) - R).max())

    def convexity_defect(self) -> float:
        """Hausdorff distance between the boundary and the boundary of its convex hull."""
        b = self.boundary()
        hull = b[ConvexHull(b).vertices]
        step = float(np.linalg.norm(np.diff(b, axis=0, append=b[:1]), axis=1).mean())
        pts = []
        for p, q in zip(hull, np.roll(hull, -1, axis=0)):
            k = max(1, int(math.ceil(np.linalg.norm(q - p) / max(step, 1e-12))))
            pts.append(p + (q - p) * (np.arange(k) / k)[:, None])
        hb = np.concatenate(pts)
        return float(max(directed_hausdorff(b, hb)[0], directed_hausdorff(hb, b)[0]))

    @property
    def speed_range(self) -> tuple:
        return float(self.speeds.min()), float(self.speeds.max())

    def csv(self) -> str:
        rows = zip(self.directions[:, 0], self.directions[:, 1], self.speeds, self.ci_lo, self.ci_hi)
        meta = [f"n_list={list(self.n_list)!r}", f"seeds={list(self.seeds)!r}"]
        return csv_text(["e_x", "e_y", "w", "ci_lo", "ci_hi"], rows, meta)

    def polygon_csv(self) -> str:
        v = self.vertices
        return csv_text(["x", "y"], zip(v[:, 0], v[:, 1]), [f"convexity_defect={self.convexity_defect()!r}"])


def speed_bounds(W: WulffEstimate, C_fit: float, gamma: float, dim: int = 2) -> tuple:
    """Two-sided bound ``c <= w(e) <= 1/c``; returns ``(c, ok)``.

    ``c = min(1/C_fit, gamma / (1 + d + d^2))``: the lower side comes from the
    fitted linear growth of passage times, the upper side from the
    exponential supersolution.
    """
    c = min(1.0 / C_fit, gamma / (1 + dim + dim * dim))
    ok = bool(c > 0 and np.all(W.speeds >= c) and np.all(W.speeds <= 1.0 / c))
    return c, ok


def support_speed(W: WulffEstimate, e) -> float:
    """Support function ``sup_{y in S} y . e``."""
    return W.support(e)


def wulff(envs, direction_count: int, n_list, *, log_term="bramson", threads: int = 1, offset: float = 0.0,
          **kw) -> WulffEstimate:
    """Speeds in ``direction_count`` equally spaced directions from one solve per draw."""
    if direction_count < 8:
        raise ValueError("need at least 8 directions")
    if envs[0].dim != 2:
        raise ValueError("the Wulff shape is assembled in two dimensions")
    E = unit_directions(direction_count, offset)
    taus = travel_times(envs, E, n_list, threads=threads, **kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = [_speed_from(E[i], n_list, taus[:, i, :], log_term, diffusivity=envs[0].diffusivity)
               for i in range(direction_count)]
    W = WulffEstimate(E, np.array([s.w for s in est]), np.array([s.ci[0] for s in est]),
                      np.array([s.ci[1] for s in est]), taus, tuple(n_list), tuple(env.seed for env in envs))
    return W


@dataclass
class HalfPlaneRun:
    e: tuple
    speed: float
    fit: tuple
    times: np.ndarray
    positions: np.ndarray

    def csv(self) -> str:
        return csv_text(["t", "position"], zip(self.times, self.positions), [f"e={self.e!r}", f"fit={self.fit!r}"])


def _axis_of(e) -> tuple:
    e = np.asarray(e, dtype=float)
    k = int(np.argmax(np.abs(e)))
    if not np.isclose(abs(e[k]), 1.0) or not np.allclose(np.delete(e, k), 0.0):
        raise ValueError("direct half-plane runs support axis-aligned directions only")
    return k, 1.0 if e[k] > 0 else -1.0


def _strip(env: RandomEnvironment, k: int, sign: float, back: float, ahead: float, width: float, h: float) -> Grid:
    """Strip along axis ``k``: Neumann on the trailing and transverse sides, Dirichlet ahead."""
    lo, hi = np.zeros(env.dim), np.zeros(env.dim)
    lo[k], hi[k] = (-back, ahead) if sign > 0 else (-ahead, back)
    pol = ["neumann_zero"] * (2 * env.dim)
    pol[2 * k + (1 if sign > 0 else 0)] = "dirichlet_zero"
    if env.dim == 2:
        hi[1 - k] = width
    return Grid.box(lo, hi, h, tuple(pol) if env.dim == 2 else tuple(pol[:2]))


def _front_position(u: np.ndarray, coord: np.ndarray, k: int, sign: float, level: float = 0.5) -> float:
    """Mean over transverse lines of the leading crossing of ``level`` along ``sign * x_k``."""
    a = u[:, None] if u.ndim == 1 else np.moveaxis(u, k, 0)
    s = coord * sign
    if sign < 0:
        a, s = a[::-1], s[::-1]
    a = a.reshape(a.shape[0], -1)
    out = []
    for j in range(a.shape[1]):
        above = np.flatnonzero(a[:, j] >= level)
        if above.size == 0:
            out.append(np.nan)
            continue
        i = above[-1]
        if i + 1 >= a.shape[0]:
            out.append(s[i])
            continue
        v0, v1 = a[i, j], a[i + 1, j]
        out.append(s[i] + (s[i + 1] - s[i]) * (v0 - level) / (v0 - v1))
    return float(np.mean(out))


def halfplane_speed(env: RandomEnvironment, e, t_end: float = 60.0, *, h: float = 0.25, width: float = 8.0,
                    t_min: float | None = None, cadence: float = 1.0, theta: float = 0.5,
                    eps: float = 1e-8) -> HalfPlaneRun:
    """Front speed from ``theta`` on ``{x . e < 0}`` along an axis-aligned ``e``.

    The fit ``s t - k ln t + q`` of the level-1/2 position over ``[t_min, t_end]``
    gives the speed ``s``.
    """
    k, sign = _axis_of(e)
    ahead = h * math.ceil(env.horizon(t_end, eps) / h) + 2.0
    g = _strip(env, k, sign, 8.0, ahead, width, h)
    x = g.points()[..., k]
    u0 = np.where(sign * x < 0, theta, 0.0)
    p = env.problem(g, GridState(g, 0.0, u0))
    traj = solve(p, t_end, cadence)
    coord = g.axes()[k]
    times = np.asarray(traj.times)
    pos = np.array([_front_position(v, coord, k, sign) for v in traj.snapshots])
    t_min = t_end / 4 if t_min is None else t_min
    sel = (times >= t_min) & np.isfinite(pos)
    s, lk, q, rms = fit_front(times[sel], pos[sel], True)
    return HalfPlaneRun(tuple(float(v) for v in np.asarray(e, dtype=float)), s, (s, lk, q, rms), times, pos)


# ---------------------------------------------------------------------------
# ballistic rescaling


@dataclass(frozen=True)
class InitialSet:
    """Initial set ``G`` in scaled coordinates: ``ball``, ``square``, ``annulus`` or ``half_plane``."""

    kind: str = "ball"
    radius: float = 1.0
    inner: float = 0.5
    e: tuple = (1.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("ball", "square", "annulus", "half_plane"):
            raise ValueError(f"unknown initial set {self.kind!r}")
        if self.kind == "annulus" and not 0 < self.inner < self.radius:
            raise ValueError("annulus needs 0 < inner < radius")

    def mask(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "half_plane":
            return x @ np.asarray(self.e, dtype=float) < 0
        if self.kind == "square":
            return np.all(np.abs(x) < self.radius, axis=-1)
        r = np.linalg.norm(x, axis=-1)
        if self.kind == "ball":
            return r < self.radius
        return (r > self.inner) & (r < self.radius)

    @property
    def extent(self) -> float:
        return self.radius * (math.sqrt(2.0) if self.kind == "square" else 1.0)


@dataclass
class RescaledTable:
    """Sup errors of ``u(t/eps, x/eps)`` against the indicator of ``G + t S`` outside a collar."""

    G: InitialSet
    collar: float
    rows: list = dc_field(default_factory=list)  # (epsilon, t, error, nodes, status)

    def errors(self, t: float) -> list:
        return [(r[0], r[2]) for r in self.rows if abs(r[1] - t) < 1e-12]

    def non_increasing(self, t: float, tol: float = 1e-12) -> bool:
        """Errors do not grow as epsilon decreases (rows with a budget flag are skipped)."""
        pairs = sorted((e, err) for e, err in self.errors(t) if np.isfinite(err))
        errs = [err for _, err in pairs]  # ascending epsilon
        return all(a <= b + tol for a, b in zip(errs, errs[1:]))

    @property
    def partial(self) -> bool:
        return any(r[4] != "ok" for r in self.rows)

    def csv(self) -> str:
        return csv_text(["epsilon", "t", "error", "nodes", "status"], self.rows,
                        [f"G={self.G.kind}", f"collar={self.collar!r}"])

    def to_csv(self, path) -> None:
        atomic_write(path, self.csv())


def _scaled_mask_error(G, W, t, eps, collar, xs, u):
    """Error outside the collar for a compact ``G`` on a rectangular node lattice ``xs`` (scaled)."""
    ax, ay = xs
    spacing = float(ax[1] - ax[0])
    X = np.stack(np.meshgrid(ax, ay, indexing="ij"), axis=-1)
    gm = G.mask(X)
    reach = t * float(W.speeds.max()) + spacing
    k = int(math.ceil(reach / spacing))
    off = spacing * np.arange(-k, k + 1)
    K = W.contains(np.stack(np.meshgrid(off, off, indexing="ij"), axis=-1) / max(t, 1e-300))
    if t <= 0:
        K = np.zeros_like(K)
        K[k, k] = True
    target = signal.fftconvolve(gm.astype(float), K.astype(float), mode="same") > 0.5
    d_in = ndimage.distance_transform_edt(target, sampling=spacing)
    d_out = ndimage.distance_transform_edt(~target, sampling=spacing)
    keep = np.where(target, d_in, d_out) > collar
    if not keep.any():
        return float("nan")
    return float(np.abs(u - target.astype(float))[keep].max())


def rescaled_convergence(env: RandomEnvironment, G: InitialSet, epsilon_list, T_list, W: WulffEstimate, *,
                         collar: float = 0.3, h: float = 0.25, theta: float = 1.0, y_shift=None,
                         width: float = 8.0, max_nodes: float = 2.0e7, eps_tail: float = 1e-8,
                         heatmaps: dict | None = None) -> RescaledTable:
    """Compare the unscaled run from ``theta`` on ``G / epsilon`` with ``chi(G + t S)``.

    For each ``epsilon`` the unscaled problem runs to ``max(T_list) / epsilon``
    and is read at ``t / epsilon``; scaled node coordinates are ``epsilon x``.
    The half-plane uses a strip with reflecting transverse and trailing sides
    and the exact interface ``x . e = t c*(e)``; compact sets use a square
    domain, the Minkowski sum by convolution and the collar by distance
    transforms.  ``y_shift`` (a multiple of ``h``) translates the environment.
    When ``heatmaps`` is a dict it receives a PGM image per ``(epsilon, t)``.
    """
    table = RescaledTable(G, collar)
    run_env = env if y_shift is None else env.shifted(y_shift)
    T_list = sorted(float(t) for t in T_list)
    t_top = T_list[-1]
    for epsilon in epsilon_list:
        t_end = t_top / epsilon
        grow = float(W.speeds.max()) * t_end + run_env.horizon(t_end, eps_tail)
        if G.kind == "half_plane":
            k, sign = _axis_of(G.e)
            grid = _strip(run_env, k, sign, (1.0 + collar) / epsilon, h * math.ceil(grow / h) + 2.0, width, h)
        else:
            L = h * math.ceil((G.extent / epsilon + grow) / h)
            grid = Grid.box([-L, -L], [L, L], h)
        if grid.size > max_nodes:
            for t in T_list:
                table.rows.append((float(epsilon), t, float("nan"), grid.size, "budget"))
            continue
        pts = grid.points()
        u0 = np.where(G.mask(epsilon * pts), theta, 0.0)
        p = run_env.problem(grid, GridState(grid, 0.0, u0))
        times = [0.0] + [t / epsilon for t in T_list]
        traj = solve(p, t_end, times=times)
        for t in [0.0] + T_list:
            u = traj.snapshots[traj.index_of(t / epsilon)]
            if G.kind == "half_plane":
                e = np.asarray(G.e, dtype=float)
                s = (epsilon * pts) @ e - t * W.support(e)
                keep = np.abs(s) > collar
                err = float(np.abs(u - (s < 0))[keep].max()) if keep.any() else float("nan")
            else:
                axes = [epsilon * a for a in grid.axes()]
                err = _scaled_mask_error(G, W, t, epsilon, collar, axes, u)
            table.rows.append((float(epsilon), t, err, grid.size, "ok"))
            if heatmaps is not None and t > 0:
                heatmaps[f"u_eps{epsilon:g}_t{t:g}.pgm"] = pgm_bytes(GridState(grid, t / epsilon, u))
    return table
