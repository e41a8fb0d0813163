"""Space-time coefficient fields, KPP reactions and their validation.

Points are arrays whose last axis holds the spatial coordinates, so a batch of
1D points has shape ``(..., 1)`` and a batch of 2D points ``(..., 2)``.  Time
arguments broadcast against ``x.shape[:-1]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

# ---------------------------------------------------------------------------
# fields


class Field:
    """Function of ``(t, x)``; subclasses may expose a separable fast path."""

    time_dependent = False

    def __call__(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def split(self):
        """Return ``(base, pert, modulation)`` with value = base(x) + modulation(t)*pert(x), or None."""
        return None


def _out_shape(t, x):
    return np.broadcast_shapes(np.shape(t), np.shape(x)[:-1])


class ConstantField(Field):
    """Field equal to a fixed scalar, vector or matrix everywhere."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def __call__(self, t, x):
        shape = _out_shape(t, x) + self.value.shape
        return np.broadcast_to(self.value, shape).copy()

    def split(self):
        v = self.value
        return (lambda x: np.broadcast_to(v, np.shape(x)[:-1] + v.shape).copy(), None, None)

    def __repr__(self):
        return f"ConstantField({self.value.tolist()!r})"


class FunctionField(Field):
    """Wrap a vectorized callable ``func(t, x)``."""

    def __init__(self, func: Callable, time_dependent: bool = True, name: str = "function"):
        self.func = func
        self.time_dependent = time_dependent
        self.name = name

    def __call__(self, t, x):
        # the wrapped callable is responsible for broadcasting t against x
        return np.asarray(self.func(t, np.asarray(x, dtype=float)), dtype=float)

    def split(self):
        if self.time_dependent:
            return None
        return (lambda x: self(0.0, x), None, None)

    def __repr__(self):
        return f"FunctionField({self.name})"


def periodic_modulation(period: float = 1.0, amplitude: float = 1.0):
    """``t -> amplitude * sin(2 pi frac(t / period))``.

    Using the fractional part makes ``m(t + period) == m(t)`` bit-exact whenever
    ``t`` and ``t + period`` are both exactly representable (e.g. dyadic t).
    """

    def modulation(t):
        q = np.asarray(t, dtype=float) / period
        return amplitude * np.sin(2.0 * np.pi * (q - np.floor(q)))

    return modulation


class SeparableField(Field):
    """Scalar field ``base(x) + modulation(t) * pert(x)``."""

    def __init__(self, base: Callable, pert: Callable | None = None, modulation: Callable | None = None,
                 name: str = "separable"):
        self.base = base
        self.pert = pert
        self.modulation = modulation
        self.time_dependent = pert is not None and modulation is not None
        self.name = name

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        val = np.asarray(self.base(x), dtype=float)
        if self.time_dependent:
            val = val + np.asarray(self.modulation(t)) * np.asarray(self.pert(x), dtype=float)
        return np.broadcast_to(val, _out_shape(t, x)).copy()

    def split(self):
        return (self.base, self.pert, self.modulation) if self.time_dependent else (self.base, None, None)

    def __repr__(self):
        return f"SeparableField({self.name})"


class TabulatedField(Field):
    """Scalar field interpolated (multilinear) from a CSV table ``t,x[,y],value``.

    Queries outside the table are clamped to its bounding box; with
    ``time_period`` set, time is wrapped into ``[t_min, t_min + period)``.
    """

    def __init__(self, axes: list[np.ndarray], values: np.ndarray, time_period: float | None = None):
        from scipy.interpolate import RegularGridInterpolator

        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        self.time_period = time_period
        self.time_dependent = self.axes[0].size > 1
        self._interp = RegularGridInterpolator(self.axes, self.values, method="linear")

    @classmethod
    def from_csv(cls, path, time_period: float | None = None) -> "TabulatedField":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        header = [c.strip() for c in rows[0]]
        if header[0] != "t" or header[-1] != "value" or len(header) not in (3, 4):
            raise ValueError(f"{path}: expected header t,x[,y],value, got {header}")
        data = np.array([[float(c) for c in r] for r in rows[1:]])
        coords = data[:, :-1]
        axes = [np.unique(coords[:, k]) for k in range(coords.shape[1])]
        shape = tuple(a.size for a in axes)
        if np.prod(shape) != data.shape[0]:
            raise ValueError(f"{path}: table is not a full tensor grid")
        idx = tuple(np.searchsorted(axes[k], coords[:, k]) for k in range(coords.shape[1]))
        values = np.empty(shape)
        values[idx] = data[:, -1]
        return cls(axes, values, time_period)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        shape = _out_shape(t, x)
        tt = np.broadcast_to(np.asarray(t, dtype=float), shape)
        if self.time_period:
            t0 = self.axes[0][0]
            tt = t0 + np.mod(tt - t0, self.time_period)
        xx = np.broadcast_to(x, shape + x.shape[-1:])
        pts = np.concatenate([tt[..., None], xx], axis=-1)
        for k, a in enumerate(self.axes):
            pts[..., k] = np.clip(pts[..., k], a[0], a[-1])
        if self.axes[0].size == 1:
            # degenerate time axis: interpolate in space only
            from scipy.interpolate import RegularGridInterpolator

            interp = RegularGridInterpolator(self.axes[1:], self.values[0], method="linear")
            return interp(pts[..., 1:])
        return self._interp(pts)


def as_field(value) -> Field:
    if isinstance(value, Field):
        return value
    if callable(value):
        return FunctionField(value)
    return ConstantField(value)


# ---------------------------------------------------------------------------
# reactions


def _g_logistic(u):
    return u * (1.0 - u)


def _g_template(u):
    return np.minimum(u, 1.0 - u)


def _g_cubic(u):
    return u * u * (1.0 - u)


# name -> (g, g'(0), Lipschitz constant of g on [0,1], monotone threshold gamma)
SHAPES = {
    "logistic": (_g_logistic, 1.0, 1.0, 0.5),
    "template": (_g_template, 1.0, 1.0, 0.5),
    "cubic": (_g_cubic, 0.0, 1.0, None),
}


@dataclass(frozen=True)
class KppReaction:
    """Reaction ``f(t, x, u) = rate(t, x) * g(u)`` for a catalogued shape ``g``.

    For ``shape="custom"`` the callable ``custom(t, x, u)`` gives f and ``rate``
    is interpreted directly as ``f_u(t, x, 0)``.

    Parameters
    ----------
    rate : Field
        Amplitude field.
    shape : str
        One of ``SHAPES`` or ``"custom"``.
    rate_max : float
        Upper bound of ``|rate|``, used for the Lipschitz bound.
    gamma : float or None
        Threshold below which ``f/u`` is non-increasing; None when it is not.
    """

    rate: Field
    shape: str = "logistic"
    rate_max: float = 1.0
    gamma: float | None = None
    custom: Callable | None = None
    lipschitz: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.shape != "custom" and self.shape not in SHAPES:
            raise ValueError(f"unknown reaction shape {self.shape!r}")
        if self.shape == "custom" and self.custom is None:
            raise ValueError("custom reaction needs a callable")

    @property
    def lipschitz_bound(self) -> float:
        if self.lipschitz is not None:
            return float(self.lipschitz)
        lip_g = SHAPES[self.shape][2] if self.shape in SHAPES else 1.0
        return float(self.rate_max) * lip_g

    @property
    def monotone_flag(self) -> bool:
        return self.gamma is not None

    def eval(self, t, x, u):
        u = np.asarray(u, dtype=float)
        if self.shape == "custom":
            out = np.asarray(self.custom(t, x, u), dtype=float)
            return np.broadcast_to(out, np.broadcast_shapes(out.shape, np.shape(self.rate(t, x)), u.shape))
        return self.rate(t, x) * SHAPES[self.shape][0](u)

    def deriv_at_zero(self, t, x):
        if self.shape == "custom":
            return self.rate(t, x)
        return self.rate(t, x) * SHAPES[self.shape][1]

    def __call__(self, t, x, u):
        return self.eval(t, x, u)


def make_reaction(shape: str = "logistic", rate=1.0, rate_max: float | None = None, name: str = "") -> KppReaction:
    """Build a catalogued reaction; constant rates fill in ``rate_max`` automatically."""
    fld = as_field(rate)
    if rate_max is None:
        if isinstance(fld, ConstantField):
            rate_max = float(np.abs(fld.value).max())
        else:
            raise ValueError("rate_max is required for non-constant rates")
    gamma = SHAPES[shape][3] if shape in SHAPES else None
    return KppReaction(rate=fld, shape=shape, rate_max=rate_max, gamma=gamma, name=name or shape)


def linearize(r: KppReaction) -> KppReaction:
    """Template reaction ``f_u(t, x, 0) * min(u, 1 - u)`` with the same slope at zero."""
    if r.shape == "template":
        return r
    if r.shape == "custom":
        rate, rmax = r.rate, r.rate_max
    else:
        slope = SHAPES[r.shape][1]
        base = r.rate
        rate = base if slope == 1.0 else FunctionField(lambda t, x: base(t, x) * slope, base.time_dependent)
        rmax = r.rate_max * abs(slope)
    return KppReaction(rate=rate, shape="template", rate_max=rmax, gamma=0.5, name=f"template({r.name})")


# ---------------------------------------------------------------------------
# coefficient fields


@dataclass(frozen=True)
class CoefficientField:
    """Diffusion matrix ``A(t, x)`` and drift ``b(t, x)`` with declared bounds.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    A, b : Field
        Matrix-valued (``(..., d, d)``) and vector-valued (``(..., d)``) fields.
    lam, Lam : float
        Ellipticity bounds ``lam I <= A <= Lam I``.
    b_sup : float
        Upper bound of ``|b|``.
    time_period : float, optional
        Temporal period, if any.
    """

    dim: int
    A: Field
    b: Field
    lam: float
    Lam: float
    b_sup: float
    time_period: float | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only dimensions 1 and 2 are supported")
        if not (0 < self.lam <= self.Lam):
            raise ValueError("need 0 < lam <= Lam")
        if self.b_sup < 0:
            raise ValueError("b_sup must be non-negative")

    @property
    def time_dependent(self) -> bool:
        return bool(self.A.time_dependent or self.b.time_dependent)

    @classmethod
    def isotropic(cls, dim: int, diffusivity: float = 1.0, drift=0.0, time_period=None) -> "CoefficientField":
        drift = np.broadcast_to(np.asarray(drift, dtype=float), (dim,)).copy()
        return cls(dim, ConstantField(diffusivity * np.eye(dim)), ConstantField(drift), diffusivity, diffusivity,
                   float(np.linalg.norm(drift)), time_period)

    def min_eigenvalue(self, t, x) -> np.ndarray:
        return np.linalg.eigvalsh(self.A(t, x))[..., 0]


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class SamplePlan:
    t: np.ndarray
    x: np.ndarray  # (n_x, d)
    u: np.ndarray

    def __post_init__(self):
        if self.t.size == 0 or self.x.size == 0 or self.u.size == 0:
            raise ValueError("sample plan must be non-empty")
        if np.any(self.u <= 0) or np.any(self.u >= 1):
            raise ValueError("u-samples must lie in (0, 1)")


def default_plan(dim: int = 1, t_span: float = 1.0, half_width: float = 2.0 * math.pi, n_t: int = 64,
                 n_x: int = 64, n_u: int = 64) -> SamplePlan:
    """64 times x 64 points x 64 u-values (half log-spaced towards 0)."""
    t = np.linspace(0.0, t_span, n_t)
    if dim == 1:
        x = np.linspace(-half_width, half_width, n_x)[:, None]
    else:
        k = int(round(math.sqrt(n_x)))
        ax = np.linspace(-half_width, half_width, k)
        x = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    n_log = n_u // 2
    u = np.concatenate([np.geomspace(1e-4, 0.05, n_log + 1)[:-1], np.linspace(0.05, 0.999, n_u - n_log)])
    return SamplePlan(t, x, np.unique(np.append(u, 0.5)))


@dataclass
class AxiomResult:
    passed: bool
    worst: float


@dataclass
class ValidationReport:
    """Per-axiom verdicts plus the tabulated defect modulus.

    ``psi`` is the non-decreasing envelope of
    ``sup_{t,x} (f_u(t,x,0) - f(t,x,u)/u)`` on ``u``; ``f_inf`` is the
    infimum of ``f(., ., u)`` over the space-time samples, a usable lower
    reaction envelope.
    """

    axioms: dict = dc_field(default_factory=dict)
    u: np.ndarray | None = None
    psi: np.ndarray | None = None
    f_inf: np.ndarray | None = None
    slope_inf: float = float("nan")
    slope_sup: float = float("nan")

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.axioms.values())

    def psi_at(self, s):
        """Evaluate the tabulated modulus (right-continuous step, conservative)."""
        idx = np.searchsorted(self.u, np.asarray(s, dtype=float), side="left")
        idx = np.clip(idx, 0, self.u.size - 1)
        return self.psi[idx]

    def failed(self) -> list[str]:
        return [k for k, a in self.axioms.items() if not a.passed]


def validate_kpp(r: KppReaction, fld: CoefficientField, plan: SamplePlan | None = None) -> ValidationReport:
    """Check the KPP axioms on a sample plan and measure the defect modulus."""
    if plan is None:
        plan = default_plan(fld.dim, t_span=fld.time_period or 1.0)
    if plan.x.shape[-1] != fld.dim:
        raise ValueError("sample plan dimension does not match the field")
    tol = 1e-12 * max(r.lipschitz_bound, 1.0)
    t = plan.t[:, None]
    x = plan.x[None, :, :]
    slope = r.deriv_at_zero(t, x)  # (n_t, n_x)
    zero = np.zeros(slope.shape)
    f0 = r.eval(t, x, zero)
    worst0 = float(np.abs(f0).max())
    if worst0 > tol:
        raise ValueError(f"reaction does not vanish at u=0 (|f| up to {worst0:.3g}); not a reaction term")
    f1 = r.eval(t, x, zero + 1.0)
    u = plan.u
    fu = r.eval(t[..., None], x[:, :, None, :], u[None, None, :])  # (n_t, n_x, n_u)
    rep = ValidationReport()
    rep.axioms["zero_at_zero"] = AxiomResult(True, worst0)
    worst1 = float(np.abs(f1).max())
    rep.axioms["zero_at_one"] = AxiomResult(worst1 <= tol, worst1)
    excess = float((fu - slope[..., None] * u).max())
    rep.axioms["kpp_bound"] = AxiomResult(excess <= tol, max(excess, 0.0))
    s_inf = float(slope.min())
    rep.axioms["positive_slope"] = AxiomResult(s_inf > 0, max(-s_inf, 0.0))
    f_inf = fu.min(axis=(0, 1))
    rep.axioms["positive_interior"] = AxiomResult(bool(np.all(f_inf > 0)), float(max(-f_inf.min(), 0.0)))
    raw = (slope[..., None] - fu / u).max(axis=(0, 1))
    psi = np.maximum.accumulate(np.maximum(raw, 0.0))
    bound = math.sqrt(u[0]) * max(1.0, r.lipschitz_bound)
    rep.axioms["defect_vanishes"] = AxiomResult(bool(psi[0] <= bound), float(psi[0]))
    # Lipschitz in u: difference quotients between consecutive samples, plus the ends
    grid_u = np.concatenate([[0.0], u, [1.0]])
    full = np.concatenate([f0[..., None], fu, f1[..., None]], axis=-1)
    quot = np.abs(np.diff(full, axis=-1)) / np.diff(grid_u)
    lip = float(quot.max())
    rep.axioms["lipschitz"] = AxiomResult(lip <= r.lipschitz_bound * (1 + 1e-9) + tol, lip)
    if r.gamma is not None:
        g = r.gamma
        ratio = fu / u
        below = u <= g
        inc = np.diff(ratio[..., below], axis=-1).max() if below.sum() > 1 else 0.0
        fg = r.eval(t, x, zero + g) / g
        above = ratio[..., u >= g].max(axis=-1) - fg if np.any(u >= g) else np.zeros(fg.shape)
        worst = float(max(inc, above.max(), 0.0))
        rep.axioms["monotone_ratio"] = AxiomResult(worst <= tol, worst)
    lam_min = float(fld.min_eigenvalue(t, x).min())
    rep.axioms["ellipticity"] = AxiomResult(lam_min >= fld.lam - 1e-12, max(fld.lam - lam_min, 0.0))
    bsup = float(np.linalg.norm(fld.b(t, x), axis=-1).max())
    rep.axioms["drift_bound"] = AxiomResult(bsup <= fld.b_sup + 1e-12, max(bsup - fld.b_sup, 0.0))
    rep.u, rep.psi, rep.f_inf = u, psi, f_inf
    rep.slope_inf, rep.slope_sup = s_inf, float(slope.max())
    return rep


def spreading_gate(r: KppReaction, fld: CoefficientField, plan: SamplePlan | None = None):
    """Return ``(ok, margin)`` for the drift-versus-spreading gate.

    ``ok`` is ``b_sup**2 < 4 lam inf f_u(0)``; ``margin = 2 sqrt(inf f_u(0) lam) - b_sup``.
    """
    if plan is None:
        plan = default_plan(fld.dim, t_span=fld.time_period or 1.0)
    s_inf = float(r.deriv_at_zero(plan.t[:, None], plan.x[None, :, :]).min())
    ok = bool(s_inf > 0 and fld.b_sup ** 2 < 4.0 * fld.lam * s_inf)
    margin = 2.0 * math.sqrt(max(s_inf, 0.0) * fld.lam) - fld.b_sup
    return ok, margin
