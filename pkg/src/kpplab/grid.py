"""Truncated rectangular grids, solution snapshots and cube decompositions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write, csv_text

POLICIES = ("dirichlet_zero", "neumann_zero")
STATE_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform node grid ``origin + h * index`` on a box in 1 or 2 dimensions.

    Parameters
    ----------
    dim : int
    origin : tuple of float
        Coordinates of node ``(0, ..., 0)``.
    h : float
        Node spacing.
    extents : tuple of int
        Number of nodes per axis (at least 8).
    boundary_policy : str or tuple of str
        ``"dirichlet_zero"`` or ``"neumann_zero"`` for every side, or one entry
        per side ordered ``(x_lo, x_hi[, y_lo, y_hi])``.
    """

    dim: int
    origin: tuple
    h: float
    extents: tuple
    boundary_policy: object = "dirichlet_zero"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if len(self.origin) != self.dim or len(self.extents) != self.dim:
            raise ValueError("origin/extents length must equal dim")
        if not self.h > 0:
            raise ValueError("spacing h must be positive")
        if min(self.extents) < 8:
            raise ValueError("need at least 8 nodes per axis")
        for p in self.side_policies():
            if p not in POLICIES:
                raise ValueError(f"unknown boundary policy {p!r}")

    # construction -------------------------------------------------------
    @classmethod
    def box(cls, lo, hi, h: float, boundary_policy="dirichlet_zero") -> "Grid":
        """Smallest grid with nodes on multiples of ``h`` covering ``[lo, hi]``."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        i0 = np.floor(lo / h + 1e-9).astype(int)
        i1 = np.ceil(hi / h - 1e-9).astype(int)
        origin = tuple(float(i * h) for i in i0)
        extents = tuple(int(n) for n in (i1 - i0 + 1))
        return cls(lo.size, origin, float(h), extents, boundary_policy)

    @classmethod
    def centered(cls, half_width: float, h: float, dim: int = 1, center=0.0,
                 boundary_policy="dirichlet_zero") -> "Grid":
        c = np.broadcast_to(np.asarray(center, dtype=float), (dim,))
        return cls.box(c - half_width, c + half_width, h, boundary_policy)

    # geometry ----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return tuple(self.extents)

    @property
    def size(self) -> int:
        return int(np.prod(self.extents))

    def axes(self) -> list:
        return [self.origin[k] + self.h * np.arange(self.extents[k]) for k in range(self.dim)]

    def points(self) -> np.ndarray:
        """Node coordinates with shape ``extents + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.h * (np.asarray(self.extents) - 1)

    def half_width(self, center=0.0) -> float:
        """Distance from ``center`` to the nearest Dirichlet side (Neumann sides are reflecting)."""
        c = np.broadcast_to(np.asarray(center, dtype=float), (self.dim,))
        flags = self.neumann_flags()
        gaps = []
        for k in range(self.dim):
            if not flags[2 * k]:
                gaps.append(c[k] - self.lower[k])
            if not flags[2 * k + 1]:
                gaps.append(self.upper[k] - c[k])
        return float(min(gaps)) if gaps else math.inf

    def side_policies(self) -> tuple:
        bp = self.boundary_policy
        if isinstance(bp, str):
            return (bp,) * (2 * self.dim)
        bp = tuple(bp)
        if len(bp) != 2 * self.dim:
            raise ValueError("per-side boundary policy needs 2*dim entries")
        return bp

    def neumann_flags(self) -> tuple:
        return tuple(p == "neumann_zero" for p in self.side_policies())

    def shifted(self, offset) -> "Grid":
        """Same grid translated by ``offset`` (exact when offset is a multiple of h)."""
        off = np.broadcast_to(np.asarray(offset, dtype=float), (self.dim,))
        return Grid(self.dim, tuple(float(o + d) for o, d in zip(self.origin, off)), self.h, self.extents,
                    self.boundary_policy)

    def zeros(self, time: float = 0.0) -> "GridState":
        return GridState(self, float(time), np.zeros(self.shape))


@dataclass(frozen=True, eq=False)
class GridState:
    """Snapshot ``u(time, .)`` on ``grid``; values are finite and in [0, 1] up to 1e-10."""

    grid: Grid
    time: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("state contains non-finite values")
        if v.size and (v.min() < -STATE_TOL or v.max() > 1 + STATE_TOL):
            raise ValueError(f"state leaves [0,1]: range [{v.min():.3g}, {v.max():.3g}]")
        if self.time < 0:
            raise ValueError("time must be non-negative")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, func, time: float = 0.0) -> "GridState":
        return cls(grid, float(time), np.asarray(func(grid.points()), dtype=float))

    def with_values(self, values, time: float | None = None) -> "GridState":
        return GridState(self.grid, self.time if time is None else float(time), values)

    def sup_distance(self, other: "GridState") -> float:
        return float(np.abs(self.values - other.values).max())

    # serialization -----------------------------------------------------
    def to_csv(self, path) -> None:
        pts = self.grid.points().reshape(-1, self.grid.dim)
        cols = ["x", "y"][: self.grid.dim] + ["value"]
        rows = np.column_stack([pts, self.values.reshape(-1)])
        atomic_write(path, csv_text(cols, rows, comments=[f"t={self.time!r} h={self.grid.h!r}"]))

    def to_pgm(self, path) -> None:
        atomic_write(path, pgm_bytes(self))


def pgm_bytes(state: GridState) -> bytes:
    """Binary greyscale heatmap; rows run from high y to low y, columns along x."""
    v = state.values
    img = v[None, :] if v.ndim == 1 else v.T[::-1, :]
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    rows, cols = data.shape
    header = f"P5\n# t={state.time!r} h={state.grid.h!r} origin={list(state.grid.origin)!r}\n{cols} {rows}\n255\n"
    return header.encode("ascii") + data.tobytes()


def read_state_csv(path, grid: Grid) -> GridState:
    time = 0.0
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# t="):
        time = float(first.split()[1].split("=")[1])
    data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1 if not first.startswith("#") else 2)
    return GridState(grid, time, data[:, -1].reshape(grid.shape))


# ---------------------------------------------------------------------------
# cube decomposition


@dataclass
class CubeFamily:
    """Cube-restricted pieces of a state keyed by integer cube index."""

    cube_scale: float
    members: dict

    @property
    def active_set(self) -> list:
        return sorted(k for k, m in self.members.items() if np.any(m.values != 0))

    def states(self) -> list:
        return [self.members[k] for k in sorted(self.members)]


def cube_index(points: np.ndarray, c: float) -> np.ndarray:
    """Integer index of the half-open cube ``[n c, (n+1) c)`` containing each point."""
    return np.floor(points / c + 1e-9).astype(np.int64)


def decompose(u0: GridState, c: float) -> CubeFamily:
    """Split ``u0`` into pieces supported on half-open cubes of side ``c``."""
    if not c > 0:
        raise ValueError("cube scale must be positive")
    if c < 2 * u0.grid.h:
        raise ValueError(f"cube scale {c} under-resolved by spacing {u0.grid.h}")
    if u0.values.min() < 0 or u0.values.max() > 1:
        raise ValueError("initial data must lie in [0,1]")
    idx = cube_index(u0.grid.points(), c)
    nz = u0.values != 0
    keys = sorted({tuple(int(v) for v in row) for row in idx[nz].reshape(-1, u0.grid.dim)})
    members = {}
    for key in keys:
        mask = np.all(idx == np.asarray(key), axis=-1)
        members[key] = u0.with_values(np.where(mask, u0.values, 0.0))
    return CubeFamily(c, members)


def _stack(states) -> tuple:
    states = list(states.states() if isinstance(states, CubeFamily) else states)
    if not states:
        raise ValueError("empty family")
    g, t = states[0].grid, states[0].time
    for s in states[1:]:
        if s.grid != g:
            raise ValueError("members live on different grids")
        if s.time != t:
            raise ValueError("members are at different times")
    return states[0], np.stack([s.values for s in states])


def envelope(family) -> GridState:
    """Node-wise supremum over the members."""
    first, vals = _stack(family)
    return first.with_values(vals.max(axis=0))


def node_sum(family) -> np.ndarray:
    """Uncapped node-wise sum (may exceed 1, hence a plain array)."""
    _, vals = _stack(family)
    return vals.sum(axis=0)


def capped_sum(family) -> GridState:
    """Node-wise ``min(sum, 1)``."""
    first, vals = _stack(family)
    return first.with_values(np.minimum(vals.sum(axis=0), 1.0))


# ---------------------------------------------------------------------------
# interpolation and level sets


def interpolate(state: GridState, x) -> np.ndarray:
    """(Multi)linear interpolation at points ``x`` of shape ``(..., dim)``."""
    from scipy.interpolate import RegularGridInterpolator

    x = np.asarray(x, dtype=float)
    if state.grid.dim == 1 and x.ndim == 0:
        x = x[None]
    interp = RegularGridInterpolator(state.grid.axes(), state.values, method="linear", bounds_error=True)
    return interp(x)


def crossings(state: GridState, theta: float):
    """Leftmost and rightmost crossing of level ``theta`` in 1D, or None when absent.

    The rightmost crossing is where the values drop from ``>= theta`` to
    ``< theta`` for the last time; the leftmost is where they first rise.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0,1)")
    if state.grid.dim != 1:
        raise ValueError("crossings are defined on 1D grids; use level_set in 2D")
    u = state.values
    x = state.grid.axes()[0]
    down = np.nonzero((u[:-1] >= theta) & (u[1:] < theta))[0]
    up = np.nonzero((u[:-1] < theta) & (u[1:] >= theta))[0]
    if down.size == 0 and up.size == 0:
        return None
    right = left = None
    if down.size:
        i = down[-1]
        right = x[i] + state.grid.h * (u[i] - theta) / (u[i] - u[i + 1])
    if up.size:
        i = up[0]
        left = x[i] + state.grid.h * (theta - u[i]) / (u[i + 1] - u[i])
    return left, right


def level_set(state: GridState, theta: float):
    """1D: ``(leftmost, rightmost)`` crossings; 2D: list of contour polylines (physical units).

    Returns None when the level is never crossed.
    """
    if state.grid.dim == 1:
        return crossings(state, theta)
    from skimage import measure

    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0,1)")
    if state.values.max() < theta or state.values.min() >= theta:
        return None
    lines = measure.find_contours(state.values, theta)
    lo = state.grid.lower
    return [lo + state.grid.h * ln for ln in lines]
