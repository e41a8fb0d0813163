import math

import numpy as np
import pytest

from kpplab.errors import DomainTooSmall
from kpplab.fields import CoefficientField, ConstantField, make_reaction
from kpplab.grid import Grid, GridState
from kpplab.local_solver import (LocalProblem, check_horizon, compare, discrete_operator, solve, stable_dt, step,
                                 supersolution_horizon)


def _problem(h=0.1, L=20.0, amp=0.5, drift=0.0, dim=1):
    g = Grid.box([-L] * dim, [L] * dim, h)
    r = np.linalg.norm(g.points(), axis=-1)
    u0 = GridState(g, 0.0, np.where(r < 1.0, amp, 0.0))
    fld = CoefficientField.isotropic(dim, 1.0, drift)
    return LocalProblem(fld, make_reaction("logistic", 1.0), g, u0)


def test_stable_dt_formula_and_cadence():
    p = _problem(h=0.1)
    assert stable_dt(p) == pytest.approx(0.01 / (2 + 0.01))
    dt = stable_dt(p, 0.5)
    assert dt <= stable_dt(p)
    assert 0.5 / dt == pytest.approx(round(0.5 / dt))


def test_outputs_land_exactly():
    p = _problem()
    traj = solve(p, 1.0, times=[0.0, 0.3, 0.7, 1.0])
    assert traj.times == [0.0, 0.3, 0.7, 1.0]
    assert traj.index_of(0.7) == 2
    with pytest.raises(KeyError):
        traj.index_of(0.5)


def test_dt_above_limit_is_refused():
    p = _problem()
    with pytest.raises(ValueError):
        solve(p, 1.0, 0.5, dt=2 * stable_dt(p))
    with pytest.raises(ValueError):
        step(p.initial, p, 2 * stable_dt(p))


def test_comparison_principle():
    lo, hi = _problem(amp=0.3), _problem(amp=0.6)
    rep = compare(solve(lo, 4.0, 1.0), solve(hi, 4.0, 1.0))
    assert rep.max_violation == 0.0


def test_values_stay_in_unit_interval():
    traj = solve(_problem(amp=1.0, drift=0.7), 5.0, 1.0)
    v = traj.values
    assert v.min() >= 0.0 and v.max() <= 1.0


def test_operator_on_quadratic():
    p = _problem(h=0.05)
    x = p.grid.axes()[0]
    lx = discrete_operator(p, x * x)
    # exact for quadratics away from the Dirichlet edges
    assert np.allclose(lx[5:-5], 2.0, rtol=0, atol=1e-9)


def test_operator_on_quadratic_2d_anisotropic():
    g = Grid.box([-2.0, -2.0], [2.0, 2.0], 0.05)
    A = np.array([[1.0, 0.3], [0.3, 2.0]])
    fld = CoefficientField(2, ConstantField(A), ConstantField(np.zeros(2)), 0.9, 2.1, 0.0)
    p = LocalProblem(fld, make_reaction("logistic", 1.0), g, g.zeros())
    P = g.points()
    u = P[..., 0] ** 2 + P[..., 0] * P[..., 1] + P[..., 1] ** 2
    lu = discrete_operator(p, u)
    expect = 2 * A[0, 0] + 2 * A[0, 1] + 2 * A[1, 1]
    assert np.allclose(lu[5:-5, 5:-5], expect, rtol=0, atol=1e-8)


def test_translation_invariance():
    a = _problem(L=20.0)
    g = a.grid
    shifted = GridState(g, 0.0, np.roll(a.initial.values, 20))
    b = a.with_initial(shifted)
    ta, tb = solve(a, 2.0, 1.0), solve(b, 2.0, 1.0)
    # the Dirichlet edges differ by the shift, so compare away from them
    assert np.allclose(np.roll(ta.values[-1], 20)[40:-40], tb.values[-1][40:-40], rtol=1e-12, atol=1e-15)


def test_horizon_guard():
    p = _problem(L=10.0)
    need = supersolution_horizon(p, 50.0)
    assert need == pytest.approx(2 * math.sqrt(50 * (50 + math.log(1e8))))
    with pytest.raises(DomainTooSmall):
        check_horizon(p, 50.0)
    assert check_horizon(p, 0.5) > 0


def test_observer_stops_early():
    p = _problem()
    traj = solve(p, 10.0, 1.0, observer=lambda s: s.time >= 3.0)
    assert traj.times[-1] == 3.0
