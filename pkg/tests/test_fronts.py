import numpy as np
import pytest

from kpplab.fronts import fit_front, step_problem, track
from kpplab.local_solver import solve


def test_fit_recovers_synthetic_front():
    t = np.linspace(10, 200, 60)
    x = 2.0 * t - 1.5 * np.log(t) + 0.7
    s, k, q, rms = fit_front(t, x)
    assert (s, k, q) == pytest.approx((2.0, 1.5, 0.7), abs=1e-9)
    assert rms < 1e-9
    s, k, q, _ = fit_front(t, 3 * t + 1, log_term=False)
    assert (s, k, q) == pytest.approx((3.0, 0.0, 1.0))


def test_step_problem_mirror_setup():
    p = step_problem(0.05, 40.0)
    assert p.grid.lower[0] == pytest.approx(0.5)
    assert p.grid.neumann_flags()[:2] == (True, False)
    p2 = step_problem(0.05, 40.0, drift=1.0)
    assert p2.grid.lower[0] == pytest.approx(-40.0)


def test_track_short_run_speed():
    p = step_problem(0.1, 80.0)
    traj = solve(p, 30.0, 1.0)
    ft = track(traj, 0.5, t_min=10.0)
    assert np.all(np.diff(ft.positions[np.isfinite(ft.positions)]) >= 0)
    # at short times the speed is below 2 by the logarithmic delay
    assert 1.6 < ft.speed < 2.1
    assert ft.csv().count("\n") > len(traj)
