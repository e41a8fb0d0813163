import numpy as np
import pytest

from kpplab.fields import CoefficientField, make_reaction
from kpplab.grid import Grid, GridState
from kpplab.local_solver import LocalProblem
from kpplab.virtual_linearity import envelope_bounds, run_monotone_variant, run_sandwich


def _problem(shape="logistic", drift=0.0, L=60.0, h=0.1):
    g = Grid.box([-L], [L], h)
    x = g.axes()[0]
    u0 = GridState(g, 0.0, np.where(np.abs(x) < 1.0, 0.5, 0.0))
    return LocalProblem(CoefficientField.isotropic(1, 1.0, drift), make_reaction(shape, 1.0), g, u0)


def test_delta_range():
    p = _problem()
    for bad in (0.0, 0.6):
        with pytest.raises(ValueError, match="delta"):
            run_sandwich(p, bad, 10.0)


def test_gate_refusal():
    p = _problem(drift=3.0)
    with pytest.raises(ValueError, match="gate"):
        run_sandwich(p, 0.25, 10.0)


def test_monotone_variant_refuses_cubic():
    with pytest.raises(ValueError, match="monotone"):
        run_monotone_variant(_problem("cubic"), 0.25, 10.0)


def test_sandwich_small_run():
    rep = run_sandwich(_problem(), 0.25, 12.0, cadence=1.0)
    assert rep.members == 2
    assert rep.times[0] == 1.0 and rep.times[-1] == 12.0
    assert np.all(rep.phi_est >= 0)
    assert rep.phi_est[-1] < 1e-3
    assert rep.non_increasing_after()
    head = rep.csv().splitlines()
    assert any(line.startswith("t,lower_violation") for line in head)


def test_capped_sum_variant_runs():
    rep = run_sandwich(_problem(), 0.25, 6.0, variant="capped_sum", cadence=1.0)
    assert rep.variant == "capped_sum"
    assert rep.phi_est.shape == rep.times.shape


def test_envelope_bounds_hold():
    rep = envelope_bounds(_problem(), [0.1, 0.5], [2.0, 6.0, 10.0])
    assert rep.gamma == 0.5
    assert rep.lower.shape == (2, 3) and rep.upper.shape == (3,)
    assert rep.max_violation <= 1e-12
    with pytest.raises(ValueError, match="s samples"):
        envelope_bounds(_problem(), [0.6], [2.0])
