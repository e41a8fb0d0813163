import numpy as np
import pytest

from kpplab.fields import CoefficientField, make_reaction, validate_kpp
from kpplab.grid import Grid
from kpplab.local_solver import LocalProblem
from kpplab.subsolution import build_ladder, build_profile, choose_v0, ladder_ordering, verify_subsolution


@pytest.fixture(scope="module")
def profile():
    return build_profile(1.0, 1.0, 2.0)


def test_constants(profile):
    assert profile.C == pytest.approx(0.5)
    assert profile.q == pytest.approx(2.0 / 3.0)
    assert profile.discriminant < 0
    # equality holds on the oscillating stretch, so only round-off may go negative
    assert profile.margin >= -1e-12


def test_invalid_speed_parameter():
    with pytest.raises(ValueError):
        build_profile(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        build_profile(1.0, 1.0, 2.5)


def test_zeta_is_c1_and_vanishes(profile):
    y0, y1, y2, y3 = profile.anchors
    assert y0 < y1 < y2 < y3
    eps = 1e-7
    for a in (y0, y1, y2):
        for order in (0, 1):
            lo, hi = profile.zeta(a - eps, order), profile.zeta(a + eps, order)
            assert abs(lo - hi) < 1e-5
    assert profile.zeta(y3 + 0.1) == 0.0
    assert profile.zeta(y0 - 5.0) == pytest.approx(profile.top)
    assert profile.top > 0


def test_profile_inequality_on_nodes(profile):
    y = np.linspace(profile.anchors[0] - 1, profile.anchors[3] - 1e-6, 4001)
    assert profile.profile_inequality(y).min() >= -1e-9


def test_ladder_levels_increase(profile):
    r = make_reaction("logistic", 1.0)
    rep = validate_kpp(r, CoefficientField.isotropic(1))
    v0 = min(choose_v0(profile, rep.u, rep.psi), 0.25)
    ladder = build_ladder(profile, lambda u: np.asarray(u) * (1 - np.asarray(u)), 0.05, v0)
    assert np.all(np.diff(ladder.levels) > 0)
    assert ladder.levels[-1] >= 0.99
    assert np.all(np.diff(ladder.times) == pytest.approx(ladder.sigma))
    with pytest.raises(ValueError):
        build_ladder(profile, lambda u: np.asarray(u) * (1 - np.asarray(u)), 0.5, 0.25)


def test_members_are_subsolutions(profile):
    r = make_reaction("logistic", 1.0)
    ladder = build_ladder(profile, lambda u: np.asarray(u) * (1 - np.asarray(u)), 0.05, 0.25)
    half = profile.anchors[3] + profile.q * float(ladder.times[2]) + 20.0
    g = Grid.box([-half], [half], 0.05)
    p = LocalProblem(CoefficientField.isotropic(1), r, g, g.zeros())
    for k in range(3):
        t0 = ladder.start_time(k)
        res = verify_subsolution(ladder.members[k], p, (t0, t0 + ladder.sigma), n_times=9)
        assert res.passed(1e-9), (k, res.min_residual)
    assert ladder_ordering(ladder, g, 2).max() <= 1e-12
