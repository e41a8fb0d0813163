import math

import numpy as np
import pytest

from kpplab.homogenization import (InitialSet, PassageTimeTable, RandomEnvironment, WulffEstimate, check_tau_laws,
                                   ensemble, halfplane_speed, hash_uniform, kingman_fit, passage_time,
                                   passage_times, pool_map, rescaled_convergence, sample_environment, shift_pair,
                                   speed_bounds, unit_directions)

KINDS = ("checkerboard_smoothed", "random_fourier", "poisson_bumps", "stripes", "constant")


def test_hash_is_deterministic_and_uniform():
    j = np.arange(10_000)
    a = hash_uniform(7, 1, j)
    assert np.array_equal(a, hash_uniform(7, 1, j))
    assert not np.array_equal(a, hash_uniform(8, 1, j))
    assert a.min() >= 0 and a.max() < 1
    assert abs(a.mean() - 0.5) < 0.01


@pytest.mark.parametrize("kind", KINDS)
def test_generators_respect_bounds(kind):
    env = sample_environment(kind, seed=3, m=1.0, M=2.0, time_amplitude=0.5)
    rng = np.random.default_rng(0)
    x = rng.uniform(-500, 500, (10_000, 2))
    t = rng.uniform(0, 1, 10_000)
    v = env(t, x)
    assert v.min() >= 1.0 - 1e-12 and v.max() <= 2.0 + 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_shift_identity(kind):
    env = sample_environment(kind, seed=5)
    rng = np.random.default_rng(1)
    x = rng.uniform(-50, 50, (1000, 2))
    y = np.array([3.25, -1.5])
    assert np.array_equal(env.shifted(y)(0.0, x), env(0.0, x + y))


def test_time_period_identity():
    env = sample_environment("checkerboard_smoothed", seed=1, time_amplitude=1.0, time_period=1.0)
    x = np.random.default_rng(2).uniform(-20, 20, (500, 2))
    t = np.arange(8) / 8.0
    for s in t:
        assert np.array_equal(env(s, x), env(s + 2.0, x))


def test_sample_environment_validation():
    with pytest.raises(ValueError):
        sample_environment("constant", m=2.0, M=1.0)
    with pytest.raises(ValueError):
        sample_environment("nope")
    with pytest.raises(ValueError):
        RandomEnvironment("constant", shift=(0.0,))
    assert [e.seed for e in ensemble("constant", [0, 1, 2])] == [0, 1, 2]


def test_passage_time_basics():
    env = sample_environment("constant", m=1.0, M=1.0)
    assert passage_time(env, (0, 0), (0, 0)).tau == 0.0
    t8 = passage_time(env, (0, 0), (8, 0)).tau
    # speed 2 with a logarithmic lag of a few time units
    assert 4.0 <= t8 <= 10.0
    run = passage_times(env, (0, 0), [(4, 0), (0, 4), (-4, 0)])
    taus = [e.tau for e in run.entries]
    assert taus[0] == taus[1] == taus[2]


def test_shift_pair_exact_and_rejects_off_lattice():
    env = sample_environment("checkerboard_smoothed", seed=2)
    a, b = shift_pair(env, (1.0, 0.5), (0, 0), (4, 0))
    assert a.tau == b.tau and a.status == b.status == "ok"
    with pytest.raises(ValueError):
        shift_pair(env, (0.1, 0.0), (0, 0), (4, 0))


def test_tau_laws_on_synthetic_table():
    from kpplab.homogenization import PassageEntry

    table = PassageTimeTable()
    pts = [(0.0, 0.0), (4.0, 0.0), (8.0, 0.0)]
    for y in pts:
        for z in pts:
            d = math.dist(y, z)
            table.entries.append(PassageEntry(y, z, 0.0 if d == 0 else d / 2 + 1, "ok", float("nan"), 0))
    rep = check_tau_laws(table)
    assert rep.triples > 0
    assert rep.max_subadditivity_violation == 0.0
    assert rep.linear_bound_ok
    # max of (d/2 + 1)/(d + 1) over d in {4, 8} is reached at d = 4
    assert rep.C_fit == pytest.approx(3.0 / 5.0)


def test_kingman_fit_modes():
    n = np.array([8.0, 12, 16, 24, 32])
    a, b, c = 0.5, 1.0, 0.3
    taus = n * (a + b / n + c * np.log(n) / n)
    assert kingman_fit(n, taus, "free") == pytest.approx([a, b, c])
    got = kingman_fit(n, n * a + b, "none")
    assert got == pytest.approx([a, b, 0.0])
    # the fixed log coefficient is self-consistent
    a2, b2, c2 = kingman_fit(n, n * a + 4 * a * a * np.log(n) + b, "bramson", dim=2)
    assert a2 == pytest.approx(a) and b2 == pytest.approx(b) and c2 == pytest.approx(4 * a * a)
    with pytest.raises(ValueError):
        kingman_fit(n, taus, "quadratic")


def test_disk_support_and_convexity():
    W = WulffEstimate.disk(2.0, 64)
    assert W.support((1.0, 1.0)) == pytest.approx(2.0, rel=1e-3)
    assert W.distance_to_disk(2.0) == pytest.approx(0.0, abs=1e-12)
    assert W.convexity_defect() < 0.01
    assert W.contains(np.array([1.0, 1.0])) and not W.contains(np.array([2.0, 1.0]))
    # a dent makes the shape non-convex
    s = np.full(16, 2.0)
    s[0] = 1.0
    dent = WulffEstimate.from_speeds(unit_directions(16), s)
    assert dent.convexity_defect() > 0.5


def test_speed_bounds():
    W = WulffEstimate.disk(2.0, 16)
    c, ok = speed_bounds(W, 0.5, 0.5)
    assert c == pytest.approx(0.5 / 7)
    assert ok
    _, bad = speed_bounds(WulffEstimate.disk(20.0, 16), 0.5, 0.5)
    assert not bad


def test_stripes_speed_along_exceeds_across():
    env = sample_environment("stripes", seed=0, m=1.0, M=2.0)
    across = halfplane_speed(env, (1, 0), t_end=30.0, width=2 * math.pi).speed
    along = halfplane_speed(env, (0, 1), t_end=30.0, width=2 * math.pi).speed
    assert 2.0 < across < along < 2 * math.sqrt(2.0)


def test_rescaled_error_zero_at_start():
    env = sample_environment("constant", m=1.0, M=1.0)
    W = WulffEstimate.disk(2.0, 64)
    tab = rescaled_convergence(env, InitialSet("ball", 1.0), [0.25], [0.25], W)
    assert tab.errors(0.0) == [(0.25, 0.0)]
    assert not tab.partial


def test_initial_set_validation():
    with pytest.raises(ValueError):
        InitialSet("triangle")
    with pytest.raises(ValueError):
        InitialSet("annulus", 1.0, 1.5)


def test_pool_map_keeps_order():
    import time

    def job(i):
        time.sleep(0.01 * (5 - i))
        return i * i

    assert pool_map(job, range(5), threads=3) == [0, 1, 4, 9, 16]
