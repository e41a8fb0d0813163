"""The compiled kernels and their numpy twins agree bit for bit."""
import numpy as np
import pytest

from kpplab import _kernels_numpy as knp

nb = pytest.importorskip("numba")
from kpplab import _kernels_numba as knb  # noqa: E402


def _data(rng, shape):
    u = rng.uniform(0.0, 1.0, shape)
    u[u < 0.3] = 0.0
    return u


@pytest.mark.parametrize("code", [0, 1, 2, -1])
@pytest.mark.parametrize("neu", [(False, False), (True, False), (True, True)])
def test_local_1d_parity(rng, code, neu):
    n = 64
    u = _data(rng, n)
    a = np.full(n, 100.0)
    bp = rng.uniform(0, 2, n)
    bn = rng.uniform(0, 2, n)
    r0 = rng.uniform(1, 2, n)
    r1 = rng.uniform(-0.5, 0.5, n)
    s = np.sin(np.arange(7.0))
    args = (u, 7, 1e-3, a, bp, bn, r0, r1, s, code, *neu)
    v1, c1 = knp.local_1d(*args)
    v2, c2 = knb.local_1d(*args)
    assert np.array_equal(v1, v2)
    assert c1 == c2


@pytest.mark.parametrize("code", [0, 1, -1])
def test_local_2d_parity(rng, code):
    shape = (20, 17)
    u = _data(rng, shape)
    cx = rng.uniform(50, 100, shape)
    cy = rng.uniform(50, 100, shape)
    cd = rng.uniform(0, 20, shape)
    dpos = rng.uniform(size=shape) < 0.5
    b = [rng.uniform(0, 2, shape) for _ in range(4)]
    r0 = rng.uniform(1, 2, shape)
    r1 = np.zeros(shape)
    s = np.zeros(5)
    neu = (True, False, False, True)
    v1, c1 = knp.local_2d(u, 5, 1e-3, cx, cy, cd, dpos, *b, r0, r1, s, code, neu)
    v2, c2 = knb.local_2d(u, 5, 1e-3, cx, cy, cd, dpos, *b, r0, r1, s, code, neu)
    assert np.array_equal(v1, v2)
    assert c1 == c2


def test_heat_2d_parity(rng):
    shape = (16, 24)
    u = _data(rng, shape)
    r0 = rng.uniform(1, 2, shape)
    r1 = rng.uniform(0, 0.5, shape)
    s = np.cos(np.arange(6.0))
    neu = (False, True, True, False)
    v1, c1 = knp.heat_2d(u, 6, 2e-3, 60.0, 60.0, r0, r1, s, 0, neu)
    v2, c2 = knb.heat_2d(u, 6, 2e-3, 60.0, 60.0, r0, r1, s, 0, neu)
    assert np.array_equal(v1, v2)
    assert c1 == c2


def test_heat_2d_matches_general_stencil(rng):
    shape = (16, 16)
    u = _data(rng, shape)
    z = np.zeros(shape)
    c = np.full(shape, 60.0)
    r0 = np.ones(shape)
    s = np.zeros(4)
    neu = (False, False, True, True)
    a, _ = knp.heat_2d(u, 4, 2e-3, 60.0, 60.0, r0, z, s, 0, neu)
    b, _ = knp.local_2d(u, 4, 2e-3, c, c, z, np.ones(shape, bool), z, z, z, z, r0, z, s, 0, neu)
    assert np.allclose(a, b, rtol=0, atol=1e-15)


@pytest.mark.parametrize("neu", [(False, False), (True, True)])
def test_nonlocal_1d_parity(rng, neu):
    n = 50
    u = _data(rng, n)
    offs = np.arange(1, 6, dtype=np.int64)
    w = rng.uniform(0.1, 1.0, 5)
    m = rng.uniform(0.5, 1.0, n)
    r0 = np.ones(n)
    r1 = np.zeros(n)
    s = np.zeros(3)
    v1, c1 = knp.nonlocal_1d(u, 3, 0.01, offs, w, m, r0, r1, s, 0, *neu)
    v2, c2 = knb.nonlocal_1d(u, 3, 0.01, offs, w, m, r0, r1, s, 0, *neu)
    assert np.array_equal(v1, v2)
    assert c1 == c2


def test_nonlocal_2d_parity(rng):
    shape = (18, 14)
    u = _data(rng, shape)
    offx = np.array([1, 0, 1, -1, 2], dtype=np.int64)
    offy = np.array([0, 1, 1, 1, 0], dtype=np.int64)
    w = rng.uniform(0.1, 1.0, 5)
    m = rng.uniform(0.5, 1.0, shape)
    r0 = np.ones(shape)
    r1 = np.zeros(shape)
    s = np.zeros(3)
    neu = (True, False, True, False)
    v1, c1 = knp.nonlocal_2d(u, 3, 0.01, offx, offy, w, m, r0, r1, s, 1, neu)
    v2, c2 = knb.nonlocal_2d(u, 3, 0.01, offx, offy, w, m, r0, r1, s, 1, neu)
    assert np.array_equal(v1, v2)
    assert c1 == c2


def test_underflow_is_flushed():
    u = np.zeros(16)
    u[8] = 1e-300
    z = np.zeros(16)
    v, _ = knp.local_1d(u, 1, 1e-3, np.full(16, 1.0), z, z, z, z, np.zeros(1), 0, False, False)
    assert np.all(v == 0.0)
