import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpplab.grid import (Grid, GridState, capped_sum, crossings, decompose, envelope, interpolate, level_set,
                         node_sum, pgm_bytes, read_state_csv)


def test_box_aligns_nodes_to_multiples_of_h():
    g = Grid.box([-1.1], [2.05], 0.25)
    assert g.origin == (-1.25,)
    assert g.upper[0] == pytest.approx(2.25)
    assert np.allclose(g.axes()[0] / 0.25, np.round(g.axes()[0] / 0.25))


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(1, (0.0,), 0.1, (4,))
    with pytest.raises(ValueError):
        Grid.box([0.0], [1.0], 0.1, "periodic")
    with pytest.raises(ValueError):
        Grid.box([0.0, 0.0], [1.0, 1.0], 0.1, ("neumann_zero", "dirichlet_zero"))


def test_half_width_ignores_reflecting_sides():
    g = Grid.box([0.0], [10.0], 0.1, ("neumann_zero", "dirichlet_zero"))
    assert g.half_width(2.0) == pytest.approx(8.0)


def test_state_rejects_out_of_range():
    g = Grid.box([0.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        GridState(g, 0.0, np.full(g.shape, 1.5))
    with pytest.raises(ValueError):
        GridState(g, 0.0, np.full(g.shape, np.nan))


def test_decompose_and_recombine(rng):
    g = Grid.box([-3.0, -2.0], [3.0, 2.0], 0.1)
    u0 = GridState(g, 0.0, np.where(rng.uniform(size=g.shape) < 0.5, rng.uniform(size=g.shape), 0.0))
    fam = decompose(u0, 1.0)
    # pieces have disjoint supports, so the envelope and the capped sum rebuild the datum
    assert np.array_equal(envelope(fam).values, u0.values)
    assert np.array_equal(capped_sum(fam).values, u0.values)
    assert np.array_equal(node_sum(fam), u0.values)
    # half-open cubes: the top row of nodes opens one more cube per axis (7 x 5 candidates)
    assert 30 <= len(fam.active_set) <= 35
    assert set(fam.active_set) <= {(i, j) for i in range(-3, 4) for j in range(-2, 3)}


def test_decompose_rejects_under_resolved_cubes():
    g = Grid.box([0.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        decompose(g.zeros(), 0.15)


def test_crossings_on_linear_profile():
    g = Grid.box([0.0], [10.0], 0.1)
    x = g.axes()[0]
    u = np.clip(1 - np.abs(x - 5.0) / 4.0, 0, 1)
    left, right = crossings(GridState(g, 0.0, u), 0.5)
    assert left == pytest.approx(3.0, abs=1e-12)
    assert right == pytest.approx(7.0, abs=1e-12)
    assert crossings(g.zeros(), 0.5) is None


def test_level_set_circle():
    g = Grid.box([-3.0, -3.0], [3.0, 3.0], 0.05)
    r = np.linalg.norm(g.points(), axis=-1)
    st = GridState(g, 0.0, np.clip(2.0 - r, 0, 1))
    lines = level_set(st, 0.5)
    pts = np.concatenate(lines)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.5, atol=0.01)


def test_interpolate_is_exact_for_linear():
    g = Grid.box([0.0, 0.0], [1.0, 1.0], 0.1)
    p = g.points()
    st = GridState(g, 0.0, 0.3 * p[..., 0] + 0.5 * p[..., 1])
    assert interpolate(st, np.array([[0.33, 0.77]]))[0] == pytest.approx(0.3 * 0.33 + 0.5 * 0.77)


def test_csv_round_trip(tmp_path, rng):
    g = Grid.box([0.0, 0.0], [1.0, 1.5], 0.1)
    st = GridState(g, 2.5, rng.uniform(size=g.shape))
    path = tmp_path / "s.csv"
    st.to_csv(path)
    back = read_state_csv(path, g)
    assert back.time == 2.5
    assert np.array_equal(back.values, st.values)


def test_pgm_layout():
    g = Grid.box([0.0, 0.0], [0.9, 1.9], 0.1)
    data = pgm_bytes(GridState(g, 0.0, np.ones(g.shape)))
    head, _, rest = data.partition(b"\n255\n")
    assert head.startswith(b"P5")
    assert head.split(b"\n")[-1] == b"10 20"
    assert rest == bytes([255]) * 200


def test_shifted_grid_is_congruent():
    g = Grid.box([0.0, 0.0], [2.0, 2.0], 0.25)
    s = g.shifted((0.5, -1.0))
    assert s.extents == g.extents
    assert np.array_equal(s.points() - g.points(), np.broadcast_to([0.5, -1.0], g.points().shape))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=40, max_size=40), st.sampled_from([0.5, 1.0, 1.5]))
def test_decompose_reconstructs_any_datum(vals, c):
    g = Grid.box([-1.0], [2.9], 0.1)
    u0 = GridState(g, 0.0, np.asarray(vals))
    if not np.any(u0.values):
        return
    fam = decompose(u0, c)
    assert np.array_equal(envelope(fam).values, u0.values)
    assert np.array_equal(capped_sum(fam).values, u0.values)
