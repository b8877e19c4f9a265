import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandplanner import esdf as E
from sandplanner import gridworld as gw

RES = 0.05


def brute_force(occ, res):
    """All-pairs nearest opposite-class cell, squared integer distances."""
    r, c = np.indices(occ.shape)
    pts = np.column_stack([r.ravel(), c.ravel()])
    flat = occ.ravel()
    out = np.empty(len(pts))
    for k, p in enumerate(pts):
        other = pts[flat != flat[k]]
        d2 = np.min(np.sum((other - p) ** 2, axis=1))
        out[k] = (-1 if flat[k] else 1) * math.sqrt(d2)
    return out.reshape(occ.shape) * res


def lone(n, r, c):
    occ = np.zeros((n, n), bool)
    occ[r, c] = True
    return occ


def test_adjacent_to_single_obstacle():
    v = E.signed_distance(lone(9, 4, 4), RES)
    assert v[4, 5] == pytest.approx(RES)
    assert v[5, 4] == pytest.approx(RES)
    assert v[4, 4] == pytest.approx(-RES)


def test_three_four_five():
    v = E.signed_distance(lone(16, 2, 2), RES)
    assert v[5, 6] == pytest.approx(5 * RES)


def test_checkerboard_matches_brute_force():
    occ = np.kron((np.indices((4, 4)).sum(axis=0) % 2).astype(bool), np.ones((2, 2), bool))
    np.testing.assert_allclose(E.signed_distance(occ, RES), brute_force(occ, RES), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 32), st.integers(2, 32), st.floats(0.05, 0.7), st.integers(0, 2**31 - 1))
def test_matches_brute_force_oracle(h, w, p, seed):
    occ = np.random.default_rng(seed).random((h, w)) < p
    if occ.all() or not occ.any():
        occ.flat[0] = not occ.flat[0]
    got = E.signed_distance(occ, RES)
    want = brute_force(occ, RES)
    # compare squared integer distances exactly
    np.testing.assert_array_equal(np.round((got / RES) ** 2), np.round((want / RES) ** 2))
    assert np.array_equal(got > 0, ~occ)


def test_no_surface():
    with pytest.raises(E.NoSurfaceError):
        E.signed_distance(np.zeros((4, 4), bool), RES)
    with pytest.raises(E.NoSurfaceError):
        E.signed_distance(np.ones((4, 4), bool), RES)


def _world_esdf(seed):
    return E.build_esdf(gw.generate_world(seed, gw.WorldParams()))


@pytest.mark.parametrize("seed", [0, 1])
def test_neighbor_differences(seed):
    esdf = _world_esdf(seed)
    v = esdf.values
    diag = math.hypot(*v.shape) * RES
    assert np.abs(v).max() <= diag
    for a, b in ((v[1:], v[:-1]), (v[:, 1:], v[:, :-1])):
        same = np.sign(a) == np.sign(b)
        assert np.all(np.abs(a - b)[same] <= RES * math.sqrt(2) + 1e-9)
        # across the surface the jump is +res to -res by construction
        assert np.allclose(np.abs(a - b)[~same], 2 * RES)


def test_query_at_center_and_midpoint():
    vals = np.array([[0.2, 0.4], [0.2, 0.4]])
    g = E.EsdfGrid(vals, 0.1)
    assert g.query([0.05, 0.05]) == pytest.approx(0.2)
    assert g.query([0.10, 0.05]) == pytest.approx(0.3)
    assert g.query([0.15, 0.15]) == pytest.approx(0.4)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_query_within_surrounding_cells(seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(10, 12))
    g = E.EsdfGrid(vals, RES)
    xy = rng.uniform([RES / 2, RES / 2], [11.5 * RES, 9.5 * RES], size=(50, 2))
    q, oob = g.query_many(xy)
    assert not oob.any()
    c0 = np.floor(xy[:, 0] / RES - 0.5).astype(int)
    r0 = np.floor(xy[:, 1] / RES - 0.5).astype(int)
    c0, r0 = np.minimum(c0, 10), np.minimum(r0, 8)
    quad = np.stack([vals[r0, c0], vals[r0, c0 + 1], vals[r0 + 1, c0], vals[r0 + 1, c0 + 1]])
    assert np.all(q >= quad.min(axis=0) - 1e-12)
    assert np.all(q <= quad.max(axis=0) + 1e-12)


def test_out_of_bounds_is_flagged():
    g = E.EsdfGrid(np.ones((4, 4)), RES)
    q, oob = g.query_many(np.array([[-1.0, 0.1], [0.1, 0.1]]))
    assert oob.tolist() == [True, False]
    assert q[0] == 1.0


def test_visible_esdf_is_conservative_in_view():
    # a sensed wall must appear as an obstacle at the right range
    cells = np.zeros((120, 120), bool)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = True
    cells[:, 80] = True
    grid = gw.OccupancyGrid(cells)
    state = gw.RobotState([3.0, 3.0])
    vis = E.build_visible_esdf(grid, state, max_range=6.0)
    assert vis.query([3.0, 3.0]) == pytest.approx(1.0, abs=RES)


def test_visible_esdf_empty_view():
    grid = gw.OccupancyGrid(gw.generate_world(0, gw.WorldParams(density=0.0)).cells)
    vis = E.build_visible_esdf(grid, gw.RobotState([6.0, 6.0]), max_range=2.0)
    assert np.all(vis.values == 2.0)


def test_shadow_marks_cells_behind_hits():
    cells = np.zeros((120, 120), bool)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = True
    cells[:, 80:] = True
    grid = gw.OccupancyGrid(cells)
    st0 = gw.RobotState([3.0, 3.0])
    thin = E.observed_occupancy(grid, st0, shadow=0.0)
    deep = E.observed_occupancy(grid, st0, shadow=0.3)
    assert thin[60, 80] and not thin[60, 84]
    assert deep[60, 84]
    assert deep.sum() > thin.sum()


def test_pgm_header():
    data = E.to_pgm(_world_esdf(0))
    assert data.startswith(b"P5\n240 240\n255\n")
    assert len(data) == len(b"P5\n240 240\n255\n") + 240 * 240
