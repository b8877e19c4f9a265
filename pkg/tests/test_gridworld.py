import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sandplanner import gridworld as gw


def room(n, res=0.05):
    cells = np.zeros((n, n), dtype=bool)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = True
    return cells


def bfs_connected(free, a, b):
    """4-connected flood fill, independent of scipy.ndimage."""
    h, w = free.shape
    seen = np.zeros_like(free)
    q = deque([a])
    seen[a] = True
    while q:
        r, c = q.popleft()
        if (r, c) == b:
            return True
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and free[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                q.append((rr, cc))
    return False


def brute_disc_hits(grid, p, radius):
    rows, cols = np.nonzero(grid.cells)
    x0 = grid.origin[0] + cols * grid.resolution
    y0 = grid.origin[1] + rows * grid.resolution
    dx = np.maximum(np.maximum(x0 - p[0], 0), p[0] - (x0 + grid.resolution))
    dy = np.maximum(np.maximum(y0 - p[1], 0), p[1] - (y0 + grid.resolution))
    return bool(np.any(dx * dx + dy * dy < radius * radius))


# ---------------------------------------------------------------- generation


def test_zero_density_is_empty_room():
    g = gw.generate_world(3, gw.WorldParams(density=0.0))
    np.testing.assert_array_equal(g.cells, room(240))


def test_generation_is_deterministic():
    p = gw.WorldParams(density=0.15)
    a, b = gw.generate_world(42, p), gw.generate_world(42, p)
    assert np.array_equal(a.cells, b.cells)
    assert not np.array_equal(a.cells, gw.generate_world(43, p).cells)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("kinds", [("box", "disc"), ("box", "disc", "wall")])
def test_start_and_goal_regions_connected(seed, kinds):
    p = gw.WorldParams(density=0.15, kinds=kinds)
    g = gw.generate_world(seed, p)
    g.validate()
    mask = gw.connected_mask(g, p)
    rng = np.random.default_rng(seed)
    inflate = p.robot_radius + p.clearance_margin
    s = g.to_cell(gw.sample_free_point(g, rng, p.start_region(), inflate, mask))
    t = g.to_cell(gw.sample_free_point(g, rng, p.goal_region(), inflate, mask))
    assert bfs_connected(gw.traversable(g, p.robot_radius), s, t)


def test_density_out_of_range():
    with pytest.raises(ValueError):
        gw.generate_world(0, gw.WorldParams(density=0.5))


def test_impossible_world_raises():
    # walls without doors wide enough for the robot can never connect
    p = gw.WorldParams(density=0.01, kinds=("wall",), door_width=0.2, max_retries=3)
    with pytest.raises(gw.WorldGenerationError):
        gw.generate_world(0, p)


def test_grid_rejects_bad_resolution():
    with pytest.raises(ValueError):
        gw.OccupancyGrid(room(10), resolution=0.0)


def test_validate_requires_boundary():
    with pytest.raises(ValueError):
        gw.OccupancyGrid(np.zeros((5, 5), bool)).validate()


def test_heading_wraps():
    assert gw.RobotState([1, 1], 3 * math.pi).heading == pytest.approx(math.pi)
    assert gw.RobotState([1, 1], -math.pi).heading == pytest.approx(math.pi)


# ---------------------------------------------------------------- raycast


def test_empty_room_beams_bounded_by_geometry():
    g = gw.OccupancyGrid(room(202))  # free interior [0.05, 10.05]^2
    d = gw.raycast_scan(g, gw.RobotState([5.05, 5.05]), gw.NoiseParams(), None, beams=64, max_range=8.0).beams
    assert d.min() >= 5.0 - 1e-9
    assert d.max() <= 5.0 * math.sqrt(2) + 1e-9
    assert d[0] == pytest.approx(5.0, abs=1e-9)


def test_wall_one_meter_ahead():
    cells = room(120)
    cells[:, 80] = True  # face at x = 4.0
    g = gw.OccupancyGrid(cells)
    d = gw.raycast_distances(g, np.array([3.0, 3.025]), np.array([0.0]), 6.0)
    assert abs(d[0] - 1.0) <= 0.025


@settings(max_examples=50, deadline=None)
@given(st.floats(0.3, 2.7), st.floats(0.3, 2.7), st.floats(-math.pi, math.pi))
def test_raycast_matches_analytic_box(x, y, a):
    g = gw.OccupancyGrid(room(60))  # interior [0.05, 2.95]^2
    d = gw.raycast_distances(g, np.array([x, y]), np.array([a]), 10.0)[0]
    c, s = math.cos(a), math.sin(a)
    t = []
    if c > 1e-12:
        t.append((2.95 - x) / c)
    if c < -1e-12:
        t.append((0.05 - x) / c)
    if s > 1e-12:
        t.append((2.95 - y) / s)
    if s < -1e-12:
        t.append((0.05 - y) / s)
    assert abs(d - min(t)) <= 0.05


def test_dropout_fraction():
    g = gw.generate_world(0, gw.WorldParams(density=0.1))
    rng = np.random.default_rng(0)
    noise = gw.NoiseParams(enabled=True)
    dropped = 0
    for _ in range(157):
        scan = gw.raycast_scan(g, gw.RobotState([1.5, 6.0]), noise, rng, beams=64)
        dropped += int(scan.dropped.sum())
    frac = dropped / (157 * 64)
    assert abs(frac - 0.1) <= 0.01


def test_noisy_readings_clamped():
    g = gw.OccupancyGrid(room(240))
    noise = gw.NoiseParams(enabled=True, axial_coeff=0.5)
    scan = gw.raycast_scan(g, gw.RobotState([6.0, 6.0]), noise, np.random.default_rng(1), beams=256)
    assert scan.beams.min() >= 0.0 and scan.beams.max() <= scan.max_range


def test_noise_requires_rng():
    g = gw.OccupancyGrid(room(40))
    with pytest.raises(ValueError):
        gw.raycast_scan(g, gw.RobotState([1.0, 1.0]), gw.NoiseParams(enabled=True), None)


def test_scan_inside_obstacle_is_flagged():
    cells = room(40)
    cells[15:25, 15:25] = True
    scan = gw.raycast_scan(gw.OccupancyGrid(cells), gw.RobotState([1.0, 1.0]), gw.NoiseParams(), None)
    assert scan.inside_obstacle
    assert np.all(scan.beams == 0)


def test_seeded_scans_repeat():
    g = gw.generate_world(5, gw.WorldParams())
    noise = gw.NoiseParams(enabled=True)
    a = gw.raycast_scan(g, gw.RobotState([1.5, 6.0]), noise, np.random.default_rng(9)).beams
    b = gw.raycast_scan(g, gw.RobotState([1.5, 6.0]), noise, np.random.default_rng(9)).beams
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- motion


def test_free_step_advances_exactly():
    g = gw.OccupancyGrid(room(100))
    s, hit = gw.step_robot(g, gw.RobotState([1.0, 1.0]), [4.0, 1.0], 0.2)
    assert not hit
    assert s.position == pytest.approx([1.2, 1.0], abs=1e-12)
    assert s.heading == pytest.approx(0.0)


def test_step_into_wall_stops():
    cells = room(100)
    cells[:, 34:] = True  # face at x = 1.7
    g = gw.OccupancyGrid(cells)
    start = gw.RobotState([1.4, 2.0])  # 0.1 m gap between disc and wall
    s, hit = gw.step_robot(g, start, [3.0, 2.0], 0.2)
    assert hit
    assert s.position[0] <= 1.5 + 1e-9
    assert not brute_disc_hits(g, s.position, 0.2)


def test_zero_target_no_motion():
    g = gw.OccupancyGrid(room(40))
    st0 = gw.RobotState([1.0, 1.0], 0.5)
    s, hit = gw.step_robot(g, st0, [1.0, 1.0], 0.2)
    assert not hit and np.array_equal(s.position, st0.position) and s.heading == st0.heading


def test_step_length_must_be_positive():
    g = gw.OccupancyGrid(room(40))
    with pytest.raises(ValueError):
        gw.step_robot(g, gw.RobotState([1.0, 1.0]), [2.0, 1.0], 0.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_disc_collision_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cells = room(40)
    cells[rng.random((40, 40)) < 0.05] = True
    g = gw.OccupancyGrid(cells)
    p = rng.uniform(0.1, 1.9, 2)
    r = rng.uniform(0.05, 0.4)
    assert gw.disc_collides(g, p, r) == brute_disc_hits(g, p, r)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_robot_never_ends_in_collision(seed):
    rng = np.random.default_rng(seed)
    g = gw.generate_world(int(rng.integers(1000)), gw.WorldParams(density=0.2))
    state = gw.RobotState(gw.sample_free_point(g, rng, (0.8, 2.4), 0.25), 0.0)
    for _ in range(20):
        target = state.position + rng.normal(size=2)
        state, _ = gw.step_robot(g, state, target, 0.2)
        assert not brute_disc_hits(g, state.position, state.radius)


# ---------------------------------------------------------------- serialization


def test_binary_roundtrip(tmp_path):
    g = gw.generate_world(11, gw.WorldParams())
    p = tmp_path / "w.sdpw"
    gw.save_world(g, p)
    h = gw.load_world(p)
    assert np.array_equal(g.cells, h.cells) and h.resolution == g.resolution and h.origin == g.origin
    assert p.read_bytes()[:4] == b"SDPW"


def test_binary_rejects_bad_magic():
    data = bytearray(gw.world_to_bytes(gw.OccupancyGrid(room(8))))
    data[:4] = b"XXXX"
    with pytest.raises(ValueError):
        gw.world_from_bytes(bytes(data))


def test_text_roundtrip():
    cells = room(6)
    cells[1, 2] = True
    g = gw.OccupancyGrid(cells)
    text = gw.world_to_text(g)
    assert text.splitlines()[-2] == "#.#..#"  # row 1 is second from the bottom
    assert np.array_equal(gw.world_from_text(text).cells, cells)
