"""2D walled grid worlds: generation, raycast range sensing, disc-robot stepping."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

WORLD_MAGIC = b"SDPW"
WORLD_VERSION = 1


class WorldGenerationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Boolean occupancy, ``cells[row, col]`` with rows along +y and cols along +x."""

    cells: np.ndarray
    resolution: float = 0.05
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=bool)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    def to_cell(self, xy) -> tuple[int, int]:
        col = int(math.floor((xy[0] - self.origin[0]) / self.resolution))
        row = int(math.floor((xy[1] - self.origin[1]) / self.resolution))
        return row, col

    def cell_center(self, row, col) -> np.ndarray:
        return np.array(
            [
                self.origin[0] + (np.asarray(col) + 0.5) * self.resolution,
                self.origin[1] + (np.asarray(row) + 0.5) * self.resolution,
            ]
        )

    def in_bounds(self, xy) -> bool:
        row, col = self.to_cell(xy)
        return 0 <= row < self.height and 0 <= col < self.width

    def occupied_at(self, xy) -> bool:
        if not self.in_bounds(xy):
            return True
        return bool(self.cells[self.to_cell(xy)])

    @property
    def clearance(self) -> np.ndarray:
        """Distance (m) from each cell center to the nearest occupied cell center."""
        cached = self.__dict__.get("_clearance")
        if cached is None:
            cached = ndimage.distance_transform_edt(~self.cells) * self.resolution
            cached.setflags(write=False)
            object.__setattr__(self, "_clearance", cached)
        return cached

    def validate(self):
        c = self.cells
        walled = c[0].all() and c[-1].all() and c[:, 0].all() and c[:, -1].all()
        if not walled:
            raise ValueError("outer boundary must be occupied")
        if c.all():
            raise ValueError("grid has no free cell")


@dataclass(frozen=True)
class RobotState:
    position: np.ndarray
    heading: float = 0.0
    radius: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float)[:2].copy())
        object.__setattr__(self, "heading", wrap_angle(self.heading))


def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    a = math.remainder(float(a), 2 * math.pi)
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class NoiseParams:
    enabled: bool = False
    axial_coeff: float = 0.005  # sigma = a * d^2
    dropout: float = 0.1
    far_field_start: float = 0.0  # extra noise only beyond this range
    far_field_coeff: float = 0.0


@dataclass(frozen=True)
class RangeScan:
    beams: np.ndarray
    fov: float
    max_range: float
    inside_obstacle: bool = False
    dropped: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class WorldParams:
    size: float = 12.0
    resolution: float = 0.05
    density: float = 0.15
    kinds: tuple[str, ...] = ("box", "disc")
    box_size: tuple[float, float] = (0.4, 1.4)
    disc_radius: tuple[float, float] = (0.2, 0.7)
    wall_count: int = 2
    door_width: float = 1.4
    region_margin: float = 0.8
    region_depth: float = 1.6
    robot_radius: float = 0.2
    clearance_margin: float = 0.1
    max_retries: int = 20

    def start_region(self) -> tuple[float, float]:
        return self.region_margin, self.region_margin + self.region_depth

    def goal_region(self) -> tuple[float, float]:
        return self.size - self.region_margin - self.region_depth, self.size - self.region_margin


# ---------------------------------------------------------------- generation


def _empty_cells(n: int) -> np.ndarray:
    cells = np.zeros((n, n), dtype=bool)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = True
    return cells


def _stamp_box(cells, res, cx, cy, w, h):
    c0 = max(1, int(round((cx - w / 2) / res)))
    c1 = min(cells.shape[1] - 1, int(round((cx + w / 2) / res)))
    r0 = max(1, int(round((cy - h / 2) / res)))
    r1 = min(cells.shape[0] - 1, int(round((cy + h / 2) / res)))
    cells[r0:r1, c0:c1] = True


def _stamp_disc(cells, res, cx, cy, radius):
    n = cells.shape[0]
    centers = (np.arange(n) + 0.5) * res
    mask = (centers[None, :] - cx) ** 2 + (centers[:, None] - cy) ** 2 <= radius**2
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = False
    cells |= mask


def _stamp_wall(cells, res, x, door_lo, door_hi, thickness=0.1):
    col0 = int(round((x - thickness / 2) / res))
    col1 = max(col0 + 1, int(round((x + thickness / 2) / res)))
    rows = (np.arange(cells.shape[0]) + 0.5) * res
    solid = (rows < door_lo) | (rows > door_hi)
    cells[solid, col0:col1] = True


def traversable(grid: OccupancyGrid, inflate: float) -> np.ndarray:
    """Cells whose center keeps more than ``inflate`` from every occupied cell."""
    return grid.clearance > inflate


def connected_mask(grid: OccupancyGrid, params: WorldParams) -> np.ndarray:
    """Traversable cells in components touching both the start and the goal strip."""
    free = traversable(grid, params.robot_radius + params.clearance_margin)
    labels, _ = ndimage.label(free)  # 4-connected, matches no-corner-cut moves
    xs = (np.arange(grid.width) + 0.5) * grid.resolution + grid.origin[0]
    s_lo, s_hi = params.start_region()
    g_lo, g_hi = params.goal_region()
    start_labels = set(np.unique(labels[:, (xs >= s_lo) & (xs <= s_hi)])) - {0}
    goal_labels = set(np.unique(labels[:, (xs >= g_lo) & (xs <= g_hi)])) - {0}
    both = sorted(start_labels & goal_labels)
    return np.isin(labels, both) if both else np.zeros_like(free)


def regions_connected(grid: OccupancyGrid, params: WorldParams) -> bool:
    return bool(connected_mask(grid, params).any())


def _generate_once(rng: np.random.Generator, params: WorldParams) -> np.ndarray:
    res = params.resolution
    n = int(round(params.size / res))
    cells = _empty_cells(n)
    if params.density <= 0:
        return cells
    s_hi = params.start_region()[1]
    g_lo = params.goal_region()[0]
    keep_clear = np.zeros_like(cells)
    xs = (np.arange(n) + 0.5) * res
    keep_clear[:, (xs <= s_hi) | (xs >= g_lo)] = True
    interior = ~keep_clear
    interior[0, :] = interior[-1, :] = interior[:, 0] = interior[:, -1] = False
    target = params.density * interior.sum()

    if "wall" in params.kinds:
        span = g_lo - s_hi
        for k in range(params.wall_count):
            x = s_hi + span * (k + 1) / (params.wall_count + 1)
            door_lo = rng.uniform(1.0, params.size - 1.0 - params.door_width)
            _stamp_wall(cells, res, x, door_lo, door_lo + params.door_width)

    blob_kinds = [k for k in params.kinds if k in ("box", "disc")]
    attempts = 0
    while blob_kinds and (cells & interior).sum() < target and attempts < 2000:
        attempts += 1
        kind = blob_kinds[rng.integers(len(blob_kinds))]
        cx = rng.uniform(s_hi, g_lo)
        cy = rng.uniform(0.5, params.size - 0.5)
        trial = cells.copy()
        if kind == "box":
            w, h = rng.uniform(*params.box_size, size=2)
            _stamp_box(trial, res, cx, cy, w, h)
        else:
            _stamp_disc(trial, res, cx, cy, rng.uniform(*params.disc_radius))
        trial[keep_clear & ~cells] = False
        cells = trial
    return cells


def generate_world(seed: int, params: WorldParams = WorldParams()) -> OccupancyGrid:
    """Seeded walled world whose start and goal strips are connected for the robot."""
    if not 0.0 <= params.density <= 0.4:
        raise ValueError(f"density must be in [0, 0.4], got {params.density}")
    rng = np.random.default_rng(seed)
    for _ in range(params.max_retries):
        grid = OccupancyGrid(_generate_once(rng, params), params.resolution)
        if regions_connected(grid, params):
            return grid
    raise WorldGenerationError(f"no connected world after {params.max_retries} retries (seed {seed})")


def sample_free_point(grid: OccupancyGrid, rng, x_range, inflate: float, mask=None) -> np.ndarray:
    ok = traversable(grid, inflate)
    if mask is not None:
        ok &= mask
    xs = (np.arange(grid.width) + 0.5) * grid.resolution + grid.origin[0]
    ok = ok & ((xs >= x_range[0]) & (xs <= x_range[1]))[None, :]
    rows, cols = np.nonzero(ok)
    if len(rows) == 0:
        raise WorldGenerationError("no free point in requested region")
    k = rng.integers(len(rows))
    return grid.cell_center(rows[k], cols[k])


# ---------------------------------------------------------------- sensing


@numba.njit(cache=True)
def _raycast(cells, ox, oy, res, px, py, angles, max_range):
    h, w = cells.shape
    out = np.empty(len(angles))
    for b in range(len(angles)):
        dx = math.cos(angles[b])
        dy = math.sin(angles[b])
        gx = (px - ox) / res
        gy = (py - oy) / res
        cx = int(math.floor(gx))
        cy = int(math.floor(gy))
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        if dx != 0.0:
            next_x = (cx + 1 - gx) if dx > 0 else (gx - cx)
            t_dx = 1.0 / abs(dx)
            t_mx = next_x * t_dx
        else:
            t_dx = 1e30
            t_mx = 1e30
        if dy != 0.0:
            next_y = (cy + 1 - gy) if dy > 0 else (gy - cy)
            t_dy = 1.0 / abs(dy)
            t_my = next_y * t_dy
        else:
            t_dy = 1e30
            t_my = 1e30
        limit = max_range / res
        t = 0.0
        hit = max_range
        while t <= limit:
            if cx < 0 or cy < 0 or cx >= w or cy >= h or cells[cy, cx]:
                hit = min(t * res, max_range)
                break
            if t_mx < t_my:
                t = t_mx
                t_mx += t_dx
                cx += step_x
            else:
                t = t_my
                t_my += t_dy
                cy += step_y
        out[b] = hit
    return out


def beam_angles(count: int, fov: float = 2 * math.pi) -> np.ndarray:
    """Relative beam angles, counter-clockwise starting at the robot heading."""
    if abs(fov - 2 * math.pi) < 1e-12:
        return np.arange(count) * (fov / count)
    return np.linspace(-fov / 2, fov / 2, count)


def raycast_distances(grid: OccupancyGrid, xy, angles, max_range: float) -> np.ndarray:
    """Noise-free first-hit distances along world-frame ``angles``."""
    return _raycast(
        grid.cells, grid.origin[0], grid.origin[1], grid.resolution,
        float(xy[0]), float(xy[1]), np.asarray(angles, dtype=float), float(max_range),
    )


def raycast_scan(
    grid: OccupancyGrid,
    state: RobotState,
    noise: NoiseParams = NoiseParams(),
    rng: np.random.Generator | None = None,
    beams: int = 64,
    fov: float = 2 * math.pi,
    max_range: float = 6.0,
) -> RangeScan:
    if grid.occupied_at(state.position):
        return RangeScan(np.zeros(beams), fov, max_range, inside_obstacle=True)
    d = raycast_distances(grid, state.position, state.heading + beam_angles(beams, fov), max_range)
    dropped = None
    if noise.enabled:
        if rng is None:
            raise ValueError("noisy scans need an rng")
        sigma = noise.axial_coeff * d**2
        if noise.far_field_coeff > 0:
            sigma = sigma + noise.far_field_coeff * np.maximum(d - noise.far_field_start, 0.0) ** 2
        d = d + sigma * rng.standard_normal(beams)
        dropped = rng.random(beams) < noise.dropout
        d = np.where(dropped, max_range, d)
        d = np.clip(d, 0.0, max_range)
    return RangeScan(d, fov, max_range, dropped=dropped)


# ---------------------------------------------------------------- motion


@numba.njit(cache=True)
def _disc_hits(cells, ox, oy, res, px, py, radius):
    h, w = cells.shape
    c0 = int(math.floor((px - radius - ox) / res))
    c1 = int(math.floor((px + radius - ox) / res))
    r0 = int(math.floor((py - radius - oy) / res))
    r1 = int(math.floor((py + radius - oy) / res))
    r2 = radius * radius
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            if r < 0 or c < 0 or r >= h or c >= w:
                return True
            if not cells[r, c]:
                continue
            x0 = ox + c * res
            y0 = oy + r * res
            qx = min(max(px, x0), x0 + res)
            qy = min(max(py, y0), y0 + res)
            if (qx - px) ** 2 + (qy - py) ** 2 < r2:
                return True
    return False


def disc_collides(grid: OccupancyGrid, xy, radius: float) -> bool:
    """True if a disc at ``xy`` overlaps any occupied cell square."""
    return bool(_disc_hits(grid.cells, grid.origin[0], grid.origin[1], grid.resolution,
                           float(xy[0]), float(xy[1]), float(radius)))


def step_robot(grid: OccupancyGrid, state: RobotState, target_point, step_len: float):
    """Advance up to ``step_len`` toward ``target_point`` with a swept-disc check.

    Returns:
        ``(new_state, collided)``; on collision the robot halts at the last free
        pose sampled at half-resolution granularity.
    """
    if step_len <= 0:
        raise ValueError("step_len must be positive")
    p0 = state.position
    delta = np.asarray(target_point, dtype=float)[:2] - p0
    dist = float(np.hypot(*delta))
    if dist < 1e-12:
        return state, False
    travel = min(step_len, dist)
    direction = delta / dist
    heading = math.atan2(direction[1], direction[0])
    n = max(1, int(math.ceil(travel / (grid.resolution / 2))))
    last_free = p0
    for k in range(1, n + 1):
        p = p0 + direction * (travel * k / n)
        if disc_collides(grid, p, state.radius):
            return RobotState(last_free, heading, state.radius), True
        last_free = p
    return RobotState(p0 + direction * travel, heading, state.radius), False


# ---------------------------------------------------------------- serialization

_HEADER = struct.Struct("<4sHdII2d")


def world_to_bytes(grid: OccupancyGrid) -> bytes:
    head = _HEADER.pack(WORLD_MAGIC, WORLD_VERSION, grid.resolution, grid.width, grid.height, *grid.origin)
    return head + np.packbits(grid.cells.ravel()).tobytes()


def world_from_bytes(data: bytes) -> OccupancyGrid:
    magic, version, res, w, h, ox, oy = _HEADER.unpack_from(data)
    if magic != WORLD_MAGIC:
        raise ValueError(f"bad world magic {magic!r}")
    if version != WORLD_VERSION:
        raise ValueError(f"unsupported world version {version}")
    bits = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    cells = np.unpackbits(bits, count=w * h).astype(bool).reshape(h, w)
    return OccupancyGrid(cells, res, (ox, oy))


def save_world(grid: OccupancyGrid, path):
    with open(path, "wb") as fh:
        fh.write(world_to_bytes(grid))


def load_world(path) -> OccupancyGrid:
    with open(path, "rb") as fh:
        return world_from_bytes(fh.read())


def world_to_text(grid: OccupancyGrid) -> str:
    # top line is the highest row (largest y)
    rows = ["".join("#" if c else "." for c in row) for row in grid.cells[::-1]]
    return "\n".join(rows) + "\n"


def world_from_text(text: str, resolution: float = 0.05, origin=(0.0, 0.0)) -> OccupancyGrid:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    cells = np.array([[ch == "#" for ch in ln] for ln in lines[::-1]], dtype=bool)
    return OccupancyGrid(cells, resolution, origin)
