"""Expert demonstrations (grid A*), sub-trajectory resampling, labels, dataset files."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import spline_core as sc
from .gridworld import (
    NoiseParams,
    OccupancyGrid,
    RobotState,
    WorldParams,
    connected_mask,
    generate_world,
    raycast_scan,
    sample_free_point,
    traversable,
)
from .representations import ANCHOR_COUNT, RepresentationKind, polyline_length

DATASET_MAGIC = b"SDPD"
DATASET_VERSION = 1
WAYPOINT_SPACING = 0.2


class NoPathError(RuntimeError):
    pass


class EpisodeTooShortError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Episode:
    world_seed: int
    start: np.ndarray
    goal: np.ndarray
    expert_path: np.ndarray  # (K, 2) dense polyline, meters
    length: float
    grid_length: float  # 8-connected length before smoothing


# ---------------------------------------------------------------- A*

_SQ2 = math.sqrt(2.0)
_MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)], dtype=np.int64)


@numba.njit(cache=True)
def _heap_push(keys, vals, size, k, v):
    i = size
    keys[i] = k
    vals[i] = v
    while i > 0:
        parent = (i - 1) // 2
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        vals[parent], vals[i] = vals[i], vals[parent]
        i = parent
    return size + 1


@numba.njit(cache=True)
def _heap_pop(keys, vals, size):
    k = keys[0]
    v = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < size and keys[l] < keys[m]:
            m = l
        if r < size and keys[r] < keys[m]:
            m = r
        if m == i:
            break
        keys[m], keys[i] = keys[i], keys[m]
        vals[m], vals[i] = vals[i], vals[m]
        i = m
    return k, v, size


@numba.njit(cache=True)
def _astar(free, penalty, sr, sc_, gr, gc, moves):
    h, w = free.shape
    n = h * w
    g = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    cap = 8 * n + 8
    keys = np.empty(cap)
    vals = np.empty(cap, dtype=np.int64)
    start = sr * w + sc_
    goal = gr * w + gc
    g[start] = 0.0
    size = _heap_push(keys, vals, 0, 0.0, start)
    sq2 = math.sqrt(2.0)
    while size > 0:
        _, cur, size = _heap_pop(keys, vals, size)
        if closed[cur]:
            continue
        if cur == goal:
            break
        closed[cur] = True
        r = cur // w
        c = cur % w
        for m in range(8):
            dr = moves[m, 0]
            dc = moves[m, 1]
            nr = r + dr
            nc = c + dc
            if nr < 0 or nc < 0 or nr >= h or nc >= w or not free[nr, nc]:
                continue
            if dr != 0 and dc != 0 and (not free[r + dr, c] or not free[r, c + dc]):
                continue
            nxt = nr * w + nc
            if closed[nxt]:
                continue
            cost = g[cur] + (sq2 if dr != 0 and dc != 0 else 1.0) * (1.0 + penalty[nr, nc])
            if cost < g[nxt]:
                g[nxt] = cost
                parent[nxt] = cur
                ddr = abs(nr - gr)
                ddc = abs(nc - gc)
                heur = max(ddr, ddc) + (sq2 - 1.0) * min(ddr, ddc)
                size = _heap_push(keys, vals, size, cost + heur, nxt)
    return g[goal], parent


def grid_path(free: np.ndarray, start_rc, goal_rc, penalty: np.ndarray | None = None):
    """Optimal 8-connected path on ``free`` (diagonal corner cutting forbidden).

    ``penalty`` (non-negative, per cell) scales the cost of entering a cell by
    ``1 + penalty``; without it the path is the geometric shortest one.

    Returns:
        ``(cells, cost_in_cells)`` with ``cells`` an ``(K, 2)`` row/col array.
    """
    free = np.ascontiguousarray(free, dtype=bool)
    if penalty is None:
        penalty = np.zeros(free.shape)
    penalty = np.ascontiguousarray(penalty, dtype=float)
    (sr, sc_), (gr, gc) = start_rc, goal_rc
    if not free[sr, sc_] or not free[gr, gc]:
        raise NoPathError("start or goal is not traversable")
    cost, parent = _astar(free, penalty, sr, sc_, gr, gc, _MOVES)
    if not np.isfinite(cost):
        raise NoPathError("goal unreachable")
    w = free.shape[1]
    idx = gr * w + gc
    cells = [idx]
    while idx != sr * w + sc_:
        idx = parent[idx]
        cells.append(idx)
    cells = np.array(cells[::-1])
    return np.column_stack([cells // w, cells % w]), float(cost)


def dijkstra_length(free: np.ndarray, start_rc, goal_rc) -> float:
    """Shortest 8-connected length in cells via a sparse-graph Dijkstra (independent of A*)."""
    free = np.asarray(free, dtype=bool)
    h, w = free.shape
    ids = np.arange(h * w).reshape(h, w)
    rows, cols, wts = [], [], []
    for dr, dc in _MOVES:
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        ok = free[r0:r1, c0:c1] & free[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        if dr and dc:
            ok &= free[r0 + dr : r1 + dr, c0:c1] & free[r0:r1, c0 + dc : c1 + dc]
        rows.append(ids[r0:r1, c0:c1][ok])
        cols.append(ids[r0 + dr : r1 + dr, c0 + dc : c1 + dc][ok])
        wts.append(np.full(ok.sum(), _SQ2 if dr and dc else 1.0))
    graph = csr_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(h * w, h * w))
    d = dijkstra(graph, indices=ids[start_rc], min_only=True)
    return float(d[ids[goal_rc]])


def _segment_clear(grid: OccupancyGrid, a, b, inflate: float) -> bool:
    n = max(2, int(math.ceil(np.hypot(*(b - a)) / (grid.resolution / 2))) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = a + (b - a) * t
    cols = np.floor((pts[:, 0] - grid.origin[0]) / grid.resolution).astype(int)
    rows = np.floor((pts[:, 1] - grid.origin[1]) / grid.resolution).astype(int)
    if cols.min() < 0 or rows.min() < 0 or cols.max() >= grid.width or rows.max() >= grid.height:
        return False
    return bool(np.all(grid.clearance[rows, cols] > inflate))


def _point_clearance(grid: OccupancyGrid, pts) -> np.ndarray:
    cols = np.clip(np.floor((pts[:, 0] - grid.origin[0]) / grid.resolution).astype(int), 0, grid.width - 1)
    rows = np.clip(np.floor((pts[:, 1] - grid.origin[1]) / grid.resolution).astype(int), 0, grid.height - 1)
    return grid.clearance[rows, cols]


def shortcut(grid: OccupancyGrid, pts: np.ndarray, inflate: float, prefer: float | None = None) -> np.ndarray:
    """Greedy line-of-sight shortcutting that keeps every sample's clearance above ``inflate``.

    With ``prefer`` set, a shortcut must also keep the clearance the original
    path had over the skipped stretch (up to ``prefer``), so a path that was
    steered away from obstacles is not pulled back against them.
    """
    floor = None
    if prefer is not None:
        floor = np.minimum(_point_clearance(grid, pts), prefer) - grid.resolution
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = i + 1
        while j + 1 < len(pts):
            need = inflate if floor is None else max(inflate, float(floor[i : j + 2].min()))
            if not _segment_clear(grid, pts[i], pts[j + 1], need):
                break
            j += 1
        out.append(pts[j])
        i = j
    return np.array(out)


def clearance_penalty(grid: OccupancyGrid, inflate: float, prefer: float, weight: float) -> np.ndarray:
    """Linear ramp from ``weight`` at ``inflate`` clearance down to 0 at ``prefer``."""
    if prefer <= inflate or weight <= 0:
        return np.zeros(grid.cells.shape)
    return weight * np.clip((prefer - grid.clearance) / (prefer - inflate), 0.0, 1.0)


def astar_expert(grid: OccupancyGrid, start, goal, robot_radius: float = 0.2,
                 margin: float = 0.1, world_seed: int = -1, spacing: float = 0.05,
                 free: np.ndarray | None = None, prefer: float | None = None,
                 penalty_weight: float = 0.0, penalty: np.ndarray | None = None) -> Episode:
    """Shortest inflated-grid path, shortcut and resampled at ``spacing``.

    ``free`` may carry a precomputed ``traversable(grid, robot_radius + margin)``
    and ``penalty`` a precomputed :func:`clearance_penalty`. With ``prefer``
    and ``penalty_weight`` the search trades length for clearance up to
    ``prefer`` meters; the hard constraint is still ``robot_radius + margin``.
    """
    inflate = robot_radius + margin
    if free is None:
        free = traversable(grid, inflate)
    if penalty is None and prefer is not None and penalty_weight > 0:
        penalty = clearance_penalty(grid, inflate, prefer, penalty_weight)
    s_rc, g_rc = grid.to_cell(start), grid.to_cell(goal)
    for rc in (s_rc, g_rc):
        if not (0 <= rc[0] < grid.height and 0 <= rc[1] < grid.width):
            raise NoPathError("endpoint outside the grid")
    cells, cost = grid_path(free, s_rc, g_rc, penalty)
    centers = grid.cell_center(cells[:, 0], cells[:, 1]).T
    centers[0], centers[-1] = np.asarray(start, float)[:2], np.asarray(goal, float)[:2]
    smooth = shortcut(grid, centers, inflate, prefer if penalty is not None else None)
    dense = sc.resample_polyline(smooth, spacing=spacing).points[:, :2]
    steps = np.abs(np.diff(cells, axis=0))
    grid_len = float(np.sum(np.where(steps.sum(axis=1) == 2, _SQ2, 1.0))) * grid.resolution
    return Episode(world_seed, np.asarray(start, float)[:2], np.asarray(goal, float)[:2], dense,
                   polyline_length(dense), grid_len)


# ---------------------------------------------------------------- resampling


def _arclength(path: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])


def point_at(path: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    return np.array([np.interp(s, cum, path[:, 0]), np.interp(s, cum, path[:, 1])])


def to_robot_frame(points, position, heading) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    d = np.asarray(points, dtype=float)[..., :2] - np.asarray(position, dtype=float)[:2]
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def to_world_frame(points, position, heading) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    p = np.asarray(points, dtype=float)[..., :2]
    return np.stack([c * p[..., 0] - s * p[..., 1], s * p[..., 0] + c * p[..., 1]], axis=-1) + np.asarray(position)[:2]


def sample_subtrajectory(ep: Episode, rng: np.random.Generator, horizon=(2.0, 6.0),
                         min_length: float = 0.5, start_s: float | None = None,
                         horizon_s: float | None = None):
    """Random start pose on the expert path and the path ahead in that pose's frame.

    Returns:
        ``((position, heading), segment)`` with ``segment`` a robot-frame ``(K, 2)``
        polyline starting at the origin.
    """
    path = ep.expert_path
    cum = _arclength(path)
    total = cum[-1]
    if total < min_length:
        raise EpisodeTooShortError(f"episode length {total:.3f} m below {min_length} m")
    s0 = rng.uniform(0.0, total - min_length) if start_s is None else float(start_s)
    h = rng.uniform(*horizon) if horizon_s is None else float(horizon_s)
    s1 = min(total, s0 + h)
    ahead = point_at(path, cum, min(total, s0 + 0.1))
    pos = point_at(path, cum, s0)
    heading = math.atan2(ahead[1] - pos[1], ahead[0] - pos[0])
    inside = (cum > s0) & (cum < s1)
    seg = np.vstack([pos, path[inside], point_at(path, cum, s1)])
    return (pos, heading), to_robot_frame(seg, pos, heading)


_LABEL_SPEC = sc.SplineSpec(3, ANCHOR_COUNT)
_PROJ_U = np.linspace(0.0, 1.0, 1001)
_PROJ_B = sc.basis_matrix(_LABEL_SPEC, _PROJ_U)
LABEL_REFINE_ITERS = 3


@dataclass(frozen=True)
class Label:
    anchors: np.ndarray
    rms: float = 0.0
    padded: bool = False


def make_labels(segment, kind: RepresentationKind | str) -> Label:
    """Anchor set for one representation from a robot-frame segment."""
    kind = RepresentationKind(kind)
    seg = np.asarray(segment, dtype=float)[:, :2]
    seg3 = np.column_stack([seg, np.zeros(len(seg))])
    if kind is RepresentationKind.BSPLINE:
        dense = sc.resample_polyline(seg3, M=max(64, len(seg3))).points
        fit = sc.fit_least_squares(_LABEL_SPEC, dense)
        # chord-length parameters misplace samples near sharp turns; snapping each
        # sample to its closest curve point and refitting shrinks the residual fast
        for _ in range(LABEL_REFINE_ITERS):
            curve = _PROJ_B @ fit.control_points
            d2 = ((dense[:, None, :2] - curve[None, :, :2]) ** 2).sum(-1)
            u = np.maximum.accumulate(_PROJ_U[d2.argmin(1)])
            u[0], u[-1] = 0.0, 1.0
            try:
                better = sc.fit_least_squares(_LABEL_SPEC, dense, u)
            except sc.IllConditionedError:
                break
            if better.rms >= fit.rms:
                break
            fit = better
        return Label(fit.control_points, fit.rms)
    cum = _arclength(seg)
    total = cum[-1]
    if kind is RepresentationKind.WAYPOINTS:
        s = np.arange(ANCHOR_COUNT) * WAYPOINT_SPACING
        padded = bool(total < s[-1] - 1e-9)
        s = np.minimum(s, total)
    else:
        s = np.linspace(0.0, total, ANCHOR_COUNT)
        padded = False
    pts = np.column_stack([np.interp(s, cum, seg[:, 0]), np.interp(s, cum, seg[:, 1]), np.zeros(ANCHOR_COUNT)])
    return Label(pts, 0.0, padded)


def heading_token(anchors) -> np.ndarray | None:
    """Unit xy direction from the first to the second anchor; None when they coincide."""
    d = np.asarray(anchors, dtype=float)[1, :2] - np.asarray(anchors, dtype=float)[0, :2]
    n = float(np.hypot(*d))
    return None if n < 1e-9 else d / n


# ---------------------------------------------------------------- dataset


@dataclass(frozen=True)
class DataConfig:
    n_episodes: int = 500
    samples_per_episode: int = 40
    master_seed: int = 0
    horizon_min: float = 2.0
    horizon_max: float = 6.0
    null_fraction: float = 0.1
    beams: int = 64
    max_range: float = 6.0
    density_range: tuple[float, float] = (0.08, 0.2)
    wall_fraction: float = 0.3
    expert_margin: float = 0.1
    robot_radius: float = 0.2
    sensor_noise: bool = True
    axial_coeff: float = 0.005
    dropout: float = 0.1
    kinds: tuple[str, ...] = ("bspline", "waypoints", "cubic")
    # share of samples whose goal token is the episode goal (clamped to
    # horizon_max) rather than the segment's own end point
    episode_goal_fraction: float = 0.5
    # robot heading drawn within +-heading_jitter rad of the path tangent
    heading_jitter: float = 0.6
    # share of samples taken off the expert path (uniform in a disc of
    # relabel_radius) and labelled by re-planning from there to the goal
    relabel_fraction: float = 0.5
    relabel_radius: float = 0.8
    # experts trade path length for clearance up to expert_prefer meters
    expert_prefer: float = 0.6
    expert_penalty: float = 2.0

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Dataset:
    """Column arrays for one representation kind."""

    goal: np.ndarray  # (n, 2)
    v_prev: np.ndarray  # (n, 2), zeros where null
    v_null: np.ndarray  # (n,) bool
    ranges: np.ndarray  # (n, beams)
    anchors: np.ndarray  # (n, 8, 3)
    kind: RepresentationKind = RepresentationKind.BSPLINE
    samples_per_episode: int = 0

    def __len__(self) -> int:
        return len(self.goal)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.goal[idx], self.v_prev[idx], self.v_null[idx], self.ranges[idx],
                       self.anchors[idx], self.kind, self.samples_per_episode)

    def episode_prefix(self, n_episodes: int) -> "Dataset":
        if self.samples_per_episode <= 0:
            raise ValueError("dataset does not record samples per episode")
        return self.subset(slice(0, n_episodes * self.samples_per_episode))

    def without_token(self) -> "Dataset":
        """Same samples with the null flag forced on everywhere."""
        return Dataset(self.goal, np.zeros_like(self.v_prev), np.ones_like(self.v_null), self.ranges,
                       self.anchors, self.kind, self.samples_per_episode)

    def fraction(self, frac: float) -> "Dataset":
        n_ep = len(self) // self.samples_per_episode
        return self.episode_prefix(max(1, int(round(frac * n_ep))))


def world_params_for(cfg: DataConfig, rng: np.random.Generator) -> WorldParams:
    kinds = ("box", "disc", "wall") if rng.random() < cfg.wall_fraction else ("box", "disc")
    return WorldParams(density=float(rng.uniform(*cfg.density_range)), kinds=kinds,
                       robot_radius=cfg.robot_radius, clearance_margin=cfg.expert_margin)


def make_episode(grid: OccupancyGrid, wp: WorldParams, rng, world_seed: int = -1,
                 prefer: float | None = None, penalty_weight: float = 0.0) -> Episode:
    inflate = wp.robot_radius + wp.clearance_margin
    mask = connected_mask(grid, wp)
    start = sample_free_point(grid, rng, wp.start_region(), inflate, mask)
    goal = sample_free_point(grid, rng, wp.goal_region(), inflate, mask)
    return astar_expert(grid, start, goal, wp.robot_radius, wp.clearance_margin, world_seed,
                        prefer=prefer, penalty_weight=penalty_weight)


def _relabel(ep: Episode, grid: OccupancyGrid, free, penalty, pos, cfg: DataConfig, rng, horizon_s=None):
    """Expert segment from a pose displaced off the demonstration, or None if unusable."""
    r = cfg.relabel_radius * math.sqrt(rng.random())
    a = rng.uniform(0.0, 2 * math.pi)
    p = np.asarray(pos) + r * np.array([math.cos(a), math.sin(a)])
    rc = grid.to_cell(p)
    if not (0 <= rc[0] < grid.height and 0 <= rc[1] < grid.width) or not free[rc]:
        return None
    try:
        sub = astar_expert(grid, p, ep.goal, cfg.robot_radius, cfg.expert_margin, ep.world_seed, free=free,
                           prefer=cfg.expert_prefer, penalty=penalty)
    except NoPathError:
        return None
    if sub.length < 0.5:
        return None
    return sample_subtrajectory(sub, rng, (cfg.horizon_min, cfg.horizon_max), start_s=0.0, horizon_s=horizon_s)


def episode_samples(ep: Episode, grid: OccupancyGrid, cfg: DataConfig, rng: np.random.Generator):
    """Yields ``(goal, v_prev, null, ranges, {kind: anchors})`` training tuples."""
    noise = NoiseParams(cfg.sensor_noise, cfg.axial_coeff, cfg.dropout)
    kinds = [RepresentationKind(k) for k in cfg.kinds]
    free = penalty = None
    if cfg.relabel_fraction > 0:
        free = traversable(grid, cfg.robot_radius + cfg.expert_margin)
        penalty = clearance_penalty(grid, cfg.robot_radius + cfg.expert_margin, cfg.expert_prefer,
                                    cfg.expert_penalty)
    for _ in range(cfg.samples_per_episode):
        far = bool(rng.random() < cfg.episode_goal_fraction)
        off = bool(rng.random() < cfg.relabel_fraction)
        (pos, heading), seg = sample_subtrajectory(ep, rng, (cfg.horizon_min, cfg.horizon_max),
                                                   horizon_s=cfg.horizon_max if far else None)
        if off:
            moved = _relabel(ep, grid, free, penalty, pos, cfg, rng, cfg.horizon_max if far else None)
            if moved is not None:
                (pos, heading), seg = moved
        if cfg.heading_jitter > 0:
            dh = float(rng.uniform(-cfg.heading_jitter, cfg.heading_jitter))
            seg = to_robot_frame(to_world_frame(seg, pos, heading), pos, heading + dh)
            heading += dh
        goal = seg[-1]
        if far:
            goal = to_robot_frame(np.asarray(ep.goal, float)[None], pos, heading)[0]
            dist = float(np.hypot(*goal))
            if dist > cfg.horizon_max:
                goal = goal * (cfg.horizon_max / dist)
        scan = raycast_scan(grid, RobotState(pos, heading, cfg.robot_radius), noise, rng,
                            beams=cfg.beams, max_range=cfg.max_range)
        labels = {k: make_labels(seg, k).anchors for k in kinds}
        null = bool(rng.random() < cfg.null_fraction)
        tokens = {k: heading_token(labels[k]) for k in kinds}
        yield goal, tokens, null, scan.beams, labels


def generate_columns(cfg: DataConfig, episodes: range | None = None) -> dict[str, Dataset]:
    """In-memory datasets (one per representation) sharing worlds, poses and scans."""
    kinds = [RepresentationKind(k) for k in cfg.kinds]
    cols = {k: dict(goal=[], v_prev=[], v_null=[], ranges=[], anchors=[]) for k in kinds}
    for e in episodes if episodes is not None else range(cfg.n_episodes):
        rng = np.random.default_rng([cfg.master_seed, e])
        world_seed = int(rng.integers(2**31))
        wp = world_params_for(cfg, rng)
        grid = generate_world(world_seed, wp)
        ep = make_episode(grid, wp, rng, world_seed, cfg.expert_prefer, cfg.expert_penalty)
        for goal, tokens, null, ranges, labels in episode_samples(ep, grid, cfg, rng):
            for k in kinds:
                tok = tokens[k]
                is_null = null or tok is None
                c = cols[k]
                c["goal"].append(goal)
                c["v_prev"].append(np.zeros(2) if is_null else tok)
                c["v_null"].append(is_null)
                c["ranges"].append(ranges)
                c["anchors"].append(labels[k])
    return {
        k: Dataset(
            np.array(c["goal"]).reshape(-1, 2),
            np.array(c["v_prev"]).reshape(-1, 2),
            np.array(c["v_null"], dtype=bool),
            np.array(c["ranges"]).reshape(-1, cfg.beams),
            np.array(c["anchors"]).reshape(-1, ANCHOR_COUNT, 3),
            k,
            cfg.samples_per_episode,
        )
        for k, c in cols.items()
    }


_DS_HEADER = struct.Struct("<4sHQIIB")


def record_dtype(beams: int = 64) -> np.dtype:
    return np.dtype(
        [("goal", "<f8", (2,)), ("v_prev", "<f8", (2,)), ("v_null", "u1"),
         ("ranges", "<f8", (beams,)), ("anchors", "<f8", (3 * ANCHOR_COUNT,))]
    )


def write_dataset(ds: Dataset, path) -> None:
    """Header then packed little-endian fixed-stride records."""
    path = Path(path)
    beams = ds.ranges.shape[1]
    rec = np.zeros(len(ds), dtype=record_dtype(beams))
    rec["goal"], rec["v_prev"], rec["v_null"] = ds.goal, ds.v_prev, ds.v_null
    rec["ranges"], rec["anchors"] = ds.ranges, ds.anchors.reshape(len(ds), -1)
    head = _DS_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(ds), beams, ds.samples_per_episode,
                           ds.kind.code)
    try:
        with open(path, "wb") as fh:
            fh.write(head)
            fh.write(rec.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    magic, version, count, beams, spe, kind = _DS_HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise ValueError(f"{path}: bad dataset magic {magic!r}")
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    rec = np.frombuffer(data, dtype=record_dtype(beams), count=count, offset=_DS_HEADER.size)
    return Dataset(rec["goal"].copy(), rec["v_prev"].copy(), rec["v_null"].astype(bool),
                   rec["ranges"].copy(), rec["anchors"].reshape(count, ANCHOR_COUNT, 3).copy(),
                   RepresentationKind.from_code(kind), spe)


def build_dataset(cfg: DataConfig, out_dir) -> dict[str, Path]:
    """Generate and write one dataset file per representation plus a manifest."""
    if cfg.n_episodes < 1:
        raise ValueError("need at least one episode")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sets = generate_columns(cfg)
    paths = {}
    for kind, ds in sets.items():
        p = out_dir / f"dataset_{kind.value}.sdpd"
        write_dataset(ds, p)
        paths[kind.value] = p
    manifest = {
        "master_seed": cfg.master_seed,
        "n_episodes": cfg.n_episodes,
        "samples_per_episode": cfg.samples_per_episode,
        "config_hash": config_hash(cfg.to_dict()),
        "config": cfg.to_dict(),
        "files": {k: p.name for k, p in paths.items()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths
