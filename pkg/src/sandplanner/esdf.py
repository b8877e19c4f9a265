"""Euclidean signed distance fields over occupancy grids."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .gridworld import OccupancyGrid, RobotState, raycast_distances


class NoSurfaceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EsdfGrid:
    """Per-cell signed distance in meters; positive in free space."""

    values: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def shape(self):
        return self.values.shape

    def query(self, xy) -> float:
        v, _ = self.query_many(np.asarray(xy, dtype=float)[None, :2])
        return float(v[0])

    def query_many(self, xy) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear interpolation between cell centers.

        Returns:
            ``(values, out_of_bounds)``. Out-of-bounds positions are clamped to
            the grid for the lookup; callers decide how to treat them.
        """
        xy = np.asarray(xy, dtype=float)
        h, w = self.values.shape
        fx = (xy[..., 0] - self.origin[0]) / self.resolution - 0.5
        fy = (xy[..., 1] - self.origin[1]) / self.resolution - 0.5
        oob = (fx < -0.5) | (fy < -0.5) | (fx > w - 0.5) | (fy > h - 0.5) | ~np.isfinite(fx + fy)
        fx = np.clip(np.nan_to_num(fx), 0.0, w - 1.0)
        fy = np.clip(np.nan_to_num(fy), 0.0, h - 1.0)
        x0 = np.minimum(np.floor(fx).astype(int), w - 2 if w > 1 else 0)
        y0 = np.minimum(np.floor(fy).astype(int), h - 2 if h > 1 else 0)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        tx = fx - x0
        ty = fy - y0
        V = self.values
        top = V[y0, x0] * (1 - tx) + V[y0, x1] * tx
        bot = V[y1, x0] * (1 - tx) + V[y1, x1] * tx
        return top * (1 - ty) + bot * ty, oob


def signed_distance(occupied: np.ndarray, resolution: float) -> np.ndarray:
    occ = np.asarray(occupied, dtype=bool)
    if occ.all() or not occ.any():
        raise NoSurfaceError("grid must contain both free and occupied cells")
    outside = ndimage.distance_transform_edt(~occ)
    inside = ndimage.distance_transform_edt(occ)
    return np.where(occ, -inside, outside) * resolution


def build_esdf(grid: OccupancyGrid) -> EsdfGrid:
    values = signed_distance(grid.cells, grid.resolution)
    values.setflags(write=False)
    return EsdfGrid(values, grid.resolution, grid.origin)


def observed_occupancy(
    grid: OccupancyGrid,
    state: RobotState,
    rays: int = 720,
    max_range: float = 6.0,
    optimistic: bool = True,
    shadow: float = 0.0,
) -> np.ndarray:
    """Occupancy as seen from ``state`` by a dense noise-free sweep.

    Hit cells are occupied. Unknown cells (never crossed by a ray) are free
    when ``optimistic`` and occupied otherwise. ``shadow`` > 0 also marks the
    first ``shadow`` meters behind every hit, which keeps a surface-only map
    from reporting positive clearance just inside an obstacle.
    """
    angles = np.arange(rays) * (2 * math.pi / rays)
    d = raycast_distances(grid, state.position, angles, max_range)
    res = grid.resolution
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    obs = np.zeros_like(grid.cells)
    hit = d < max_range
    depth = np.arange(0.0, shadow + 1e-9, res / 2) if shadow > 0 else np.zeros(1)
    tip = state.position + dirs[hit, None, :] * (d[hit, None, None] + 0.25 * res + depth[None, :, None])
    cols = np.floor((tip[..., 0].ravel() - grid.origin[0]) / res).astype(int)
    rows = np.floor((tip[..., 1].ravel() - grid.origin[1]) / res).astype(int)
    ok = (rows >= 0) & (rows < grid.height) & (cols >= 0) & (cols < grid.width)
    obs[rows[ok], cols[ok]] = True
    if not optimistic:
        seen = np.zeros_like(obs)
        steps = np.arange(0.0, max_range, res / 2)
        pts = state.position[None, None, :] + dirs[:, None, :] * np.minimum(steps[None, :, None], d[:, None, None])
        c = np.clip(np.floor((pts[..., 0] - grid.origin[0]) / res).astype(int), 0, grid.width - 1)
        r = np.clip(np.floor((pts[..., 1] - grid.origin[1]) / res).astype(int), 0, grid.height - 1)
        seen[r.ravel(), c.ravel()] = True
        obs |= ~seen
    return obs


def build_visible_esdf(
    grid: OccupancyGrid,
    state: RobotState,
    rays: int = 720,
    max_range: float = 6.0,
    optimistic: bool = True,
    shadow: float = 0.0,
) -> EsdfGrid:
    """ESDF of only what the robot can currently see.

    With nothing in view, every cell gets ``max_range`` clearance.
    """
    obs = observed_occupancy(grid, state, rays, max_range, optimistic, shadow)
    if not obs.any():
        values = np.full(obs.shape, float(max_range))
    else:
        values = signed_distance(obs, grid.resolution)
    values.setflags(write=False)
    return EsdfGrid(values, grid.resolution, grid.origin)


def to_pgm(esdf: EsdfGrid) -> bytes:
    """Binary graymap dump, top row = largest y; black = most negative."""
    v = esdf.values[::-1]
    lo, hi = float(v.min()), float(v.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.round((v - lo) * scale).astype(np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()
