"""Three ways to decode the same 8 anchor points into a path.

``waypoints`` is a polyline through the anchors, ``cubic`` a natural cubic
spline interpolating them (chord-length parameterized) and ``bspline`` treats
them as control points of the clamped cubic.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.interpolate import CubicSpline

from . import spline_core as sc
from .spline_core import SplineSpec, Trajectory

ANCHOR_COUNT = 8


class RepresentationKind(str, Enum):
    WAYPOINTS = "waypoints"
    CUBIC = "cubic"
    BSPLINE = "bspline"

    @property
    def code(self) -> int:
        return list(RepresentationKind).index(self)

    @classmethod
    def from_code(cls, code: int) -> "RepresentationKind":
        return list(cls)[code]


class DegenerateNodeError(ValueError):
    pass


def as_anchors(anchors) -> np.ndarray:
    A = np.asarray(anchors, dtype=float)
    if A.ndim == 2 and A.shape[1] == 2:
        A = np.column_stack([A, np.zeros(len(A))])
    if A.shape != (ANCHOR_COUNT, 3):
        raise ValueError(f"anchors must be ({ANCHOR_COUNT}, 3), got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("anchors must be finite")
    return A


def polyline_length(points) -> float:
    return float(np.sum(np.linalg.norm(np.diff(np.asarray(points, dtype=float), axis=0), axis=1)))


def decode_waypoints(anchors, M: int = 32) -> Trajectory:
    """Polyline through the anchors, resampled to ``M`` equidistant points."""
    return sc.resample_polyline(as_anchors(anchors), M)


def _natural_cubic(A: np.ndarray) -> tuple[CubicSpline, np.ndarray]:
    seg = np.linalg.norm(np.diff(A, axis=0), axis=1)
    if np.any(seg < 1e-9):
        raise DegenerateNodeError("consecutive anchors coincide")
    t = np.concatenate([[0.0], np.cumsum(seg)])
    return CubicSpline(t, A, bc_type="natural"), t


def decode_interpolating_cubic(anchors, M: int = 32, dense: int = 1001) -> Trajectory:
    """Natural cubic spline through all anchors, ``M`` samples equidistant in arc length."""
    if M < 2:
        raise ValueError("M must be >= 2")
    A = as_anchors(anchors)
    cs, t = _natural_cubic(A)
    tt = np.linspace(0.0, t[-1], dense)
    pts = cs(tt)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0.0, cum[-1], M)
    u = np.interp(s, cum, tt)
    u[0], u[-1] = 0.0, t[-1]
    return Trajectory(s, cs(u), u / t[-1])


_BSPLINE = SplineSpec(3, ANCHOR_COUNT)


def decode_bspline(anchors, M: int = 32) -> Trajectory:
    return sc.discretize_arclength(_BSPLINE, as_anchors(anchors), M)


def decode(kind: RepresentationKind | str, anchors, M: int = 32) -> Trajectory:
    kind = RepresentationKind(kind)
    if kind is RepresentationKind.WAYPOINTS:
        return decode_waypoints(anchors, M)
    if kind is RepresentationKind.CUBIC:
        return decode_interpolating_cubic(anchors, M)
    return decode_bspline(anchors, M)


def decode_many(kind: RepresentationKind | str, anchor_batch, M: int = 32) -> list[Trajectory]:
    """Decode a ``(K, 8, 3)`` stack; cubic candidates with coincident nodes become degenerate."""
    kind = RepresentationKind(kind)
    batch = np.asarray(anchor_batch, dtype=float)
    if kind is RepresentationKind.BSPLINE:
        return sc.discretize_many(_BSPLINE, batch, M)
    out = []
    for A in batch:
        try:
            out.append(decode(kind, A, M))
        except DegenerateNodeError:
            out.append(Trajectory(np.zeros(M), np.repeat(A[:1], M, axis=0), np.zeros(M), True))
    return out


# ---------------------------------------------------------------- deviation study


def arclength_points(kind: RepresentationKind | str, anchors, s_grid: np.ndarray) -> np.ndarray:
    """Curve positions at the arc lengths ``s_grid`` (clamped to the curve length)."""
    kind = RepresentationKind(kind)
    fine = decode(kind, anchors, M=4001)
    s = np.clip(s_grid, 0.0, fine.length)
    if kind is RepresentationKind.BSPLINE:
        # re-evaluate on the curve itself so equal prefixes give bitwise-equal points
        du, dB = sc.dense_basis(_BSPLINE)
        dense = dB @ as_anchors(anchors)
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
        u = np.interp(s, cum, du)
        return sc.evaluate(_BSPLINE, as_anchors(anchors), u)
    return np.column_stack([np.interp(s, fine.s, fine.points[:, d]) for d in range(3)])


def perturb_in_disk(rng: np.random.Generator, count: int, radius: float = 1.0) -> np.ndarray:
    """Uniform offsets inside a planar disk, z left at zero."""
    r = radius * np.sqrt(rng.random(count))
    th = rng.uniform(0.0, 2 * np.pi, count)
    return np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros(count)])


def mean_displacement(kind, anchors, rng, indices=(4, 5, 6, 7), radius=1.0, draws=10,
                      s_max=None, ds=0.01):
    """Mean over perturbation draws of |clean(s) - perturbed(s)| at equal arc length.

    Returns:
        ``(s_grid, delta)`` with ``delta`` the per-``s`` mean displacement.
    """
    A = as_anchors(anchors)
    clean_len = decode(kind, A, M=4001).length
    s_max = clean_len if s_max is None else s_max
    s_grid = np.arange(0.0, s_max + 0.5 * ds, ds)
    clean = arclength_points(kind, A, s_grid)
    total = np.zeros_like(s_grid)
    idx = list(indices)
    for _ in range(draws):
        B = A.copy()
        B[idx] += perturb_in_disk(rng, len(idx), radius)
        total += np.linalg.norm(arclength_points(kind, B, s_grid) - clean, axis=1)
    return s_grid, total / draws
