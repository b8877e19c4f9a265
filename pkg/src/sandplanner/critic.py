"""Analytic candidate scoring: discounted clearance hinge, length, goal distance."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .esdf import EsdfGrid
from .spline_core import Trajectory


@dataclass(frozen=True)
class CriticConfig:
    gamma: float = 0.9
    d_safe: float = 0.3
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 2.0
    M: int = 32
    hard_reject: bool = True
    reject_clearance: float = 0.0  # minimum allowed clearance in the near third
    reject_fraction: float = 1.0 / 3.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.d_safe <= 0:
            raise ValueError("d_safe must be positive")
        if min(self.lambda1, self.lambda2, self.lambda3) <= 0:
            raise ValueError("weights must be positive")
        if self.M < 2:
            raise ValueError("M must be >= 2")

    def scaled(self, c: float) -> "CriticConfig":
        from dataclasses import replace

        return replace(self, lambda1=self.lambda1 * c, lambda2=self.lambda2 * c, lambda3=self.lambda3 * c)


@dataclass(frozen=True)
class CostBreakdown:
    j_safe: float
    j_len: float
    j_goal: float
    j_total: float
    clearance: np.ndarray = field(repr=False)
    rejected: bool = False


def _points(traj) -> np.ndarray:
    pts = traj.points if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    return pts[:, :2]


def clearances(esdf: EsdfGrid, traj) -> np.ndarray:
    values, oob = esdf.query_many(_points(traj))
    return np.where(oob, 0.0, values)


def safety_cost_from_clearance(clearance: np.ndarray, cfg: CriticConfig) -> float:
    w = cfg.gamma ** np.arange(len(clearance))
    hinge = np.maximum(0.0, cfg.d_safe - clearance)
    # weighted mean taken around the first term, so a constant violation comes back bit-exact
    ref = hinge[0]
    return float(ref + np.dot(w, hinge - ref) / w.sum())


def safety_cost(esdf: EsdfGrid, traj, cfg: CriticConfig) -> float:
    return safety_cost_from_clearance(clearances(esdf, traj), cfg)


def length_cost(traj) -> float:
    pts = traj.points if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def goal_cost(traj, goal) -> float:
    pts = _points(traj)
    return float(np.linalg.norm(pts[-1] - np.asarray(goal, dtype=float)[:2]))


def score(esdf: EsdfGrid, traj, goal, cfg: CriticConfig, clr=None) -> CostBreakdown:
    if clr is None:
        clr = clearances(esdf, traj)
    j_safe = safety_cost_from_clearance(clr, cfg)
    j_len = length_cost(traj)
    j_goal = goal_cost(traj, goal)
    total = cfg.lambda1 * j_safe + cfg.lambda2 * j_len + cfg.lambda3 * j_goal
    rejected = False
    if cfg.hard_reject:
        # index 0 is the current pose, shared by every candidate
        near = max(2, int(math.ceil(len(clr) * cfg.reject_fraction)))
        if np.min(clr[1:near] if len(clr) > 1 else clr) <= cfg.reject_clearance:
            total, rejected = math.inf, True
    return CostBreakdown(j_safe, j_len, j_goal, total, clr, rejected)


def select_best(esdf: EsdfGrid, candidates, goal, cfg: CriticConfig = CriticConfig()):
    """Index of the cheapest candidate (lowest index on ties) plus all breakdowns."""
    if len(candidates) == 0:
        raise ValueError("no candidates to select from")
    pts = [_points(c) for c in candidates]
    if len({len(p) for p in pts}) == 1:
        # one interpolation call for the batch
        values, oob = esdf.query_many(np.stack(pts))
        clr = np.where(oob, 0.0, values)
        costs = [score(esdf, c, goal, cfg, clr[k]) for k, c in enumerate(candidates)]
    else:
        costs = [score(esdf, c, goal, cfg) for c in candidates]
    totals = np.array([c.j_total for c in costs])
    return int(np.argmin(totals)), costs


CSV_FIELDS = ["step", "candidate", "j_safe", "j_len", "j_goal", "j_total", "chosen"]


def write_breakdown_rows(writer: csv.writer, step: int, costs, chosen: int):
    for k, c in enumerate(costs):
        writer.writerow([step, k, repr(c.j_safe), repr(c.j_len), repr(c.j_goal), repr(c.j_total), int(k == chosen)])
