"""Receding-horizon loop: sense, sample candidates, score, execute a short prefix."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import critic as crit
from .diffusion import ContextFeatures, DiffusionPolicy
from .esdf import build_visible_esdf
from .expert_data import dijkstra_length, to_robot_frame, to_world_frame, heading_token
from .gridworld import (
    NoiseParams,
    OccupancyGrid,
    RobotState,
    disc_collides,
    raycast_scan,
    step_robot,
    traversable,
)
from .representations import decode_many


@dataclass(frozen=True)
class PlannerConfig:
    K: int = 16
    mode: str = "ancestral"
    warm_start: bool = True
    start_step: int = 6
    use_vtoken: bool = True
    step_len: float = 0.2
    goal_radius: float = 0.3
    max_steps: int = 600
    horizon_cap: float = 6.0
    robot_radius: float = 0.2
    beams: int = 64
    max_range: float = 6.0
    esdf_rays: int = 720
    optimistic_unknown: bool = True
    shadow: float = 0.3
    # when every candidate is rejected, still move along the cheapest one whose
    # first recovery_lookahead meters stay clear (0 disables: the robot waits)
    recovery_lookahead: float = 0.5
    noise: NoiseParams = NoiseParams(enabled=True)
    # radius plus one cell: ESDF distances are cell-center based
    critic: crit.CriticConfig = crit.CriticConfig(reject_clearance=0.25)


@dataclass(frozen=True)
class PlannerContext:
    goal: np.ndarray  # robot frame, clamped to the horizon cap
    v_prev: np.ndarray | None  # unit 2D in robot frame, None = null token
    ranges: np.ndarray

    @property
    def null(self) -> bool:
        return self.v_prev is None

    def features(self) -> ContextFeatures:
        return ContextFeatures.single(self.goal, self.v_prev, self.ranges)


@dataclass
class PlanStep:
    t: int
    pose_before: tuple[float, float, float]
    pose_after: tuple[float, float, float]
    context: PlannerContext
    anchors: np.ndarray | None  # chosen anchors, robot frame at step t
    trajectory: np.ndarray | None  # chosen path, world frame (M, 2)
    chosen: int
    costs: list = field(default_factory=list)
    executed: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))
    status: str = "ok"  # ok | recovery | blocked | collided
    warm: bool = False
    reverse_steps: int = 0
    latency: float = 0.0


@dataclass
class EpisodeResult:
    success: bool
    collided: bool
    steps: int
    path_length: float
    shortest_length: float
    trace: list[PlanStep] = field(default_factory=list, repr=False)
    # world-frame initial heading of each executed plan, in step order
    headings: list[float] = field(default_factory=list, repr=False)

    @property
    def heading_oscillation(self) -> float:
        """Mean |change| of the initial heading between consecutive executed plans (rad)."""
        if len(self.headings) < 2:
            return math.nan
        h = np.asarray(self.headings)
        d = np.angle(np.exp(1j * np.diff(h)))
        return float(np.mean(np.abs(d)))


def _pose(state: RobotState):
    return float(state.position[0]), float(state.position[1]), float(state.heading)


def rotate_heading(v_world_prev_frame, prev_heading: float, heading: float) -> np.ndarray:
    """Re-express a unit vector from the frame at ``prev_heading`` in the frame at ``heading``."""
    a = prev_heading - heading
    c, s = math.cos(a), math.sin(a)
    v = np.asarray(v_world_prev_frame, dtype=float)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def assemble_context(world: OccupancyGrid, state: RobotState, goal_world, prev_plan=None,
                     prev_heading: float | None = None, cfg: PlannerConfig = PlannerConfig(),
                     rng=None) -> PlannerContext:
    """Robot-frame goal (clamped), previous-plan heading token, and a range scan.

    ``prev_plan`` holds the previously chosen anchors in the frame of the
    robot pose whose heading was ``prev_heading``.
    """
    goal = to_robot_frame(np.asarray(goal_world, float)[:2], state.position, state.heading)
    dist = float(np.hypot(*goal))
    if dist > cfg.horizon_cap:
        goal = goal * (cfg.horizon_cap / dist)
    v_prev = None
    if prev_plan is not None and cfg.use_vtoken:
        tok = heading_token(prev_plan)
        if tok is not None:
            ph = state.heading if prev_heading is None else prev_heading
            v_prev = rotate_heading(tok, ph, state.heading)
            v_prev = v_prev / np.linalg.norm(v_prev)
    scan = raycast_scan(world, state, cfg.noise, rng, beams=cfg.beams, max_range=cfg.max_range)
    return PlannerContext(goal, v_prev, scan.beams)


class Planner:
    """Stateful per-episode planner (holds the previously chosen plan)."""

    def __init__(self, policy: DiffusionPolicy, cfg: PlannerConfig = PlannerConfig(), seed: int = 0):
        self.policy = policy
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.prev_anchors = None
        self.prev_pose = None
        self.t = 0

    def reset(self):
        self.prev_anchors = None
        self.prev_pose = None
        self.t = 0

    def _prev_in_current_frame(self, state: RobotState):
        px, py, ph = self.prev_pose
        world = to_world_frame(self.prev_anchors[:, :2], (px, py), ph)
        local = to_robot_frame(world, state.position, state.heading)
        out = np.column_stack([local, np.zeros(len(local))])
        out[0] = 0.0
        return out

    def _select(self, esdf, state, cands, goal_w):
        trajs = decode_many(self.policy.kind, cands, self.cfg.critic.M)
        world_trajs = [to_world_frame(tr.points[:, :2], state.position, state.heading) for tr in trajs]
        idx, costs = crit.select_best(esdf, world_trajs, goal_w, self.cfg.critic)
        return cands, trajs, world_trajs, idx, costs

    def _recovery(self, trajs, costs):
        cfg = self.cfg
        best, best_cost = None, math.inf
        for k, (tr, c) in enumerate(zip(trajs, costs)):
            if tr.degenerate:
                continue
            near = tr.s <= min(cfg.recovery_lookahead, tr.length)
            near[:2] = True
            if np.min(c.clearance[1:][near[1:]]) <= cfg.critic.reject_clearance:
                continue
            total = cfg.critic.lambda1 * c.j_safe + cfg.critic.lambda2 * c.j_len + cfg.critic.lambda3 * c.j_goal
            if total < best_cost:
                best, best_cost = k, total
        return best

    def plan_step(self, world: OccupancyGrid, state: RobotState, goal_world) -> tuple[PlanStep, RobotState]:
        cfg = self.cfg
        t0 = time.perf_counter()
        prev_heading = self.prev_pose[2] if self.prev_pose is not None else None
        ctx = assemble_context(world, state, goal_world, self.prev_anchors, prev_heading, cfg, self.rng)
        feats = ctx.features()
        esdf = build_visible_esdf(world, state, cfg.esdf_rays, cfg.max_range, cfg.optimistic_unknown, cfg.shadow)
        warm = cfg.warm_start and self.prev_anchors is not None
        if warm:
            cands = self.policy.warm_start_sample(self._prev_in_current_frame(state), feats, cfg.K,
                                                  cfg.start_step, self.rng, cfg.mode)
        else:
            cands = self.policy.sample(feats, cfg.K, self.rng, cfg.mode)
        rev = self.policy.last_reverse_steps
        goal_w = to_world_frame(ctx.goal, state.position, state.heading)
        cands, trajs, world_trajs, idx, costs = self._select(esdf, state, cands, goal_w)
        if warm and not math.isfinite(costs[idx].j_total):
            # every refined candidate is infeasible: fall back to a fresh cold batch
            cands = self.policy.sample(feats, cfg.K, self.rng, cfg.mode)
            rev += self.policy.last_reverse_steps
            cands, trajs, world_trajs, idx, costs = self._select(esdf, state, cands, goal_w)
        status = "ok"
        if not math.isfinite(costs[idx].j_total) and cfg.recovery_lookahead > 0:
            alt = self._recovery(trajs, costs)
            if alt is not None:
                idx, status = alt, "recovery"
        before = _pose(state)
        if status == "ok" and not math.isfinite(costs[idx].j_total):
            self.prev_anchors, self.prev_pose = None, None
            step = PlanStep(self.t, before, before, ctx, None, None, -1, costs, status="blocked", warm=warm,
                            reverse_steps=rev, latency=time.perf_counter() - t0)
            self.t += 1
            return step, state
        chosen = trajs[idx]
        target = _point_at_arclength(world_trajs[idx], chosen.s, min(cfg.step_len, chosen.length))
        new_state, collided = step_robot(world, state, target, cfg.step_len)
        self.prev_anchors, self.prev_pose = cands[idx], before
        step = PlanStep(self.t, before, _pose(new_state), ctx, cands[idx], world_trajs[idx], idx, costs,
                        (tuple(state.position), tuple(new_state.position)),
                        "collided" if collided else status, warm, rev, time.perf_counter() - t0)
        self.t += 1
        return step, new_state


def _point_at_arclength(points, s, target):
    return np.array([np.interp(target, s, points[:, 0]), np.interp(target, s, points[:, 1])])


def oracle_shortest(world: OccupancyGrid, start, goal, robot_radius: float) -> float:
    free = traversable(world, robot_radius)
    s_rc, g_rc = world.to_cell(start), world.to_cell(goal)
    if not (free[s_rc] and free[g_rc]):
        return math.inf
    return dijkstra_length(free, s_rc, g_rc) * world.resolution


def run_episode(policy: DiffusionPolicy, world: OccupancyGrid, start, goal, cfg: PlannerConfig = PlannerConfig(),
                seed: int = 0, heading: float | None = None, shortest: float | None = None,
                keep_trace: bool = True) -> EpisodeResult:
    start = np.asarray(start, float)[:2]
    goal = np.asarray(goal, float)[:2]
    if shortest is None:
        shortest = oracle_shortest(world, start, goal, cfg.robot_radius)
    if heading is None:
        heading = math.atan2(goal[1] - start[1], goal[0] - start[0])
    state = RobotState(start, heading, cfg.robot_radius)
    planner = Planner(policy, cfg, seed)
    trace, headings = [], []
    travelled = 0.0
    if np.hypot(*(goal - start)) <= cfg.goal_radius:
        return EpisodeResult(True, False, 0, 0.0, shortest, trace)
    for _ in range(cfg.max_steps):
        step, new_state = planner.plan_step(world, state, goal)
        if step.anchors is not None:
            tok = heading_token(step.anchors)
            if tok is not None:
                headings.append(step.pose_before[2] + math.atan2(tok[1], tok[0]))
        travelled += float(np.hypot(*(new_state.position - state.position)))
        state = new_state
        if keep_trace:
            trace.append(step)
        if step.status == "collided" or disc_collides(world, state.position, cfg.robot_radius):
            return EpisodeResult(False, True, planner.t, travelled, shortest, trace, headings)
        if np.hypot(*(goal - state.position)) <= cfg.goal_radius:
            return EpisodeResult(True, False, planner.t, travelled, shortest, trace, headings)
    return EpisodeResult(False, False, planner.t, travelled, shortest, trace, headings)


def trace_records(trace: list[PlanStep]) -> list[dict]:
    out = []
    for st in trace:
        out.append({
            "t": st.t,
            "pose": list(st.pose_before),
            "pose_after": list(st.pose_after),
            "chosen": st.chosen,
            "status": st.status,
            "warm": st.warm,
            "v_prev": None if st.context.v_prev is None else [float(v) for v in st.context.v_prev],
            "costs": [[c.j_safe, c.j_len, c.j_goal, c.j_total if math.isfinite(c.j_total) else None]
                      for c in st.costs],
        })
    return out


def write_trace(trace: list[PlanStep], path) -> None:
    """One JSON object per line, one line per planning step."""
    with open(path, "w") as fh:
        for rec in trace_records(trace):
            fh.write(json.dumps(rec) + "\n")
