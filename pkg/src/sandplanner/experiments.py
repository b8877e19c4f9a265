"""Benchmarks, metrics, and the three ablation studies.

Every artifact that costs minutes (datasets, trained policies) goes through
``ArtifactCache``, keyed by a hash of exactly the config sections that
produced it, so ablation arms that share a dataset really share the bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spline_core as sc
from .config import ExperimentConfig, config_hash, to_dict, write_snapshot
from .diffusion import DiffusionPolicy, train
from .expert_data import Dataset, generate_columns, read_dataset, write_dataset
from .gridworld import NoiseParams, WorldParams, connected_mask, generate_world, sample_free_point
from .planner import PlannerConfig, oracle_shortest, run_episode, write_trace
from .representations import RepresentationKind, mean_displacement

log = logging.getLogger(__name__)


class EmptySuiteError(ValueError):
    pass


class MissingOracleError(ValueError):
    pass


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    world_seed: int
    success: bool
    collided: bool
    steps: int
    path_length: float
    shortest_length: float
    heading_oscillation: float = math.nan


RECORD_FIELDS = [f.name for f in dataclasses.fields(EpisodeRecord)]


def spl_term(rec) -> float:
    if not rec.success:
        return 0.0
    opt = rec.shortest_length
    if opt == 0 and rec.path_length == 0:
        return 1.0  # started inside the goal radius
    if not (math.isfinite(opt) and opt > 0):
        raise MissingOracleError(f"episode {getattr(rec, 'episode', '?')} has no usable oracle length")
    return opt / max(opt, rec.path_length)


def compute_sr(records) -> float:
    records = list(records)
    if not records:
        raise EmptySuiteError("no episodes")
    return 100.0 * sum(bool(r.success) for r in records) / len(records)


def compute_spl(records) -> float:
    """Percent. Failed episodes contribute zero."""
    records = list(records)
    if not records:
        raise EmptySuiteError("no episodes")
    return 100.0 * math.fsum(spl_term(r) for r in records) / len(records)


@dataclass
class BenchmarkResult:
    records: list[EpisodeRecord]
    suite: str = "cluttered"
    config_hash: str = ""
    seeds: list[int] = field(default_factory=list)
    wall_time: float = 0.0
    bench_seed: int = 0
    density: float = 0.15

    @property
    def sr(self) -> float:
        return compute_sr(self.records)

    @property
    def spl(self) -> float:
        return compute_spl(self.records)

    @property
    def collision_rate(self) -> float:
        return 100.0 * float(np.mean([r.collided for r in self.records]))

    @property
    def heading_oscillation(self) -> float:
        vals = [r.heading_oscillation for r in self.records if math.isfinite(r.heading_oscillation)]
        return float(np.mean(vals)) if vals else math.nan

    def summary(self) -> dict:
        return {
            "suite": self.suite,
            "episodes": len(self.records),
            "SR": self.sr,
            "SPL": self.spl,
            "collision_rate": self.collision_rate,
            "heading_oscillation": self.heading_oscillation,
            "config_hash": self.config_hash,
            "bench_seed": self.bench_seed,
            "density": self.density,
            "wall_time_s": self.wall_time,
        }

    def write(self, out_dir, stem: str = "benchmark") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
            w.writeheader()
            for r in self.records:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in dataclasses.asdict(r).items()})
        summary = dict(self.summary(), seeds=self.seeds)
        sum_path = out / f"{stem}_summary.json"
        sum_path.write_text(json.dumps(summary, indent=2) + "\n")
        return csv_path, sum_path


def read_records(path) -> list[EpisodeRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EpisodeRecord(
                int(row["episode"]), int(row["world_seed"]), row["success"] == "True",
                row["collided"] == "True", int(row["steps"]), float(row["path_length"]),
                float(row["shortest_length"]), float(row["heading_oscillation"]),
            ))
    return out


# ---------------------------------------------------------------- suites


def suite_params(suite: str, density: float = 0.15) -> WorldParams:
    if suite == "cluttered":
        return WorldParams(density=density)
    if suite == "corridor":
        # two doored walls across the arena and sparse clutter
        return WorldParams(density=min(density, 0.05), kinds=("wall", "box"), wall_count=2, door_width=1.2)
    raise ValueError(f"unknown suite {suite!r}")


def suite_episode(suite: str, seed: int, index: int, density: float = 0.15):
    """World and endpoints for episode ``index`` of a seeded suite."""
    rng = np.random.default_rng([seed, index])
    wp = suite_params(suite, density)
    world_seed = int(rng.integers(2**31))
    grid = generate_world(world_seed, wp)
    inflate = wp.robot_radius + wp.clearance_margin
    mask = connected_mask(grid, wp)
    start = sample_free_point(grid, rng, wp.start_region(), inflate, mask)
    goal = sample_free_point(grid, rng, wp.goal_region(), inflate, mask)
    return world_seed, grid, start, goal


_WORKER = {}


def _init_worker(policy, planner_cfg, bench):
    _WORKER.update(policy=policy, planner=planner_cfg, bench=bench)


def _episode_job(i: int, trace_dir=None):
    policy, pcfg, bench = _WORKER["policy"], _WORKER["planner"], _WORKER["bench"]
    world_seed, grid, start, goal = suite_episode(bench.suite, bench.seed, i, bench.density)
    shortest = oracle_shortest(grid, start, goal, pcfg.robot_radius)
    seed = int(np.random.SeedSequence([bench.seed, i, 1]).generate_state(1)[0])
    res = run_episode(policy, grid, start, goal, pcfg, seed=seed, shortest=shortest,
                      keep_trace=trace_dir is not None)
    if trace_dir is not None:
        write_trace(res.trace, Path(trace_dir) / f"episode_{i:04d}.jsonl")
    return EpisodeRecord(i, world_seed, res.success, res.collided, res.steps, res.path_length,
                         res.shortest_length, res.heading_oscillation)


def run_benchmark(policy: DiffusionPolicy, planner_cfg: PlannerConfig, bench, out_dir=None,
                  stem: str = "benchmark", chash: str = "") -> BenchmarkResult:
    """Run ``bench.n_episodes`` seeded episodes; results are ordered by episode index."""
    if bench.n_episodes <= 0:
        raise EmptySuiteError("benchmark suite is empty")
    t0 = time.perf_counter()
    trace_dir = None
    if out_dir is not None and bench.keep_traces:
        trace_dir = Path(out_dir) / f"{stem}_traces"
        trace_dir.mkdir(parents=True, exist_ok=True)
    idx = list(range(bench.n_episodes))
    if bench.workers > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(bench.workers, initializer=_init_worker, initargs=(policy, planner_cfg, bench)) as pool:
            records = pool.starmap(_episode_job, [(i, trace_dir) for i in idx], chunksize=1)
    else:
        _init_worker(policy, planner_cfg, bench)
        records = [_episode_job(i, trace_dir) for i in idx]
    result = BenchmarkResult(records, bench.suite, chash, idx, time.perf_counter() - t0, bench.seed, bench.density)
    if out_dir is not None:
        result.write(out_dir, stem)
    return result


# ---------------------------------------------------------------- artifact cache


class ArtifactCache:
    """Datasets and checkpoints on disk, keyed by the configs that made them."""

    def __init__(self, root=None):  # root None keeps everything in memory
        self.root = Path(root) if root is not None else None
        self._mem = {}
        self._policy_hash = {}
        self.train_seconds = {}  # policy hash -> wall time of the run that trained it

    def training_time(self, policy: DiffusionPolicy) -> float:
        return self.train_seconds.get(self._policy_hash.get(id(policy)), math.nan)

    def _path(self, name):
        if self.root is None:
            return None
        self.root.mkdir(parents=True, exist_ok=True)
        return self.root / name

    def datasets(self, cfg: ExperimentConfig) -> dict[RepresentationKind, Dataset]:
        key = "data-" + config_hash(to_dict(cfg.data))
        if key in self._mem:
            return self._mem[key]
        kinds = [RepresentationKind(k) for k in cfg.data.kinds]
        paths = {k: self._path(f"{key}-{k.value}.sdpd") for k in kinds}
        if all(p is not None and p.exists() for p in paths.values()):
            sets = {k: read_dataset(p) for k, p in paths.items()}
        else:
            t0 = time.perf_counter()
            sets = generate_columns(cfg.data)
            log.info("generated %d episodes in %.1fs", cfg.data.n_episodes, time.perf_counter() - t0)
            for k, ds in sets.items():
                if paths[k] is not None:
                    write_dataset(ds, paths[k])
        self._mem[key] = sets
        return sets

    def policy(self, cfg: ExperimentConfig, kind, variant: str = "full", fraction: float = 1.0,
               seed: int | None = None) -> DiffusionPolicy:
        """Train (or load) one policy.

        ``variant`` is ``"full"`` or ``"no_token"`` (null flag forced on).
        """
        kind = RepresentationKind(kind)
        tcfg = cfg.train if seed is None else dataclasses.replace(cfg.train, seed=seed)
        ident = {"data": to_dict(cfg.data), "model": to_dict(cfg.model), "train": to_dict(tcfg),
                 "kind": kind.value, "variant": variant, "fraction": fraction}
        chash = config_hash(ident)
        key = f"policy-{chash}"
        if key in self._mem:
            return self._mem[key]
        path = self._path(key + ".sdpc")
        if path is not None and path.exists():
            pol = DiffusionPolicy.load(path)
        else:
            ds = self.datasets(cfg)[kind]
            if fraction < 1.0:
                ds = ds.fraction(fraction)
            if variant == "no_token":
                ds = ds.without_token()
            elif variant != "full":
                raise ValueError(f"unknown variant {variant!r}")
            t0 = time.perf_counter()
            pol, tlog = train(ds, cfg.model, tcfg, chash)
            log.info("trained %s/%s/%.2f in %.1fs, final loss %.5f", kind.value, variant, fraction,
                     time.perf_counter() - t0, tlog.epoch_loss[-1])
            self.train_seconds[chash] = time.perf_counter() - t0
            if path is not None:
                pol.save(path)
                path.with_suffix(".json").write_text(json.dumps({"train_seconds": self.train_seconds[chash]}))
        if chash not in self.train_seconds and path is not None and path.with_suffix(".json").exists():
            self.train_seconds[chash] = json.loads(path.with_suffix(".json").read_text())["train_seconds"]
        self._mem[key] = pol
        self._policy_hash[id(pol)] = chash
        return pol

    def benchmark(self, policy: DiffusionPolicy, planner_cfg: PlannerConfig, bench, out_dir=None,
                  stem: str = "benchmark", chash: str = "") -> BenchmarkResult:
        """``run_benchmark`` with the per-episode records kept on disk.

        Only policies that came out of this cache have a stable identity, so
        anything else is simply run.
        """
        pol_hash = self._policy_hash.get(id(policy))
        path = None
        if pol_hash is not None:
            key = config_hash({"policy": pol_hash, "planner": to_dict(planner_cfg),
                               "bench": {k: v for k, v in to_dict(bench).items() if k not in ("workers", "keep_traces")}})
            path = self._path(f"bench-{key}.csv")
        if path is not None and path.exists() and not (out_dir is not None and bench.keep_traces):
            records = read_records(path)
            summary = json.loads(path.with_name(path.stem + "_summary.json").read_text())
            res = BenchmarkResult(records, bench.suite, chash, [r.episode for r in records],
                                  summary["wall_time_s"], bench.seed, bench.density)
            if out_dir is not None:
                res.write(out_dir, stem)
            return res
        res = run_benchmark(policy, planner_cfg, bench, out_dir, stem, chash)
        if path is not None:
            res.write(path.parent, path.stem)
        return res


# ---------------------------------------------------------------- ablations


def _write_rows(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return path


def far_field_planner(cfg: ExperimentConfig) -> PlannerConfig:
    noise = dataclasses.replace(cfg.planner.noise, enabled=True, far_field_start=cfg.ablation.far_field_start,
                                far_field_coeff=cfg.ablation.far_field_coeff)
    return dataclasses.replace(cfg.planner, noise=noise)


def check_arm_hashes(cfgs: list[ExperimentConfig], knob: tuple[str, ...]) -> str:
    """All arms must agree on every config field except ``knob``."""
    hashes = {config_hash(c, exclude=knob) for c in cfgs}
    if len(hashes) != 1:
        raise ValueError(f"ablation arms differ beyond {knob}: {sorted(hashes)}")
    return hashes.pop()


def ablate_representation(cfg: ExperimentConfig, out_dir=None, cache: ArtifactCache | None = None) -> list[dict]:
    cache = cache or ArtifactCache()
    pcfg = far_field_planner(cfg)
    shared = config_hash(cfg)
    rows = []
    for kind in cfg.ablation.kinds:
        pol = cache.policy(cfg, kind)
        res = cache.benchmark(pol, pcfg, cfg.bench, out_dir, stem=f"repr_{kind}", chash=shared)
        rows.append({"representation": kind, "SR": res.sr, "SPL": res.spl,
                     "collision_rate": res.collision_rate, "episodes": len(res.records)})
    if out_dir is not None:
        _write_rows(rows, Path(out_dir) / "table_representation.csv")
        write_snapshot(cfg, out_dir)
    return rows


def ablate_vtoken(cfg: ExperimentConfig, out_dir=None, cache: ArtifactCache | None = None) -> list[dict]:
    """With/without arms over several training seeds.

    The without arm trains with the null flag on every sample and plans with
    the token disabled, so it only ever sees the null embedding.
    """
    cache = cache or ArtifactCache()
    arms = {
        "with_token": (cfg, "full"),
        "without_token": (dataclasses.replace(cfg, planner=dataclasses.replace(cfg.planner, use_vtoken=False)),
                          "no_token"),
    }
    check_arm_hashes([a[0] for a in arms.values()], ("planner.use_vtoken",))
    rows = []
    for name, (arm_cfg, variant) in arms.items():
        for seed in cfg.ablation.vtoken_seeds:
            pol = cache.policy(arm_cfg, "bspline", variant=variant, seed=seed)
            res = cache.benchmark(pol, arm_cfg.planner, cfg.bench, out_dir, stem=f"vtoken_{name}_s{seed}",
                                chash=config_hash(arm_cfg))
            rows.append({"arm": name, "seed": seed, "SR": res.sr, "SPL": res.spl,
                         "heading_oscillation": res.heading_oscillation, "episodes": len(res.records)})
    if out_dir is not None:
        _write_rows(rows, Path(out_dir) / "table_vtoken.csv")
        write_snapshot(cfg, out_dir)
    return rows


def summarize_vtoken(rows: list[dict]) -> dict[str, dict]:
    out = {}
    for arm in ("with_token", "without_token"):
        sel = [r for r in rows if r["arm"] == arm]
        out[arm] = {k: float(np.mean([r[k] for r in sel])) for k in ("SR", "SPL", "heading_oscillation")}
    return out


def ablate_scaling(cfg: ExperimentConfig, out_dir=None, cache: ArtifactCache | None = None) -> list[dict]:
    cache = cache or ArtifactCache()
    rows = []
    for frac in cfg.ablation.fractions:
        pol = cache.policy(cfg, "bspline", fraction=frac)
        n_ep = max(1, int(round(frac * cfg.data.n_episodes)))
        res = cache.benchmark(pol, cfg.planner, cfg.bench, out_dir, stem=f"scaling_{int(round(frac * 100)):03d}",
                            chash=config_hash(cfg))
        rows.append({"fraction": frac, "episodes": n_ep, "SR": res.sr, "SPL": res.spl})
    if out_dir is not None:
        out = Path(out_dir)
        _write_rows(rows, out / "scaling.csv")
        from .plotting import scaling_svg

        (out / "scaling.svg").write_text(scaling_svg(rows))
        write_snapshot(cfg, out_dir)
    return rows


def bent_layout() -> np.ndarray:
    """Eight control points fitted to a straight run, a quarter turn and a straight exit."""
    a = np.column_stack([np.linspace(0, 2.5, 60), np.zeros(60)])
    th = np.linspace(0, math.pi / 2, 40)[1:]
    b = np.column_stack([2.5 + 1.5 * np.sin(th), 1.5 - 1.5 * np.cos(th)])
    c = np.column_stack([np.full(30, 4.0), np.linspace(1.6, 4.0, 30)])
    return sc.fit_least_squares(sc.SplineSpec(3, 8), np.vstack([a, b, c])).control_points


def deviation_study(out_dir, seed: int = 0, s_max: float = 3.0, draws: int = 10) -> Path:
    """Mean displacement curves when the last four anchors are jittered within 1 m."""
    A = bent_layout()
    cols = {}
    for kind in RepresentationKind:
        s, d = mean_displacement(kind, A, np.random.default_rng(seed), s_max=s_max, draws=draws)
        cols["s"] = s
        cols[kind.value] = d
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "deviation.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([repr(float(v)) for v in row])
    return path


def non_decreasing(values, tol: float) -> bool:
    return all(b >= a - tol for a, b in zip(values, values[1:]))


def planner_with_noise(pcfg: PlannerConfig, noise: NoiseParams) -> PlannerConfig:
    return dataclasses.replace(pcfg, noise=noise)
