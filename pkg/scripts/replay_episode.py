"""Run one benchmark episode with a checkpoint and draw it.

Prints the per-step status counts, which is usually the first thing worth
knowing when an episode fails (blocked steps versus recovery moves versus a
plain timeout).
"""

import argparse
import collections
from pathlib import Path

from sandplanner.config import ExperimentConfig, load_config
from sandplanner.diffusion import DiffusionPolicy
from sandplanner.experiments import suite_episode
from sandplanner.planner import run_episode, write_trace
from sandplanner.plotting import trajectory_svg

p = argparse.ArgumentParser(description="replay one benchmark episode")
p.add_argument("checkpoint", type=Path)
p.add_argument("episode", type=int)
p.add_argument("--config", type=Path)
p.add_argument("--suite", default=None)
p.add_argument("--out", type=Path, default=Path("runs/replay"))
a = p.parse_args()

cfg = load_config(a.config) if a.config else ExperimentConfig()
suite = a.suite or cfg.bench.suite
policy = DiffusionPolicy.load(a.checkpoint)
_, grid, start, goal = suite_episode(suite, cfg.bench.seed, a.episode, cfg.bench.density)
res = run_episode(policy, grid, start, goal, cfg.planner, seed=a.episode)

a.out.mkdir(parents=True, exist_ok=True)
stem = a.out / f"{suite}_{a.episode:04d}"
write_trace(res.trace, stem.with_suffix(".jsonl"))
path = [st.executed[0] for st in res.trace] + ([res.trace[-1].executed[1]] if res.trace else [])
stem.with_suffix(".svg").write_text(trajectory_svg(grid, [path], start, goal))

print(f"success={res.success} collided={res.collided} steps={res.steps} "
      f"length={res.path_length:.2f} shortest={res.shortest_length:.2f}")
print(dict(collections.Counter(st.status for st in res.trace)))
