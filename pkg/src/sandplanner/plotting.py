"""Deterministic SVG output (fixed hash salt, no timestamps)."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "sandplanner"
plt.rcParams["svg.fonttype"] = "none"


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def scaling_svg(rows: list[dict]) -> str:
    frac = [100 * float(r["fraction"]) for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(frac, [float(r["SR"]) for r in rows], "o-", label="SR")
    ax.plot(frac, [float(r["SPL"]) for r in rows], "s--", label="SPL")
    ax.set_xlabel("training data (% of episodes)")
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _svg(fig)


def deviation_svg(s, curves: dict[str, np.ndarray], span_end: float | None = None) -> str:
    """Mean displacement versus arc length, one line per representation."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for name, d in curves.items():
        ax.plot(s, 100 * np.asarray(d), label=name)
    if span_end is not None:
        ax.axvline(span_end, color="0.5", lw=0.8, ls=":")
    ax.set_xlabel("arc length s (m)")
    ax.set_ylabel("mean displacement (cm)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _svg(fig)


def trajectory_svg(grid, paths: list[np.ndarray], start=None, goal=None) -> str:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    h, w = grid.cells.shape
    ext = (grid.origin[0], grid.origin[0] + w * grid.resolution, grid.origin[1], grid.origin[1] + h * grid.resolution)
    ax.imshow(grid.cells, origin="lower", extent=ext, cmap="Greys", interpolation="nearest")
    for p in paths:
        p = np.asarray(p)
        ax.plot(p[:, 0], p[:, 1], lw=1.2)
    if start is not None:
        ax.plot(*start, "go", ms=5)
    if goal is not None:
        ax.plot(*goal, "r*", ms=8)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    return _svg(fig)


def _trace_path(path: Path) -> np.ndarray:
    pts = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if not pts:
                pts.append(rec["pose"][:2])
            pts.append(rec["pose_after"][:2])
    return np.asarray(pts)


def plot_results(results_dir, max_overlays: int = 4) -> list[Path]:
    """Render whatever a results directory holds; returns the SVGs written."""
    from .experiments import suite_episode

    root = Path(results_dir)
    written = []
    scaling = root / "scaling.csv"
    if scaling.exists():
        with open(scaling, newline="") as fh:
            rows = list(csv.DictReader(fh))
        out = root / "scaling.svg"
        out.write_text(scaling_svg(rows))
        written.append(out)
    dev = root / "deviation.csv"
    if not dev.exists():
        from .experiments import deviation_study

        deviation_study(root)
    if dev.exists():
        data = np.genfromtxt(dev, delimiter=",", names=True)
        curves = {n: data[n] for n in data.dtype.names if n != "s"}
        out = root / "deviation.svg"
        out.write_text(deviation_svg(data["s"], curves))
        written.append(out)
    for summary in sorted(root.glob("*_summary.json")):
        stem = summary.name[: -len("_summary.json")]
        traces = root / f"{stem}_traces"
        if not traces.is_dir():
            continue
        meta = json.loads(summary.read_text())
        bench_seed = meta.get("bench_seed", 7)
        density = meta.get("density", 0.15)
        for tr in sorted(traces.glob("episode_*.jsonl"))[:max_overlays]:
            i = int(tr.stem.split("_")[1])
            _, grid, start, goal = suite_episode(meta["suite"], bench_seed, i, density)
            out = root / f"{stem}_episode_{i:04d}.svg"
            out.write_text(trajectory_svg(grid, [_trace_path(tr)], start, goal))
            written.append(out)
    return written
