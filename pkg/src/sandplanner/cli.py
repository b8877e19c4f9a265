"""Command line entry point: ``python -m sandplanner <command>``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import subprocess
import sys
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, config_hash, load_config, write_snapshot
from .diffusion import DiffusionPolicy, train
from .expert_data import build_dataset, read_dataset
from .representations import RepresentationKind

log = logging.getLogger("sandplanner")


def _globals(p: argparse.ArgumentParser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="YAML config file")
    p.add_argument("--seed", type=int, default=d, help="master seed (data and training)")
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS if suppress else Path("runs"),
                   help="output directory")
    p.add_argument("--threads", type=int, default=d, help="episode worker processes")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sandplanner", description=__doc__)
    _globals(p, suppress=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, **kw):
        sp = sub.add_parser(name, **kw)
        _globals(sp, suppress=True)
        return sp

    cmd("gen-data", help="generate expert demonstrations for every representation")

    sp = cmd("train", help="train one diffusion policy")
    sp.add_argument("--data", type=Path, help="directory written by gen-data (default: <out>/data)")
    sp.add_argument("--kind", default="bspline", choices=[k.value for k in RepresentationKind])
    sp.add_argument("--no-token", action="store_true", help="force the null flag on every sample")
    sp.add_argument("--fraction", type=float, default=1.0, help="episode prefix fraction of the data")

    sp = cmd("eval", help="run a benchmark suite with a trained checkpoint")
    sp.add_argument("--checkpoint", type=Path, help="default: <out>/policy_bspline.sdpc")
    sp.add_argument("--suite", choices=["cluttered", "corridor"])
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--traces", action="store_true", help="write per-step JSON-lines traces")

    sp = cmd("ablate", help="representation / velocity token / data scaling studies")
    sp.add_argument("study", choices=["repr", "vtoken", "scaling"])
    sp.add_argument("--cache", type=Path, help="artifact cache (default: <out>/cache)")

    sp = cmd("plot", help="render SVGs for a results directory")
    sp.add_argument("results", type=Path, nargs="?", help="default: <out>")

    sp = cmd("selftest", help="run the property test suites")
    sp.add_argument("pytest_args", nargs=argparse.REMAINDER)
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = dataclasses.replace(cfg, bench=dataclasses.replace(cfg.bench, workers=args.threads))
    return cfg


def _gen_data(cfg, args):
    paths = build_dataset(cfg.data, args.out / "data")
    for k, p in paths.items():
        print(f"{k}: {p}")


def _train(cfg, args):
    data_dir = args.data or args.out / "data"
    path = data_dir / f"dataset_{args.kind}.sdpd"
    ds = read_dataset(path)
    if args.fraction < 1.0:
        ds = ds.fraction(args.fraction)
    if args.no_token:
        ds = ds.without_token()
    chash = config_hash({"model": dataclasses.asdict(cfg.model), "train": dataclasses.asdict(cfg.train),
                         "data": str(path), "fraction": args.fraction, "no_token": args.no_token})
    pol, tlog = train(ds, cfg.model, cfg.train, chash)
    ck = args.out / f"policy_{args.kind}{'_notoken' if args.no_token else ''}.sdpc"
    pol.save(ck)
    with open(args.out / "training_log.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(tlog.epoch_loss):
            fh.write(f"{i},{v!r}\n")
    print(f"checkpoint {ck} (final epoch loss {tlog.epoch_loss[-1]:.5f}, {tlog.steps} steps)")


def _eval(cfg, args):
    bench = cfg.bench
    if args.suite:
        bench = dataclasses.replace(bench, suite=args.suite)
    if args.episodes is not None:
        bench = dataclasses.replace(bench, n_episodes=args.episodes)
    if args.traces:
        bench = dataclasses.replace(bench, keep_traces=True)
    ck = args.checkpoint or args.out / "policy_bspline.sdpc"
    pol = DiffusionPolicy.load(ck)
    pcfg = cfg.planner
    if pol.kind is not RepresentationKind.BSPLINE and pcfg.warm_start:
        log.info("warm start works on any anchor set; keeping it for %s", pol.kind.value)
    res = ex.run_benchmark(pol, pcfg, bench, args.out, stem=f"eval_{bench.suite}", chash=config_hash(cfg))
    print(json.dumps(res.summary(), indent=2))


def _ablate(cfg, args):
    cache = ex.ArtifactCache(args.cache or args.out / "cache")
    out = args.out / f"ablate_{args.study}"
    if args.study == "repr":
        rows = ex.ablate_representation(cfg, out, cache)
    elif args.study == "vtoken":
        rows = ex.ablate_vtoken(cfg, out, cache)
        print(json.dumps(ex.summarize_vtoken(rows), indent=2))
    else:
        rows = ex.ablate_scaling(cfg, out, cache)
    for r in rows:
        print(", ".join(f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))


def _plot(cfg, args):
    from .plotting import plot_results

    for p in plot_results(args.results or args.out):
        print(p)


def _selftest(cfg, args):
    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        print(f"test directory not found next to the package ({tests})", file=sys.stderr)
        return 2
    extra = [a for a in args.pytest_args if a != "--"]
    cmd = [sys.executable, "-m", "pytest", str(tests), "-q", "--ignore", str(tests / "test_acceptance.py"), *extra]
    return subprocess.call(cmd)


COMMANDS = {"gen-data": _gen_data, "train": _train, "eval": _eval, "ablate": _ablate, "plot": _plot,
            "selftest": _selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, args.out)
    try:
        rc = COMMANDS[args.command](cfg, args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
