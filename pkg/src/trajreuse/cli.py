"""Command-line entry point. Every flag can also come from a WG_* variable."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .core import Query, TrajReuseError, dumps
from .execution import ToolRegistry, execute_trajectory
from .harness import (
    EngineConfig,
    Strategy,
    StrategyMetrics,
    World,
    WorkloadConfig,
    build_workload,
    compare_and_report,
    make_backend,
    run_strategy,
)
from .routing import route
from .store import ExperienceStore, UnknownTrajectory


def _env(name: str, default=None):
    return os.environ.get(f"WG_{name}", default)


def _store_has_data(path: Path) -> bool:
    return any((path / name).exists() and (path / name).stat().st_size > 0 for name in ("trajectories.jsonl",))


def cmd_init(args: argparse.Namespace) -> int:
    engine = EngineConfig.load(args.config)
    store = ExperienceStore.init(args.store_dir, engine.embedding.dimension)
    print(f"initialized store at {store.path}")
    return 0


def _write_run(path: Path, strategy: Strategy, workload_cfg: WorkloadConfig, run) -> None:
    body = {"strategy": strategy.value, "workload": workload_cfg.to_dict(), **run.to_dict()}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def cmd_run(args: argparse.Namespace) -> int:
    engine = EngineConfig.load(args.config)
    workload_cfg = WorkloadConfig.load(args.workload)
    if args.seed is not None:
        workload_cfg = replace(workload_cfg, seed=int(args.seed))
    strategy = Strategy(args.strategy)
    store_dir = Path(args.store)
    if _store_has_data(store_dir):
        print(f"store {store_dir} already holds trajectories; runs need a fresh store", file=sys.stderr)
        return 2
    store = ExperienceStore.init(store_dir, engine.embedding.dimension)
    world = World.load(engine.world_path, engine.registry_path)
    workload = build_workload(workload_cfg, world, engine.routing, engine.embedding)
    backend = make_backend(engine, workload, world)
    run = run_strategy(strategy, workload, world, backend, store, engine)
    _write_run(Path(args.out), strategy, workload_cfg, run)
    m = run.metrics
    print(f"{strategy.value}: tokens={m.total_ledger.total_tokens} success={m.success_rate:.3f} "
          f"medium={m.success_rate_medium_tier:.3f}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    metrics = []
    for path in args.reports:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        metrics.append(StrategyMetrics.from_dict(d["metrics"]))
    _, passed = compare_and_report(metrics, args.out)
    print(Path(args.out).with_suffix(".txt").read_text(encoding="utf-8"), end="")
    return 0 if passed else 1


def cmd_bench(args: argparse.Namespace) -> int:
    engine = EngineConfig.load(args.config)
    workload_cfg = WorkloadConfig.load(args.workload)
    if args.seed is not None:
        workload_cfg = replace(workload_cfg, seed=int(args.seed))
    out_dir = Path(args.out_dir)
    world = World.load(engine.world_path, engine.registry_path)
    workload = build_workload(workload_cfg, world, engine.routing, engine.embedding)
    backend = make_backend(engine, workload, world)
    metrics = []
    for strategy in Strategy:
        run = run_strategy(strategy, workload, world, backend, None, engine)
        _write_run(out_dir / f"{strategy.value}.json", strategy, workload_cfg, run)
        metrics.append(run.metrics)
    _, passed = compare_and_report(metrics, out_dir / "comparison.json")
    print((out_dir / "comparison.txt").read_text(encoding="utf-8"), end="")
    return 0 if passed else 1


def cmd_route(args: argparse.Namespace) -> int:
    engine = EngineConfig.load(args.config)
    store = ExperienceStore.load(args.store)
    decision = route(Query(args.query, "cli"), store, engine.routing, engine.embedding)
    print(dumps(decision))
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    engine = EngineConfig.load(args.config)
    store = ExperienceStore.load(args.store)
    try:
        trajectory = store.get_trajectory(args.trajectory_id)
    except UnknownTrajectory:
        print(f"unknown trajectory {args.trajectory_id}", file=sys.stderr)
        return 2
    log = execute_trajectory(trajectory, ToolRegistry.load(engine.registry_path), int(args.seed or 0))
    print(dumps(log))
    return 0 if log.outcome.value == "Success" else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajreuse", description=__doc__)
    parser.add_argument("--config", default=_env("CONFIG"), help="engine config JSON (WG_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create an empty store")
    p.add_argument("store_dir", nargs="?" if _env("STORE") else None, default=_env("STORE"))
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("run", help="run one strategy over a workload")
    p.add_argument("--workload", default=_env("WORKLOAD"), help="workload JSON; default is the committed one")
    p.add_argument("--strategy", default=_env("STRATEGY", Strategy.ADAPTIVE.value),
                   choices=[s.value for s in Strategy])
    p.add_argument("--store", default=_env("STORE"), required=_env("STORE") is None)
    p.add_argument("--seed", type=int, default=_env("SEED"))
    p.add_argument("--out", default=_env("OUT"), required=_env("OUT") is None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare run reports and check thresholds")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", default=_env("OUT"), required=_env("OUT") is None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="run every strategy and compare them")
    p.add_argument("--workload", default=_env("WORKLOAD"))
    p.add_argument("--seed", type=int, default=_env("SEED"))
    p.add_argument("--out-dir", default=_env("OUT_DIR", "bench-out"))
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("route", help="print the routing decision for a query")
    p.add_argument("--query", default=_env("QUERY"), required=_env("QUERY") is None)
    p.add_argument("--store", default=_env("STORE"), required=_env("STORE") is None)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("replay", help="re-execute a stored trajectory")
    p.add_argument("--trajectory-id", default=_env("TRAJECTORY_ID"), required=_env("TRAJECTORY_ID") is None)
    p.add_argument("--store", default=_env("STORE"), required=_env("STORE") is None)
    p.add_argument("--seed", type=int, default=_env("SEED"))
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrajReuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
