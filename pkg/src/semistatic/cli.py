"""Command-line entry point: simulate, evaluate, render-priority, snapshot."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import Config, ConfigError, apply_overrides
from .episode import TRAJECTORY_HEADER, Episode
from .export import (
    annotated_map,
    map_from_snapshot,
    read_snapshot,
    snapshot,
    write_json,
    write_jsonl,
    write_ppm,
    write_priority,
)
from .harness import evaluate, load_manifest, resolve_scenario, score_map, write_rows
from .policies import POLICIES
from .priority import Query, RelevancyOracle, compose_priority_map
from .world import ScenarioError, load_scenario

log = logging.getLogger("semistatic")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    """Bad input the user can fix; maps to exit code 2."""


def _config(args) -> Config:
    cfg = Config()
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        cfg = apply_overrides(cfg, _flatten(doc))
    return apply_overrides(cfg, args.set or [])


def _flatten(doc: dict) -> dict:
    out = {}
    for section, vals in doc.items():
        if not isinstance(vals, dict):
            raise ConfigError(f"unknown config key {section!r}")
        for k, v in vals.items():
            out[f"{section}.{k}"] = v
    return out


def _scenario(name: str):
    try:
        return load_scenario(resolve_scenario(name))
    except OSError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sc = _scenario(args.scenario)
    out = _out_dir(args.out)
    try:
        ep = Episode(sc, args.policy, cfg, seed=args.seed, budget=args.budget, task=args.task,
                     prior=args.prior, snapshot_every=args.snapshot_every)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = ep.run()
    rows = [dict(zip(TRAJECTORY_HEADER, r)) for r in res.trajectory]
    write_rows(out / "trajectory.csv", rows, TRAJECTORY_HEADER)
    write_jsonl(out / "events.jsonl", res.events)
    write_jsonl(out / "beliefs.jsonl", res.beliefs)
    if res.snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for t, snap in res.snapshots:
            write_json(snap_dir / f"snapshot_{t:09.2f}.json", snap)
    write_json(out / "final_map.json", snapshot(res.map, res.t_end))
    report = {
        "scenario": sc.name, "policy": args.policy, "task": args.task, "seed": args.seed,
        "t_end": res.t_end, "n_waypoints": len(res.waypoints), "replans": res.replans,
        "icp_calls": res.icp_calls,
    }
    if res.success is None:
        report.update(score_map(res.map, sc, res.t_end, cfg))
    else:
        report.update(success=res.success, time_to_success=res.time_to_success)
    write_json(out / "metrics.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    try:
        manifest = load_manifest(Path(args.manifest))
    except OSError as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc}") from None
    if "scenario" not in manifest:
        raise UsageError("manifest needs a 'scenario'")
    out = _out_dir(args.out or manifest.get("output", "results"))
    try:
        rows = evaluate(manifest, out, cfg, logs=args.logs or None)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    print(f"{len(rows)} rows -> {out / 'metrics.csv'}")
    return 0


def cmd_render(args) -> int:
    try:
        snap = read_snapshot(Path(args.input))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read snapshot {args.input}: {exc}") from None
    cfg = _config(args)
    oracle = None
    if args.scenario:
        sc = _scenario(args.scenario)
        oracle = RelevancyOracle(sc.relevancy_table, cfg.episode.relevancy_default)
    try:
        query = Query.parse(args.task)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    m = map_from_snapshot(snap)
    pg = compose_priority_map(m, query, cfg.sigma, oracle, cfg.lifecycle.theta_removal, cfg.explore.unknown_weight)
    out = _out_dir(args.out)
    pgm, side = write_priority(out / "priority.pgm", pg)
    write_ppm(out / "map.ppm", annotated_map(snap))
    print(f"wrote {pgm}, {side} and {out / 'map.ppm'}")
    return 0


def cmd_snapshot(args) -> int:
    cfg = _config(args)
    sc = _scenario(args.scenario)
    out = _out_dir(args.out)
    try:
        ep = Episode(sc, args.policy, cfg, seed=args.seed, budget=args.at, task=args.task, prior=args.prior)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = ep.run()
    snap = snapshot(res.map, res.t_end)
    write_json(out / "snapshot.json", snap)
    write_ppm(out / "map.ppm", annotated_map(snap))
    print(f"snapshot at t={res.t_end:.1f}: {len(snap['active'])} active, {len(snap['missing'])} missing")
    return 0


def _common(p: argparse.ArgumentParser, scenario: bool = True):
    if scenario:
        p.add_argument("--scenario", required=True, help="scenario file or bundled name")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value (repeatable)")
    p.add_argument("--config", help="JSON file of {section: {key: value}} overrides")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semistatic", description=__doc__)
    ap.add_argument("--dump-config", action="store_true", help="print every tunable with its value and exit")
    ap.add_argument("--set", action="append", metavar="KEY=VALUE", dest="top_set",
                    help="override applied to --dump-config")
    sub = ap.add_subparsers(dest="cmd")

    p = sub.add_parser("simulate", help="run one episode")
    _common(p)
    p.add_argument("--policy", default="ours", choices=POLICIES)
    p.add_argument("--task", default="maintain", help="'maintain' or 'find:<query>'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=float, default=600.0, help="simulated seconds")
    p.add_argument("--prior", default="scenario", choices=("scenario", "empty"))
    p.add_argument("--snapshot-every", type=float, default=None, help="map snapshot interval in seconds")
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="run a manifest of methods x tasks x seeds")
    p.add_argument("--manifest", required=True)
    _common(p, scenario=False)
    p.add_argument("--out", default=None)
    p.add_argument("--logs", action="store_true", help="also write per-episode logs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render-priority", help="priority heatmap and annotated map from a snapshot")
    p.add_argument("input", help="snapshot JSON")
    _common(p, scenario=False)
    p.add_argument("--scenario", default=None, help="scenario supplying the relevancy table")
    p.add_argument("--task", default="maintain")
    p.add_argument("--out", default="render")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("snapshot", help="run until a time and write the map snapshot")
    _common(p)
    p.add_argument("--at", type=float, required=True, help="simulated time of the snapshot")
    p.add_argument("--policy", default="ours", choices=POLICIES)
    p.add_argument("--task", default="maintain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior", default="scenario", choices=("scenario", "empty"))
    p.add_argument("--out", default="snapshot")
    p.set_defaults(func=cmd_snapshot)
    return ap


def _setup_logging():
    name = os.environ.get("SEMISTATIC_LOG_LEVEL", "error").lower()
    level = LOG_LEVELS.get(name)
    if level is None:
        print(f"warning: SEMISTATIC_LOG_LEVEL={name!r} not one of {', '.join(LOG_LEVELS)}; using error",
              file=sys.stderr)
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.dump_config:
            cfg = apply_overrides(Config(), args.top_set or [])
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return 0
        if args.cmd is None:
            ap.print_help(sys.stderr)
            return 2
        return args.func(args)
    except (ConfigError, ScenarioError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
