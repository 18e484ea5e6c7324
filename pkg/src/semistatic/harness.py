"""Batch evaluation: run methods × tasks × seeds from a manifest and write metric tables."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import Config, apply_overrides
from .episode import TRAJECTORY_HEADER, Episode, EpisodeResult, survey_map
from .export import write_jsonl
from .metrics import (
    change_detection_metrics,
    changed_region,
    detection_metrics,
    map_occupancy,
    navigation_metrics,
    scripted_changes,
    truth_occupancy,
    voxel_metrics,
)
from .world import Scenario, ScenarioError, load_scenario

log = logging.getLogger(__name__)

METHODS = ("ours", "random", "patrol", "ablation", "rebuild")
SCENARIO_DIR = Path(__file__).parent / "scenarios"

COLUMNS = (
    "scenario", "method", "task", "seed", "t_end",
    "additions_pct", "removals_pct", "all_pct",
    "voxel_precision", "voxel_accuracy", "voxel_fpr",
    "det_precision", "det_recall", "det_f1",
    "success", "time_to_success", "n_waypoints", "replans", "icp_calls",
)


def resolve_scenario(name: str | Path, base: Path | None = None) -> Path:
    """A path, a path relative to ``base``, or the name of a bundled scenario."""
    p = Path(name)
    for cand in ([base / p] if base is not None else []) + [p, SCENARIO_DIR / p, SCENARIO_DIR / f"{p}.json"]:
        if cand.is_file():
            return cand
    raise ScenarioError(f"scenario not found: {name}")


def expand_tasks(sc: Scenario, tasks: list[str]) -> list[tuple[str, str, str | None]]:
    """(label, task string, target id) triples; ``search:*`` expands to every scenario task."""
    out = []
    for t in tasks:
        if t in ("maintain", "maintenance"):
            out.append(("maintain", "maintain", None))
        elif t.startswith("search:"):
            name = t[len("search:"):]
            chosen = sc.tasks if name == "*" else [tk for tk in sc.tasks if tk.name == name]
            if not chosen:
                raise ScenarioError(f"scenario {sc.name!r} has no search task {name!r}")
            out += [(tk.name, f"find:{tk.query}", tk.target_id) for tk in chosen]
        else:
            raise ValueError(f"unknown task {t!r}; use 'maintain', 'search:<name>' or 'search:*'")
    return out


def expand_seeds(seeds) -> list[int]:
    if isinstance(seeds, dict):
        start = int(seeds.get("start", 0))
        return list(range(start, start + int(seeds["count"])))
    if isinstance(seeds, int):
        return list(range(seeds))
    return [int(s) for s in seeds]


def method_config(cfg: Config, method: str) -> tuple[Config, str]:
    if method == "ablation":
        return replace(cfg, episode=replace(cfg.episode, change_detection=False)), "ours"
    return cfg, method


def score_map(res_map, sc: Scenario, t_end: float, cfg: Config) -> dict:
    changes = scripted_changes(sc, t_end)
    row = change_detection_metrics(res_map, changes, cfg.episode.r_match, cfg.episode.strict_class)
    region = changed_region(sc, t_end)
    if region.any():
        v = voxel_metrics(map_occupancy(res_map), truth_occupancy(sc, t_end), region)
        row.update(voxel_precision=v["precision"], voxel_accuracy=v["accuracy"], voxel_fpr=v["fpr"])
    row.update(detection_metrics(res_map, sc, t_end, cfg.episode.r_match))
    return row


def run_one(sc: Scenario, method: str, task: tuple[str, str, str | None], seed: int, budget: float,
            cfg: Config) -> tuple[dict, EpisodeResult | None]:
    label, task_str, target = task
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    row: dict = {"scenario": sc.name, "method": method, "task": label, "seed": seed}
    if method == "rebuild":
        if target is not None:
            raise ValueError("the rebuild oracle only applies to map maintenance")
        m = survey_map(sc, budget, cfg, seed)
        row["t_end"] = budget
        row.update(score_map(m, sc, budget, cfg))
        return row, None
    mcfg, policy = method_config(cfg, method)
    ep = Episode(sc, policy, mcfg, seed=seed, budget=budget, task=task_str, target_id=target)
    res = ep.run()
    row.update(t_end=res.t_end, n_waypoints=len(res.waypoints), replans=res.replans, icp_calls=res.icp_calls)
    if target is None:
        row.update(score_map(res.map, sc, res.t_end, cfg))
    else:
        row.update(success=int(bool(res.success)), time_to_success=res.time_to_success)
    return row, res


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) else f"{float(v):.6f}"
    return str(v)


def write_rows(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])


def summarize(rows: list[dict]) -> list[dict]:
    """Per method and task: means of the map metrics, plus navigation metrics for search tasks."""
    keys = sorted({(r["method"], r["task"]) for r in rows})
    search_methods = sorted({r["method"] for r in rows if "success" in r and r["success"] is not None})
    out = []
    for method, task in keys:
        sel = [r for r in rows if r["method"] == method and r["task"] == task]
        s = {"method": method, "task": task, "n": len(sel)}
        for c in ("additions_pct", "removals_pct", "all_pct", "voxel_precision", "voxel_accuracy",
                  "voxel_fpr", "det_precision", "det_recall", "det_f1"):
            vals = [r[c] for r in sel if r.get(c) is not None]
            if vals:
                s[c] = float(np.mean(vals))
        if all(r.get("success") is not None for r in sel):
            s.update(navigation_metrics([(bool(r["success"]), r.get("time_to_success")) for r in sel]))
        out.append(s)
    for method in search_methods:
        sel = [r for r in rows if r["method"] == method and r.get("success") is not None]
        s = {"method": method, "task": "all_search", "n": len(sel)}
        s.update(navigation_metrics([(bool(r["success"]), r.get("time_to_success")) for r in sel]))
        out.append(s)
    return out


SUMMARY_COLUMNS = (
    "method", "task", "n", "additions_pct", "removals_pct", "all_pct", "voxel_precision",
    "voxel_accuracy", "voxel_fpr", "det_precision", "det_recall", "det_f1",
    "success_rate", "mean_time", "weighted_time",
)


def load_manifest(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"manifest {path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    doc.setdefault("_base", str(Path(path).resolve().parent))
    return doc


def evaluate(manifest: dict, out_dir: Path, cfg: Config | None = None, logs: bool | None = None) -> list[dict]:
    """Run the manifest and write metrics.csv and summary.csv into ``out_dir``."""
    base = Path(manifest["_base"]) if "_base" in manifest else None
    sc = load_scenario(resolve_scenario(manifest["scenario"], base))
    cfg = apply_overrides(cfg or Config(), manifest.get("overrides"))
    methods = manifest.get("methods", ["ours", "random", "patrol"])
    tasks = expand_tasks(sc, manifest.get("tasks", ["maintain"]))
    seeds = expand_seeds(manifest.get("seeds", 5))
    budget = float(manifest.get("budget", 600.0))
    logs = bool(manifest.get("logs", False)) if logs is None else logs
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for task in tasks:
        for method in methods:
            for seed in seeds:
                row, res = run_one(sc, method, task, seed, budget, cfg)
                rows.append(row)
                log.info("%s %s seed=%d done", method, task[0], seed)
                if logs and res is not None:
                    write_episode_logs(out_dir / "episodes" / f"{method}_{task[0]}_{seed}", res)
    write_rows(out_dir / "metrics.csv", rows, COLUMNS)
    write_rows(out_dir / "summary.csv", summarize(rows), SUMMARY_COLUMNS)
    return rows


def write_episode_logs(d: Path, res: EpisodeResult) -> None:
    d.mkdir(parents=True, exist_ok=True)
    write_jsonl(d / "events.jsonl", res.events)
    write_jsonl(d / "beliefs.jsonl", res.beliefs)
    write_rows(d / "trajectory.csv", [dict(zip(TRAJECTORY_HEADER, r)) for r in res.trajectory], TRAJECTORY_HEADER)
