"""Ground-truth semi-static world: scenario files, scripted changes and the simulated sensor."""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import (
    Bounds,
    GridSpec,
    Pose2D,
    densify_polygon,
    in_view,
    line_of_sight,
    rasterize_hull,
    supercover,
)

SCHEMA_VERSION = 1
STATIC, DYNAMIC = "static", "dynamic"


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class SensorSpec:
    fov_half_angle: float = 0.7
    max_range: float = 3.0
    points_per_object: int = 40
    range_noise_sigma: float = 0.0
    feature_noise_sigma: float = 0.0
    class_confusion_prob: float = 0.0
    detection_visibility_threshold: float = 0.4

    def validate(self):
        if not self.max_range > 0:
            raise ScenarioError("sensor.max_range: d_max must be > 0")
        if not (0 < self.fov_half_angle <= math.pi):
            raise ScenarioError("sensor.fov_half_angle: must lie in (0, pi]")
        if self.range_noise_sigma < 0 or self.feature_noise_sigma < 0:
            raise ScenarioError("sensor: noise sigmas must be >= 0")
        if not (0 <= self.class_confusion_prob <= 1):
            raise ScenarioError("sensor.class_confusion_prob: must lie in [0, 1]")
        if not (0 <= self.detection_visibility_threshold <= 1):
            raise ScenarioError("sensor.detection_visibility_threshold: must lie in [0, 1]")
        if self.points_per_object < 1:
            raise ScenarioError("sensor.points_per_object: must be >= 1")


@dataclass(frozen=True)
class GroundTruthObject:
    id: str
    class_name: str
    footprint: np.ndarray  # polygon in the object's local frame
    stationarity_label: str
    present_from: float | None
    pose: Pose2D
    appearance: np.ndarray | None = None

    def world_footprint(self, pose: Pose2D | None = None) -> np.ndarray:
        return (pose or self.pose).transform(self.footprint)

    @property
    def centroid(self) -> np.ndarray:
        return self.world_footprint().mean(axis=0)


@dataclass(frozen=True)
class ChangeEvent:
    time: float
    kind: str  # add | remove | move
    object_id: str
    new_pose: Pose2D | None = None


@dataclass(frozen=True)
class SearchTask:
    name: str
    query: str
    target_id: str


@dataclass
class Scenario:
    name: str
    bounds: Bounds
    walls: list
    objects: list[GroundTruthObject]
    changes: list[ChangeEvent]
    robot_start: Pose2D
    sensor: SensorSpec
    class_embeddings: dict[str, np.ndarray]
    relevancy_table: dict[str, dict[str, float]]
    rng_seed: int
    stationarity_labels: dict[str, str] = field(default_factory=dict)
    tasks: list[SearchTask] = field(default_factory=list)
    resolution: float = 0.1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def grid(self) -> GridSpec:
        return GridSpec.from_bounds(self.bounds, self.resolution)

    @property
    def classes(self) -> list[str]:
        return sorted(self.class_embeddings)

    def object(self, oid: str) -> GroundTruthObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def label_oracle(self, class_name: str) -> str:
        """Prior static/dynamic label per class; unknown classes default to dynamic."""
        if class_name in self.stationarity_labels:
            return self.stationarity_labels[class_name]
        for o in self.objects:
            if o.class_name == class_name:
                return o.stationarity_label
        return DYNAMIC

    def wall_mask(self) -> np.ndarray:
        if "walls" not in self._cache:
            grid = self.grid
            mask = np.zeros(grid.shape, dtype=bool)
            for w in self.walls:
                if w[0] == "cells":
                    for ix, iy in w[1]:
                        if 0 <= ix < grid.nx and 0 <= iy < grid.ny:
                            mask[iy, ix] = True
                    continue
                for ix, iy in supercover(grid, w[0], w[1]):
                    if 0 <= ix < grid.nx and 0 <= iy < grid.ny:
                        mask[iy, ix] = True
            self._cache["walls"] = mask
        return self._cache["walls"]

    def timeline(self) -> list[tuple[float, int, str, str, Pose2D | None]]:
        """Implicit appearances (from ``present_from``) merged with scripted events."""
        if "timeline" not in self._cache:
            items = []
            for o in self.objects:
                if o.present_from is not None and o.present_from > 0:
                    items.append((o.present_from, 0, "add", o.id, o.pose))
            for k, ev in enumerate(self.changes):
                items.append((ev.time, 1 + k, ev.kind, ev.object_id, ev.new_pose))
            items.sort(key=lambda it: (it[0], it[1]))
            self._cache["timeline"] = items
        return self._cache["timeline"]


# ---------------------------------------------------------------- world state


def world_state(scenario: Scenario, t: float) -> list[GroundTruthObject]:
    """Objects present at time ``t`` with every event at time <= t applied in order."""
    timeline = scenario.timeline()
    if "times" not in scenario._cache:
        scenario._cache["times"] = [it[0] for it in timeline]
    n = bisect_right(scenario._cache["times"], t)
    key = ("state", n)
    if key not in scenario._cache:
        present: dict[str, Pose2D] = {
            o.id: o.pose for o in scenario.objects if o.present_from is not None and o.present_from <= 0
        }
        for _, _, kind, oid, pose in timeline[:n]:
            if kind == "remove":
                present.pop(oid, None)
            else:
                present[oid] = pose
        scenario._cache[key] = [replace(o, pose=present[o.id]) for o in scenario.objects if o.id in present]
    return list(scenario._cache[key])


def state_key(objs: list[GroundTruthObject]) -> tuple:
    return tuple((o.id, o.pose.x, o.pose.y, o.pose.heading) for o in objs)


def _footprint_points(scenario: Scenario, obj: GroundTruthObject) -> np.ndarray:
    key = ("pts", obj.id, obj.pose)
    cache = scenario._cache
    if key not in cache:
        cache[key] = densify_polygon(obj.world_footprint(), scenario.sensor.points_per_object)
    return cache[key]


def obstacle_labels(scenario: Scenario, objs: list[GroundTruthObject]) -> np.ndarray:
    """Label grid: -1 walls, k+1 for the k-th object in ``objs``, 0 elsewhere."""
    key = ("labels", state_key(objs))
    cache = scenario._cache
    if key not in cache:
        grid = scenario.grid
        labels = np.zeros(grid.shape, dtype=np.int32)
        for k, o in enumerate(objs):
            labels[rasterize_hull(grid, o.world_footprint())] = k + 1
        labels[scenario.wall_mask()] = -1
        if len(cache) > 512:
            for stale in [c for c in cache if isinstance(c, tuple) and c[0] == "labels"]:
                del cache[stale]
        cache[key] = labels
    return cache[key]


def visible_footprint(
    scenario: Scenario, t: float, robot: Pose2D, obj_id: str
) -> tuple[np.ndarray, np.ndarray]:
    """Footprint points of a present object and the mask of those the sensor can see."""
    objs = world_state(scenario, t)
    idx = [o.id for o in objs].index(obj_id)
    pts = _footprint_points(scenario, objs[idx])
    labels = obstacle_labels(scenario, objs)
    s = scenario.sensor
    mask = in_view(robot, pts, s.max_range, s.fov_half_angle)
    if mask.any():
        mask[mask] = line_of_sight(robot.xy, pts[mask], labels, scenario.grid, own=idx + 1)
    return pts, mask


# ---------------------------------------------------------------- sensing


@dataclass
class ObjectCandidate:
    pose: Pose2D
    points: np.ndarray
    feature: np.ndarray
    class_name: str
    truth_id: str | None = None  # diagnostics only; never read by the mapper

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if len(self.points) < 1:
            raise ValueError("candidate needs at least one point")
        n = float(np.linalg.norm(self.feature))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"candidate feature must be unit norm (got {n})")

    @classmethod
    def from_points(cls, points, feature, class_name, truth_id=None) -> "ObjectCandidate":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        c = pts.mean(axis=0)
        return cls(Pose2D(float(c[0]), float(c[1]), 0.0), pts, np.asarray(feature, float), class_name, truth_id)


@dataclass
class Observation:
    candidates: list[ObjectCandidate]
    free_cells: np.ndarray  # flat indices into the scenario grid
    occupied_cells: np.ndarray


def _fan_cells(scenario: Scenario, robot: Pose2D, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    grid = scenario.grid
    s = scenario.sensor
    step = grid.resolution * 0.5
    n_rays = max(2, int(math.ceil(2 * s.fov_half_angle * s.max_range / step)) + 1)
    angles = robot.heading + np.linspace(-s.fov_half_angle, s.fov_half_angle, n_rays)
    ranges = np.arange(1, int(math.floor(s.max_range / step)) + 1) * step
    xs = robot.x + np.cos(angles)[:, None] * ranges[None, :]
    ys = robot.y + np.sin(angles)[:, None] * ranges[None, :]
    ix = np.floor((xs - grid.x0) / grid.resolution + 1e-9).astype(np.int64)
    iy = np.floor((ys - grid.y0) / grid.resolution + 1e-9).astype(np.int64)
    inside = grid.inside(ix, iy)
    lab = np.where(inside, labels[np.clip(iy, 0, grid.ny - 1), np.clip(ix, 0, grid.nx - 1)], -2)
    blocked = lab != 0
    first = np.where(blocked.any(axis=1), blocked.argmax(axis=1), blocked.shape[1])
    before = np.arange(blocked.shape[1])[None, :] < first[:, None]
    flat = iy * grid.nx + ix
    free = np.unique(flat[before & inside])
    rows = np.nonzero(first < blocked.shape[1])[0]
    hit_in = inside[rows, first[rows]]
    occ = np.unique(flat[rows[hit_in], first[rows][hit_in]])
    return free, occ


def sense(scenario: Scenario, t: float, robot: Pose2D, rng: np.random.Generator) -> Observation:
    """Simulated detector: FOV/range/occlusion-filtered candidates plus observed background cells."""
    if not scenario.bounds.contains(robot.xy)[0]:
        raise ValueError("robot pose outside scenario bounds")
    s = scenario.sensor
    grid = scenario.grid
    objs = world_state(scenario, t)
    labels = obstacle_labels(scenario, objs)
    classes = scenario.classes
    candidates = []
    for k, o in enumerate(objs):
        reach = s.max_range + float(np.hypot(*np.asarray(o.footprint).T).max())
        if math.hypot(o.pose.x - robot.x, o.pose.y - robot.y) > reach:
            continue
        pts = _footprint_points(scenario, o)
        mask = in_view(robot, pts, s.max_range, s.fov_half_angle)
        if not mask.any():
            continue
        mask[mask] = line_of_sight(robot.xy, pts[mask], labels, grid, own=k + 1)
        if mask.mean() < s.detection_visibility_threshold or not mask.any():
            continue
        vis = pts[mask]
        if s.range_noise_sigma > 0:
            ray = vis - robot.xy
            ray /= np.maximum(np.linalg.norm(ray, axis=1, keepdims=True), 1e-12)
            vis = vis + ray * rng.normal(0.0, s.range_noise_sigma, size=(len(vis), 1))
        feat = scenario.class_embeddings[o.class_name].copy()
        if o.appearance is not None:
            feat = feat + o.appearance
        if s.feature_noise_sigma > 0:
            feat = feat + rng.normal(0.0, s.feature_noise_sigma, size=feat.shape)
        feat = feat / np.linalg.norm(feat)
        label = o.class_name
        if s.class_confusion_prob > 0 and rng.random() < s.class_confusion_prob and len(classes) > 1:
            others = [c for c in classes if c != o.class_name]
            label = others[int(rng.integers(len(others)))]
        candidates.append(ObjectCandidate.from_points(vis, feat, label, truth_id=o.id))
    free, occ = _fan_cells(scenario, robot, labels)
    return Observation(candidates, free, occ)


# ---------------------------------------------------------------- file io


def _err(field_path: str, msg: str) -> ScenarioError:
    return ScenarioError(f"{field_path}: {msg}")


def _pose(d, where: str) -> Pose2D:
    try:
        return Pose2D.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise _err(where, f"invalid pose ({exc})") from None


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise _err("<root>", "expected an object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise _err("schema_version", f"unsupported version {version}")
    for key in ("name", "bounds", "objects", "robot_start", "class_embeddings"):
        if key not in doc:
            raise _err(key, "missing required key")
    b = doc["bounds"]
    if isinstance(b, dict):
        b = [b["xmin"], b["ymin"], b["xmax"], b["ymax"]]
    if len(b) != 4 or not (b[2] > b[0] and b[3] > b[1]):
        raise _err("bounds", "expected [xmin, ymin, xmax, ymax] with positive extent")
    bounds = Bounds(*map(float, b))

    walls = []
    for i, w in enumerate(doc.get("walls", [])):
        if isinstance(w, dict) and "cells" in w:
            walls.append(("cells", [tuple(map(int, c)) for c in w["cells"]]))
        elif len(w) == 2:
            walls.append((tuple(map(float, w[0])), tuple(map(float, w[1]))))
        else:
            raise _err(f"walls[{i}]", "expected [[x1, y1], [x2, y2]] or {cells: [...]}")

    emb = {}
    for cname, vec in doc["class_embeddings"].items():
        v = np.asarray(vec, dtype=float)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise _err(f"class_embeddings.{cname}", "vector must be unit norm within 1e-9")
        emb[cname] = v
    dims = {len(v) for v in emb.values()}
    if len(dims) > 1:
        raise _err("class_embeddings", "all vectors must share one dimension")

    sensor = SensorSpec(**doc.get("sensor", {}))
    try:
        sensor.validate()
    except ScenarioError as exc:
        raise exc from None

    objects = []
    seen = set()
    for i, o in enumerate(doc["objects"]):
        where = f"objects[{i}]"
        try:
            oid, cname = str(o["id"]), str(o["class_name"])
            fp = np.asarray(o["footprint"], dtype=float)
        except KeyError as exc:
            raise _err(where, f"missing key {exc}") from None
        if oid in seen:
            raise _err(f"{where}.id", f"duplicate id {oid!r}")
        seen.add(oid)
        if cname not in emb:
            raise _err(f"{where}.class_name", f"no embedding for class {cname!r}")
        if fp.ndim != 2 or fp.shape[1] != 2 or len(fp) < 3:
            raise _err(f"{where}.footprint", "need >= 3 planar points")
        span = fp.max(axis=0) - fp.min(axis=0)
        if span[0] * span[1] <= 0:
            raise _err(f"{where}.footprint", "degenerate footprint (bounding-box area is 0)")
        label = o.get("stationarity_label", DYNAMIC)
        if label not in (STATIC, DYNAMIC):
            raise _err(f"{where}.stationarity_label", "must be 'static' or 'dynamic'")
        app = o.get("appearance")
        if app is not None:
            app = np.asarray(app, dtype=float)
            if app.shape != emb[cname].shape:
                raise _err(f"{where}.appearance", "dimension must match the class embedding")
        pf = o.get("present_from", 0.0)
        objects.append(
            GroundTruthObject(
                oid, cname, fp, label, None if pf is None else float(pf),
                _pose(o.get("pose", {"x": 0, "y": 0}), f"{where}.pose"), app,
            )
        )

    changes = []
    for i, c in enumerate(doc.get("changes", [])):
        where = f"changes[{i}]"
        t = float(c["time"])
        if t < 0:
            raise _err(f"{where}.time", "change event times strictly nonnegative (got %g)" % t)
        if changes and t < changes[-1].time:
            raise _err(f"{where}.time", "change events must be sorted by time")
        kind = c.get("kind")
        if kind not in ("add", "remove", "move"):
            raise _err(f"{where}.kind", "must be add, remove or move")
        if c.get("object_id") not in seen:
            raise _err(f"{where}.object_id", f"unknown object {c.get('object_id')!r}")
        pose = None
        if kind in ("add", "move"):
            if "new_pose" not in c:
                raise _err(f"{where}.new_pose", f"required for {kind}")
            pose = _pose(c["new_pose"], f"{where}.new_pose")
        changes.append(ChangeEvent(t, kind, str(c["object_id"]), pose))

    rel = {}
    for q, row in doc.get("relevancy_table", {}).items():
        for cname, score in row.items():
            if not (0.0 <= float(score) <= 1.0):
                raise _err(f"relevancy_table[{q!r}][{cname!r}]", "score must lie in [0, 1]")
        rel[q] = {k: float(v) for k, v in row.items()}

    tasks = []
    for i, tk in enumerate(doc.get("tasks", [])):
        if tk.get("target_id") not in seen:
            raise _err(f"tasks[{i}].target_id", "unknown object")
        tasks.append(SearchTask(str(tk.get("name", f"task{i}")), str(tk["query"]), str(tk["target_id"])))

    labels = dict(doc.get("stationarity_labels", {}))
    for cname, lab in labels.items():
        if lab not in (STATIC, DYNAMIC):
            raise _err(f"stationarity_labels.{cname}", "must be 'static' or 'dynamic'")

    sc = Scenario(
        name=str(doc["name"]),
        bounds=bounds,
        walls=walls,
        objects=objects,
        changes=changes,
        robot_start=_pose(doc["robot_start"], "robot_start"),
        sensor=sensor,
        class_embeddings=emb,
        relevancy_table=rel,
        rng_seed=int(doc.get("rng_seed", 0)),
        stationarity_labels=labels,
        tasks=tasks,
        resolution=float(doc.get("resolution", 0.1)),
    )
    _check_dynamics(sc)
    return sc


def _check_dynamics(sc: Scenario):
    present = {o.id for o in sc.objects if o.present_from is not None and o.present_from <= 0}
    for o in sc.objects:
        if not sc.bounds.contains(o.world_footprint()).all():
            raise _err(f"objects[{o.id}].footprint", "footprint outside scenario bounds")
    for time, order, kind, oid, pose in sc.timeline():
        where = f"changes[{order - 1}]" if order else f"objects[{oid}].present_from"
        if kind in ("remove", "move") and oid not in present:
            raise _err(f"{where}.object_id", f"{oid!r} does not exist at t={time:g}")
        if kind == "add" and oid in present:
            raise _err(f"{where}.object_id", f"{oid!r} already exists at t={time:g}")
        if kind == "remove":
            present.discard(oid)
        else:
            present.add(oid)
            if not sc.bounds.contains(sc.object(oid).world_footprint(pose)).all():
                raise _err(f"{where}.new_pose", "footprint outside scenario bounds")
    if not sc.bounds.contains(sc.robot_start.xy)[0]:
        raise _err("robot_start", "outside scenario bounds")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: parse error: {exc.msg}") from None
    return scenario_from_dict(doc)


def scenario_to_dict(sc: Scenario) -> dict:
    def obj(o: GroundTruthObject) -> dict:
        d = {
            "id": o.id,
            "class_name": o.class_name,
            "footprint": np.round(o.footprint, 6).tolist(),
            "stationarity_label": o.stationarity_label,
            "present_from": o.present_from,
            "pose": o.pose.to_dict(),
        }
        if o.appearance is not None:
            d["appearance"] = o.appearance.tolist()
        return d

    walls = []
    for w in sc.walls:
        walls.append({"cells": [list(c) for c in w[1]]} if w[0] == "cells" else [list(w[0]), list(w[1])])
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "bounds": [sc.bounds.xmin, sc.bounds.ymin, sc.bounds.xmax, sc.bounds.ymax],
        "resolution": sc.resolution,
        "walls": walls,
        "objects": [obj(o) for o in sc.objects],
        "changes": [
            {"time": c.time, "kind": c.kind, "object_id": c.object_id}
            | ({"new_pose": c.new_pose.to_dict()} if c.new_pose else {})
            for c in sc.changes
        ],
        "robot_start": sc.robot_start.to_dict(),
        "sensor": sc.sensor.__dict__.copy(),
        "class_embeddings": {k: v.tolist() for k, v in sorted(sc.class_embeddings.items())},
        "relevancy_table": sc.relevancy_table,
        "rng_seed": sc.rng_seed,
    }
    if sc.stationarity_labels:
        doc["stationarity_labels"] = sc.stationarity_labels
    if sc.tasks:
        doc["tasks"] = [t.__dict__.copy() for t in sc.tasks]
    return doc
