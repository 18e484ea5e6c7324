"""Per-frame map maintenance and the closed-loop episode runner."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import binary_dilation

from .config import Config
from .exploration import (
    follow_step,
    path_blocked,
    plan_path,
    project_occupancy,
    reachable_from,
    search_success,
    traversable,
)
from .export import snapshot
from .geometry import Pose2D, densify_polygon, wrap_angle
from .lifecycle import apply_removal, reidentify
from .mapping import (
    FREE,
    OCCUPIED,
    MapObject,
    ObjectCandidate,
    SemanticMap,
    associate,
    insert_new,
    merge,
    update_background,
    visible_subsets,
)
from .policies import NoReachableCell, Policy, make_policy
from .priority import FIND_OBJECT, Query, RelevancyOracle
from .stationarity import bayes_update, inject_decay, initial_belief, measure_change, observed_absence
from .world import Observation, Scenario, obstacle_labels, sense, world_state

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- mapper


@dataclass
class FrameReport:
    t: float
    matched: dict[int, int] = field(default_factory=dict)  # object id -> association stage
    absent: list[int] = field(default_factory=list)
    inserted: list[int] = field(default_factory=list)
    removed: list[int] = field(default_factory=list)
    merges: list = field(default_factory=list)
    icp_calls: int = 0


class Mapper:
    """Runs one sensing frame through association, belief updates and the lifecycle."""

    def __init__(self, m: SemanticMap, sensor, cfg: Config, label_oracle, change_detection: bool = True):
        self.map = m
        self.sensor = sensor
        self.cfg = cfg
        self.label_oracle = label_oracle
        self.change_detection = change_detection
        self.events: list[dict] = []
        self.beliefs: list[dict] = []
        self.icp_calls = 0

    def _log(self, t: float, kind: str, **kw):
        self.events.append({"t": round(t, 6), "event": kind, **kw})

    def _belief(self, t: float, o: MapObject, why: str):
        if self.cfg.episode.belief_log:
            self.beliefs.append({
                "t": round(t, 6), "object_id": o.id, "class": o.class_name, "why": why,
                "alpha": o.belief.alpha, "beta": o.belief.beta,
                "E_v": o.expected_v, "zeta": o.belief.zeta,
            })

    def update(self, obs: Observation, robot: Pose2D, t: float) -> FrameReport:
        m, cfg = self.map, self.cfg
        sim = cfg.similarity
        policy = cfg.decay
        rep = FrameReport(t)
        subsets = visible_subsets(m, robot, self.sensor, sim)
        expected = [e for e in subsets if len(e.visible) > 0 and e.fraction >= sim.tau_expected]
        # the semantic ICP fallback is part of change handling
        assoc = associate(obs.candidates, expected, sim, semantic_step=self.change_detection)
        rep.icp_calls = assoc.icp_calls
        self.icp_calls += assoc.icp_calls
        visible = {e.obj.id: e.visible for e in expected}
        for j, oid in enumerate(assoc.matches):
            if oid is None:
                continue
            o = m.active[oid]
            before = o.points
            whole = assoc.stage[j] == 2
            merge(m, oid, obs.candidates[j], t, None if whole else visible[oid], sim.d_voxel)
            rep.matched[oid] = assoc.stage[j]
            if self.change_detection:
                e_t = measure_change(before, o.points) if whole else measure_change(visible[oid], obs.candidates[j].points)
                o.belief = bayes_update(o.belief, e_t, o.label, policy, t)
                self._belief(t, o, "observed")
            if whole:
                self._log(t, "relocated", object_id=oid, rmse=assoc.rmse[j])
        for e in expected:
            oid = e.obj.id
            # too little in view for the detector to fire: a miss says nothing
            if oid in rep.matched or e.fraction < self.sensor.detection_visibility_threshold:
                continue
            rep.absent.append(oid)
            if self.change_detection:
                o = e.obj
                o.belief = observed_absence(o.belief, o.label, policy, t)
                if o.t_disappear is None:
                    o.t_disappear = t
                self._belief(t, o, "absent")
        for j, oid in enumerate(assoc.matches):
            if oid is None:
                o = insert_new(m, obs.candidates[j], self.label_oracle, t, policy, sim.d_voxel)
                rep.inserted.append(o.id)
                self._log(t, "inserted", object_id=o.id, **{"class": o.class_name},
                          x=round(float(o.centroid[0]), 4), y=round(float(o.centroid[1]), 4))
                self._belief(t, o, "inserted")
        if self.change_detection:
            touched = set(rep.matched) | set(rep.absent) | set(rep.inserted)
            for oid in sorted(m.active):
                if oid in touched:
                    continue
                o = m.active[oid]
                nb = inject_decay(o.belief, o.label, policy, t, o.last_seen, cfg.lifecycle.theta_removal)
                if nb is not o.belief:
                    changed = nb.beta != o.belief.beta
                    o.belief = nb
                    if changed:
                        self._belief(t, o, "decay")
            for oid in apply_removal(m, cfg.lifecycle, t):
                rep.removed.append(oid)
                self._log(t, "removed", object_id=oid)
            for rec in reidentify(m, cfg.lifecycle, sim, t):
                rep.merges.append(rec)
                self._log(t, rec.kind, object_id=rec.kept_id, absorbed_id=rec.absorbed_id, rmse=rec.rmse)
        self._update_background(obs)
        return rep

    def _update_background(self, obs: Observation):
        grid = self.map.grid
        if obs.candidates:
            mask = np.zeros(grid.shape, dtype=bool)
            pts = np.vstack([c.points for c in obs.candidates])
            ix, iy = grid.cell_of(pts)
            ok = grid.inside(ix, iy)
            mask[iy[ok], ix[ok]] = True
            mask = binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
            keep_free = ~mask.reshape(-1)[obs.free_cells]
            keep_occ = ~mask.reshape(-1)[obs.occupied_cells]
            update_background(self.map, obs.free_cells[keep_free], obs.occupied_cells[keep_occ])
        else:
            update_background(self.map, obs.free_cells, obs.occupied_cells)


# ---------------------------------------------------------------- prior maps


def initial_objects(sc: Scenario) -> list:
    """Objects in place before the episode starts (scripted events not yet applied)."""
    return [o for o in sc.objects if o.present_from is not None and o.present_from <= 0]


def prior_map(sc: Scenario, cfg: Config, objects: list | None = None, t: float = 0.0) -> SemanticMap:
    """Noise-free map of the pre-episode world: known walls, free floor, full object outlines."""
    grid = sc.grid
    m = SemanticMap(grid)
    m.background.cells[:] = FREE
    m.background.cells[sc.wall_mask()] = OCCUPIED
    objs = initial_objects(sc) if objects is None else objects
    for o in objs:
        pts = densify_polygon(o.world_footprint(), sc.sensor.points_per_object)
        feat = sc.class_embeddings[o.class_name].copy()
        if o.appearance is not None:
            feat = feat + o.appearance
        feat = feat / np.linalg.norm(feat)
        cand = ObjectCandidate.from_points(pts, feat, o.class_name, truth_id=o.id)
        obj = insert_new(m, cand, sc.label_oracle, t, cfg.decay, cfg.similarity.d_voxel)
        obj.belief = initial_belief(cfg.decay, t)
    return m


def empty_map(sc: Scenario) -> SemanticMap:
    return SemanticMap(sc.grid)


# ---------------------------------------------------------------- episode


@dataclass
class EpisodeResult:
    scenario: str
    policy: str
    seed: int
    task: str
    t_end: float
    map: SemanticMap
    trajectory: list[tuple]
    events: list[dict]
    beliefs: list[dict]
    success: bool | None = None
    time_to_success: float | None = None
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    replans: int = 0
    icp_calls: int = 0
    snapshots: list[tuple[float, dict]] = field(default_factory=list)


def episode_rng(sc: Scenario, seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent sensing and policy streams derived from the scenario and episode seeds."""
    ss = np.random.SeedSequence([int(sc.rng_seed), int(seed)])
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def with_target(sc: Scenario, target_id: str) -> Scenario:
    """Copy of the scenario where only the given search target is present from the start."""
    targets = {t.target_id for t in sc.tasks}
    objs = []
    for o in sc.objects:
        if o.id == target_id:
            objs.append(replace(o, present_from=0.0))
        elif o.id in targets:
            objs.append(replace(o, present_from=None))
        else:
            objs.append(o)
    return replace(sc, objects=objs, _cache={})


class Episode:
    """Closed loop: sense at a fixed period, maintain the map, pick waypoints, plan and follow."""

    def __init__(
        self,
        sc: Scenario,
        policy: str | Policy,
        cfg: Config | None = None,
        seed: int = 0,
        budget: float = 600.0,
        task: str = "maintain",
        target_id: str | None = None,
        prior: str = "scenario",
        snapshot_every: float | None = None,
    ):
        self.cfg = cfg or Config()
        self.query = Query.parse(task)
        self.task = task
        if self.query.kind == FIND_OBJECT:
            if target_id is None:
                match = [tk for tk in sc.tasks if tk.query == self.query.text]
                if not match:
                    raise ValueError(f"no target for query {self.query.text!r}")
                target_id = match[0].target_id
            sc = with_target(sc, target_id)
        self.sc = sc
        self.target_id = target_id
        self.seed = seed
        self.budget = float(budget)
        self.snapshot_every = snapshot_every
        self.sense_rng, self.policy_rng = episode_rng(sc, seed)
        oracle = RelevancyOracle(sc.relevancy_table, self.cfg.episode.relevancy_default)
        if isinstance(policy, str):
            policy = make_policy(policy, sc.grid, self.query, self.cfg, oracle)
        self.policy = policy
        if prior == "scenario":
            m = prior_map(sc, self.cfg)
        elif prior == "empty":
            m = empty_map(sc)
        else:
            raise ValueError(f"unknown prior {prior!r}")
        self.mapper = Mapper(m, sc.sensor, self.cfg, sc.label_oracle, self.cfg.episode.change_detection)

    def run(self) -> EpisodeResult:
        cfg, sc = self.cfg, self.sc
        model = cfg.robot
        grid = sc.grid
        m = self.mapper.map
        robot = sc.robot_start
        dt = model.dt
        period = cfg.episode.sense_period
        n_steps = int(math.floor(self.budget / dt + 1e-9))
        sense_every = max(1, int(round(period / dt)))
        traj: list[tuple] = []
        waypoints: list[tuple[float, float]] = []
        path = None
        waypoint = None
        wp_deadline = 0.0
        scan_left = 0
        failures = 0
        replans = 0
        success, t_success = (False, None) if self.query.kind == FIND_OBJECT else (None, None)
        target_idx = None
        snaps = []
        next_snap = 0.0 if self.snapshot_every else math.inf
        scan_steps = int(math.ceil(2 * math.pi / (model.omega_max * dt)))
        t = 0.0
        for step in range(n_steps + 1):
            t = step * dt
            occ = None
            if step % sense_every == 0:
                obs = sense(sc, t, robot, self.sense_rng)
                rep = self.mapper.update(obs, robot, t)
                occ = project_occupancy(m, model.radius)
                if path is not None and path_blocked(occ, path):
                    path = None
                    replans += 1
                if self.query.kind == FIND_OBJECT and rep.inserted and waypoint is not None:
                    waypoint, path = None, None
            if t >= next_snap - 1e-9:
                snaps.append((t, snapshot(m, t)))
                next_snap += self.snapshot_every
            if self.query.kind == FIND_OBJECT:
                objs = world_state(sc, t)
                ids = [o.id for o in objs]
                if self.target_id in ids:
                    k = ids.index(self.target_id)
                    labels = obstacle_labels(sc, objs)
                    if search_success(robot, objs[k], sc.sensor, labels, grid, k + 1, cfg.episode.r_succ):
                        success, t_success = True, t
                        traj.append(self._row(t, robot, waypoint, replans))
                        break
            traj.append(self._row(t, robot, waypoint, replans))
            if step == n_steps:
                break
            if scan_left > 0:
                robot = Pose2D(robot.x, robot.y, robot.heading + model.omega_max * dt)
                scan_left -= 1
                continue
            if occ is None:
                occ = project_occupancy(m, model.radius)
            if waypoint is not None and (t > wp_deadline or
                                         math.hypot(waypoint[0] - robot.x, waypoint[1] - robot.y) <= cfg.explore.goal_tolerance):
                arrived = t <= wp_deadline
                waypoint, path = None, None
                if arrived and scan_steps > 0:
                    scan_left = scan_steps
                    robot = Pose2D(robot.x, robot.y, robot.heading + model.omega_max * dt)
                    scan_left -= 1
                    continue
            if waypoint is None or path is None:
                trav = traversable(occ)
                if waypoint is None:
                    reach = reachable_from(trav, grid, robot.xy)
                    try:
                        waypoint = self.policy.next_waypoint(m, robot.xy, reach, self.policy_rng)
                    except NoReachableCell:
                        log.debug("t=%.1f no reachable cell; turning in place", t)
                        robot = Pose2D(robot.x, robot.y, robot.heading + model.omega_max * dt)
                        continue
                    waypoints.append(waypoint)
                path = plan_path(occ, robot.xy, waypoint, trav, snap_cells=3)
                if path is None:
                    failures += 1
                    waypoint = None
                    self.policy.skip()
                    if failures >= cfg.explore.max_plan_attempts:
                        failures = 0
                        robot = Pose2D(robot.x, robot.y, robot.heading + model.omega_max * dt)
                    continue
                failures = 0
                length = float(np.hypot(*np.diff(np.vstack([robot.xy, path]), axis=0).T).sum())
                wp_deadline = t + 2.0 * length / model.v_max + 10.0
            robot, veto = follow_step(robot, path, model, occ)
            if veto:
                path = None
                replans += 1
        log.info("%s/%s seed=%d done at t=%.1f", sc.name, self.policy.name, self.seed, t)
        return EpisodeResult(
            scenario=sc.name, policy=self.policy.name, seed=self.seed, task=self.task, t_end=t,
            map=m, trajectory=traj, events=self.mapper.events, beliefs=self.mapper.beliefs,
            success=success, time_to_success=t_success, waypoints=waypoints, replans=replans,
            icp_calls=self.mapper.icp_calls, snapshots=snaps,
        )

    @staticmethod
    def _row(t, robot, waypoint, replans):
        wx, wy = (waypoint if waypoint is not None else (math.nan, math.nan))
        return (t, robot.x, robot.y, wrap_angle(robot.heading), wx, wy, replans)


TRAJECTORY_HEADER = ("t", "x", "y", "heading", "waypoint_x", "waypoint_y", "replans")


def survey_map(
    sc: Scenario, t: float, cfg: Config | None = None, seed: int = 0, spacing: float = 1.0, headings: int = 6
) -> SemanticMap:
    """Map rebuilt from scratch: known background, empty library, dense survey of the world at time t."""
    cfg = cfg or Config()
    grid = sc.grid
    m = prior_map(sc, cfg, objects=[])
    occ = project_occupancy(m, cfg.robot.radius)
    occ.cells[obstacle_labels(sc, world_state(sc, t)) != 0] = OCCUPIED  # survey poses avoid real objects
    trav = traversable(occ)
    reach = reachable_from(trav, grid, sc.robot_start.xy)
    rng, _ = episode_rng(sc, seed)
    mapper = Mapper(m, sc.sensor, cfg, sc.label_oracle, change_detection=True)
    step = max(1, int(round(spacing / grid.resolution)))
    off = step // 2
    for iy in range(off, grid.ny, step):
        for ix in range(off, grid.nx, step):
            if not reach[iy, ix]:
                continue
            c = grid.center(ix, iy)
            for k in range(headings):
                pose = Pose2D(float(c[0]), float(c[1]), 2 * math.pi * k / headings)
                mapper.update(sense(sc, t, pose, rng), pose, t)
    return m
