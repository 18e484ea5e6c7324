"""Believed scene: object library, missing library, background grid, and candidate association."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    GridSpec,
    Pose2D,
    bbox_of,
    in_view,
    line_of_sight,
    rasterize_hull,
    voxel_downsample,
)
from .icp import RigidTransform, icp_align
from .stationarity import DecayPolicy, StationarityBelief, initial_belief
from .world import ObjectCandidate, SensorSpec

log = logging.getLogger(__name__)

UNKNOWN, FREE, OCCUPIED = -1, 0, 1


@dataclass(frozen=True)
class SimilarityConfig:
    tau_expected: float = 0.3
    tau_geo: float = 0.4
    tau_sem: float = 0.8
    d_voxel: float = 0.05
    d_icp: float = 0.1
    d_max: float | None = None  # None: use the sensor range
    icp_max_iters: int = 30
    icp_tol: float = 1e-4

    def __post_init__(self):
        for name in ("tau_expected", "tau_geo", "tau_sem"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.d_voxel <= 0 or self.d_icp <= 0:
            raise ValueError("d_voxel and d_icp must be positive")


@dataclass
class MapObject:
    id: int
    points: np.ndarray
    feature: np.ndarray
    class_name: str
    label: str
    t_first: float
    last_seen: float
    belief: StationarityBelief
    t_disappear: float | None = None
    n_obs: int = 1
    _cells: np.ndarray | None = field(default=None, repr=False)
    _bbox: tuple | None = field(default=None, repr=False)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def pose(self) -> Pose2D:
        c = self.centroid
        return Pose2D(float(c[0]), float(c[1]), 0.0)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        if self._bbox is None:
            self._bbox = bbox_of(self.points)
        return self._bbox

    @property
    def expected_v(self) -> float:
        return self.belief.alpha / (self.belief.alpha + self.belief.beta)

    def set_points(self, pts: np.ndarray):
        self.points = np.atleast_2d(np.asarray(pts, dtype=float))
        self._cells = None
        self._bbox = None

    def cells(self, grid: GridSpec) -> np.ndarray:
        """Flat indices of the grid cells under the object's convex hull (cached)."""
        if self._cells is None:
            self._cells = np.flatnonzero(rasterize_hull(grid, self.points))
        return self._cells


@dataclass
class OccupancyGrid:
    grid: GridSpec
    cells: np.ndarray  # int8: UNKNOWN / FREE / OCCUPIED
    inflation_radius: float = 0.0

    @classmethod
    def unknown(cls, grid: GridSpec) -> "OccupancyGrid":
        return cls(grid, np.full(grid.shape, UNKNOWN, dtype=np.int8))

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.grid, self.cells.copy(), self.inflation_radius)


@dataclass
class SemanticMap:
    grid: GridSpec
    active: dict[int, MapObject] = field(default_factory=dict)
    missing: dict[int, MapObject] = field(default_factory=dict)
    background: OccupancyGrid | None = None
    next_id: int = 1
    icp_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.background is None:
            self.background = OccupancyGrid.unknown(self.grid)

    def get(self, oid: int) -> MapObject:
        if oid in self.active:
            return self.active[oid]
        if oid in self.missing:
            return self.missing[oid]
        raise KeyError(f"unknown object id {oid}")

    def check(self):
        shared = set(self.active) & set(self.missing)
        if shared:
            raise AssertionError(f"ids in both libraries: {sorted(shared)}")


@dataclass
class ExpectedObject:
    obj: MapObject
    visible: np.ndarray  # the believed visible subset of obj.points

    @property
    def fraction(self) -> float:
        return len(self.visible) / len(self.obj.points)


# ---------------------------------------------------------------- expectation


def believed_labels(m: SemanticMap, objs: list[MapObject] | None = None) -> np.ndarray:
    labels = np.zeros(m.grid.shape, dtype=np.int32)
    labels[m.background.cells == OCCUPIED] = -1
    flat = labels.reshape(-1)
    # object cells win: background hits on an object's own outline must not hide it
    objs = list(objs if objs is not None else m.active.values())
    for o in objs:
        flat[o.cells(m.grid)] = o.id
    # background hits touching an outline are that object seen at cell granularity
    nx, ny = m.grid.nx, m.grid.ny
    for o in objs:
        iy, ix = np.divmod(o.cells(m.grid), nx)
        jx = (ix[:, None] + _RING[None, :, 0]).ravel()
        jy = (iy[:, None] + _RING[None, :, 1]).ravel()
        ok = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
        idx = jy[ok] * nx + jx[ok]
        idx = idx[flat[idx] == -1]
        flat[idx] = o.id
    return labels


_RING = np.array([(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dx or dy])


def visible_subsets(
    m: SemanticMap, robot: Pose2D, sensor: SensorSpec, cfg: SimilarityConfig
) -> list[ExpectedObject]:
    """Visible point subset of every active object that could be in view."""
    d_max = sensor.max_range if cfg.d_max is None else min(cfg.d_max, sensor.max_range)
    near = []
    for o in sorted(m.active.values(), key=lambda o: o.id):
        x0, y0, x1, y1 = o.bbox
        dx = max(x0 - robot.x, 0.0, robot.x - x1)
        dy = max(y0 - robot.y, 0.0, robot.y - y1)
        if dx * dx + dy * dy <= d_max * d_max:
            near.append(o)
    if not near:
        return []
    labels = believed_labels(m, near)
    out = []
    for o in near:
        mask = in_view(robot, o.points, d_max, sensor.fov_half_angle)
        if mask.any():
            mask[mask] = line_of_sight(robot.xy, o.points[mask], labels, m.grid, own=o.id)
        out.append(ExpectedObject(o, o.points[mask]))
    return out


def expected_objects(
    m: SemanticMap, robot: Pose2D, sensor: SensorSpec, cfg: SimilarityConfig
) -> list[ExpectedObject]:
    """Active objects whose visible point fraction reaches tau_expected."""
    return [
        e for e in visible_subsets(m, robot, sensor, cfg)
        if len(e.visible) > 0 and e.fraction >= cfg.tau_expected
    ]


# ---------------------------------------------------------------- similarity


def semantic_similarity(a, b) -> float:
    """Cosine similarity of two feature vectors (candidates or objects accepted)."""
    fa = np.asarray(getattr(a, "feature", a), dtype=float)
    fb = np.asarray(getattr(b, "feature", b), dtype=float)
    na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
    if na == 0 or nb == 0:
        raise ValueError("zero-norm feature")
    return float(fa @ fb / (na * nb))


def geometric_similarity(a, b_visible: np.ndarray, cfg: SimilarityConfig) -> float:
    """Fraction of candidate points within d_voxel of the visible object points."""
    pts = np.atleast_2d(getattr(a, "points", a))
    b_visible = np.asarray(b_visible, dtype=float).reshape(-1, 2)
    if len(b_visible) == 0 or len(pts) == 0:
        return 0.0
    dist, _ = cKDTree(b_visible).query(pts, distance_upper_bound=cfg.d_voxel * (1 + 1e-9))
    hits = int(np.count_nonzero(dist <= cfg.d_voxel * (1 + 1e-9)))
    return min(1.0, hits / min(len(pts), len(b_visible)))


# ---------------------------------------------------------------- association


@dataclass
class Association:
    matches: list[int | None]
    stage: list[int | None]  # 1 = geometric step, 2 = semantic ICP
    rmse: list[float | None]
    icp_calls: int = 0


def semantic_icp(
    candidate: ObjectCandidate, pool: list[MapObject], cfg: SimilarityConfig, cache: dict | None = None
) -> tuple[int | None, float | None, bool]:
    """Best-semantic object verified by one ICP call: (id or None, rmse, icp_called).

    ``cache`` memoizes registrations between map objects; keys include both
    observation counts so any geometry update invalidates them.
    """
    if not pool:
        return None, None, False
    sims = [semantic_similarity(candidate, o) for o in pool]
    best = int(np.argmax(sims))
    if sims[best] <= cfg.tau_sem:
        return None, None, False
    obj = pool[best]
    if len(candidate.points) < 3 or len(obj.points) < 3:
        return None, None, False
    key = None
    if cache is not None and isinstance(candidate, MapObject):
        key = (candidate.id, candidate.n_obs, obj.id, obj.n_obs)
    if key is not None and key in cache:
        rmse = cache[key]
    else:
        _, rmse = icp_align(candidate.points, obj.points, cfg.icp_max_iters, cfg.icp_tol)
        if key is not None:
            cache[key] = rmse
    if rmse <= cfg.d_icp:
        return obj.id, rmse, True
    return None, rmse, True


def associate(
    candidates: list[ObjectCandidate],
    expected: list[ExpectedObject],
    cfg: SimilarityConfig,
    semantic_step: bool = True,
) -> Association:
    """Two-step candidate-to-object association (geometric first, then semantic ICP)."""
    n = len(candidates)
    result = Association([None] * n, [None] * n, [None] * n)
    order = sorted(range(n), key=lambda j: (-len(candidates[j].points), j))
    unmatched = list(expected)
    leftover = []
    for j in order:
        cand = candidates[j]
        if unmatched:
            geo = [geometric_similarity(cand, e.visible, cfg) for e in unmatched]
            best = int(np.argmax(geo))
            e = unmatched[best]
            if geo[best] > cfg.tau_geo and semantic_similarity(cand, e.obj) > cfg.tau_sem:
                result.matches[j] = e.obj.id
                result.stage[j] = 1
                if len(cand.points) < 5:
                    log.debug("step-1 match with a %d-point candidate", len(cand.points))
                unmatched.pop(best)
                continue
        leftover.append(j)
    if not semantic_step:
        return result
    pool = [e.obj for e in unmatched]
    for j in leftover:
        oid, rmse, called = semantic_icp(candidates[j], pool, cfg)
        result.icp_calls += int(called)
        result.rmse[j] = rmse
        if oid is not None:
            result.matches[j] = oid
            result.stage[j] = 2
            pool = [o for o in pool if o.id != oid]
    return result


# ---------------------------------------------------------------- library updates


def fuse_features(a: np.ndarray, b: np.ndarray, n_a: int = 1) -> np.ndarray:
    f = (a * n_a + b) / (n_a + 1)
    norm = np.linalg.norm(f)
    return b.copy() if norm == 0 else f / norm


def merge(
    m: SemanticMap,
    obj_id: int,
    candidate: ObjectCandidate,
    t: float,
    replaced: np.ndarray | None = None,
    d_voxel: float = 0.05,
) -> MapObject:
    """Fold a matched candidate into an active object.

    ``replaced`` is the subset of stored points the candidate re-observes; it is
    swapped for the candidate points while unseen stored points are kept.  With
    ``replaced=None`` the whole cloud is replaced (the object moved).
    """
    if obj_id not in m.active:
        raise KeyError(f"unknown active object id {obj_id}")
    o = m.active[obj_id]
    if replaced is None or len(replaced) >= len(o.points):
        pts = candidate.points
    elif len(replaced) == 0:
        pts = np.vstack([candidate.points, o.points])
    else:
        d, _ = cKDTree(replaced).query(o.points)
        pts = np.vstack([candidate.points, o.points[d > 1e-12]])
    o.set_points(voxel_downsample(pts, d_voxel))
    o.feature = fuse_features(o.feature, candidate.feature, o.n_obs)
    o.n_obs += 1
    o.last_seen = t
    o.t_disappear = None
    return o


def insert_new(
    m: SemanticMap,
    candidate: ObjectCandidate,
    label_oracle: Callable[[str], str] | dict,
    t: float,
    policy: DecayPolicy | None = None,
    d_voxel: float = 0.05,
) -> MapObject:
    if isinstance(label_oracle, dict):
        label = label_oracle.get(candidate.class_name, "dynamic")
    else:
        label = label_oracle(candidate.class_name)
    if label not in ("static", "dynamic"):
        label = "dynamic"
    obj = MapObject(
        id=m.next_id,
        points=voxel_downsample(candidate.points, d_voxel),
        feature=np.asarray(candidate.feature, dtype=float).copy(),
        class_name=candidate.class_name,
        label=label,
        t_first=t,
        last_seen=t,
        belief=initial_belief(policy or DecayPolicy(), t),
    )
    m.active[obj.id] = obj
    m.next_id += 1
    return obj


def update_background(m: SemanticMap, free_cells: np.ndarray, occupied_cells: np.ndarray) -> None:
    """Latest observation wins; callers drop cells covered by candidate footprints."""
    flat = m.background.cells.reshape(-1)
    flat[np.asarray(free_cells, dtype=np.int64)] = FREE
    flat[np.asarray(occupied_cells, dtype=np.int64)] = OCCUPIED


def register_into(k: MapObject, i: MapObject, cfg: SimilarityConfig) -> RigidTransform:
    tf, _ = icp_align(k.points, i.points, cfg.icp_max_iters, cfg.icp_tol)
    return tf
