"""Waypoint sampling against a priority map, A* planning and a kinematic path follower."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt, label

from .geometry import GridSpec, Pose2D, in_view, line_of_sight, segment_clear, wrap_angle
from .mapping import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, SemanticMap
from .priority import PriorityGrid
from .world import GroundTruthObject, SensorSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RobotModel:
    v_max: float = 0.4
    omega_max: float = 1.2
    radius: float = 0.2
    dt: float = 0.5
    lookahead: float = 0.5
    heading_tolerance: float = math.pi / 3

    def __post_init__(self):
        if min(self.v_max, self.omega_max, self.radius, self.dt, self.lookahead) <= 0:
            raise ValueError("robot model parameters must be positive")


# ---------------------------------------------------------------- occupancy


def project_occupancy(m: SemanticMap, inflation_radius: float = 0.0) -> OccupancyGrid:
    """Background plus active-object footprints flattened to a tri-state grid."""
    cells = m.background.cells.copy()
    flat = cells.reshape(-1)
    for o in m.active.values():
        flat[o.cells(m.grid)] = OCCUPIED
    return OccupancyGrid(m.grid, cells, inflation_radius)


def traversable(occ: OccupancyGrid) -> np.ndarray:
    """Known-free cells farther than the inflation radius from any occupied cell."""
    free = occ.cells == FREE
    occupied = occ.cells == OCCUPIED
    if occ.inflation_radius <= 0 or not occupied.any():
        return free
    dist = distance_transform_edt(~occupied) * occ.grid.resolution
    return free & (dist > occ.inflation_radius)


def reachable_from(trav: np.ndarray, grid: GridSpec, xy) -> np.ndarray:
    """Traversable cells in the 8-connected component holding (or nearest to) ``xy``."""
    cell = snap_to(trav, grid, xy, max_cells=10)
    if cell is None:
        return np.zeros_like(trav)
    lab, _ = label(trav, structure=np.ones((3, 3), dtype=int))
    return lab == lab[cell[1], cell[0]]


def snap_to(trav: np.ndarray, grid: GridSpec, xy, max_cells: int = 1) -> tuple[int, int] | None:
    ix, iy = (int(v[0]) for v in grid.cell_of(np.asarray(xy, float)))
    best, best_d = None, math.inf
    for dy in range(-max_cells, max_cells + 1):
        for dx in range(-max_cells, max_cells + 1):
            jx, jy = ix + dx, iy + dy
            if 0 <= jx < grid.nx and 0 <= jy < grid.ny and trav[jy, jx]:
                d = dx * dx + dy * dy
                if d < best_d:
                    best, best_d = (jx, jy), d
    return best


# ---------------------------------------------------------------- sampling


@dataclass
class WaypointHistory:
    grid: GridSpec
    bandwidth: float = 0.5
    forgetting: float = 0.99
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    density: np.ndarray | None = None
    weight: float = 0.0

    def __post_init__(self):
        if self.density is None:
            self.density = np.zeros(self.grid.shape)

    def copy(self) -> "WaypointHistory":
        return WaypointHistory(
            self.grid, self.bandwidth, self.forgetting, list(self.waypoints), self.density.copy(), self.weight
        )

    def deposit(self, xy) -> None:
        """Exponentially-forgetting kernel density update with one new waypoint."""
        k = gaussian_blob(self.grid, xy, self.bandwidth)
        old = self.forgetting * self.weight
        self.density = (old * self.density + k) / (old + 1.0)
        self.weight = old + 1.0

    def commit(self, xy) -> None:
        self.waypoints.append((float(xy[0]), float(xy[1])))
        self.deposit(xy)


def gaussian_blob(grid: GridSpec, xy, bandwidth: float) -> np.ndarray:
    """Normalized Gaussian kernel on the grid, truncated at 4 bandwidths."""
    out = np.zeros(grid.shape)
    r = int(math.ceil(4 * bandwidth / grid.resolution))
    ix, iy = (int(v[0]) for v in grid.cell_of(np.asarray(xy, float)))
    x0, x1 = max(ix - r, 0), min(ix + r + 1, grid.nx)
    y0, y1 = max(iy - r, 0), min(iy + r + 1, grid.ny)
    if x0 >= x1 or y0 >= y1:
        return out
    cy, cx = np.mgrid[y0:y1, x0:x1]
    c = grid.center(cx, cy)
    d2 = (c[..., 0] - xy[0]) ** 2 + (c[..., 1] - xy[1]) ** 2
    out[y0:y1, x0:x1] = np.exp(-0.5 * d2 / bandwidth**2)
    s = out.sum()
    if s > 0:
        out /= s * grid.cell_area
    return out


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p.ravel())
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(cdf) - 1))


def sample_next_waypoint(
    f_task: PriorityGrid,
    hist: WaypointHistory,
    robot_xy,
    M: int,
    occ: OccupancyGrid | None,
    rng: np.random.Generator,
    allowed: np.ndarray | None = None,
    commit: bool = True,
) -> tuple[float, float]:
    """Draw M candidates sequentially from the clipped error distribution; keep the nearest."""
    if M < 1:
        raise ValueError("M must be >= 1")
    grid = f_task.grid
    if allowed is None:
        allowed = traversable(occ) if occ is not None else np.ones(grid.shape, dtype=bool)
    if not allowed.any():
        raise ValueError("no free cell to sample from")
    work = hist.copy()
    candidates = []
    for _ in range(M):
        err = np.clip(f_task.values - work.density, 0.0, None) * allowed
        if err.sum() <= 0:
            log.debug("error distribution vanished; sampling the priority map directly")
            err = f_task.values * allowed
            if err.sum() <= 0:
                err = allowed.astype(float)
        k = _draw(err, rng)
        iy, ix = divmod(k, grid.nx)
        w = grid.center(ix, iy)
        candidates.append((float(w[0]), float(w[1])))
        work.deposit(w)
    rx, ry = float(robot_xy[0]), float(robot_xy[1])
    best = min(candidates, key=lambda w: (w[0] - rx) ** 2 + (w[1] - ry) ** 2)
    if commit:
        hist.commit(best)
    return best


def total_variation(p: np.ndarray, q: np.ndarray, cell_area: float) -> float:
    return 0.5 * float(np.abs(p - q).sum() * cell_area)


# ---------------------------------------------------------------- planning

_MOVES = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, math.sqrt(2)), (1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)), (-1, -1, math.sqrt(2))]


def astar(trav: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> list[tuple[int, int]] | None:
    """8-connected A* over ``trav`` (no corner cutting), Euclidean heuristic."""
    ny, nx = trav.shape
    ok = trav.ravel().tolist()
    s = start[1] * nx + start[0]
    g = goal[1] * nx + goal[0]
    if not ok[s] or not ok[g]:
        return None
    gx, gy = goal
    inf = math.inf
    gscore = [inf] * (nx * ny)
    gscore[s] = 0.0
    came = [-2] * (nx * ny)
    came[s] = -1
    closed = bytearray(nx * ny)
    hypot = math.hypot
    push, pop = heapq.heappush, heapq.heappop
    heap = [(hypot(start[0] - gx, start[1] - gy), 0.0, s)]
    while heap:
        _, gc, cur = pop(heap)
        if closed[cur]:
            continue
        if cur == g:
            break
        closed[cur] = 1
        cy, cx = divmod(cur, nx)
        for dx, dy, cost in _MOVES:
            x, y = cx + dx, cy + dy
            if x < 0 or y < 0 or x >= nx or y >= ny:
                continue
            n = y * nx + x
            if not ok[n] or closed[n]:
                continue
            if dx and dy and not (ok[cy * nx + x] and ok[y * nx + cx]):
                continue
            ng = gc + cost
            if ng < gscore[n]:
                gscore[n] = ng
                came[n] = cur
                push(heap, (ng + hypot(x - gx, y - gy), ng, n))
    if came[g] == -2:
        return None
    path = []
    cur = g
    while cur != -1:
        cy, cx = divmod(cur, nx)
        path.append((cx, cy))
        cur = came[cur]
    return path[::-1]


def prune_path(pts: np.ndarray, blocked: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Greedy line-of-sight shortcutting of a cell-center polyline."""
    if len(pts) <= 2:
        return pts
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = i + 1
        while j + 1 < len(pts) and segment_clear(blocked, grid, pts[i], pts[j + 1]):
            j += 1
        out.append(pts[j])
        i = j
    return np.array(out)


def plan_path(
    occ: OccupancyGrid, start, goal, trav: np.ndarray | None = None, snap_cells: int = 1
) -> np.ndarray | None:
    """A* from start to goal on known-free inflated space; None when unreachable."""
    grid = occ.grid
    trav = traversable(occ) if trav is None else trav
    s = snap_to(trav, grid, start, max_cells=snap_cells)
    gx, gy = (int(v[0]) for v in grid.cell_of(np.asarray(goal, float)))
    if s is None or not (0 <= gx < grid.nx and 0 <= gy < grid.ny) or not trav[gy, gx]:
        return None
    if s == (gx, gy):
        return grid.center(gx, gy)[None, :]
    cells = astar(trav, s, (gx, gy))
    if cells is None:
        return None
    arr = np.array(cells)
    pts = grid.center(arr[:, 0], arr[:, 1])
    return prune_path(pts, ~trav, grid)


def path_blocked(occ: OccupancyGrid, path: np.ndarray, from_index: int = 0) -> bool:
    occupied = occ.cells == OCCUPIED
    for a, b in zip(path[from_index:-1], path[from_index + 1 :]):
        if not segment_clear(occupied, occ.grid, a, b):
            return True
    return False


# ---------------------------------------------------------------- following


def _closest_on_path(path: np.ndarray, xy: np.ndarray) -> tuple[int, float]:
    """(segment index, arc parameter in meters along that segment) of the closest path point."""
    if len(path) == 1:
        return 0, 0.0
    a = path[:-1]
    d = path[1:] - a
    L2 = np.maximum((d**2).sum(axis=1), 1e-12)
    u = np.clip(((xy - a) * d).sum(axis=1) / L2, 0.0, 1.0)
    proj = a + d * u[:, None]
    dist = np.hypot(*(proj - xy).T)
    k = int(np.argmin(dist))
    return k, float(u[k] * math.sqrt(L2[k]))


def lookahead_point(path: np.ndarray, xy, distance: float) -> np.ndarray:
    xy = np.asarray(xy, float)
    if len(path) == 1:
        return path[0]
    k, s = _closest_on_path(path, xy)
    remaining = distance
    while k < len(path) - 1:
        seg = path[k + 1] - path[k]
        L = float(np.hypot(*seg))
        if s + remaining <= L:
            return path[k] + seg * ((s + remaining) / max(L, 1e-12))
        remaining -= L - s
        s = 0.0
        k += 1
    return path[-1]


def follow_step(
    robot: Pose2D, path: np.ndarray, model: RobotModel, occ: OccupancyGrid | None = None
) -> tuple[Pose2D, bool]:
    """One pure-pursuit step; returns the new pose and a replan flag (set on a collision veto)."""
    if len(path) == 0:
        raise ValueError("empty path")
    target = lookahead_point(path, robot.xy, model.lookahead)
    goal = path[-1]
    to_goal = float(np.hypot(*(goal - robot.xy)))
    vec = target - robot.xy
    dist = float(np.hypot(*vec))
    if dist < 1e-9:
        return robot, False
    alpha = wrap_angle(math.atan2(vec[1], vec[0]) - robot.heading)
    dt = model.dt
    if abs(alpha) > model.heading_tolerance:
        v = 0.0
        omega = max(-model.omega_max, min(model.omega_max, alpha / dt))
    else:
        v = min(model.v_max, to_goal / dt)
        omega = max(-model.omega_max, min(model.omega_max, 2.0 * v * math.sin(alpha) / max(dist, 1e-9)))
        # keep turning radius small enough to reach a target right beside us
        if abs(omega) >= model.omega_max - 1e-12 and abs(alpha) > 1e-9:
            v = min(v, abs(omega) * dist / (2.0 * abs(math.sin(alpha))))
    mid = robot.heading + 0.5 * omega * dt
    nx = robot.x + v * math.cos(mid) * dt
    ny = robot.y + v * math.sin(mid) * dt
    new = Pose2D(nx, ny, robot.heading + omega * dt)
    if occ is not None and v > 0:
        grid = occ.grid
        ix, iy = (int(c[0]) for c in grid.cell_of(np.array([nx, ny])))
        cx, cy = (int(c[0]) for c in grid.cell_of(robot.xy))
        if (ix, iy) != (cx, cy) and grid.inside(np.array(ix), np.array(iy)) and occ.cells[iy, ix] == OCCUPIED:
            return robot, True
    return new, False


# ---------------------------------------------------------------- success


def search_success(
    robot: Pose2D,
    target: GroundTruthObject,
    sensor: SensorSpec,
    labels: np.ndarray | None = None,
    grid: GridSpec | None = None,
    own: int = 0,
    r_succ: float = 1.5,
) -> bool:
    """Robot is within r_succ of the target centroid, facing it, with a clear line of sight."""
    c = target.centroid
    if not in_view(robot, c[None, :], r_succ, sensor.fov_half_angle)[0]:
        return False
    if labels is None:
        return True
    return bool(line_of_sight(robot.xy, c[None, :], labels, grid, own=own)[0])
