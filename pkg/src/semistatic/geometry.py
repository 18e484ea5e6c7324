"""Planar geometry helpers: poses, grid specs, hulls, rasterization and ray casting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-9


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def transform(self, local: np.ndarray) -> np.ndarray:
        """Map points from the pose's local frame into the world frame."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        rot = np.array([[c, -s], [s, c]])
        return np.asarray(local, dtype=float) @ rot.T + self.xy

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "heading": self.heading}

    @classmethod
    def from_dict(cls, d) -> "Pose2D":
        if isinstance(d, (list, tuple)):
            return cls(*d)
        return cls(float(d["x"]), float(d["y"]), float(d.get("heading", 0.0)))


@dataclass(frozen=True)
class Bounds:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] >= self.xmin - _EPS)
            & (pts[:, 0] <= self.xmax + _EPS)
            & (pts[:, 1] >= self.ymin - _EPS)
            & (pts[:, 1] <= self.ymax + _EPS)
        )

    @property
    def diagonal(self) -> float:
        return math.hypot(self.xmax - self.xmin, self.ymax - self.ymin)


@dataclass(frozen=True)
class GridSpec:
    """Regular grid; arrays are indexed ``[iy, ix]`` with shape ``(ny, nx)``."""

    x0: float
    y0: float
    resolution: float
    nx: int
    ny: int

    @classmethod
    def from_bounds(cls, bounds: Bounds, resolution: float) -> "GridSpec":
        nx = int(math.ceil((bounds.xmax - bounds.xmin) / resolution - 1e-9))
        ny = int(math.ceil((bounds.ymax - bounds.ymin) / resolution - 1e-9))
        return cls(bounds.xmin, bounds.ymin, resolution, nx, ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def cell_area(self) -> float:
        return self.resolution**2

    def cell_of(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ix = np.floor((pts[:, 0] - self.x0) / self.resolution + 1e-9).astype(np.int64)
        iy = np.floor((pts[:, 1] - self.y0) / self.resolution + 1e-9).astype(np.int64)
        return ix, iy

    def inside(self, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        return (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)

    def center(self, ix, iy) -> np.ndarray:
        ix = np.asarray(ix, dtype=float)
        iy = np.asarray(iy, dtype=float)
        return np.stack(
            [self.x0 + (ix + 0.5) * self.resolution, self.y0 + (iy + 0.5) * self.resolution],
            axis=-1,
        )

    def centers(self) -> np.ndarray:
        iy, ix = np.mgrid[0 : self.ny, 0 : self.nx]
        return self.center(ix, iy)

    def to_dict(self) -> dict:
        return {
            "x0": self.x0,
            "y0": self.y0,
            "resolution": self.resolution,
            "nx": self.nx,
            "ny": self.ny,
        }


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns CCW vertices without repetition."""
    pts = np.unique(np.round(np.asarray(points, dtype=float), 12), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 1e-15:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 1e-15:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    return hull


def points_in_convex(hull: np.ndarray, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    pts = np.atleast_2d(pts)
    if len(hull) < 3:
        return np.zeros(len(pts), dtype=bool)
    inside = np.ones(len(pts), dtype=bool)
    for k in range(len(hull)):
        a, b = hull[k], hull[(k + 1) % len(hull)]
        cr = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        inside &= cr >= -tol
    return inside


def densify_polygon(vertices: np.ndarray, n: int) -> np.ndarray:
    """Sample ``n`` points uniformly by arc length along the closed hull of ``vertices``."""
    hull = convex_hull(vertices)
    if len(hull) < 2:
        return np.repeat(hull[:1], n, axis=0)
    closed = np.vstack([hull, hull[:1]])
    seg = np.diff(closed, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    s = np.arange(n) * (cum[-1] / n)
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[k]) / np.where(lengths[k] > 0, lengths[k], 1.0)
    return closed[k] + seg[k] * frac[:, None]


def rasterize_points(grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    if len(pts) == 0:
        return mask
    ix, iy = grid.cell_of(pts)
    ok = grid.inside(ix, iy)
    mask[iy[ok], ix[ok]] = True
    return mask


def rasterize_hull(grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    """Cells whose centers fall inside the convex hull, plus cells holding any point."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    mask = rasterize_points(grid, pts)
    hull = convex_hull(pts)
    if len(hull) == 2:
        for c in supercover(grid, hull[0], hull[1]):
            mask[c[1], c[0]] = True
    elif len(hull) >= 3:
        ix0, iy0 = grid.cell_of(hull.min(axis=0))
        ix1, iy1 = grid.cell_of(hull.max(axis=0))
        ix0, iy0 = max(ix0[0], 0), max(iy0[0], 0)
        ix1, iy1 = min(ix1[0], grid.nx - 1), min(iy1[0], grid.ny - 1)
        if ix1 >= ix0 and iy1 >= iy0:
            iy, ix = np.mgrid[iy0 : iy1 + 1, ix0 : ix1 + 1]
            c = grid.center(ix.ravel(), iy.ravel())
            inside = points_in_convex(hull, c)
            mask[iy.ravel()[inside], ix.ravel()[inside]] = True
    return mask


def supercover(grid: GridSpec, p0, p1) -> list[tuple[int, int]]:
    """All cells ``(ix, iy)`` touched by the segment p0-p1 (grid traversal)."""
    x0, y0 = (p0[0] - grid.x0) / grid.resolution, (p0[1] - grid.y0) / grid.resolution
    x1, y1 = (p1[0] - grid.x0) / grid.resolution, (p1[1] - grid.y0) / grid.resolution
    ix, iy = int(math.floor(x0)), int(math.floor(y0))
    ex, ey = int(math.floor(x1)), int(math.floor(y1))
    dx, dy = x1 - x0, y1 - y0
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    tdx = abs(1.0 / dx) if dx != 0 else math.inf
    tdy = abs(1.0 / dy) if dy != 0 else math.inf
    tx = ((ix + 1 - x0) if dx > 0 else (x0 - ix)) * tdx if dx != 0 else math.inf
    ty = ((iy + 1 - y0) if dy > 0 else (y0 - iy)) * tdy if dy != 0 else math.inf
    cells = [(ix, iy)]
    n = abs(ex - ix) + abs(ey - iy)
    for _ in range(n + 2):
        if (ix, iy) == (ex, ey):
            break
        if abs(tx - ty) < 1e-12:
            # passing exactly through a corner touches both side cells
            cells.append((ix + sx, iy))
            cells.append((ix, iy + sy))
            ix += sx
            iy += sy
            tx += tdx
            ty += tdy
        elif tx < ty:
            ix += sx
            tx += tdx
        else:
            iy += sy
            ty += tdy
        cells.append((ix, iy))
    return cells


def segment_clear(blocked: np.ndarray, grid: GridSpec, p0, p1) -> bool:
    for ix, iy in supercover(grid, p0, p1):
        if 0 <= ix < grid.nx and 0 <= iy < grid.ny and blocked[iy, ix]:
            return False
    return True


def line_of_sight(
    origin: np.ndarray,
    pts: np.ndarray,
    labels: np.ndarray,
    grid: GridSpec,
    own: np.ndarray | int = 0,
    step: float | None = None,
    end_tolerance: float | None = None,
) -> np.ndarray:
    """Boolean mask of points whose ray from ``origin`` crosses no blocking cell.

    ``labels`` holds 0 for see-through cells, -1 for static obstacles and k >= 1
    for object k.  A ray to a point owned by object k is not blocked by cells of k.
    The last ``end_tolerance`` meters (default one cell) are not checked, so a
    ray grazing the corner cell of the target's own outline still arrives.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = len(pts)
    if n == 0:
        return np.zeros(0, dtype=bool)
    own = np.broadcast_to(np.asarray(own), (n,))
    step = grid.resolution * 0.5 if step is None else step
    tol = grid.resolution if end_tolerance is None else end_tolerance
    d = pts - origin
    dist = np.hypot(d[:, 0], d[:, 1])
    m = int(math.ceil(dist.max() / step)) if dist.max() > 0 else 0
    if m == 0:
        return np.ones(n, dtype=bool)
    k = np.arange(1, m + 1) * step
    valid = k[None, :] < dist[:, None] - tol - 1e-9
    frac = np.divide(k[None, :], dist[:, None], out=np.zeros((n, m)), where=dist[:, None] > 0)
    sx = origin[0] + d[:, 0:1] * frac
    sy = origin[1] + d[:, 1:2] * frac
    ix = np.floor((sx - grid.x0) / grid.resolution + 1e-9).astype(np.int64)
    iy = np.floor((sy - grid.y0) / grid.resolution + 1e-9).astype(np.int64)
    inside = grid.inside(ix, iy) & valid
    lab = np.zeros((n, m), dtype=labels.dtype)
    lab[inside] = labels[iy[inside], ix[inside]]
    hit = (lab != 0) & (lab != own[:, None]) & inside
    return ~hit.any(axis=1)


def in_view(robot: Pose2D, pts: np.ndarray, d_max: float, fov_half: float) -> np.ndarray:
    pts = np.atleast_2d(pts)
    d = pts - robot.xy
    rng = np.hypot(d[:, 0], d[:, 1])
    bearing = np.arctan2(d[:, 1], d[:, 0]) - robot.heading
    bearing = (bearing + np.pi) % (2 * np.pi) - np.pi
    return (rng <= d_max) & (np.abs(bearing) <= fov_half + 1e-12)


def voxel_downsample(pts: np.ndarray, size: float) -> np.ndarray:
    """Replace the points in each ``size`` voxel by their centroid (deterministic order)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if len(pts) == 0:
        return pts
    keys = np.floor(pts / size + 1e-9).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    sums = np.zeros((len(uniq), 2))
    np.add.at(sums, inv, pts)
    counts = np.bincount(inv, minlength=len(uniq))
    return sums / counts[:, None]


def bbox_of(pts: np.ndarray) -> tuple[float, float, float, float]:
    pts = np.atleast_2d(pts)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
