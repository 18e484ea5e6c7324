"""Task-conditioned exploration priority maps built from per-object smoothed footprints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .geometry import GridSpec, rasterize_hull
from .mapping import FREE, OCCUPIED, MapObject, SemanticMap
from .stationarity import CLIP_EPS

log = logging.getLogger(__name__)

BETA_A, BETA_B = 5.0, 6.0
MAINTENANCE, FIND_OBJECT = "maintenance", "find_object"


@dataclass(frozen=True)
class SigmaConfig:
    v_search: float = 0.6
    r_search: float = 0.2
    sigma_measure: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.v_search < 1.0:
            raise ValueError("v_search must lie in (0, 1)")
        if not self.r_search > self.sigma_measure > 0:
            raise ValueError("need r_search > sigma_measure > 0")


@dataclass(frozen=True)
class Query:
    kind: str = MAINTENANCE
    text: str = ""

    def __post_init__(self):
        if self.kind not in (MAINTENANCE, FIND_OBJECT):
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.kind == FIND_OBJECT and not self.text:
            raise ValueError("find_object queries need text")

    @classmethod
    def parse(cls, task: str) -> "Query":
        """``maintain`` or ``find:<query text>``."""
        if task in ("maintain", "maintenance"):
            return cls(MAINTENANCE)
        if task.startswith("find:"):
            return cls(FIND_OBJECT, task[5:].strip())
        raise ValueError(f"unknown task {task!r}; use 'maintain' or 'find:<text>'")


@dataclass
class RelevancyOracle:
    table: dict[str, dict[str, float]] = field(default_factory=dict)
    default: float = 0.1

    def score(self, query: str, class_name: str) -> float:
        return float(self.table.get(query, {}).get(class_name, self.default))


@dataclass
class PriorityGrid:
    grid: GridSpec
    values: np.ndarray

    @property
    def resolution(self) -> float:
        return self.grid.resolution

    @property
    def origin(self) -> tuple[float, float]:
        return (self.grid.x0, self.grid.y0)

    def total(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)

    def normalized(self) -> "PriorityGrid":
        s = self.values.sum()
        if s <= 0:
            raise ValueError("cannot normalize an all-zero priority grid")
        return PriorityGrid(self.grid, self.values / (s * self.grid.cell_area))


def occupancy_shadow(obj: MapObject | np.ndarray, grid: GridSpec) -> np.ndarray:
    """Binary mask of the cells under the convex hull of the object's points."""
    pts = np.atleast_2d(getattr(obj, "points", obj))
    ix, iy = grid.cell_of(pts)
    if not grid.inside(ix, iy).all():
        raise ValueError("object out of bounds")
    return rasterize_hull(grid, pts)


def sigma_of_v(v: float, cfg: SigmaConfig) -> float:
    if v <= 0:
        raise ValueError("stationarity must be positive")
    scale = (1.0 / v - 1.0) / (1.0 / cfg.v_search - 1.0)
    return scale * (cfg.r_search - cfg.sigma_measure) + cfg.sigma_measure


def smoothing_sigma(v: float, cfg: SigmaConfig, theta_removal: float, cap: float) -> float:
    """sigma_of_v with v clamped above theta_removal and the result capped."""
    return min(sigma_of_v(max(v, theta_removal + CLIP_EPS), cfg), cap)


def per_object_map(
    obj: MapObject, cfg: SigmaConfig, grid: GridSpec, theta_removal: float = 0.6, cap: float | None = None
) -> PriorityGrid:
    cap = math.hypot(grid.nx, grid.ny) * grid.resolution if cap is None else cap
    sigma = smoothing_sigma(obj.expected_v, cfg, theta_removal, cap)
    shadow = occupancy_shadow(obj, grid)
    s_cells = sigma / grid.resolution
    # blur only a window around the footprint; outside it the result is exactly 0
    pad = int(4.0 * s_cells + 0.5) + 1
    rows = np.flatnonzero(shadow.any(axis=1))
    cols = np.flatnonzero(shadow.any(axis=0))
    r0, r1 = max(rows[0] - pad, 0), min(rows[-1] + pad + 1, grid.ny)
    c0, c1 = max(cols[0] - pad, 0), min(cols[-1] + pad + 1, grid.nx)
    values = np.zeros(grid.shape)
    values[r0:r1, c0:c1] = smooth(shadow[r0:r1, c0:c1].astype(float), s_cells)
    return PriorityGrid(grid, values).normalized()


def smooth(mask: np.ndarray, sigma_cells: float) -> np.ndarray:
    """Zero-padded isotropic Gaussian blur truncated at 4 sigma."""
    return gaussian_filter(mask, sigma=sigma_cells, mode="constant", cval=0.0, truncate=4.0)


def beta_pdf_ratio(v: float, a: float = BETA_A, b: float = BETA_B) -> float:
    """Beta(a, b) density at v divided by its value at the mode."""
    if v <= 0.0 or v >= 1.0:
        return 0.0
    mode = (a - 1.0) / (a + b - 2.0)
    return float(math.exp((a - 1.0) * math.log(v / mode) + (b - 1.0) * math.log((1.0 - v) / (1.0 - mode))))


def maintenance_relevancy(e_v: float) -> float:
    return beta_pdf_ratio(e_v)


def search_relevancy(query: Query, obj: MapObject, oracle: RelevancyOracle) -> float:
    if query.kind != FIND_OBJECT:
        raise ValueError("search relevancy needs a find_object query")
    return oracle.score(query.text, obj.class_name)


def relevancy(query: Query, obj: MapObject, oracle: RelevancyOracle | None) -> float:
    if query.kind == MAINTENANCE:
        return maintenance_relevancy(obj.expected_v)
    return search_relevancy(query, obj, oracle or RelevancyOracle())


def known_free(m: SemanticMap) -> np.ndarray:
    free = m.background.cells == FREE
    flat = free.reshape(-1)
    for o in m.active.values():
        flat[o.cells(m.grid)] = False
    return free


def compose_priority_map(
    m: SemanticMap,
    query: Query,
    sigma_cfg: SigmaConfig | None = None,
    oracle: RelevancyOracle | None = None,
    theta_removal: float = 0.6,
    unknown_weight: float = 0.0,
) -> PriorityGrid:
    """Relevancy-weighted superposition of per-object maps over the active library.

    ``unknown_weight`` > 0 mixes in a uniform term over unknown cells (initial
    exploration mode).  An all-zero superposition yields a uniform map over
    known-free cells.
    """
    sigma_cfg = sigma_cfg or SigmaConfig()
    grid = m.grid
    acc = np.zeros(grid.shape)
    for o in sorted(m.active.values(), key=lambda o: o.id):
        lam = relevancy(query, o, oracle)
        if lam <= 0:
            continue
        acc += lam * per_object_map(o, sigma_cfg, grid, theta_removal).values
    if unknown_weight > 0:
        unknown = m.background.cells != FREE
        unknown &= m.background.cells != OCCUPIED
        if unknown.any():
            u = unknown / (unknown.sum() * grid.cell_area)
            total = acc.sum() * grid.cell_area
            acc = acc + unknown_weight * max(total, 1.0) * u
    if acc.sum() <= 0:
        log.info("no relevant objects for %s; using a uniform map over known free cells", query.kind)
        free = known_free(m)
        if not free.any():
            free = np.ones(grid.shape, dtype=bool)
        acc = free.astype(float)
    return PriorityGrid(grid, acc).normalized()
