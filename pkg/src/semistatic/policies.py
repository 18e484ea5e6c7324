"""Waypoint policies: priority-map sampling, uniform random, and lawnmower patrol."""

from __future__ import annotations

import math

import numpy as np

from .config import Config
from .exploration import WaypointHistory, reachable_from, sample_next_waypoint, snap_to
from .geometry import GridSpec
from .mapping import SemanticMap
from .priority import Query, RelevancyOracle, compose_priority_map

POLICIES = ("ours", "random", "patrol")


class NoReachableCell(RuntimeError):
    pass


class Policy:
    name = "base"

    def next_waypoint(self, m: SemanticMap, robot_xy, reachable: np.ndarray, rng) -> tuple[float, float] | None:
        raise NotImplementedError

    def skip(self) -> None:
        """Called when the last waypoint could not be reached."""


class PriorityPolicy(Policy):
    """Samples waypoints where the task priority exceeds the visit history."""

    name = "ours"

    def __init__(self, grid: GridSpec, query: Query, cfg: Config, oracle: RelevancyOracle | None = None):
        self.query = query
        self.cfg = cfg
        self.oracle = oracle
        self.hist = WaypointHistory(grid, cfg.explore.bandwidth, cfg.explore.forgetting)
        self.last_map = None

    def next_waypoint(self, m, robot_xy, reachable, rng):
        if not reachable.any():
            raise NoReachableCell("no reachable traversable cell")
        f = compose_priority_map(
            m, self.query, self.cfg.sigma, self.oracle, self.cfg.lifecycle.theta_removal,
            self.cfg.explore.unknown_weight,
        )
        self.last_map = f
        return sample_next_waypoint(f, self.hist, robot_xy, self.cfg.explore.M, None, rng, allowed=reachable)


class RandomPolicy(Policy):
    """Uniform over reachable traversable cells."""

    name = "random"

    def __init__(self, grid: GridSpec):
        self.grid = grid

    def next_waypoint(self, m, robot_xy, reachable, rng):
        idx = np.flatnonzero(reachable)
        if len(idx) == 0:
            raise NoReachableCell("no reachable traversable cell")
        iy, ix = divmod(int(idx[rng.integers(len(idx))]), self.grid.nx)
        c = self.grid.center(ix, iy)
        return float(c[0]), float(c[1])


def lawnmower_nodes(grid: GridSpec, spacing: float) -> np.ndarray:
    """Boustrophedon grid of nodes offset half a spacing from the lower-left corner."""
    w, h = grid.nx * grid.resolution, grid.ny * grid.resolution
    xs = grid.x0 + spacing / 2 + spacing * np.arange(max(1, int(math.floor(w / spacing + 1e-9))))
    ys = grid.y0 + spacing / 2 + spacing * np.arange(max(1, int(math.floor(h / spacing + 1e-9))))
    nodes = []
    for r, y in enumerate(ys):
        row = xs if r % 2 == 0 else xs[::-1]
        nodes.extend((float(x), float(y)) for x in row)
    return np.array(nodes)


class PatrolPolicy(Policy):
    """Cycles through lawnmower nodes, skipping those that are not reachable."""

    name = "patrol"

    def __init__(self, grid: GridSpec, spacing: float):
        self.grid = grid
        self.nodes = lawnmower_nodes(grid, spacing)
        self.k: int | None = None
        self._snapped: tuple[bytes, list] | None = None

    def _snap(self, reachable, node):
        """Node itself, or the nearest reachable cell within half a meter."""
        cell = snap_to(reachable, self.grid, node, max_cells=int(round(0.5 / self.grid.resolution)))
        return None if cell is None else self.grid.center(*cell)

    def next_waypoint(self, m, robot_xy, reachable, rng):
        n = len(self.nodes)
        key = np.packbits(reachable).tobytes()
        if self._snapped is None or self._snapped[0] != key:
            self._snapped = (key, [self._snap(reachable, p) for p in self.nodes])
        snapped = self._snapped[1]
        ok = [p is not None for p in snapped]
        if not any(ok):
            raise NoReachableCell("no reachable patrol node")
        if self.k is None:
            d = np.hypot(*(self.nodes - np.asarray(robot_xy)).T)
            d[~np.array(ok)] = np.inf
            self.k = int(np.argmin(d))
        else:
            self.k = (self.k + 1) % n
        while not ok[self.k]:
            self.k = (self.k + 1) % n
        x, y = snapped[self.k]
        return float(x), float(y)


def make_policy(name: str, grid: GridSpec, query: Query, cfg: Config, oracle: RelevancyOracle | None) -> Policy:
    if name == "ours":
        return PriorityPolicy(grid, query, cfg, oracle)
    if name == "random":
        return RandomPolicy(grid)
    if name == "patrol":
        return PatrolPolicy(grid, cfg.episode.patrol_spacing)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


def reachable_cells(trav: np.ndarray, grid: GridSpec, xy) -> np.ndarray:
    return reachable_from(trav, grid, xy)
