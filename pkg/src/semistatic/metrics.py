"""Change detection, voxel geometry, object detection and navigation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation

from .geometry import GridSpec, Pose2D, densify_polygon, rasterize_points
from .mapping import OCCUPIED, SemanticMap
from .world import Scenario, world_state

NO_SUCCESS = math.inf


@dataclass(frozen=True)
class Change:
    kind: str  # addition | removal
    object_id: str
    class_name: str
    xy: tuple[float, float]


def scripted_changes(sc: Scenario, t_end: float, t_start: float = 0.0) -> list[Change]:
    """Additions and removals implied by every scripted change in (t_start, t_end]; a move is both."""
    pose: dict[str, Pose2D] = {
        o.id: o.pose for o in sc.objects if o.present_from is not None and o.present_from <= t_start
    }
    out = []
    for time, _, kind, oid, new_pose in sc.timeline():
        if time > t_end:
            break
        obj = sc.object(oid)
        before = pose.get(oid)
        if kind == "remove":
            pose.pop(oid, None)
        else:
            pose[oid] = new_pose
        if time <= t_start:
            continue
        if kind in ("remove", "move") and before is not None:
            c = obj.world_footprint(before).mean(axis=0)
            out.append(Change("removal", oid, obj.class_name, (float(c[0]), float(c[1]))))
        if kind in ("add", "move"):
            c = obj.world_footprint(new_pose).mean(axis=0)
            out.append(Change("addition", oid, obj.class_name, (float(c[0]), float(c[1]))))
    return out


def _near(m: SemanticMap, xy, class_name: str | None, r: float) -> bool:
    for o in m.active.values():
        if class_name is not None and o.class_name != class_name:
            continue
        if math.hypot(*(o.centroid - np.asarray(xy))) <= r:
            return True
    return False


def change_detection_metrics(
    m: SemanticMap, changes: list[Change], r_match: float = 0.5, strict_class: bool = True
) -> dict:
    """Percent of scripted additions present and removals absent in the final active library."""
    adds = [c for c in changes if c.kind == "addition"]
    rems = [c for c in changes if c.kind == "removal"]
    hit_add = sum(_near(m, c.xy, c.class_name if strict_class else None, r_match) for c in adds)
    hit_rem = sum(not _near(m, c.xy, c.class_name if strict_class else None, r_match) for c in rems)
    pct = lambda k, n: 100.0 if n == 0 else 100.0 * k / n  # noqa: E731
    return {
        "additions_pct": pct(hit_add, len(adds)),
        "removals_pct": pct(hit_rem, len(rems)),
        "all_pct": pct(hit_add + hit_rem, len(adds) + len(rems)),
        "n_additions": len(adds),
        "n_removals": len(rems),
        "found_additions": hit_add,
        "found_removals": hit_rem,
    }


# ---------------------------------------------------------------- geometry


def map_occupancy(m: SemanticMap) -> np.ndarray:
    """Occupied background cells plus cells holding a point of an active object."""
    occ = m.background.cells == OCCUPIED
    for o in m.active.values():
        occ |= rasterize_points(m.grid, o.points)
    return occ


def truth_occupancy(sc: Scenario, t: float, spacing: float | None = None) -> np.ndarray:
    """Walls plus cells crossed by the ground-truth object outlines at time t."""
    grid = sc.grid
    spacing = grid.resolution / 4 if spacing is None else spacing
    occ = sc.wall_mask().copy()
    for o in world_state(sc, t):
        fp = o.world_footprint()
        perim = float(np.hypot(*np.diff(np.vstack([fp, fp[:1]]), axis=0).T).sum())
        occ |= rasterize_points(grid, densify_polygon(fp, max(8, int(math.ceil(perim / spacing)))))
    return occ


def changed_region(sc: Scenario, t_end: float, t_start: float = 0.0, dilate: int = 1) -> np.ndarray:
    """Union of bounding boxes of changed objects (before and after), grown by ``dilate`` cells."""
    grid = sc.grid
    mask = np.zeros(grid.shape, dtype=bool)
    pose = {o.id: o.pose for o in sc.objects if o.present_from is not None and o.present_from <= t_start}
    for time, _, kind, oid, new_pose in sc.timeline():
        if time > t_end:
            break
        obj = sc.object(oid)
        before = pose.get(oid)
        if kind == "remove":
            pose.pop(oid, None)
        else:
            pose[oid] = new_pose
        if time <= t_start:
            continue
        for p in (before, new_pose):
            if p is not None:
                _fill_bbox(mask, grid, obj.world_footprint(p))
    if dilate > 0 and mask.any():
        mask = binary_dilation(mask, iterations=dilate)
    return mask


def _fill_bbox(mask: np.ndarray, grid: GridSpec, pts: np.ndarray):
    ix, iy = grid.cell_of(pts)
    x0, x1 = np.clip([ix.min(), ix.max()], 0, grid.nx - 1)
    y0, y1 = np.clip([iy.min(), iy.max()], 0, grid.ny - 1)
    mask[y0 : y1 + 1, x0 : x1 + 1] = True


def voxel_metrics(pred: np.ndarray, truth: np.ndarray, region: np.ndarray | None = None) -> dict:
    """Cell-wise confusion counts inside ``region`` with precision, accuracy and FPR as fractions."""
    if region is None:
        region = np.ones(pred.shape, dtype=bool)
    if not region.any():
        raise ValueError("no changed objects")
    p, g = pred[region], truth[region]
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    tn = int(np.count_nonzero(~p & ~g))
    fn = int(np.count_nonzero(~p & g))
    n = tp + fp + tn + fn
    return {
        "precision": tp / (tp + fp) if tp + fp else 1.0,
        "accuracy": (tp + tn) / n,
        "fpr": fp / (fp + tn) if fp + tn else 0.0,
        "tp": tp, "fp": fp, "tn": tn, "fn": fn,
    }


# ---------------------------------------------------------------- detection


def detection_metrics(m: SemanticMap, sc: Scenario, t: float, r_match: float = 0.5) -> dict:
    """Greedy nearest-first same-class matching of active objects to present ground truth."""
    truth = world_state(sc, t)
    mine = sorted(m.active.values(), key=lambda o: o.id)
    pairs = []
    for i, o in enumerate(mine):
        for j, g in enumerate(truth):
            if o.class_name != g.class_name:
                continue
            d = float(math.hypot(*(o.centroid - g.centroid)))
            if d <= r_match:
                pairs.append((d, i, j))
    pairs.sort()
    used_i, used_j = set(), set()
    for _, i, j in pairs:
        if i not in used_i and j not in used_j:
            used_i.add(i)
            used_j.add(j)
    tp = len(used_i)
    prec = tp / len(mine) if mine else 1.0
    rec = tp / len(truth) if truth else 1.0
    f1 = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return {"det_precision": prec, "det_recall": rec, "det_f1": f1, "n_map": len(mine), "n_truth": len(truth)}


# ---------------------------------------------------------------- navigation


def navigation_metrics(outcomes: list[tuple[bool, float | None]]) -> dict:
    """Success rate, mean time over successes, and the mean time divided by the success rate."""
    if not outcomes:
        raise ValueError("no episodes")
    times = [t for ok, t in outcomes if ok]
    rate = len(times) / len(outcomes)
    mean = float(np.mean(times)) if times else NO_SUCCESS
    return {
        "success_rate": rate,
        "mean_time": mean,
        "weighted_time": mean / rate if rate > 0 else NO_SUCCESS,
    }
