"""Moves objects between the active and missing libraries and re-identifies reappearances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import voxel_downsample
from .mapping import MapObject, SemanticMap, SimilarityConfig, fuse_features, semantic_icp
from .icp import icp_align


@dataclass(frozen=True)
class LifecycleConfig:
    theta_removal: float = 0.6
    theta_translational: float = 0.8
    tau_window: float = 120.0

    def __post_init__(self):
        if not (0.0 <= self.theta_removal < self.theta_translational <= 1.0):
            raise ValueError("need 0 <= theta_removal < theta_translational <= 1")
        if self.tau_window < 0:
            raise ValueError("tau_window must be nonnegative")


@dataclass(frozen=True)
class MergeRecord:
    t: float
    kept_id: int
    absorbed_id: int
    kind: str  # reintroduced | translated
    rmse: float


def apply_removal(m: SemanticMap, cfg: LifecycleConfig, t: float) -> list[int]:
    moved = [oid for oid, o in sorted(m.active.items()) if o.expected_v <= cfg.theta_removal]
    for oid in moved:
        m.missing[oid] = m.active.pop(oid)
    return moved


def disappearance_time(o: MapObject) -> float | None:
    """Time of the first observed absence since the last sighting; None if never seen missing."""
    return o.t_disappear


def _absorb(keep: MapObject, gone: MapObject, fresh: MapObject, sim_cfg: SimilarityConfig) -> None:
    """Fold ``gone`` into ``keep``; geometry, belief and timing follow ``fresh``."""
    other = gone if fresh is keep else keep
    tf, _ = icp_align(other.points, fresh.points, sim_cfg.icp_max_iters, sim_cfg.icp_tol)
    pts = np.vstack([fresh.points, tf.apply(other.points)])
    keep.set_points(voxel_downsample(pts, sim_cfg.d_voxel))
    keep.feature = fuse_features(other.feature, fresh.feature, 1)
    keep.belief = fresh.belief
    keep.last_seen = fresh.last_seen
    keep.t_first = min(keep.t_first, gone.t_first)
    keep.n_obs = keep.n_obs + gone.n_obs
    keep.t_disappear = None


def reidentify(
    m: SemanticMap, cfg: LifecycleConfig, sim_cfg: SimilarityConfig, t: float
) -> list[MergeRecord]:
    """Match vanished or doubtful objects against objects that appeared around their disappearance."""
    group = [
        o for o in m.active.values()
        if cfg.theta_removal < o.expected_v <= cfg.theta_translational
    ] + list(m.missing.values())
    # decay alone is not a disappearance; only objects seen missing take part
    group = [o for o in group if o.t_disappear is not None]
    group.sort(key=lambda o: (disappearance_time(o), o.id))
    records: list[MergeRecord] = []
    consumed: set[int] = set()
    for k in group:
        if k.id in consumed or (k.id not in m.active and k.id not in m.missing):
            continue
        t_gone = disappearance_time(k)
        pool = [
            i for i in sorted(m.active.values(), key=lambda o: o.id)
            if i.id != k.id
            and i.id not in consumed
            and abs(i.t_first - t_gone) <= cfg.tau_window
            # an object seen alongside k is a different instance
            and i.t_first > k.last_seen
        ]
        oid, rmse, _ = semantic_icp(k, pool, sim_cfg, m.icp_cache)
        if oid is None:
            continue
        i = m.active[oid]
        was_missing = k.id in m.missing
        if was_missing:
            m.active[k.id] = m.missing.pop(k.id)
        older, younger = (k, i) if (k.t_first, k.id) <= (i.t_first, i.id) else (i, k)
        _absorb(older, younger, i, sim_cfg)
        del m.active[younger.id]
        consumed.update((k.id, i.id))
        records.append(
            MergeRecord(t, older.id, younger.id, "reintroduced" if was_missing else "translated", float(rmse))
        )
    return records
