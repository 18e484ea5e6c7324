"""Point-to-point ICP in the plane."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class RigidTransform:
    angle: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.atleast_2d(pts) @ self.rotation.T + self.translation

    @classmethod
    def from_rt(cls, rot: np.ndarray, t: np.ndarray) -> "RigidTransform":
        return cls(math.atan2(rot[1, 0], rot[0, 0]), float(t[0]), float(t[1]))


def _collinear(pts: np.ndarray) -> bool:
    c = pts - pts.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    return len(sv) < 2 or sv[1] <= 1e-9


def _fit(src: np.ndarray, dst: np.ndarray, translation_only: bool):
    """Closed-form rigid fit mapping src onto dst (Kabsch, reflection-safe)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    if translation_only:
        return np.eye(2), cd - cs
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, d]) @ u.T
    return rot, cd - rot @ cs


def _principal_angle(pts: np.ndarray) -> float:
    c = pts - pts.mean(axis=0)
    w, v = np.linalg.eigh(c.T @ c)
    major = v[:, int(np.argmax(w))]
    return math.atan2(major[1], major[0])


def initial_angles(src: np.ndarray, dst: np.ndarray, n_sweep: int = 12) -> list[float]:
    """Rotation seeds: the four principal-axis alignments, then a uniform sweep."""
    base = _principal_angle(dst) - _principal_angle(src)
    seeds = [base + k * math.pi / 2 for k in range(4)]
    seeds += [2 * math.pi * k / n_sweep for k in range(n_sweep)]
    return seeds


def _refine(src, dst, tree, rot, trans, max_iters, tol, translation_only):
    cur = src @ rot.T + trans
    for _ in range(max_iters):
        _, idx = tree.query(cur)
        r, t = _fit(src, dst[idx], translation_only)
        nxt = src @ r.T + t
        moved = float(np.mean(np.linalg.norm(nxt - cur, axis=1)))
        rot, trans, cur = r, t, nxt
        if moved < tol:
            break
    dist, _ = tree.query(cur)
    return rot, trans, float(np.sqrt(np.mean(dist**2)))


def icp_align(
    source: np.ndarray,
    target: np.ndarray,
    max_iters: int = 30,
    tol: float = 1e-4,
    n_sweep: int = 12,
    coarse_iters: int = 5,
    n_refine: int = 3,
) -> tuple[RigidTransform, float]:
    """Register ``source`` onto ``target``; returns the transform and correspondence RMSE.

    Point-to-point ICP on evenly sampled outlines has spurious fixed points a few
    degrees from the truth, so it is restarted from several rotation seeds
    (centroids aligned).  Every seed gets ``coarse_iters`` iterations, the
    ``n_refine`` best are run to convergence and the lowest residual wins.  A run
    stops once the mean movement of the transformed source points drops below ``tol``.
    """
    src = np.atleast_2d(np.asarray(source, dtype=float))
    dst = np.atleast_2d(np.asarray(target, dtype=float))
    if len(src) < 3 or len(dst) < 3:
        raise ValueError("icp_align needs at least 3 points per cloud")
    translation_only = _collinear(src)
    tree = cKDTree(dst)
    shift = dst.mean(axis=0)
    seeds = [0.0] if translation_only else [0.0] + initial_angles(src, dst, n_sweep)
    starts = []
    for a in seeds:
        c, s_ = math.cos(a), math.sin(a)
        rot = np.array([[c, -s_], [s_, c]])
        starts.append((rot, shift - src.mean(axis=0) @ rot.T))
    if len(starts) > n_refine:
        coarse = [_refine(src, dst, tree, r, t, coarse_iters, tol, translation_only) for r, t in starts]
        order = sorted(range(len(coarse)), key=lambda k: (coarse[k][2], k))
        starts = [coarse[k][:2] for k in order[:n_refine]]
    best = None
    for rot, trans in starts:
        fit = _refine(src, dst, tree, rot, trans, max_iters, tol, translation_only)
        if best is None or fit[2] < best[2] - 1e-12:
            best = fit
            if fit[2] < tol:
                break
    rot, trans, rmse = best
    return RigidTransform.from_rt(rot, trans), rmse
