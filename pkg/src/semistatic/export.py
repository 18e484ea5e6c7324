"""File formats: map snapshots, PGM priority maps, JSONL logs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import GridSpec
from .mapping import UNKNOWN, MapObject, OccupancyGrid, SemanticMap
from .priority import PriorityGrid
from .stationarity import StationarityBelief


def rle_rows(cells: np.ndarray) -> list[list[int]]:
    """Run-length encode each row as [value, count, value, count, ...]."""
    out = []
    for row in cells:
        enc: list[int] = []
        start = 0
        for k in range(1, len(row) + 1):
            if k == len(row) or row[k] != row[start]:
                enc += [int(row[start]), k - start]
                start = k
        out.append(enc)
    return out


def rle_decode(rows: list[list[int]], dtype=np.int8) -> np.ndarray:
    return np.array(
        [np.repeat(np.array(r[0::2], dtype=dtype), r[1::2]) for r in rows], dtype=dtype
    )


def _obj(o: MapObject) -> dict:
    return {
        "id": o.id,
        "class": o.class_name,
        "label": o.label,
        "pose": o.pose.to_dict(),
        "bbox": list(o.bbox),
        "E_v": o.expected_v,
        "alpha": o.belief.alpha,
        "beta": o.belief.beta,
        "zeta": o.belief.zeta,
        "t_first": o.t_first,
        "t_disappear": o.t_disappear,
        "last_seen": o.last_seen,
        "points": np.round(o.points, 4).tolist(),
    }


def snapshot(m: SemanticMap, t: float | None = None) -> dict:
    return {
        "t": t,
        "grid": m.grid.to_dict(),
        "active": [_obj(o) for _, o in sorted(m.active.items())],
        "missing": [_obj(o) for _, o in sorted(m.missing.items())],
        "background": rle_rows(m.background.cells),
    }


def grid_from_dict(d: dict) -> GridSpec:
    return GridSpec(float(d["x0"]), float(d["y0"]), float(d["resolution"]), int(d["nx"]), int(d["ny"]))


def background_from_snapshot(snap: dict) -> OccupancyGrid:
    grid = grid_from_dict(snap["grid"])
    return OccupancyGrid(grid, rle_decode(snap["background"]))


def _map_object(d: dict) -> MapObject:
    pts = np.asarray(d["points"], dtype=float).reshape(-1, 2)
    e = float(d["E_v"])
    alpha, beta = d.get("alpha"), d.get("beta")
    if alpha is None or beta is None:  # older snapshots: unit-evidence belief with the same mean
        alpha, beta = max(e, 1e-6), max(1.0 - e, 1e-6)
    return MapObject(
        id=int(d["id"]), points=pts, feature=np.zeros(0), class_name=d["class"], label=d.get("label", d["class"]),
        t_first=float(d["t_first"]), last_seen=float(d["last_seen"]),
        belief=StationarityBelief(float(alpha), float(beta), float(d.get("zeta") or 0.0)),
        t_disappear=d.get("t_disappear"),
    )


def map_from_snapshot(snap: dict) -> SemanticMap:
    """Geometry, classes and beliefs of a snapshot; appearance features are not stored."""
    bg = background_from_snapshot(snap)
    m = SemanticMap(bg.grid, background=bg)
    for d in snap["active"]:
        o = _map_object(d)
        m.active[o.id] = o
    for d in snap["missing"]:
        o = _map_object(d)
        m.missing[o.id] = o
    ids = list(m.active) + list(m.missing)
    m.next_id = max(ids) + 1 if ids else 1
    return m


def read_snapshot(path: Path) -> dict:
    snap = json.loads(Path(path).read_text())
    for key in ("grid", "active", "missing", "background"):
        if key not in snap:
            raise ValueError(f"snapshot {path} lacks {key!r}")
    return snap


def write_json(path: Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def to_gray(values: np.ndarray) -> np.ndarray:
    """Scale to 0..255 with the maximum at 255; rows flipped so +y points up."""
    vmax = float(values.max()) if values.size else 0.0
    img = np.zeros(values.shape, dtype=np.uint8) if vmax <= 0 else np.round(values / vmax * 255.0).astype(np.uint8)
    return img[::-1]


def write_pgm(path: Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def write_priority(path: Path, pg: PriorityGrid) -> tuple[Path, Path]:
    """PGM heatmap plus a JSON sidecar with resolution and origin."""
    path = Path(path)
    write_pgm(path, to_gray(pg.values))
    side = path.with_suffix(".json")
    write_json(side, {
        "resolution": pg.resolution,
        "origin": list(pg.origin),
        "width": pg.grid.nx,
        "height": pg.grid.ny,
        "max_value": float(pg.values.max()),
        "row_order": "top row is max y",
    })
    return path, side


def annotated_map(snap: dict) -> np.ndarray:
    """RGB raster of a snapshot: background gray levels, objects colored by E[v] (red low, green high)."""
    bg = rle_decode(snap["background"])
    img = np.zeros(bg.shape + (3,), dtype=np.uint8)
    img[bg == UNKNOWN] = (90, 90, 90)
    img[bg == 0] = (235, 235, 235)
    img[bg == 1] = (20, 20, 20)
    grid = grid_from_dict(snap["grid"])
    for o in snap["active"]:
        pts = np.asarray(o["points"], dtype=float).reshape(-1, 2)
        ix, iy = grid.cell_of(pts)
        ok = grid.inside(ix, iy)
        ev = float(o["E_v"])
        img[iy[ok], ix[ok]] = (int(255 * (1 - ev)), int(255 * ev), 40)
    return img[::-1]


def write_ppm(path: Path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
