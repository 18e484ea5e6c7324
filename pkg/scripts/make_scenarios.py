"""Regenerate the bundled scenario files under src/semistatic/scenarios/."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "semistatic" / "scenarios"

CLASSES = [
    "backpack", "ball", "bin", "book", "bottle", "bowl", "box", "cabinet", "chair",
    "coffee_table", "desk", "keyboard", "plant", "shelf", "sofa", "table", "plate",
]
STATIC_CLASSES = {"cabinet", "coffee_table", "desk", "plant", "shelf", "sofa", "table"}
DIM = 32


def embeddings(seed: int = 7) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    out = {}
    for c in CLASSES:
        v = rng.normal(size=DIM)
        out[c] = v / np.linalg.norm(v)
    return out


def rect(w: float, h: float) -> list[list[float]]:
    return [[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]]


def disc(r: float, n: int = 12) -> list[list[float]]:
    return [[round(r * math.cos(2 * math.pi * k / n), 6), round(r * math.sin(2 * math.pi * k / n), 6)] for k in range(n)]


def chair() -> list[list[float]]:
    # seat with a wider backrest edge; asymmetric so registration has a unique answer
    return [[-0.25, -0.22], [0.25, -0.22], [0.25, 0.18], [0.1, 0.28], [-0.25, 0.28]]


def pose(x, y, h=0.0):
    return {"x": x, "y": y, "heading": h}


def obj(oid, cls, fp, x, y, h=0.0, present_from=0.0, appearance=None):
    d = {
        "id": oid, "class_name": cls, "footprint": fp,
        "stationarity_label": "static" if cls in STATIC_CLASSES else "dynamic",
        "present_from": present_from, "pose": pose(x, y, h),
    }
    if appearance is not None:
        d["appearance"] = [round(float(a), 12) for a in appearance]
    return d


def base_doc(name, bounds, walls, objects, changes, start, seed, sensor=None, emb=None):
    emb = emb or embeddings()
    return {
        "schema_version": 1,
        "name": name,
        "bounds": bounds,
        "resolution": 0.1,
        "walls": walls,
        "objects": objects,
        "changes": changes,
        "robot_start": start,
        "sensor": sensor or {
            "fov_half_angle": 0.7, "max_range": 3.0, "points_per_object": 40,
            "range_noise_sigma": 0.01, "feature_noise_sigma": 0.02,
            "class_confusion_prob": 0.0, "detection_visibility_threshold": 0.4,
        },
        "class_embeddings": {k: [round(float(x), 17) for x in v] for k, v in emb.items()},
        "relevancy_table": {},
        "stationarity_labels": {c: ("static" if c in STATIC_CLASSES else "dynamic") for c in CLASSES},
        "rng_seed": seed,
    }


def box_walls(x0, y0, x1, y1):
    return [[[x0, y0], [x1, y0]], [[x1, y0], [x1, y1]], [[x1, y1], [x0, y1]], [[x0, y1], [x0, y0]]]


# ---------------------------------------------------------------- two balls


def instance_offsets(e: np.ndarray, cos_pair: float, seed: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Opposite offsets orthogonal to the class vector giving the requested instance cosine."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=e.shape)
    u -= (u @ e) * e
    u /= np.linalg.norm(u)
    a = math.sqrt((1 - cos_pair) / (1 + cos_pair))
    return a * u, -a * u


def two_balls() -> dict:
    emb = embeddings()
    a1, a2 = instance_offsets(emb["ball"], 0.7)
    objects = [
        obj("ball1", "ball", disc(0.1), 2.0, 2.6, appearance=a1),
        obj("ball2", "ball", disc(0.25), 3.4, 2.6, present_from=None, appearance=a2),
        obj("crate", "box", rect(0.6, 0.4), 4.6, 4.4),
    ]
    changes = [
        {"time": 35.0, "kind": "remove", "object_id": "ball1"},
        {"time": 50.0, "kind": "add", "object_id": "ball2", "new_pose": pose(3.4, 2.6)},
        {"time": 80.0, "kind": "add", "object_id": "ball1", "new_pose": pose(2.0, 2.6)},
    ]
    sensor = {
        "fov_half_angle": 0.7, "max_range": 3.0, "points_per_object": 40,
        "range_noise_sigma": 0.0, "feature_noise_sigma": 0.0,
        "class_confusion_prob": 0.0, "detection_visibility_threshold": 0.4,
    }
    return base_doc("two_balls", [0, 0, 6, 6], box_walls(0.05, 0.05, 5.95, 5.95), objects, changes,
                    pose(2.7, 0.6, math.pi / 2), 11, sensor, emb)


# ---------------------------------------------------------------- moved chair


def moved_chair() -> dict:
    objects = [
        obj("desk", "desk", rect(1.4, 0.7), 3.0, 5.2),
        obj("shelf", "shelf", rect(0.4, 1.6), 0.5, 3.0),
        obj("cabinet", "cabinet", rect(1.0, 0.5), 5.3, 1.2),
        obj("chair", "chair", chair(), 3.0, 4.3, 0.0),
        obj("plant", "plant", disc(0.2), 5.4, 5.4),
    ]
    changes = [{"time": 10.0, "kind": "move", "object_id": "chair", "new_pose": pose(3.55, 4.05, 0.35)}]
    sensor = {
        "fov_half_angle": 0.7, "max_range": 3.0, "points_per_object": 40,
        "range_noise_sigma": 0.0, "feature_noise_sigma": 0.0,
        "class_confusion_prob": 0.0, "detection_visibility_threshold": 0.4,
    }
    return base_doc("moved_chair", [0, 0, 6, 6], box_walls(0.05, 0.05, 5.95, 5.95), objects, changes,
                    pose(3.2, 1.8, math.pi / 2), 5, sensor)


# ---------------------------------------------------------------- offices


def office_layout():
    W, H = 24.0, 12.0
    walls = box_walls(0.05, 0.05, W - 0.05, H - 0.05)
    y = 3.05
    doors = [(3.5, 4.7), (11.4, 12.6), (19.3, 20.5)]
    x = 0.05
    for d0, d1 in doors:
        walls.append([[x, y], [d0, y]])
        x = d1
    walls.append([[x, y], [W - 0.05, y]])
    walls.append([[9.05, y], [9.05, H - 0.05]])
    walls.append([[15.05, y], [15.05, H - 0.05]])
    objects = [
        # room A
        obj("desk_a1", "desk", rect(1.4, 0.7), 2.0, 11.3),
        obj("desk_a2", "desk", rect(1.4, 0.7), 6.5, 11.3),
        obj("shelf_a", "shelf", rect(0.4, 1.6), 0.45, 7.0),
        obj("table_a", "table", rect(1.2, 1.2), 5.0, 7.0),
        obj("plant_a", "plant", disc(0.2), 0.5, 11.4),
        obj("chair_a1", "chair", chair(), 2.0, 10.4, math.pi),
        obj("chair_a2", "chair", chair(), 6.5, 10.4, math.pi),
        obj("chair_a3", "chair", chair(), 5.0, 5.9, 0.0),
        obj("chair_a4", "chair", chair(), 3.9, 7.0, -math.pi / 2),
        obj("backpack_a", "backpack", rect(0.35, 0.25), 1.3, 5.0),
        obj("box_a", "box", rect(0.5, 0.5), 8.2, 4.2),
        obj("bin_a", "bin", disc(0.15), 8.3, 11.4),
        # lab
        obj("cabinet_l", "cabinet", rect(1.2, 0.5), 12.0, 11.55),
        obj("table_l", "table", rect(2.0, 0.8), 12.0, 8.0),
        obj("chair_l1", "chair", chair(), 11.5, 7.2, 0.0),
        obj("chair_l2", "chair", chair(), 12.5, 8.8, math.pi),
        obj("box_l", "box", rect(0.5, 0.4), 10.0, 4.5),
        # room B
        obj("desk_b1", "desk", rect(1.4, 0.7), 17.0, 11.3),
        obj("desk_b2", "desk", rect(1.4, 0.7), 21.5, 11.3),
        obj("sofa_b", "sofa", rect(0.8, 2.0), 23.4, 7.0),
        obj("coffee_b", "coffee_table", rect(1.0, 0.6), 21.6, 7.0),
        obj("shelf_b", "shelf", rect(0.4, 1.6), 15.45, 7.0),
        obj("chair_b1", "chair", chair(), 17.0, 10.4, math.pi),
        obj("chair_b2", "chair", chair(), 21.5, 10.4, math.pi),
        obj("ball_b", "ball", disc(0.12), 19.0, 6.0),
        obj("backpack_b", "backpack", rect(0.35, 0.25), 16.6, 4.5),
        # hallway
        obj("bin_h", "bin", disc(0.15), 6.0, 0.5),
        obj("box_h", "box", rect(0.5, 0.5), 16.5, 0.5),
        obj("plant_h", "plant", disc(0.2), 23.4, 0.5),
    ]
    return [0, 0, W, H], walls, objects


def two_rooms() -> dict:
    bounds, walls, objects = office_layout()
    objects += [
        obj("bottle_a", "bottle", disc(0.08), 7.5, 10.3, present_from=None),
        obj("box_b2", "box", rect(0.5, 0.5), 22.8, 4.4, present_from=None),
        obj("chair_b3", "chair", chair(), 20.6, 7.0, present_from=None),
    ]
    t = 1.0
    changes = [
        {"time": t, "kind": "remove", "object_id": "chair_a3"},
        {"time": t, "kind": "move", "object_id": "chair_a1", "new_pose": pose(3.3, 9.9, 2.6)},
        {"time": t, "kind": "remove", "object_id": "backpack_a"},
        {"time": t, "kind": "add", "object_id": "bottle_a", "new_pose": pose(7.5, 10.3)},
        {"time": t, "kind": "remove", "object_id": "box_l"},
        {"time": t, "kind": "move", "object_id": "chair_l2", "new_pose": pose(13.6, 9.2, 2.8)},
        {"time": t, "kind": "remove", "object_id": "ball_b"},
        {"time": t, "kind": "move", "object_id": "backpack_b", "new_pose": pose(18.4, 10.0, 0.4)},
        {"time": t, "kind": "add", "object_id": "box_b2", "new_pose": pose(22.8, 4.4)},
        {"time": t, "kind": "remove", "object_id": "bin_h"},
        {"time": t, "kind": "add", "object_id": "chair_b3", "new_pose": pose(20.6, 7.0, -math.pi / 2)},
    ]
    return base_doc("two_rooms", bounds, walls, objects, changes, pose(12.0, 1.5, math.pi / 2), 21)


SEARCH_TASKS = [
    # (task name, query, target id, class, footprint, x, y)
    ("book_shelf_a", "find my book", "book_1", "book", rect(0.25, 0.18), 0.9, 7.6),
    ("book_shelf_b", "find my book", "book_2", "book", rect(0.25, 0.18), 15.9, 6.3),
    ("book_chair_a", "find my book", "book_3", "book", rect(0.25, 0.18), 6.5, 9.9),
    ("book_chair_b", "find my book", "book_4", "book", rect(0.25, 0.18), 17.5, 9.9),
    ("plate_coffee_1", "Where is my plate?", "plate_1", "plate", disc(0.1), 21.6, 6.45),
    ("plate_coffee_2", "Where is my plate?", "plate_2", "plate", disc(0.1), 21.0, 7.55),
    ("keyboard_desk_a", "find a keyboard", "keyboard_1", "keyboard", rect(0.45, 0.15), 2.0, 10.8),
    ("keyboard_desk_b", "find a keyboard", "keyboard_2", "keyboard", rect(0.45, 0.15), 21.5, 10.8),
]


def office_search() -> dict:
    bounds, walls, objects = office_layout()
    tasks = []
    for name, query, tid, cls, fp, x, y in SEARCH_TASKS:
        objects.append(obj(tid, cls, fp, x, y, present_from=None))
        tasks.append({"name": name, "query": query, "target_id": tid})
    # keep the search targets clear of the chairs they sit beside
    for o in objects:
        if o["id"] in ("chair_a2", "chair_b1"):
            o["pose"]["y"] = 9.3
        if o["id"] == "chair_a1":
            o["pose"]["y"] = 9.7
    doc = base_doc("office_search", bounds, walls, objects, [], pose(12.0, 1.5, math.pi / 2), 31)
    doc["tasks"] = tasks
    doc["relevancy_table"] = {
        "find my book": {"book": 1.0, "shelf": 0.9, "chair": 0.6, "desk": 0.4, "table": 0.3,
                         "coffee_table": 0.3, "sofa": 0.2},
        "Where is my plate?": {"plate": 1.0, "cup": 0.9, "coffee_table": 0.9, "table": 0.6, "sofa": 0.3, "desk": 0.2,
                              "cabinet": 0.3},
        "find a keyboard": {"keyboard": 1.0, "desk": 0.95, "table": 0.3, "chair": 0.3, "cabinet": 0.2},
    }
    return doc


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for fn in (two_balls, moved_chair, two_rooms, office_search):
        doc = fn()
        (OUT / f"{doc['name']}.json").write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", OUT / f"{doc['name']}.json")


if __name__ == "__main__":
    main()
