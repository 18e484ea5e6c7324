from __future__ import annotations

import math
import sys

import numpy as np
import pytest
from hypothesis import settings

from semistatic.harness import resolve_scenario
from semistatic.world import load_scenario, scenario_from_dict

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")

CLASSES = ["ball", "box", "chair", "table", "cup"]


def unit(rng, dim=8):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def embeddings(dim=8, seed=0):
    rng = np.random.default_rng(seed)
    return {c: unit(rng, dim).tolist() for c in CLASSES}


def rect(w, h):
    return [[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]]


def make_doc(objects=(), walls=(), changes=(), size=6.0, robot=(1.0, 3.0, 0.0), sensor=None, **extra):
    """Small noise-free scenario document for unit tests."""
    doc = {
        "schema_version": 1,
        "name": "unit",
        "bounds": [0.0, 0.0, size, size],
        "walls": [list(w) for w in walls],
        "objects": [
            {
                "id": oid, "class_name": cls, "footprint": fp,
                "stationarity_label": "static" if cls == "table" else "dynamic",
                "present_from": 0.0, "pose": {"x": x, "y": y, "heading": h},
            }
            for oid, cls, fp, x, y, h in objects
        ],
        "changes": list(changes),
        "robot_start": {"x": robot[0], "y": robot[1], "heading": robot[2]},
        "sensor": sensor or {
            "fov_half_angle": math.pi / 3, "max_range": 4.0, "points_per_object": 40,
            "range_noise_sigma": 0.0, "feature_noise_sigma": 0.0,
            "class_confusion_prob": 0.0, "detection_visibility_threshold": 0.3,
        },
        "class_embeddings": embeddings(),
        "relevancy_table": {},
        "stationarity_labels": {"table": "static"},
        "rng_seed": 1,
    }
    doc.update(extra)
    return doc


def make_scenario(**kw):
    return scenario_from_dict(make_doc(**kw))


@pytest.fixture(scope="session")
def bundled():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_scenario(resolve_scenario(name))
        return cache[name]

    return get


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
