from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import make_scenario, rect
from semistatic.config import Config
from semistatic.geometry import GridSpec, Pose2D, densify_polygon
from semistatic.harness import evaluate, expand_seeds, expand_tasks, load_manifest, run_one, summarize
from semistatic.mapping import SemanticMap, insert_new
from semistatic.metrics import (
    NO_SUCCESS,
    change_detection_metrics,
    changed_region,
    detection_metrics,
    navigation_metrics,
    scripted_changes,
    voxel_metrics,
)
from semistatic.policies import NoReachableCell, PatrolPolicy, RandomPolicy, lawnmower_nodes
from semistatic.world import ObjectCandidate, ScenarioError

OBJS = [("b", "ball", rect(0.2, 0.2), 2.0, 2.0, 0.0), ("t", "table", rect(0.8, 0.6), 4.0, 4.0, 0.0)]


def scenario(changes=()):
    return make_scenario(objects=OBJS, changes=list(changes))


def put(m, cls, x, y, f=0):
    pts = densify_polygon(Pose2D(x, y, 0).transform(np.array(rect(0.2, 0.2))), 12)
    return insert_new(m, ObjectCandidate.from_points(pts, np.eye(8)[f], cls), {}, 0.0)


# ---------------------------------------------------------------- change detection


def test_move_counts_as_removal_and_addition():
    sc = scenario([{"time": 10.0, "kind": "move", "object_id": "b", "new_pose": {"x": 3, "y": 1, "heading": 0}}])
    ch = scripted_changes(sc, 60.0)
    assert [(c.kind, c.object_id) for c in ch] == [("removal", "b"), ("addition", "b")]
    assert ch[0].xy == pytest.approx((2.0, 2.0)) and ch[1].xy == pytest.approx((3.0, 1.0))
    assert scripted_changes(sc, 5.0) == []


def test_change_scores_against_final_library():
    sc = scenario([{"time": 10.0, "kind": "move", "object_id": "b", "new_pose": {"x": 3, "y": 1, "heading": 0}}])
    ch = scripted_changes(sc, 60.0)
    stale = SemanticMap(sc.grid)
    put(stale, "ball", 2.0, 2.0)
    r = change_detection_metrics(stale, ch)
    assert (r["additions_pct"], r["removals_pct"], r["all_pct"]) == (0.0, 0.0, 0.0)
    fresh = SemanticMap(sc.grid)
    put(fresh, "ball", 3.1, 1.0)
    r = change_detection_metrics(fresh, ch)
    assert (r["additions_pct"], r["removals_pct"], r["all_pct"]) == (100.0, 100.0, 100.0)


def test_wrong_class_does_not_count_when_strict():
    sc = scenario([{"time": 10.0, "kind": "move", "object_id": "b", "new_pose": {"x": 3, "y": 1, "heading": 0}}])
    ch = scripted_changes(sc, 60.0)
    m = SemanticMap(sc.grid)
    put(m, "cup", 3.0, 1.0)
    assert change_detection_metrics(m, ch)["additions_pct"] == 0.0
    assert change_detection_metrics(m, ch, strict_class=False)["additions_pct"] == 100.0


def test_no_changes_scores_full_marks():
    r = change_detection_metrics(SemanticMap(GridSpec(0, 0, 0.1, 10, 10)), [])
    assert r["additions_pct"] == r["removals_pct"] == r["all_pct"] == 100.0


# ---------------------------------------------------------------- voxels and detection


def test_voxel_perfect_and_empty_prediction():
    truth = np.zeros((10, 10), dtype=bool)
    truth[2:5, 2:5] = True
    v = voxel_metrics(truth, truth)
    assert (v["precision"], v["accuracy"], v["fpr"]) == (1.0, 1.0, 0.0)
    v = voxel_metrics(np.zeros_like(truth), truth)
    assert v["precision"] == 1.0 and v["accuracy"] == pytest.approx(91 / 100)


def test_voxel_counts_by_hand():
    truth = np.array([[1, 1, 0, 0]], dtype=bool)
    pred = np.array([[1, 0, 1, 0]], dtype=bool)
    v = voxel_metrics(pred, truth)
    assert (v["tp"], v["fp"], v["tn"], v["fn"]) == (1, 1, 1, 1)
    assert v["precision"] == 0.5 and v["fpr"] == 0.5


def test_voxel_region_restriction():
    truth = np.zeros((4, 4), dtype=bool)
    pred = np.zeros((4, 4), dtype=bool)
    pred[0, 0] = True  # false positive outside the region
    region = np.zeros((4, 4), dtype=bool)
    region[2:, 2:] = True
    assert voxel_metrics(pred, truth, region)["fp"] == 0
    with pytest.raises(ValueError, match="no changed objects"):
        voxel_metrics(pred, truth, np.zeros((4, 4), dtype=bool))


def test_changed_region_covers_both_poses():
    sc = scenario([{"time": 10.0, "kind": "move", "object_id": "b", "new_pose": {"x": 3, "y": 1, "heading": 0}}])
    reg = changed_region(sc, 60.0)
    for x, y in ((2.0, 2.0), (3.0, 1.0)):
        ix, iy = (int(v[0]) for v in sc.grid.cell_of(np.array([x, y])))
        assert reg[iy, ix]
    assert not changed_region(sc, 5.0).any()


def test_detection_two_correct_and_one_ghost():
    sc = scenario()
    m = SemanticMap(sc.grid)
    put(m, "ball", 2.05, 2.0)
    put(m, "table", 4.0, 4.1)
    put(m, "ball", 1.0, 5.0)  # nothing there
    d = detection_metrics(m, sc, 0.0)
    assert d["det_precision"] == pytest.approx(2 / 3)
    assert d["det_recall"] == 1.0
    assert d["det_f1"] == pytest.approx(0.8)


# ---------------------------------------------------------------- navigation


def test_navigation_weighted_time():
    runs = [(True, 41.5)] + [(False, None)] * 3
    r = navigation_metrics(runs)
    assert r["success_rate"] == 0.25 and r["weighted_time"] == pytest.approx(166.0)
    r = navigation_metrics([(True, 62.88)] * 4)
    assert r["weighted_time"] == r["mean_time"] == pytest.approx(62.88)
    r = navigation_metrics([(False, None)] * 2)
    assert r["weighted_time"] == NO_SUCCESS and math.isinf(r["weighted_time"])
    with pytest.raises(ValueError):
        navigation_metrics([])


# ---------------------------------------------------------------- baselines


def test_lawnmower_grid_shape():
    nodes = lawnmower_nodes(GridSpec(0, 0, 0.1, 60, 60), 2.0)
    assert len(nodes) == 9
    assert nodes[0].tolist() == [1.0, 1.0] and nodes[3].tolist() == [5.0, 3.0]


def test_patrol_cycles_and_skips_unreachable_nodes():
    grid = GridSpec(0, 0, 0.1, 60, 60)
    reach = np.ones(grid.shape, dtype=bool)
    reach[:, 30:] = False  # right half unreachable
    p = PatrolPolicy(grid, 2.0)
    rng = np.random.default_rng(0)
    seq = [p.next_waypoint(None, (1.0, 1.0), reach, rng) for _ in range(7)]
    assert all(x < 3.0 for x, _ in seq)
    assert seq[0] == pytest.approx((1.05, 1.05), abs=0.06)
    assert seq[6] == seq[0]


def test_baselines_fail_without_reachable_cells():
    grid = GridSpec(0, 0, 0.1, 20, 20)
    none = np.zeros(grid.shape, dtype=bool)
    rng = np.random.default_rng(0)
    with pytest.raises(NoReachableCell):
        RandomPolicy(grid).next_waypoint(None, (1, 1), none, rng)
    with pytest.raises(NoReachableCell):
        PatrolPolicy(grid, 1.0).next_waypoint(None, (1, 1), none, rng)


# ---------------------------------------------------------------- harness


def test_expand_helpers(bundled):
    sc = bundled("office_search")
    assert len(expand_tasks(sc, ["search:*"])) == 8
    assert expand_tasks(sc, ["maintain"]) == [("maintain", "maintain", None)]
    with pytest.raises(ScenarioError):
        expand_tasks(sc, ["search:nope"])
    assert expand_seeds(3) == [0, 1, 2]
    assert expand_seeds({"start": 5, "count": 2}) == [5, 6]


def test_rebuild_rejects_search():
    sc = scenario()
    with pytest.raises(ValueError, match="rebuild"):
        run_one(sc, "rebuild", ("x", "find:x", "b"), 0, 10.0, Config())


def test_evaluate_rows_and_determinism(tmp_path):
    manifest = {"scenario": "two_balls", "methods": ["ours", "patrol"], "seeds": 2, "budget": 60}
    rows = evaluate(manifest, tmp_path / "a")
    assert len(rows) == 4
    evaluate(manifest, tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics.csv").read_bytes()
    header = a.decode().splitlines()[0].split(",")
    assert header[:4] == ["scenario", "method", "task", "seed"]
    summary = summarize(rows)
    assert {s["method"] for s in summary} == {"ours", "patrol"}


def test_load_manifest_errors(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON at line 1"):
        load_manifest(bad)
