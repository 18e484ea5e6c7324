from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semistatic.geometry import Pose2D, line_of_sight
from semistatic.world import (
    ScenarioError,
    load_scenario,
    obstacle_labels,
    scenario_from_dict,
    sense,
    visible_footprint,
    world_state,
)

from conftest import make_doc, make_scenario, rect


def test_minimal_scenario_has_no_objects():
    sc = make_scenario(walls=[[[0.0, 5.0], [6.0, 5.0]]])
    assert sc.objects == []
    assert sc.wall_mask().any()


def test_negative_change_time_rejected():
    doc = make_doc(objects=[("b", "ball", rect(0.2, 0.2), 3, 3, 0)],
                   changes=[{"time": -1.0, "kind": "remove", "object_id": "b"}])
    with pytest.raises(ScenarioError, match="change event times strictly nonnegative"):
        scenario_from_dict(doc)


def test_parse_error_reports_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  oops\n}')
    with pytest.raises(ScenarioError, match=r"bad.json:3:\d+"):
        load_scenario(p)


def test_invariant_error_names_field():
    doc = make_doc(objects=[("b", "ball", rect(0.2, 0.2), 3, 3, 0)])
    doc["objects"][0]["class_name"] = "gizmo"
    with pytest.raises(ScenarioError, match=r"objects\[0\]\.class_name"):
        scenario_from_dict(doc)


def test_remove_of_absent_object_rejected():
    doc = make_doc(objects=[("b", "ball", rect(0.2, 0.2), 3, 3, 0)],
                   changes=[{"time": 1.0, "kind": "remove", "object_id": "b"},
                            {"time": 2.0, "kind": "remove", "object_id": "b"}])
    with pytest.raises(ScenarioError, match="does not exist"):
        scenario_from_dict(doc)


def test_two_balls_fixture(bundled):
    sc = bundled("two_balls")
    assert sum(o.class_name == "ball" for o in sc.objects) == 2
    assert len(sc.changes) == 3
    assert [o.id for o in world_state(sc, 0.0) if o.class_name == "ball"] == ["ball1"]
    # the ball leaves at 35 s; only the crate remains at 40 s
    assert len(world_state(sc, 40.0)) == 1


def test_world_state_applies_moves_in_order():
    sc = make_scenario(
        objects=[("c", "chair", rect(0.4, 0.4), 2, 2, 0)],
        changes=[{"time": 5.0, "kind": "move", "object_id": "c", "new_pose": {"x": 4, "y": 4, "heading": 0}},
                 {"time": 6.0, "kind": "move", "object_id": "c", "new_pose": {"x": 3, "y": 1, "heading": 0}}],
    )
    assert world_state(sc, 0.0)[0].pose.x == 2
    assert world_state(sc, 5.0)[0].pose.x == 4
    assert world_state(sc, 100.0)[0].pose == Pose2D(3, 1, 0)


@given(st.floats(0, 120), st.floats(0, 120))
def test_world_state_is_a_pure_function_of_time(t1, t2):
    sc = make_scenario(
        objects=[("c", "chair", rect(0.4, 0.4), 2, 2, 0), ("b", "ball", rect(0.2, 0.2), 4, 4, 0)],
        changes=[{"time": 10.0, "kind": "remove", "object_id": "b"},
                 {"time": 50.0, "kind": "move", "object_id": "c", "new_pose": {"x": 3, "y": 3, "heading": 1}}],
    )
    a = [(o.id, o.pose) for o in world_state(sc, t1)]
    world_state(sc, t2)
    assert a == [(o.id, o.pose) for o in world_state(sc, t1)]


def test_object_beyond_range_not_detected():
    sc = make_scenario(objects=[("b", "box", rect(0.4, 0.4), 5.5, 3, 0)], robot=(0.5, 3, 0))
    obs = sense(sc, 0.0, sc.robot_start, np.random.default_rng(0))
    assert obs.candidates == []


def test_noise_free_candidate_is_exact():
    sc = make_scenario(objects=[("b", "box", rect(0.4, 0.4), 3, 3, 0)], robot=(1.0, 3.0, 0.0))
    obs = sense(sc, 0.0, sc.robot_start, np.random.default_rng(0))
    assert len(obs.candidates) == 1
    cand = obs.candidates[0]
    pts, mask = visible_footprint(sc, 0.0, sc.robot_start, "b")
    np.testing.assert_array_equal(cand.points, pts[mask])
    np.testing.assert_allclose(cand.feature, sc.class_embeddings["box"], atol=1e-12)


def test_half_occluded_object_below_visibility_threshold():
    # a wall hides the lower half of the box from the robot
    doc = make_doc(objects=[("b", "box", rect(0.6, 1.0), 4, 3, 0)], walls=[[[2.5, 1.0], [2.5, 3.0]]],
                   robot=(1.0, 3.0, 0.0))
    doc["sensor"]["detection_visibility_threshold"] = 0.7
    sc = scenario_from_dict(doc)
    pts, mask = visible_footprint(sc, 0.0, sc.robot_start, "b")
    # independent ray-cast oracle counting unblocked points
    labels = obstacle_labels(sc, world_state(sc, 0.0))
    oracle = line_of_sight(sc.robot_start.xy, pts, labels, sc.grid, own=1)
    assert mask.sum() == oracle.sum()
    assert 0.0 < oracle.mean() < 0.7
    assert sense(sc, 0.0, sc.robot_start, np.random.default_rng(0)).candidates == []


def test_sensing_is_deterministic_per_seed(bundled):
    sc = bundled("two_rooms")
    pose = sc.robot_start
    a = sense(sc, 5.0, pose, np.random.default_rng(3))
    b = sense(sc, 5.0, pose, np.random.default_rng(3))
    assert len(a.candidates) == len(b.candidates)
    for x, y in zip(a.candidates, b.candidates):
        np.testing.assert_array_equal(x.points, y.points)
        np.testing.assert_array_equal(x.feature, y.feature)
    np.testing.assert_array_equal(a.free_cells, b.free_cells)


@given(st.floats(0.3, 5.7), st.floats(0.3, 5.7), st.floats(-math.pi, math.pi), st.integers(0, 2**31))
def test_candidates_never_exceed_range(x, y, h, seed):
    doc = make_doc(objects=[("b", "box", rect(0.4, 0.4), 3, 3, 0), ("c", "chair", rect(0.5, 0.5), 1.5, 4.5, 0.3)])
    doc["sensor"].update(range_noise_sigma=0.02, max_range=2.0)
    sc = scenario_from_dict(doc)
    robot = Pose2D(x, y, h)
    for c in sense(sc, 0.0, robot, np.random.default_rng(seed)).candidates:
        d = np.hypot(*(c.points - robot.xy).T)
        assert d.max() <= 2.0 + 3 * 0.02 + 1e-9
        assert c.class_name in ("box", "chair")
        assert abs(np.linalg.norm(c.feature) - 1) < 1e-9


def test_absent_objects_never_sensed(bundled):
    sc = bundled("two_balls")
    robot = Pose2D(2.0, 1.2, math.pi / 2)
    obs = sense(sc, 40.0, robot, np.random.default_rng(0))
    assert all(c.truth_id != "ball1" for c in obs.candidates)
    assert any(c.truth_id == "ball1" for c in sense(sc, 10.0, robot, np.random.default_rng(0)).candidates)


def test_bundled_scenarios_round_trip_json(bundled):
    from semistatic.world import scenario_to_dict

    for name in ("two_balls", "moved_chair", "two_rooms", "office_search"):
        sc = bundled(name)
        again = scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc))))
        assert [o.id for o in again.objects] == [o.id for o in sc.objects]
        assert again.changes == sc.changes
