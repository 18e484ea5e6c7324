from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semistatic.geometry import GridSpec, Pose2D, densify_polygon
from semistatic.mapping import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, SemanticMap, insert_new
from semistatic.exploration import (
    RobotModel,
    WaypointHistory,
    astar,
    follow_step,
    gaussian_blob,
    plan_path,
    project_occupancy,
    sample_next_waypoint,
    search_success,
    total_variation,
    traversable,
)
from semistatic.priority import PriorityGrid
from semistatic.world import GroundTruthObject, ObjectCandidate, SensorSpec

GRID = GridSpec(0.0, 0.0, 0.1, 60, 40)
MODEL = RobotModel()


def free_occ(grid=GRID, inflation=0.0):
    return OccupancyGrid(grid, np.full(grid.shape, FREE, dtype=np.int8), inflation)


def bimodal(grid=GRID, left=(1.5, 2.0), right=(4.5, 2.0), w_left=0.75, bw=0.3):
    vals = w_left * gaussian_blob(grid, left, bw) + (1 - w_left) * gaussian_blob(grid, right, bw)
    return PriorityGrid(grid, vals).normalized()


# ---------------------------------------------------------------- sampling


def test_blob_is_a_density():
    b = gaussian_blob(GRID, (3.0, 2.0), 0.5)
    assert b.sum() * GRID.cell_area == pytest.approx(1.0)
    assert gaussian_blob(GRID, (-10.0, -10.0), 0.5).sum() == 0.0


def test_single_candidate_follows_the_error_distribution():
    f = bimodal()
    rng = np.random.default_rng(0)
    left = 0
    for _ in range(1000):
        x, _ = sample_next_waypoint(f, WaypointHistory(GRID), (3.0, 2.0), 1, None, rng, commit=False)
        left += x < 3.0
    # empty history: draws follow f_task itself, 75% of the mass on the left
    assert 0.70 <= left / 1000 <= 0.80


def test_nearest_of_m_candidates_is_chosen():
    f = bimodal(w_left=0.5)
    near_left = 0
    for seed in range(200):
        x, _ = sample_next_waypoint(
            f, WaypointHistory(GRID), (0.5, 2.0), 3, None, np.random.default_rng(seed), commit=False
        )
        near_left += x < 3.0
    # with three candidates the left mode is missed only if every draw goes right
    assert near_left / 200 > 0.75


def test_history_pushes_samples_to_the_other_mode():
    f = bimodal(w_left=0.5)
    hist = WaypointHistory(GRID, forgetting=1.0)
    for _ in range(30):
        hist.commit((1.5, 2.0))
    rng = np.random.default_rng(1)
    xs = np.array([sample_next_waypoint(f, hist, (3.0, 2.0), 1, None, rng, commit=False)[0] for _ in range(400)])
    err = np.clip(f.values - hist.density, 0, None)
    right = GRID.centers()[..., 0] > 3.0
    expected = err[right].sum() / err.sum()
    assert expected > 0.8
    assert abs(np.mean(xs > 3.0) - expected) < 4 * math.sqrt(expected * (1 - expected) / 400)


def test_waypoints_land_on_allowed_cells():
    f = bimodal()
    occ = free_occ()
    occ.cells[:, :30] = UNKNOWN
    allowed = traversable(occ)
    rng = np.random.default_rng(2)
    for _ in range(50):
        x, y = sample_next_waypoint(f, WaypointHistory(GRID), (4.0, 2.0), 3, occ, rng)
        ix, iy = (int(v[0]) for v in GRID.cell_of(np.array([x, y])))
        assert allowed[iy, ix]


def test_sampler_errors():
    f = bimodal()
    with pytest.raises(ValueError):
        sample_next_waypoint(f, WaypointHistory(GRID), (0, 0), 0, None, np.random.default_rng(0))
    occ = OccupancyGrid.unknown(GRID)
    with pytest.raises(ValueError, match="no free cell"):
        sample_next_waypoint(f, WaypointHistory(GRID), (0, 0), 1, occ, np.random.default_rng(0))


def test_sampler_coverage_beats_uniform():
    f = bimodal(bw=0.4)
    ours, unif = WaypointHistory(GRID, forgetting=1.0), WaypointHistory(GRID, forgetting=1.0)
    rng = np.random.default_rng(3)
    pos = (3.0, 2.0)
    for _ in range(300):
        pos = sample_next_waypoint(f, ours, pos, 3, None, rng)
        unif.commit(rng.uniform([0, 0], [GRID.nx * 0.1, GRID.ny * 0.1]))
    a = GRID.cell_area
    assert total_variation(ours.density, f.values, a) < total_variation(unif.density, f.values, a)


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_sampler_is_seed_deterministic(seed, M):
    f = bimodal()
    a = sample_next_waypoint(f, WaypointHistory(GRID), (2, 2), M, None, np.random.default_rng(seed))
    b = sample_next_waypoint(f, WaypointHistory(GRID), (2, 2), M, None, np.random.default_rng(seed))
    assert a == b


def test_total_variation_bounds():
    p = bimodal().values
    assert total_variation(p, p, GRID.cell_area) == 0.0
    q = gaussian_blob(GRID, (5.5, 0.5), 0.05)
    assert total_variation(p, q, GRID.cell_area) == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------- planning


def test_astar_start_is_goal():
    trav = np.ones((5, 5), dtype=bool)
    assert astar(trav, (2, 2), (2, 2)) == [(2, 2)]


def test_astar_blocked_endpoints():
    trav = np.ones((5, 5), dtype=bool)
    trav[4, 4] = False
    assert astar(trav, (0, 0), (4, 4)) is None


def _path_len(pts):
    return float(np.hypot(*np.diff(pts, axis=0).T).sum()) if len(pts) > 1 else 0.0


def test_corridor_path_near_optimal():
    grid = GridSpec(0.0, 0.0, 0.1, 60, 40)
    occ = free_occ(grid)
    occ.cells[:, 30] = OCCUPIED
    occ.cells[5:8, 30] = FREE  # doorway near the bottom
    path = plan_path(occ, (1.0, 3.0), (5.0, 3.0))
    assert path is not None
    # shortest route through the doorway center, two straight legs
    door = np.array([3.05, 0.65])
    best = np.hypot(*(door - [1.05, 3.05])) + np.hypot(*(door - [5.05, 3.05]))
    assert _path_len(path) <= 1.05 * best
    assert _path_len(path) >= 0.95 * best


def test_closed_room_is_unreachable():
    occ = free_occ()
    occ.cells[10:20, 10] = OCCUPIED
    occ.cells[10:20, 20] = OCCUPIED
    occ.cells[10, 10:21] = OCCUPIED
    occ.cells[20, 10:21] = OCCUPIED
    assert plan_path(occ, (0.5, 0.5), (1.5, 1.5)) is None


def test_plan_path_rejects_out_of_bounds_goal():
    assert plan_path(free_occ(), (0.5, 0.5), (50.0, 0.5)) is None


def test_inflation_shrinks_traversable_space():
    occ = free_occ(inflation=0.25)
    occ.cells[20, 30] = OCCUPIED
    t = traversable(occ)
    assert not t[20, 32] and t[20, 33]


def test_unknown_cells_are_not_traversable():
    occ = free_occ()
    occ.cells[:, 30] = UNKNOWN
    assert plan_path(occ, (1.0, 1.0), (5.0, 1.0)) is None


def test_project_occupancy_marks_active_objects():
    m = SemanticMap(GRID)
    m.background.cells[:] = FREE
    sq = densify_polygon(np.array([[2.0, 1.0], [2.4, 1.0], [2.4, 1.4], [2.0, 1.4]]), 20)
    insert_new(m, ObjectCandidate.from_points(sq, np.eye(4)[0], "box"), {}, 0.0)
    occ = project_occupancy(m)
    assert occ.cells[12, 22] == OCCUPIED
    assert m.background.cells[12, 22] == FREE


# ---------------------------------------------------------------- following


def test_follower_reaches_goal_on_straight_path():
    path = np.array([[1.0, 2.0], [4.0, 2.0]])
    pose = Pose2D(1.0, 2.0, 0.0)
    for _ in range(40):
        pose, replan = follow_step(pose, path, MODEL)
        assert not replan
    assert np.hypot(*(pose.xy - path[-1])) < 0.05


def test_follower_speed_limits():
    path = np.array([[1.0, 2.0], [4.0, 2.0]])
    pose = Pose2D(1.0, 2.0, 0.0)
    nxt, _ = follow_step(pose, path, MODEL)
    assert np.hypot(*(nxt.xy - pose.xy)) <= MODEL.v_max * MODEL.dt + 1e-12


def test_follower_turns_in_place_toward_target_behind():
    path = np.array([[1.0, 2.0], [0.0, 2.0]])
    pose = Pose2D(1.0, 2.0, 0.0)
    nxt, _ = follow_step(pose, path, MODEL)
    assert np.allclose(nxt.xy, pose.xy)
    assert abs(nxt.heading) == pytest.approx(MODEL.omega_max * MODEL.dt)


def test_follower_vetoes_step_into_occupied_cell():
    occ = free_occ()
    occ.cells[20, 12] = OCCUPIED
    path = np.array([[1.05, 2.05], [2.05, 2.05]])
    pose = Pose2D(1.05, 2.05, 0.0)
    vetoed = False
    for _ in range(10):
        pose, replan = follow_step(pose, path, MODEL, occ)
        if replan:
            vetoed = True
            break
    assert vetoed and pose.x < 1.2


def test_follower_rejects_empty_path():
    with pytest.raises(ValueError):
        follow_step(Pose2D(0, 0, 0), np.zeros((0, 2)), MODEL)


def test_robot_model_validation():
    with pytest.raises(ValueError):
        RobotModel(v_max=0.0)


# ---------------------------------------------------------------- success


def _target(x, y):
    fp = np.array([[-0.1, -0.1], [0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]])
    return GroundTruthObject("t", "book", fp, "dynamic", None, Pose2D(x, y, 0.0))


@pytest.mark.parametrize(
    "pose, ok",
    [
        (Pose2D(1.0, 2.0, 0.0), True),  # 1 m ahead
        (Pose2D(1.0, 2.0, math.pi), False),  # facing away
        (Pose2D(0.0, 2.0, 0.0), False),  # 2 m, beyond r_succ
        (Pose2D(0.6, 2.0, 0.0), True),  # 1.4 m
    ],
)
def test_search_success_geometry(pose, ok):
    assert search_success(pose, _target(2.0, 2.0), SensorSpec(), r_succ=1.5) is ok


def test_search_success_needs_line_of_sight():
    labels = np.zeros(GRID.shape, dtype=int)
    labels[:, 15] = -1  # wall at x = 1.5 m
    robot = Pose2D(1.0, 2.0, 0.0)
    assert not search_success(robot, _target(2.0, 2.0), SensorSpec(), labels, GRID)
    labels[:, 15] = 0
    assert search_success(robot, _target(2.0, 2.0), SensorSpec(), labels, GRID)
