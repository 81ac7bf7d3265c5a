"""Transform algebra, polygon rasterization oracle, relation bookkeeping.

The polygon containment oracle below uses the winding-angle formulation,
independent of the crossing-count implementation under test.
"""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajtest.core import PredictionSet, Point2, ProbabilityMap, TestCase, Trajectory
from trajtest.errors import ContractError, DegenerateInputError, PlacementError, SceneSkip
from trajtest.transforms import (
    MRSpec,
    apply_mr,
    mr_class_change,
    mr_mirror,
    mr_obstacle,
    mr_rescale,
    mr_rotate,
    parse_mr,
    point_in_polygon,
    polygon_cells,
    regular_polygon,
    transform_prediction,
)

from conftest import class_id, make_case, make_history, make_map


# ---------------------------------------------------------------- oracles


def winding_inside(px: float, py: float, vertices: np.ndarray) -> bool:
    """Point-in-polygon by total signed winding angle."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i, 0] - px, vertices[i, 1] - py
        x2, y2 = vertices[(i + 1) % n, 0] - px, vertices[(i + 1) % n, 1] - py
        total += math.atan2(x1 * y2 - y1 * x2, x1 * x2 + y1 * y2)
    return abs(total) > math.pi


def edge_distance(px: float, py: float, vertices: np.ndarray) -> float:
    """Distance from a point to the polygon boundary."""
    best = math.inf
    n = len(vertices)
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        ab = b - a
        t = np.clip(np.dot([px, py] - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        best = min(best, float(np.hypot(*(a + t * ab - [px, py]))))
    return best


def dyadic_points(rng: np.random.Generator, n: int, w: float, h: float) -> np.ndarray:
    """Random points on the 1/256 pixel grid, away from the border."""
    xs = rng.integers(256, int((w - 1) * 256), size=n) / 256.0
    ys = rng.integers(256, int((h - 1) * 256), size=n) / 256.0
    return np.column_stack([xs, ys])


# ------------------------------------------------------- frame map algebra


class TestMirror:
    def test_involution_on_dyadic_points_is_bit_exact(self, tiny_case):
        rng = np.random.default_rng(0)
        pts = dyadic_points(rng, 64, tiny_case.map.width, tiny_case.map.height)
        for axis in ("vertical", "horizontal"):
            tr = mr_mirror(tiny_case, axis)
            tr2 = mr_mirror(tr.follow_up, axis)
            assert np.array_equal(tr2.forward_xy(tr.forward_xy(pts)), pts)
            assert np.array_equal(tr2.follow_up.map.cells, tiny_case.map.cells)
            assert tr2.follow_up.history == tiny_case.history
            assert tr2.follow_up.ground_truth == tiny_case.ground_truth

    def test_vertical_flips_x_only(self, tiny_case):
        tr = mr_mirror(tiny_case, "vertical")
        p = tr.forward(Point2(3.0, 5.0))
        assert p == Point2(tiny_case.map.width - 3.0, 5.0)

    def test_raster_flip_matches_coordinate_flip(self, tiny_case):
        tr = mr_mirror(tiny_case, "vertical")
        src = tiny_case.map
        for x, y in ((0.5, 0.5), (4.5, 21.5), (17.5, 22.5)):
            q = tr.forward(Point2(x, y))
            assert tr.follow_up.map.class_at(q.x, q.y) == src.class_at(x, y)


class TestRotate:
    def test_four_quarter_turns_are_identity(self, tiny_case):
        rng = np.random.default_rng(1)
        pts = dyadic_points(rng, 64, tiny_case.map.width, tiny_case.map.height)
        tc = tiny_case
        moved = pts
        for _ in range(4):
            tr = mr_rotate(tc, 90)
            moved = tr.forward_xy(moved)
            tc = tr.follow_up
        assert np.array_equal(moved, pts)
        assert np.array_equal(tc.map.cells, tiny_case.map.cells)
        assert tc.history == tiny_case.history

    def test_quarter_turn_swaps_dims(self, tiny_case):
        tr = mr_rotate(tiny_case, 90)
        assert tr.src_dims == (tiny_case.map.width, tiny_case.map.height)
        assert tr.dst_dims == (tiny_case.map.height, tiny_case.map.width)
        assert tr.follow_up.map.width == tiny_case.map.height

    def test_mirror_v_then_h_equals_rotate_180(self, tiny_case):
        rng = np.random.default_rng(2)
        pts = dyadic_points(rng, 64, tiny_case.map.width, tiny_case.map.height)
        tr_v = mr_mirror(tiny_case, "vertical")
        tr_h = mr_mirror(tr_v.follow_up, "horizontal")
        tr_180 = mr_rotate(tiny_case, 180)
        assert np.array_equal(tr_h.forward_xy(tr_v.forward_xy(pts)), tr_180.forward_xy(pts))
        assert np.array_equal(tr_h.follow_up.map.cells, tr_180.follow_up.map.cells)
        assert tr_h.follow_up.history == tr_180.follow_up.history

    def test_inverse_round_trip(self, tiny_case):
        rng = np.random.default_rng(3)
        pts = dyadic_points(rng, 32, tiny_case.map.width, tiny_case.map.height)
        for deg in (90, 180, 270):
            tr = mr_rotate(tiny_case, deg)
            assert np.array_equal(tr.inverse_xy(tr.forward_xy(pts)), pts)

    def test_rotation_moves_raster_content_with_points(self, tiny_case):
        for deg in (90, 180, 270):
            tr = mr_rotate(tiny_case, deg)
            for x, y in ((0.5, 0.5), (4.5, 21.5), (3.5, 11.5)):
                q = tr.forward(Point2(x, y))
                assert tr.follow_up.map.class_at(q.x, q.y) == tiny_case.map.class_at(x, y)


class TestRescale:
    def test_round_trip_error_below_1e_9(self, tiny_case):
        rng = np.random.default_rng(4)
        pts = dyadic_points(rng, 64, tiny_case.map.width, tiny_case.map.height)
        tr = mr_rescale(tiny_case, 0.25, 0.2)
        err = np.abs(tr.inverse_xy(tr.forward_xy(pts)) - pts).max()
        assert err <= 1e-9

    def test_dims_round_to_nearest(self):
        tc = TestCase(scene_id="dims", map=make_map(), history=make_history())
        tr = mr_rescale(tc, 0.25, 0.2)  # ratio 0.8 on a 24x32 map
        assert tr.dst_dims == (19, 26)
        tr = mr_rescale(tc, 0.25, 0.3)  # ratio 1.2
        assert tr.dst_dims == (29, 38)

    def test_identity_when_factors_match(self, tiny_case):
        tr = mr_rescale(tiny_case, 0.25, 0.25)
        assert tr.mr.label == "Identity"
        assert np.array_equal(tr.follow_up.map.cells, tiny_case.map.cells)
        assert tr.follow_up.history == tiny_case.history

    def test_raster_resample_is_nearest_neighbour(self, tiny_case):
        tr = mr_rescale(tiny_case, 0.25, 0.2)
        r = 0.2 / 0.25
        cells = tr.follow_up.map.cells
        src = tiny_case.map.cells
        for iy in range(cells.shape[0]):
            for ix in range(cells.shape[1]):
                sx = min(int(math.floor((ix + 0.5) / r)), src.shape[1] - 1)
                sy = min(int(math.floor((iy + 0.5) / r)), src.shape[0] - 1)
                assert cells[iy, ix] == src[sy, sx]

    def test_too_small_target_raster_is_degenerate(self, tiny_case):
        with pytest.raises(DegenerateInputError):
            mr_rescale(tiny_case, 1.0, 0.05)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_algebra_property_random_points(seed):
    """Composition identities hold for random dyadic point clouds."""
    tc = make_case()
    rng = np.random.default_rng(seed)
    pts = dyadic_points(rng, 16, tc.map.width, tc.map.height)
    for axis in ("vertical", "horizontal"):
        t1 = mr_mirror(tc, axis)
        t2 = mr_mirror(t1.follow_up, axis)
        assert np.array_equal(t2.forward_xy(t1.forward_xy(pts)), pts)
    t90 = mr_rotate(tc, 90)
    acc = t90.forward_xy(pts)
    cur = t90.follow_up
    for _ in range(3):
        step = mr_rotate(cur, 90)
        acc = step.forward_xy(acc)
        cur = step.follow_up
    assert np.array_equal(acc, pts)
    tr = mr_rescale(tc, 0.25, 0.3)
    assert np.abs(tr.inverse_xy(tr.forward_xy(pts)) - pts).max() <= 1e-9


# ------------------------------------------------------------ predictions


def _prediction_for(tc, k: int = 3) -> PredictionSet:
    rng = np.random.default_rng(7)
    base = tc.ground_truth.points
    trajs = tuple(
        Trajectory(points=base + rng.integers(-64, 64, size=base.shape) / 256.0, dt=tc.history.dt)
        for _ in range(k)
    )
    vals = np.zeros((tc.map.height, tc.map.width))
    vals[10, 5] = 0.5
    vals[20, 18] = 0.5
    return PredictionSet(trajectories=trajs, prob_map=ProbabilityMap(values=vals))


class TestTransformPrediction:
    def test_rigid_transport_permutes_prob_cells_losslessly(self, tiny_case):
        pred = _prediction_for(tiny_case)
        for tr in (mr_mirror(tiny_case, "vertical"), mr_rotate(tiny_case, 180)):
            moved = transform_prediction(pred, tr)
            assert moved.prob_map is not None
            assert np.array_equal(
                np.sort(moved.prob_map.values.ravel()),
                np.sort(pred.prob_map.values.ravel()),
            )

    def test_prob_mass_follows_the_frame_map(self, tiny_case):
        pred = _prediction_for(tiny_case)
        tr = mr_rotate(tiny_case, 90)
        moved = transform_prediction(pred, tr)
        q = tr.forward(Point2(5.5, 10.5))  # center of the 0.5 spike
        ix, iy = int(q.x), int(q.y)
        assert moved.prob_map.values[iy, ix] == 0.5

    def test_trajectories_follow_the_frame_map(self, tiny_case):
        pred = _prediction_for(tiny_case)
        tr = mr_mirror(tiny_case, "horizontal")
        moved = transform_prediction(pred, tr)
        expect = tr.forward_xy(pred.trajectories[0].points)
        assert np.array_equal(moved.trajectories[0].points, expect)

    def test_rescale_resample_keeps_unit_mass(self, tiny_case):
        pred = _prediction_for(tiny_case)
        tr = mr_rescale(tiny_case, 0.25, 0.3)
        moved = transform_prediction(pred, tr)
        assert math.isclose(float(moved.prob_map.values.sum()), 1.0, abs_tol=1e-9)

    def test_refuses_map_altering_relations(self, tiny_case):
        pred = _prediction_for(tiny_case)
        tr = mr_class_change(tiny_case, "terrain", "road")
        with pytest.raises(ContractError):
            transform_prediction(pred, tr)

    def test_prediction_without_map_stays_mapless(self, tiny_case):
        pred = PredictionSet(trajectories=_prediction_for(tiny_case).trajectories)
        moved = transform_prediction(pred, mr_mirror(tiny_case, "vertical"))
        assert moved.prob_map is None


# ------------------------------------------------------------ class change


class TestClassChange:
    def test_roi_is_exactly_the_relabeled_cells(self, tiny_case):
        tr = mr_class_change(tiny_case, "terrain", "road")
        src = tiny_case.map.cells
        dst = tr.follow_up.map.cells
        changed = {
            (int(x), int(y))
            for y, x in zip(*np.nonzero(src != dst))
        }
        assert tr.roi == frozenset(changed)
        assert not (dst == class_id("terrain")).any()
        assert tr.expected_effect == "decrease"
        assert tr.label_preserving is False

    def test_frame_is_unchanged(self, tiny_case):
        tr = mr_class_change(tiny_case, "terrain", "pavement")
        assert tr.follow_up.history == tiny_case.history
        pts = np.array([[3.25, 4.5]])
        assert np.array_equal(tr.forward_xy(pts), pts)

    def test_missing_source_class_skips_scene(self, tiny_case):
        # the probe map has no background cells
        with pytest.raises(SceneSkip):
            mr_class_change(tiny_case, "background", "road", effect="decrease")

    def test_unknown_transition_needs_explicit_effect(self, tiny_case):
        with pytest.raises(ContractError):
            mr_class_change(tiny_case, "background", "terrain")
        tr = mr_class_change(tiny_case, "pavement", "background", effect="decrease")
        assert tr.expected_effect == "decrease"


# --------------------------------------------------------------- obstacle


class TestObstacle:
    def test_polygon_cells_match_winding_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cx = float(rng.uniform(4, 20)) + 0.137
            cy = float(rng.uniform(4, 20)) + 0.261
            r = float(rng.uniform(2.5, 6.0))
            verts = regular_polygon(cx, cy, r)
            got = polygon_cells(verts, 24, 24)
            expect = set()
            for iy in range(24):
                for ix in range(24):
                    px, py = ix + 0.5, iy + 0.5
                    if edge_distance(px, py, verts) < 1e-6:
                        continue  # boundary grazing is allowed to go either way
                    if winding_inside(px, py, verts):
                        expect.add((ix, iy))
            assert expect <= got
            assert all(
                winding_inside(ix + 0.5, iy + 0.5, verts)
                or edge_distance(ix + 0.5, iy + 0.5, verts) < 1e-6
                for ix, iy in got
            )

    def test_point_in_polygon_against_winding_oracle(self):
        rng = np.random.default_rng(12)
        checked = 0
        for _ in range(400):
            verts = regular_polygon(
                float(rng.uniform(3, 9)), float(rng.uniform(3, 9)), float(rng.uniform(1, 4)),
                sides=int(rng.integers(3, 13)),
            )
            px, py = float(rng.uniform(0, 12)), float(rng.uniform(0, 12))
            if edge_distance(px, py, verts) < 1e-9:
                continue
            assert point_in_polygon(px, py, verts) == winding_inside(px, py, verts)
            checked += 1
        assert checked > 300

    def test_obstacle_cells_become_the_obstacle_class(self, tiny_case):
        pred = _prediction_for(tiny_case)
        tr = mr_obstacle(tiny_case, pred)
        assert tr.roi
        for ix, iy in tr.roi:
            assert tr.follow_up.map.cells[iy, ix] == class_id("structure")
        # everything off the region is untouched
        mask = np.zeros_like(tiny_case.map.cells, dtype=bool)
        for ix, iy in tr.roi:
            mask[iy, ix] = True
        assert np.array_equal(tr.follow_up.map.cells[~mask], tiny_case.map.cells[~mask])
        assert tr.expected_effect == "avoidance"

    def test_anchor_sits_at_the_requested_fraction(self, tiny_case):
        pred = _prediction_for(tiny_case)
        path = pred.trajectories[0].points
        tr = mr_obstacle(tiny_case, pred, MRSpec.obstacle(radius=3.0, fraction=1.0))
        end = path[-1]
        assert any(
            math.hypot(ix + 0.5 - end[0], iy + 0.5 - end[1]) <= 3.5 for ix, iy in tr.roi
        )

    def test_anchor_too_close_to_last_observation_fails(self, tiny_case):
        pred = _prediction_for(tiny_case)
        with pytest.raises(PlacementError):
            mr_obstacle(tiny_case, pred, MRSpec.obstacle(radius=6.0, fraction=0.0))

    def test_apply_mr_requires_source_prediction(self, tiny_case):
        with pytest.raises(ContractError):
            apply_mr(tiny_case, MRSpec.obstacle())


# ------------------------------------------------------------- spec + cli


class TestMRSpec:
    def test_labels(self):
        assert MRSpec.mirror("vertical").label == "Mirror-v"
        assert MRSpec.mirror("horizontal").label == "Mirror-h"
        assert MRSpec.rotate(270).label == "Rotate-270"
        assert MRSpec.rescale(0.25, 0.2).label == "Resize-0.2"
        assert MRSpec.rescale(0.25, 0.25).label == "Identity"
        assert MRSpec.class_change("terrain", "road").label == "ClassChange-terrain-road"
        assert MRSpec.obstacle().label == "Obstacle-structure-r6"

    def test_validation(self):
        with pytest.raises(ContractError):
            MRSpec(kind="mirror", axis="diagonal")
        with pytest.raises(ContractError):
            MRSpec(kind="rotate", degrees=45)
        with pytest.raises(ContractError):
            MRSpec(kind="rescale", s_old=0.25, s_new=0.0)
        with pytest.raises(ContractError):
            MRSpec(kind="class_change", source_class="road", target_class="road")
        with pytest.raises(ContractError):
            MRSpec(kind="obstacle", radius=1.0)
        with pytest.raises(ContractError):
            MRSpec(kind="warp")

    def test_parse_round_trip(self):
        assert parse_mr("mirror-v") == MRSpec.mirror("vertical")
        assert parse_mr("rotate-180") == MRSpec.rotate(180)
        assert parse_mr("rescale-0.2") == MRSpec.rescale(0.25, 0.2)
        assert parse_mr("rescale-0.5-0.4") == MRSpec.rescale(0.5, 0.4)
        assert parse_mr("identity") == MRSpec.rescale(0.25, 0.25)
        assert parse_mr("class-change-terrain-road") == MRSpec.class_change("terrain", "road")
        assert parse_mr("obstacle") == MRSpec.obstacle()
        assert parse_mr("obstacle-tree-r4-f0.75") == MRSpec.obstacle("tree", 4.0, 0.75)
        with pytest.raises(ContractError):
            parse_mr("rotate-45")
        with pytest.raises(ContractError):
            parse_mr("shear")
