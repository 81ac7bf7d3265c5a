"""Domain type invariants: construction contracts, immutability, equality."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trajtest.core import (
    DEFAULT_LEGEND,
    ClassEntry,
    ClassLegend,
    Point2,
    PredictionSet,
    ProbabilityMap,
    SegmentationMap,
    TestCase,
    Trajectory,
    cell_of,
    validate_test_case,
)
from trajtest.errors import ContractError
from trajtest.harness import HarnessConfig

from conftest import make_case, make_map


def test_point_rejects_non_finite():
    with pytest.raises(ContractError):
        Point2(float("nan"), 0.0)
    with pytest.raises(ContractError):
        Point2(0.0, float("inf"))


def test_cell_of_floor_and_clamp():
    assert cell_of(2.7, 3.2, 10, 10) == (2, 3)
    assert cell_of(-1.0, 100.0, 10, 10) == (0, 9)
    # boundary x == width lands in the last column
    assert cell_of(10.0, 0.0, 10, 10) == (9, 0)
    assert cell_of(0.0, 0.0, 10, 10) == (0, 0)


class TestTrajectory:
    def test_shape_and_dt_validation(self):
        with pytest.raises(ContractError):
            Trajectory(points=np.zeros((0, 2)), dt=0.4)
        with pytest.raises(ContractError):
            Trajectory(points=np.zeros((3, 3)), dt=0.4)
        with pytest.raises(ContractError):
            Trajectory(points=np.zeros((3, 2)), dt=0.0)
        with pytest.raises(ContractError):
            Trajectory(points=np.array([[0.0, np.nan]]), dt=0.4)

    def test_points_are_frozen_and_copied(self):
        src = np.zeros((4, 2))
        t = Trajectory(points=src, dt=0.4)
        src[0, 0] = 99.0
        assert t.points[0, 0] == 0.0
        with pytest.raises(ValueError):
            t.points[0, 0] = 1.0

    def test_equality_is_by_value(self):
        a = Trajectory(points=np.arange(8.0).reshape(4, 2), dt=0.4)
        b = Trajectory(points=np.arange(8.0).reshape(4, 2), dt=0.4)
        c = Trajectory(points=np.arange(8.0).reshape(4, 2), dt=0.5)
        assert a == b and a != c
        assert len(a) == 4
        assert a.point(1) == Point2(2.0, 3.0)


class TestLegend:
    def test_default_legend_walkability(self):
        table = DEFAULT_LEGEND.walkability_table()
        assert table[DEFAULT_LEGEND.id_of("pavement")] == 1.0
        assert table[DEFAULT_LEGEND.id_of("structure")] == 0.0
        assert table[DEFAULT_LEGEND.id_of("tree")] == 0.0
        assert DEFAULT_LEGEND.name_of(4) == "terrain"

    def test_requires_contiguous_ids(self):
        with pytest.raises(ContractError):
            ClassLegend(entries=(ClassEntry(0, "background", 0.1), ClassEntry(2, "road", 0.2)))

    def test_requires_background_zero(self):
        with pytest.raises(ContractError):
            ClassLegend(entries=(ClassEntry(0, "road", 0.2),))

    def test_rejects_duplicate_names(self):
        with pytest.raises(ContractError):
            ClassLegend(
                entries=(ClassEntry(0, "background", 0.1), ClassEntry(1, "background", 0.2))
            )

    def test_walkability_bounds(self):
        with pytest.raises(ContractError):
            ClassEntry(0, "background", 1.5)


class TestSegmentationMap:
    def test_rejects_out_of_legend_ids(self):
        with pytest.raises(ContractError):
            SegmentationMap(cells=np.full((4, 4), 17, dtype=np.uint8), legend=DEFAULT_LEGEND)

    def test_class_at_uses_cell_convention(self):
        m = make_map()
        assert m.class_at(0.5, 10.5) == DEFAULT_LEGEND.id_of("road")
        assert m.class_at(5.0, 21.0) == DEFAULT_LEGEND.id_of("structure")

    def test_walkability_grid_matches_table(self):
        m = make_map()
        grid = m.walkability_grid()
        assert grid.shape == (m.height, m.width)
        assert grid[11, 3] == 0.2  # road row
        assert grid[21, 5] == 0.0  # structure block

    def test_class_counts_total(self):
        m = make_map()
        assert sum(m.class_counts().values()) == m.width * m.height


class TestProbabilityMap:
    def test_normalizes_to_unit_mass(self):
        pm = ProbabilityMap(values=np.full((4, 5), 2.0))
        assert math.isclose(float(pm.values.sum()), 1.0, abs_tol=1e-12)

    def test_skips_renormalization_when_already_unit(self):
        vals = np.zeros((2, 2))
        vals[0, 0] = 0.25
        vals[1, 1] = 0.75
        pm = ProbabilityMap(values=vals)
        # bit-exact passthrough, no division applied
        assert pm.values[1, 1] == 0.75

    def test_rejects_bad_mass(self):
        with pytest.raises(ContractError):
            ProbabilityMap(values=np.zeros((3, 3)))
        with pytest.raises(ContractError):
            ProbabilityMap(values=np.array([[1.0, -0.5]]))
        with pytest.raises(ContractError):
            ProbabilityMap(values=np.array([[np.inf, 1.0]]))

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
    def test_unit_mass_property(self, h, w, seed):
        vals = np.random.default_rng(seed).uniform(0.01, 5.0, size=(h, w))
        pm = ProbabilityMap(values=vals)
        assert math.isclose(float(pm.values.sum()), 1.0, abs_tol=1e-9)


class TestPredictionSet:
    def test_requires_uniform_length(self):
        t1 = Trajectory(points=np.zeros((3, 2)), dt=0.4)
        t2 = Trajectory(points=np.zeros((4, 2)), dt=0.4)
        with pytest.raises(ContractError):
            PredictionSet(trajectories=(t1, t2))

    def test_stacked_shape(self):
        ts = tuple(Trajectory(points=np.full((5, 2), float(i)), dt=0.4) for i in range(3))
        ps = PredictionSet(trajectories=ts)
        assert ps.k == 3 and ps.horizon == 5
        assert ps.stacked().shape == (3, 5, 2)
        assert np.all(ps.stacked()[2] == 2.0)


class TestValidateTestCase:
    def test_clean_scene_has_no_messages(self, tiny_case):
        cfg = HarnessConfig(history_len=8, horizon=12, dt=0.4)
        assert validate_test_case(tiny_case, cfg) == []

    def test_reports_each_convention_breach(self):
        tc = make_case()
        cfg = HarnessConfig(history_len=9, horizon=11, dt=0.5)
        msgs = validate_test_case(tc, cfg)
        assert any("history length" in m for m in msgs)
        assert any("horizon" in m for m in msgs)
        assert any("dt" in m for m in msgs)

    def test_reports_out_of_bounds_points(self):
        pts = np.array([[1.0, 1.0], [500.0, 1.0]])
        tc = TestCase(
            scene_id="oob",
            map=make_map(),
            history=Trajectory(points=pts, dt=0.4),
        )
        cfg = HarnessConfig(history_len=2, horizon=12, dt=0.4)
        assert any("outside map bounds" in m for m in validate_test_case(tc, cfg))

    def test_dt_mismatch_between_history_and_gt(self):
        with pytest.raises(ContractError):
            TestCase(
                scene_id="x",
                map=make_map(),
                history=Trajectory(points=np.zeros((2, 2)), dt=0.4),
                ground_truth=Trajectory(points=np.zeros((2, 2)), dt=0.5),
            )
