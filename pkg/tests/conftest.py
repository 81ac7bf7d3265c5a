"""Shared fixtures and the acceptance summary hook.

Scene fixtures use coordinates on the 1/256 pixel grid so that mirror and
rotation transforms are bit-exact in float64; several determinism tests rely
on that.
"""
from __future__ import annotations

import numpy as np
import pytest

from trajtest.core import DEFAULT_LEGEND, SegmentationMap, TestCase, Trajectory
from trajtest.scenegen import SceneRecipe, generate_scene

TestCase.__test__ = False  # domain type, not a pytest class

# nodeid -> (description, outcome) for tests/test_acceptance.py
_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    rep = out.get_result()
    if rep.when == "call" and "test_acceptance.py" in str(item.fspath):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _ACCEPTANCE[item.nodeid] = (doc, rep.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE):
        doc, outcome = _ACCEPTANCE[nodeid]
        word = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{word}  {doc}")


def class_id(name: str) -> int:
    return DEFAULT_LEGEND.id_of(name)


def make_map(width: int = 24, height: int = 32) -> SegmentationMap:
    """Small map with one row band of road/pavement and a structure block."""
    cells = np.full((height, width), class_id("terrain"), dtype=np.uint8)
    cells[10:13, :] = class_id("road")
    cells[8:10, :] = class_id("pavement")
    cells[13:15, :] = class_id("pavement")
    cells[20:26, 4:10] = class_id("structure")
    cells[22:24, 16:19] = class_id("tree")
    return SegmentationMap(cells=cells, legend=DEFAULT_LEGEND)


def make_history(n: int = 8, dt: float = 0.4) -> Trajectory:
    """Dyadic walking history along the pavement strip, asymmetric wiggle."""
    xs = 3.0 + 2.0 * np.arange(n)
    wig = np.array([0.25 if i % 3 == 0 else -0.25 if i % 3 == 1 else 0.125
                    for i in range(n)])
    ys = 8.5 + wig
    return Trajectory(points=np.column_stack([xs, ys]), dt=dt)


def make_case(scene_id: str = "probe", n: int = 8, horizon: int = 12,
              dt: float = 0.4) -> TestCase:
    # width 48 keeps the whole history + ground truth walk inside the raster
    hist = make_history(n + horizon, dt)
    return TestCase(
        scene_id=scene_id,
        map=make_map(width=48),
        history=Trajectory(points=hist.points[:n], dt=dt),
        ground_truth=Trajectory(points=hist.points[n:n + horizon], dt=dt),
    )


@pytest.fixture
def tiny_case() -> TestCase:
    return make_case()


@pytest.fixture(scope="session")
def small_corpus() -> list[TestCase]:
    """Six generated scenes, enough for harness behavior tests."""
    recipes = [SceneRecipe(scene_id=f"s{i:02d}", seed=1000 + i) for i in range(6)]
    return [generate_scene(r) for r in recipes]
