"""Core domain types.

Coordinate convention: continuous positions live in [0, W] x [0, H], x along the
width axis, y along the height axis. The raster cell containing a point (x, y)
is (floor(x), floor(y)) clamped to the raster; raster arrays are stored
row-major with y as the outer index, i.e. ``cells[y][x]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .errors import ContractError

if TYPE_CHECKING:  # pragma: no cover
    from .harness import HarnessConfig


def _frozen_array(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def cell_of(x: float, y: float, width: int, height: int) -> tuple[int, int]:
    """Raster cell (ix, iy) containing a continuous point, clamped to bounds."""
    ix = min(max(int(math.floor(x)), 0), width - 1)
    iy = min(max(int(math.floor(y)), 0), height - 1)
    return ix, iy


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ContractError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A timed 2-D polyline: ``points`` has shape (L, 2), spacing ``dt`` seconds."""

    points: np.ndarray
    dt: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ContractError(f"trajectory points must have shape (L>=1, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ContractError("trajectory contains non-finite coordinates")
        if not (self.dt > 0):
            raise ContractError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "points", _frozen_array(pts, np.float64))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def point(self, i: int) -> Point2:
        return Point2(float(self.points[i, 0]), float(self.points[i, 1]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.points, other.points)


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    walkability: float

    def __post_init__(self):
        if not 0.0 <= self.walkability <= 1.0:
            raise ContractError(f"walkability must lie in [0, 1], got {self.walkability}")


@dataclass(frozen=True)
class ClassLegend:
    """Semantic classes of a segmentation raster, ids contiguous from zero."""

    entries: tuple[ClassEntry, ...]

    def __post_init__(self):
        ids = [e.class_id for e in self.entries]
        if sorted(ids) != list(range(len(ids))):
            raise ContractError(f"class ids must be contiguous from 0, got {sorted(ids)}")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ContractError("class names must be unique")
        background = [e for e in self.entries if e.name == "background"]
        if len(background) != 1 or background[0].class_id != 0:
            raise ContractError("legend needs exactly one 'background' entry with class id 0")

    def __len__(self) -> int:
        return len(self.entries)

    def id_of(self, name: str) -> int:
        for e in self.entries:
            if e.name == name:
                return e.class_id
        raise ContractError(f"unknown class name {name!r}")

    def name_of(self, class_id: int) -> str:
        return self.by_id(class_id).name

    def by_id(self, class_id: int) -> ClassEntry:
        for e in self.entries:
            if e.class_id == class_id:
                return e
        raise ContractError(f"unknown class id {class_id}")

    def walkability_table(self) -> np.ndarray:
        """Walkability indexed by class id."""
        table = np.zeros(len(self.entries), dtype=np.float64)
        for e in self.entries:
            table[e.class_id] = e.walkability
        return table


DEFAULT_LEGEND = ClassLegend(
    entries=(
        ClassEntry(0, "background", 0.1),
        ClassEntry(1, "road", 0.2),
        ClassEntry(2, "pavement", 1.0),
        ClassEntry(3, "structure", 0.0),
        ClassEntry(4, "terrain", 0.6),
        ClassEntry(5, "tree", 0.0),
    )
)


@dataclass(frozen=True, eq=False)
class SegmentationMap:
    """Per-cell class ids, shape (H, W) uint8."""

    cells: np.ndarray
    legend: ClassLegend

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ContractError(f"cells must be a non-empty 2-D raster, got shape {cells.shape}")
        if cells.dtype != np.uint8:
            if not np.array_equal(cells, cells.astype(np.uint8)):
                raise ContractError("cell values do not fit uint8")
            cells = cells.astype(np.uint8)
        if cells.max(initial=0) >= len(self.legend):
            raise ContractError("cell value outside legend id range")
        object.__setattr__(self, "cells", _frozen_array(cells, np.uint8))

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    def class_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.cells, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def class_at(self, x: float, y: float) -> int:
        ix, iy = cell_of(x, y, self.width, self.height)
        return int(self.cells[iy, ix])

    def walkability_grid(self) -> np.ndarray:
        return self.legend.walkability_table()[self.cells]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegmentationMap):
            return NotImplemented
        return self.legend == other.legend and np.array_equal(self.cells, other.cells)


_RENORM_SKIP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Non-negative raster normalized to unit mass, shape (H, W) float64.

    Construction divides by the total mass unless it is already within
    1e-12 of one; the skip keeps lossless raster permutations bit-exact.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ContractError(f"values must be a non-empty 2-D raster, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ContractError("probability map contains non-finite values")
        if np.any(vals < 0):
            raise ContractError("probability map contains negative values")
        total = float(vals.sum())
        if total <= 0:
            raise ContractError("probability map has zero total mass")
        if abs(total - 1.0) > _RENORM_SKIP_TOL:
            vals = vals / total
        object.__setattr__(self, "values", _frozen_array(vals, np.float64))

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProbabilityMap):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class TestCase:
    """One scene: a segmentation map, an observed history, optional ground truth."""

    scene_id: str
    map: SegmentationMap
    history: Trajectory
    ground_truth: Trajectory | None = None

    def __post_init__(self):
        if not self.scene_id:
            raise ContractError("scene_id must be non-empty")
        if self.ground_truth is not None and self.ground_truth.dt != self.history.dt:
            raise ContractError("history and ground truth must share dt")

    def __eq__(self, other) -> bool:
        if not isinstance(other, TestCase):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.map == other.map
            and self.history == other.history
            and self.ground_truth == other.ground_truth
        )


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """K sampled future trajectories plus an optional probability raster."""

    trajectories: tuple[Trajectory, ...]
    prob_map: ProbabilityMap | None = None
    sut_seed: int = 0

    def __post_init__(self):
        if len(self.trajectories) < 1:
            raise ContractError("prediction set needs at least one trajectory")
        lengths = {len(t) for t in self.trajectories}
        if len(lengths) != 1:
            raise ContractError(f"all sampled trajectories must share a length, got {sorted(lengths)}")
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    @property
    def k(self) -> int:
        return len(self.trajectories)

    @property
    def horizon(self) -> int:
        return len(self.trajectories[0])

    def stacked(self) -> np.ndarray:
        """All samples as one array of shape (K, T, 2)."""
        return np.stack([t.points for t in self.trajectories])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PredictionSet):
            return NotImplemented
        return (
            self.sut_seed == other.sut_seed
            and self.trajectories == other.trajectories
            and self.prob_map == other.prob_map
        )


def _points_in_bounds(points: np.ndarray, width: int, height: int) -> Iterable[int]:
    for i, (x, y) in enumerate(points):
        if not (0.0 <= x <= width and 0.0 <= y <= height):
            yield i


def validate_test_case(tc: TestCase, cfg: "HarnessConfig") -> list[str]:
    """Diagnostic messages for a scene; empty list means clean.

    Checks are advisory: the constructor already enforces structural
    invariants, this inspects conventions the harness relies on.
    """
    messages: list[str] = []
    w, h = tc.map.width, tc.map.height
    if len(tc.history) != cfg.history_len:
        messages.append(f"history length {len(tc.history)} != configured history length {cfg.history_len}")
    for i in _points_in_bounds(tc.history.points, w, h):
        messages.append(f"history point {i} outside map bounds")
    if tc.ground_truth is not None:
        if len(tc.ground_truth) != cfg.horizon:
            messages.append(f"ground_truth length {len(tc.ground_truth)} != horizon {cfg.horizon}")
        for i in _points_in_bounds(tc.ground_truth.points, w, h):
            messages.append(f"ground_truth point {i} outside map bounds")
    if abs(tc.history.dt - cfg.dt) > 1e-12:
        messages.append(f"dt {tc.history.dt} != configured dt {cfg.dt}")
    return messages
