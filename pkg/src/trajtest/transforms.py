"""Scene transformations and their bookkeeping.

Label-preserving transforms (mirror, rotate, rescale) come with an exact frame
map so predictions made on the source scene can be carried into the follow-up
frame. Map-altering transforms (class change, obstacle) keep the frame and
report the set of edited cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .core import PredictionSet, Point2, ProbabilityMap, SegmentationMap, TestCase, Trajectory
from .errors import ContractError, DegenerateInputError, PlacementError, SceneSkip

MIRROR_AXES = ("vertical", "horizontal")
ROTATION_DEGREES = (90, 180, 270)
EFFECTS = ("increase", "decrease", "avoidance")
OBSTACLE_SIDES = 12

# Expected occupancy shift on the edited region for each class transition.
DEFAULT_TRANSITIONS: dict[tuple[str, str], str] = {
    ("pavement", "road"): "decrease",
    ("terrain", "road"): "decrease",
    ("road", "pavement"): "increase",
    ("road", "terrain"): "increase",
    ("road", "structure"): "avoidance",
    ("road", "tree"): "avoidance",
    ("pavement", "structure"): "avoidance",
    ("pavement", "tree"): "avoidance",
    ("terrain", "structure"): "avoidance",
    ("terrain", "tree"): "avoidance",
    ("structure", "road"): "increase",
    ("structure", "pavement"): "increase",
    ("structure", "terrain"): "increase",
    ("tree", "road"): "increase",
    ("tree", "pavement"): "increase",
    ("tree", "terrain"): "increase",
    ("terrain", "pavement"): "increase",
    ("pavement", "terrain"): "decrease",
}


@dataclass(frozen=True)
class MRSpec:
    """Declarative description of one metamorphic relation instance."""

    kind: str
    axis: str | None = None
    degrees: int | None = None
    s_old: float | None = None
    s_new: float | None = None
    source_class: str | None = None
    target_class: str | None = None
    expected_effect: str | None = None
    obstacle_class: str = "structure"
    radius: float = 6.0
    fraction: float = 0.5

    def __post_init__(self):
        if self.kind == "mirror":
            if self.axis not in MIRROR_AXES:
                raise ContractError(f"mirror axis must be one of {MIRROR_AXES}, got {self.axis!r}")
        elif self.kind == "rotate":
            if self.degrees not in ROTATION_DEGREES:
                raise ContractError(f"rotation must be one of {ROTATION_DEGREES}, got {self.degrees!r}")
        elif self.kind == "rescale":
            for s in (self.s_old, self.s_new):
                if s is None or not (0.0 < s <= 1.0):
                    raise ContractError(f"rescale factors must lie in (0, 1], got {self.s_old}, {self.s_new}")
        elif self.kind == "class_change":
            if not self.source_class or not self.target_class:
                raise ContractError("class_change needs source_class and target_class")
            if self.source_class == self.target_class:
                raise ContractError("class_change source and target must differ")
            if self.expected_effect is not None and self.expected_effect not in EFFECTS:
                raise ContractError(f"expected_effect must be one of {EFFECTS}")
        elif self.kind == "obstacle":
            if self.obstacle_class not in ("structure", "tree"):
                raise ContractError("obstacle class must be 'structure' or 'tree'")
            if self.radius < 2.0:
                raise ContractError(f"obstacle radius must be >= 2 px, got {self.radius}")
            if not 0.0 <= self.fraction <= 1.0:
                raise ContractError(f"anchor fraction must lie in [0, 1], got {self.fraction}")
        else:
            raise ContractError(f"unknown relation kind {self.kind!r}")

    @classmethod
    def mirror(cls, axis: str) -> "MRSpec":
        return cls(kind="mirror", axis=axis)

    @classmethod
    def rotate(cls, degrees: int) -> "MRSpec":
        return cls(kind="rotate", degrees=degrees)

    @classmethod
    def rescale(cls, s_old: float, s_new: float) -> "MRSpec":
        return cls(kind="rescale", s_old=s_old, s_new=s_new)

    @classmethod
    def class_change(cls, source: str, target: str, effect: str | None = None) -> "MRSpec":
        if effect is None:
            effect = DEFAULT_TRANSITIONS.get((source, target))
            if effect is None:
                raise ContractError(
                    f"no default effect for transition {source}->{target}; pass expected_effect"
                )
        return cls(kind="class_change", source_class=source, target_class=target, expected_effect=effect)

    @classmethod
    def obstacle(cls, obstacle_class: str = "structure", radius: float = 6.0, fraction: float = 0.5) -> "MRSpec":
        return cls(kind="obstacle", obstacle_class=obstacle_class, radius=radius,
                   fraction=fraction, expected_effect="avoidance")

    @property
    def label_preserving(self) -> bool:
        return self.kind in ("mirror", "rotate", "rescale")

    @property
    def label(self) -> str:
        if self.kind == "mirror":
            return "Mirror-v" if self.axis == "vertical" else "Mirror-h"
        if self.kind == "rotate":
            return f"Rotate-{self.degrees}"
        if self.kind == "rescale":
            if self.s_old == self.s_new:
                return "Identity"
            return f"Resize-{self.s_new:g}"
        if self.kind == "class_change":
            return f"ClassChange-{self.source_class}-{self.target_class}"
        return f"Obstacle-{self.obstacle_class}-r{self.radius:g}"


def parse_mr(token: str, default_s_old: float = 0.25) -> MRSpec:
    """Parse one relation token of the command-line grammar."""
    t = token.strip().lower()
    if t == "mirror-v":
        return MRSpec.mirror("vertical")
    if t == "mirror-h":
        return MRSpec.mirror("horizontal")
    if t.startswith("rotate-"):
        return MRSpec.rotate(int(t.split("-", 1)[1]))
    if t == "identity":
        return MRSpec.rescale(default_s_old, default_s_old)
    if t.startswith("rescale-"):
        parts = t.split("-")[1:]
        if len(parts) == 1:
            return MRSpec.rescale(default_s_old, float(parts[0]))
        if len(parts) == 2:
            return MRSpec.rescale(float(parts[0]), float(parts[1]))
        raise ContractError(f"bad rescale token {token!r}")
    if t.startswith("class-change-"):
        parts = t.split("-")[2:]
        if len(parts) != 2:
            raise ContractError(f"bad class-change token {token!r}")
        return MRSpec.class_change(parts[0], parts[1])
    if t == "obstacle":
        return MRSpec.obstacle()
    if t.startswith("obstacle-"):
        parts = t.split("-")[1:]
        cls_name = parts[0]
        radius, fraction = 6.0, 0.5
        for p in parts[1:]:
            if p.startswith("r"):
                radius = float(p[1:])
            elif p.startswith("f"):
                fraction = float(p[1:])
            else:
                raise ContractError(f"bad obstacle token {token!r}")
        return MRSpec.obstacle(cls_name, radius, fraction)
    raise ContractError(f"unknown relation token {token!r}")


_ArrayMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TransformResult:
    """Follow-up scene plus the frame map between source and follow-up."""

    mr: MRSpec
    follow_up: TestCase
    label_preserving: bool
    forward_xy: _ArrayMap
    inverse_xy: _ArrayMap
    src_dims: tuple[int, int]
    dst_dims: tuple[int, int]
    roi: frozenset[tuple[int, int]] | None = None
    expected_effect: str | None = None

    def forward(self, p: Point2) -> Point2:
        out = self.forward_xy(np.array([[p.x, p.y]], dtype=np.float64))
        return Point2(float(out[0, 0]), float(out[0, 1]))

    def inverse(self, p: Point2) -> Point2:
        out = self.inverse_xy(np.array([[p.x, p.y]], dtype=np.float64))
        return Point2(float(out[0, 0]), float(out[0, 1]))


def _identity_xy(arr: np.ndarray) -> np.ndarray:
    return np.array(arr, dtype=np.float64, copy=True)


def _transform_trajectory(t: Trajectory | None, fwd: _ArrayMap) -> Trajectory | None:
    if t is None:
        return None
    return Trajectory(points=fwd(t.points), dt=t.dt)


def _frame_case(tc: TestCase, cells: np.ndarray, fwd: _ArrayMap) -> TestCase:
    return TestCase(
        scene_id=tc.scene_id,
        map=SegmentationMap(cells=cells, legend=tc.map.legend),
        history=_transform_trajectory(tc.history, fwd),
        ground_truth=_transform_trajectory(tc.ground_truth, fwd),
    )


def mr_mirror(tc: TestCase, axis: str) -> TransformResult:
    """Reflect the scene across the map's vertical or horizontal centerline."""
    spec = MRSpec.mirror(axis)
    w, h = tc.map.width, tc.map.height
    if axis == "vertical":
        def fwd(arr: np.ndarray) -> np.ndarray:
            out = np.array(arr, dtype=np.float64, copy=True)
            out[:, 0] = w - out[:, 0]
            return out
        cells = tc.map.cells[:, ::-1].copy()
    else:
        def fwd(arr: np.ndarray) -> np.ndarray:
            out = np.array(arr, dtype=np.float64, copy=True)
            out[:, 1] = h - out[:, 1]
            return out
        cells = tc.map.cells[::-1, :].copy()
    return TransformResult(
        mr=spec, follow_up=_frame_case(tc, cells, fwd), label_preserving=True,
        forward_xy=fwd, inverse_xy=fwd, src_dims=(w, h), dst_dims=(w, h),
    )


def _rot90_step(w: int, h: int):
    """One clockwise quarter turn: (x, y) -> (h - y, x), dims (w, h) -> (h, w)."""
    def fwd(arr: np.ndarray) -> np.ndarray:
        out = np.empty_like(arr, dtype=np.float64)
        out[:, 0] = h - arr[:, 1]
        out[:, 1] = arr[:, 0]
        return out

    def inv(arr: np.ndarray) -> np.ndarray:
        out = np.empty_like(arr, dtype=np.float64)
        out[:, 0] = arr[:, 1]
        out[:, 1] = h - arr[:, 0]
        return out

    def raster(cells: np.ndarray) -> np.ndarray:
        return cells.T[:, ::-1].copy()

    return fwd, inv, raster, (h, w)


def mr_rotate(tc: TestCase, degrees: int) -> TransformResult:
    """Rotate the scene clockwise; 180 and 270 are repeated quarter turns."""
    spec = MRSpec.rotate(degrees)
    w, h = tc.map.width, tc.map.height
    fwds, invs = [], []
    cells = tc.map.cells
    cur_w, cur_h = w, h
    for _ in range(degrees // 90):
        fwd, inv, raster, (cur_w, cur_h) = _rot90_step(cur_w, cur_h)
        cells = raster(cells)
        fwds.append(fwd)
        invs.append(inv)

    def forward(arr: np.ndarray) -> np.ndarray:
        out = np.array(arr, dtype=np.float64, copy=True)
        for f in fwds:
            out = f(out)
        return out

    def inverse(arr: np.ndarray) -> np.ndarray:
        out = np.array(arr, dtype=np.float64, copy=True)
        for f in reversed(invs):
            out = f(out)
        return out

    return TransformResult(
        mr=spec, follow_up=_frame_case(tc, cells, forward), label_preserving=True,
        forward_xy=forward, inverse_xy=inverse, src_dims=(w, h), dst_dims=(cur_w, cur_h),
    )


def mr_rescale(tc: TestCase, s_old: float, s_new: float) -> TransformResult:
    """Uniformly rescale coordinates by s_new / s_old and resample the raster."""
    spec = MRSpec.rescale(s_old, s_new)
    w, h = tc.map.width, tc.map.height
    r = s_new / s_old
    if r == 1.0:
        return TransformResult(
            mr=spec, follow_up=_frame_case(tc, tc.map.cells.copy(), _identity_xy),
            label_preserving=True, forward_xy=_identity_xy, inverse_xy=_identity_xy,
            src_dims=(w, h), dst_dims=(w, h),
        )
    new_w = int(math.floor(w * r + 0.5))
    new_h = int(math.floor(h * r + 0.5))
    if min(new_w, new_h) < 8:
        raise DegenerateInputError(f"rescaled raster {new_w}x{new_h} is below the 8x8 minimum")

    def fwd(arr: np.ndarray) -> np.ndarray:
        return np.asarray(arr, dtype=np.float64) * r

    def inv(arr: np.ndarray) -> np.ndarray:
        return np.asarray(arr, dtype=np.float64) / r

    # Nearest neighbour: each target cell center pulls from the source cell
    # containing its preimage.
    src_x = np.clip(np.floor((np.arange(new_w) + 0.5) / r).astype(np.int64), 0, w - 1)
    src_y = np.clip(np.floor((np.arange(new_h) + 0.5) / r).astype(np.int64), 0, h - 1)
    cells = tc.map.cells[np.ix_(src_y, src_x)].copy()
    return TransformResult(
        mr=spec, follow_up=_frame_case(tc, cells, fwd), label_preserving=True,
        forward_xy=fwd, inverse_xy=inv, src_dims=(w, h), dst_dims=(new_w, new_h),
    )


def mr_class_change(
    tc: TestCase,
    source_class: str,
    target_class: str,
    effect: str | None = None,
    transitions: dict[tuple[str, str], str] | None = None,
) -> TransformResult:
    """Relabel every cell of one class; the frame is unchanged."""
    table = DEFAULT_TRANSITIONS if transitions is None else transitions
    if effect is None:
        effect = table.get((source_class, target_class))
        if effect is None:
            raise ContractError(f"no effect known for transition {source_class}->{target_class}")
    spec = MRSpec(kind="class_change", source_class=source_class,
                  target_class=target_class, expected_effect=effect)
    legend = tc.map.legend
    src_id = legend.id_of(source_class)
    dst_id = legend.id_of(target_class)
    mask = tc.map.cells == src_id
    if not mask.any():
        raise SceneSkip(f"scene has no {source_class!r} cells")
    cells = np.where(mask, np.uint8(dst_id), tc.map.cells)
    ys, xs = np.nonzero(mask)
    roi = frozenset(zip(xs.tolist(), ys.tolist()))
    return TransformResult(
        mr=spec, follow_up=_frame_case(tc, cells, _identity_xy), label_preserving=False,
        forward_xy=_identity_xy, inverse_xy=_identity_xy,
        src_dims=(tc.map.width, tc.map.height), dst_dims=(tc.map.width, tc.map.height),
        roi=roi, expected_effect=effect,
    )


def regular_polygon(cx: float, cy: float, radius: float, sides: int = OBSTACLE_SIDES) -> np.ndarray:
    """Vertices of a regular polygon, first vertex due east of the center."""
    angles = 2.0 * math.pi * np.arange(sides) / sides
    return np.column_stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)])


def point_in_polygon(px: float, py: float, vertices: np.ndarray) -> bool:
    """Even-odd rule via crossing counting."""
    inside = False
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > py) != (y2 > py):
            x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < x_cross:
                inside = not inside
    return inside


def polygon_cells(vertices: np.ndarray, width: int, height: int) -> frozenset[tuple[int, int]]:
    """Cells whose center lies inside the polygon, restricted to the raster."""
    min_x = max(int(math.floor(vertices[:, 0].min())), 0)
    max_x = min(int(math.ceil(vertices[:, 0].max())), width - 1)
    min_y = max(int(math.floor(vertices[:, 1].min())), 0)
    max_y = min(int(math.ceil(vertices[:, 1].max())), height - 1)
    hits = []
    for iy in range(min_y, max_y + 1):
        for ix in range(min_x, max_x + 1):
            if point_in_polygon(ix + 0.5, iy + 0.5, vertices):
                hits.append((ix, iy))
    return frozenset(hits)


def _polyline_point_at_fraction(points: np.ndarray, fraction: float) -> tuple[float, float]:
    seg = np.diff(points, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    total = float(seg_len.sum())
    if total == 0.0:
        return float(points[0, 0]), float(points[0, 1])
    target = fraction * total
    acc = 0.0
    for i, L in enumerate(seg_len):
        if acc + L >= target or i == len(seg_len) - 1:
            t = 0.0 if L == 0 else (target - acc) / L
            p = points[i] + t * seg[i]
            return float(p[0]), float(p[1])
        acc += L
    return float(points[-1, 0]), float(points[-1, 1])


def mr_obstacle(tc: TestCase, source_prediction: PredictionSet, spec: MRSpec | None = None) -> TransformResult:
    """Drop a regular polygonal blocker onto the first predicted trajectory."""
    if spec is None:
        spec = MRSpec.obstacle()
    if spec.kind != "obstacle":
        raise ContractError(f"expected an obstacle spec, got kind {spec.kind!r}")
    w, h = tc.map.width, tc.map.height
    path = source_prediction.trajectories[0].points
    cx, cy = _polyline_point_at_fraction(path, spec.fraction)
    last = tc.history.points[-1]
    if math.hypot(cx - last[0], cy - last[1]) < spec.radius:
        raise PlacementError(
            f"anchor ({cx:.2f}, {cy:.2f}) lies within {spec.radius:g} px of the last observed point"
        )
    if cx + spec.radius <= 0 or cx - spec.radius >= w or cy + spec.radius <= 0 or cy - spec.radius >= h:
        raise PlacementError("obstacle polygon lies entirely outside the map")
    vertices = regular_polygon(cx, cy, spec.radius)
    roi = polygon_cells(vertices, w, h)
    if not roi:
        raise PlacementError("obstacle polygon covers no raster cells")
    cells = np.array(tc.map.cells, copy=True)
    target_id = np.uint8(tc.map.legend.id_of(spec.obstacle_class))
    for ix, iy in roi:
        cells[iy, ix] = target_id
    return TransformResult(
        mr=spec, follow_up=_frame_case(tc, cells, _identity_xy), label_preserving=False,
        forward_xy=_identity_xy, inverse_xy=_identity_xy,
        src_dims=(w, h), dst_dims=(w, h), roi=roi, expected_effect="avoidance",
    )


def apply_mr(
    tc: TestCase,
    spec: MRSpec,
    source_prediction: PredictionSet | None = None,
    transitions: dict[tuple[str, str], str] | None = None,
) -> TransformResult:
    """Dispatch a relation spec against one scene."""
    if spec.kind == "mirror":
        return mr_mirror(tc, spec.axis)
    if spec.kind == "rotate":
        return mr_rotate(tc, spec.degrees)
    if spec.kind == "rescale":
        return mr_rescale(tc, spec.s_old, spec.s_new)
    if spec.kind == "class_change":
        return mr_class_change(tc, spec.source_class, spec.target_class,
                               effect=spec.expected_effect, transitions=transitions)
    if spec.kind == "obstacle":
        if source_prediction is None:
            raise ContractError("obstacle relation needs a source prediction to anchor on")
        return mr_obstacle(tc, source_prediction, spec)
    raise ContractError(f"unknown relation kind {spec.kind!r}")


def _resample_prob_map(pm: ProbabilityMap, tr: TransformResult) -> ProbabilityMap:
    dst_w, dst_h = tr.dst_dims
    src_w, src_h = tr.src_dims
    cx, cy = np.meshgrid(np.arange(dst_w) + 0.5, np.arange(dst_h) + 0.5)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    back = tr.inverse_xy(centers)
    ix = np.clip(np.floor(back[:, 0]).astype(np.int64), 0, src_w - 1)
    iy = np.clip(np.floor(back[:, 1]).astype(np.int64), 0, src_h - 1)
    vals = pm.values[iy, ix].reshape(dst_h, dst_w)
    return ProbabilityMap(values=vals)


def transform_prediction(pred: PredictionSet, tr: TransformResult) -> PredictionSet:
    """Carry a source-frame prediction into the follow-up frame.

    Rigid frame maps permute probability cells losslessly; rescaling resamples
    nearest-neighbour and renormalizes.
    """
    if not tr.label_preserving:
        raise ContractError("predictions only transport across label-preserving relations")
    trajectories = tuple(
        Trajectory(points=tr.forward_xy(t.points), dt=t.dt) for t in pred.trajectories
    )
    prob_map = None if pred.prob_map is None else _resample_prob_map(pred.prob_map, tr)
    return PredictionSet(trajectories=trajectories, prob_map=prob_map, sut_seed=pred.sut_seed)
