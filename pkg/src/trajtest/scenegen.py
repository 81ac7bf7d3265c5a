"""Synthetic scene corpus: corridor maps with a walking agent.

Every generated coordinate sits on the 1/256 grid. Axis mirrors and quarter
turns of such coordinates are exact in float64, so transformed scenes agree
with the originals to the last bit rather than to rounding error.

Scenes consist of a terrain base, a road band flanked by pavement strips,
random structure and tree blobs, and an agent walking along one pavement strip
with a small lateral wiggle. The wiggle never quantizes to zero and always
changes sign at least once inside the observed history, which keeps the
history free of exact axis symmetries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_LEGEND, SegmentationMap, TestCase, Trajectory
from .errors import GenerationError

COORD_GRID = 256.0
_SCENE_TAG = 0x53433031


@dataclass(frozen=True)
class SceneRecipe:
    scene_id: str
    seed: int
    width: int = 192
    height: int = 160
    history_len: int = 8
    horizon: int = 12
    dt: float = 0.4
    step: float = 3.0


def _snap(values: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(values, dtype=np.float64) * COORD_GRID) / COORD_GRID


def _stamp_rect(cells: np.ndarray, x0: int, y0: int, w: int, h: int, class_id: int):
    cells[max(0, y0) : y0 + h, max(0, x0) : x0 + w] = class_id


def _stamp_disc(cells: np.ndarray, cx: int, cy: int, r: int, class_id: int):
    height, width = cells.shape
    ys, xs = np.ogrid[:height, :width]
    cells[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = class_id


def generate_scene(recipe: SceneRecipe) -> TestCase:
    if recipe.width < 144 or recipe.height < 144:
        raise GenerationError(
            f"corridor layout needs at least 144x144 cells, got {recipe.width}x{recipe.height}"
        )
    if recipe.history_len < 2:
        raise GenerationError("history_len must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([_SCENE_TAG, recipe.seed]))
    legend = DEFAULT_LEGEND
    road = legend.id_of("road")
    pavement = legend.id_of("pavement")
    structure = legend.id_of("structure")
    terrain = legend.id_of("terrain")
    tree = legend.id_of("tree")

    # Build in a horizontal frame, optionally quarter-turn at the end.
    vertical = bool(rng.integers(0, 2))
    w, h = (recipe.height, recipe.width) if vertical else (recipe.width, recipe.height)

    cells = np.full((h, w), terrain, dtype=np.uint8)
    for _ in range(int(rng.integers(2, 5))):
        bw, bh = int(rng.integers(8, 21)), int(rng.integers(8, 21))
        _stamp_rect(cells, int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh)), bw, bh, structure)
    for _ in range(int(rng.integers(3, 7))):
        r = int(rng.integers(3, 7))
        _stamp_disc(cells, int(rng.integers(r, w - r)), int(rng.integers(r, h - r)), r, tree)

    # Corridor is stamped after the blobs so the walk area stays clear.
    band = int(rng.integers(10, 15))
    pave = int(rng.integers(3, 6))
    y_road = int(rng.integers(34, h - 34 - band))
    cells[y_road - pave : y_road, :] = pavement
    cells[y_road : y_road + band, :] = road
    cells[y_road + band : y_road + band + pave, :] = pavement

    # One structure and one tree are guaranteed below the corridor so every
    # class-change source class exists in every scene.
    free_top = y_road - pave
    gx = int(rng.integers(4, w - 18))
    _stamp_rect(cells, gx, int(rng.integers(4, free_top - 14)), 10, 10, structure)
    tx = int(rng.integers(8, w - 8))
    _stamp_disc(cells, tx, int(rng.integers(8, free_top - 8)), 4, tree)

    if bool(rng.integers(0, 2)):
        strip_row = y_road - 1 - pave // 2
    else:
        strip_row = y_road + band + pave // 2
    y_walk = strip_row + 0.5

    direction = 1 if rng.integers(0, 2) else -1
    lead = (recipe.horizon + 2) * recipe.step + 24.0
    x_start = float(rng.integers(16, 40)) + float(rng.integers(0, 256)) / COORD_GRID
    if direction < 0:
        x_start = w - x_start
    span = x_start + direction * ((recipe.history_len - 1) * recipe.step + lead)
    if not (4.0 <= span <= w - 4.0):
        raise GenerationError(f"walk leaves the map for scene {recipe.scene_id}")

    n_total = recipe.history_len + recipe.horizon
    signs = rng.choice(np.array([-1.0, 1.0]), size=n_total)
    signs[1] = -signs[0]
    amp = float(rng.integers(48, 97)) / COORD_GRID
    idx = np.arange(n_total, dtype=np.float64)
    xs = _snap(x_start + direction * recipe.step * idx)
    ys = _snap(y_walk + signs * amp)

    if vertical:
        # (x, y) -> (h - y, x): the same quarter turn the harness uses.
        xs, ys = _snap(h - ys), xs
        cells = cells.T[:, ::-1].copy()

    points = np.column_stack([xs, ys])
    history = Trajectory(points=points[: recipe.history_len], dt=recipe.dt)
    ground_truth = Trajectory(points=points[recipe.history_len :], dt=recipe.dt)
    return TestCase(
        scene_id=recipe.scene_id,
        map=SegmentationMap(cells=cells, legend=legend),
        history=history,
        ground_truth=ground_truth,
    )


def default_corpus(
    n: int = 50,
    seed: int = 20260814,
    width: int = 192,
    height: int = 160,
    history_len: int = 8,
    horizon: int = 12,
) -> tuple[TestCase, ...]:
    """The fixed scene set used by the experiment scripts."""
    children = np.random.SeedSequence([_SCENE_TAG, seed]).spawn(n)
    scenes = []
    for i, child in enumerate(children):
        recipe = SceneRecipe(
            scene_id=f"scene-{i:03d}",
            seed=int(child.generate_state(1, dtype=np.uint64)[0]),
            width=width,
            height=height,
            history_len=history_len,
            horizon=horizon,
        )
        scenes.append(generate_scene(recipe))
    return tuple(scenes)
