"""Constant-velocity demo predictor.

Extrapolates the last observed velocity over the horizon and adds Gaussian
jitter drawn in a canonical frame of the scene geometry: the history, taken
relative to its last point in units of the mean step, is mapped through the
axis-aligned symmetry that sends the last velocity into a fixed octant, and
the jitter is seeded from that normalized shape. Mirrored, rotated, or
rescaled histories therefore receive correspondingly transformed predictions,
and the request seed is deliberately ignored: repeated calls are identical.
The numbers match the harness's built-in "equivariant" reference predictor,
which makes cross-process equivalence directly testable.

Run as a process with `python3 -m trajserve`.
"""
from __future__ import annotations

import numpy as np

from .protocol import serve

JITTER_PX = 1.5
REFERENCE_STEP = 3.0
GOAL_SIGMA_STEPS = 4.0
SHAPE_QUANT = 16.0
_NOISE_TAG = 0x45513031
_MASK32 = 0xFFFFFFFF

# The eight axis-aligned symmetries as (swap, sign_x, sign_y) acting on
# vectors: (x, y) -> (sx * (y if swap else x), sy * (x if swap else y)).
_AXIS_GROUP = [
    (swap, sx, sy) for swap in (False, True) for sx in (1, -1) for sy in (1, -1)
]


def _axis_apply(elem: tuple[bool, int, int], vecs: np.ndarray) -> np.ndarray:
    swap, sx, sy = elem
    out = vecs[:, ::-1].copy() if swap else vecs.copy()
    out[:, 0] *= sx
    out[:, 1] *= sy
    return out


def _axis_inverse(elem: tuple[bool, int, int]) -> tuple[bool, int, int]:
    probe = np.array([[1.0, 0.0], [0.0, 2.0]])
    fwd = _axis_apply(elem, probe)
    for cand in _AXIS_GROUP:
        if np.array_equal(_axis_apply(cand, fwd), probe):
            return cand
    raise AssertionError("group element without inverse")


def constant_velocity_demo(
    history: np.ndarray,
    cells: np.ndarray,
    k: int,
    horizon: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    del seed  # responses are a pure function of the scene geometry
    points = np.asarray(history, dtype=np.float64)
    if points.shape[0] < 2:
        raise ValueError("need a history of at least two points")
    e = points[-1]
    v = points[-1] - points[-2]
    steps = np.diff(points, axis=0)
    s = float(np.hypot(steps[:, 0], steps[:, 1]).mean())
    s = s if s > 0.0 else 1.0

    # canonicalize: pick the symmetry maximizing (velocity, quantized shape)
    rel = (points - e) / s
    best_key = None
    best_elem = None
    best_sig = None
    for elem in _AXIS_GROUP:
        dv = _axis_apply(elem, v[None, :])[0]
        sig = np.rint(SHAPE_QUANT * _axis_apply(elem, rel)).astype(np.int64).ravel()
        key = (float(dv[0]), float(dv[1]), tuple(sig.tolist()))
        if best_key is None or key > best_key:
            best_key, best_elem, best_sig = key, elem, sig
    entropy = [_NOISE_TAG, points.shape[0], k, horizon]
    entropy.extend(int(q) & _MASK32 for q in best_sig.tolist())
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    noise = rng.standard_normal((k, horizon, 2))
    inv = _axis_inverse(best_elem)
    offsets = _axis_apply(inv, noise.reshape(-1, 2)).reshape(k, horizon, 2)
    sigma = JITTER_PX * (s / REFERENCE_STEP)
    offsets = sigma * offsets

    t = np.arange(1, horizon + 1, dtype=np.float64)
    base = e[None, :] + t[:, None] * v[None, :]
    samples = base[None, :, :] + offsets

    # goal likelihood: isotropic Gaussian bump around the extrapolated endpoint
    h, w = cells.shape
    goal_sigma = GOAL_SIGMA_STEPS * s
    dx2 = (np.arange(w) + 0.5 - base[-1][0]) ** 2
    dy2 = (np.arange(h) + 0.5 - base[-1][1]) ** 2
    bump = np.exp(-(dx2[None, :] + dy2[:, None]) / (2.0 * goal_sigma * goal_sigma))
    prob = bump / bump.sum()
    return samples, prob


def main() -> int:
    serve(constant_velocity_demo, provides_prob_map=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
