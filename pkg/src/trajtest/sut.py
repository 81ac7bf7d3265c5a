"""Built-in predictors and the external-process predictor client.

The reference predictors derive their randomness from a canonical frame of the
scene geometry (history normalized by the axis-group element that maps the last
velocity into a fixed octant, positions measured relative to the last observed
point in units of the mean step). Mirrored, rotated, or rescaled requests
therefore reproduce the same canonical noise and the response transforms
exactly with the input. The request seed is deliberately absorbed by this
canonicalization: responses are pure functions of the scene geometry.
"""
from __future__ import annotations

import base64
import heapq
import json
import math
import os
import select
import shlex
import subprocess
import threading
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.ndimage import binary_dilation

from .core import (
    PredictionSet,
    ProbabilityMap,
    SegmentationMap,
    Trajectory,
    cell_of,
)
from .errors import ContractError, ProtocolError
from .stats import traverse_cells

PROTOCOL_VERSION = 1
JITTER_PX = 1.5
REFERENCE_STEP = 3.0
GOAL_SIGMA_STEPS = 4.0
SHAPE_QUANT = 16.0
_EQUIVARIANT_TAG = 0x45513031
_MAP_AWARE_TAG = 0x4D413031
_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class SutRequest:
    scene_id: str
    history: Trajectory
    map: SegmentationMap
    k: int
    horizon: int
    seed: int

    def __post_init__(self):
        if self.k < 1 or self.horizon < 1:
            raise ContractError(f"k and horizon must be >= 1, got k={self.k}, horizon={self.horizon}")


@dataclass(frozen=True)
class SutResponse:
    prediction: PredictionSet


class Sut(Protocol):  # pragma: no cover - typing only
    name: str

    def predict(self, req: SutRequest) -> SutResponse: ...


# The eight axis-aligned frame symmetries as (swap, sign_x, sign_y) acting on
# vectors: (x, y) -> (sx * (y if swap else x), sy * (x if swap else y)).
_DIHEDRAL = [
    (swap, sx, sy) for swap in (False, True) for sx in (1, -1) for sy in (1, -1)
]


def _dihedral_apply(elem: tuple[bool, int, int], vecs: np.ndarray) -> np.ndarray:
    swap, sx, sy = elem
    out = vecs[:, ::-1].copy() if swap else vecs.copy()
    out[:, 0] *= sx
    out[:, 1] *= sy
    return out


def _dihedral_inverse(elem: tuple[bool, int, int]) -> tuple[bool, int, int]:
    probe = np.array([[1.0, 0.0], [0.0, 2.0]])
    fwd = _dihedral_apply(elem, probe)
    for cand in _DIHEDRAL:
        if np.array_equal(_dihedral_apply(cand, fwd), probe):
            return cand
    raise AssertionError("group element without inverse")


def _scene_geometry(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Last point, last-step velocity, mean step length (1.0 if stationary)."""
    if points.shape[0] < 2:
        raise ContractError("reference predictors need a history of at least two points")
    e = points[-1]
    v = points[-1] - points[-2]
    steps = np.diff(points, axis=0)
    s = float(np.hypot(steps[:, 0], steps[:, 1]).mean())
    return e, v, (s if s > 0.0 else 1.0)


def _canonical_noise(points: np.ndarray, k: int, horizon: int) -> tuple[np.ndarray, float]:
    """Scene-canonical jitter offsets of shape (k, horizon, 2) and the scale."""
    e, v, s = _scene_geometry(points)
    rel = (points - e) / s
    best_key = None
    best_elem = None
    best_sig = None
    for elem in _DIHEDRAL:
        dv = _dihedral_apply(elem, v[None, :])[0]
        sig = np.rint(SHAPE_QUANT * _dihedral_apply(elem, rel)).astype(np.int64).ravel()
        key = (float(dv[0]), float(dv[1]), tuple(sig.tolist()))
        if best_key is None or key > best_key:
            best_key, best_elem, best_sig = key, elem, sig
    entropy = [_EQUIVARIANT_TAG, points.shape[0], k, horizon]
    entropy.extend(int(q) & _MASK32 for q in best_sig.tolist())
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    noise = rng.standard_normal((k, horizon, 2))
    inv = _dihedral_inverse(best_elem)
    offsets = _dihedral_apply(inv, noise.reshape(-1, 2)).reshape(k, horizon, 2)
    sigma = JITTER_PX * (s / REFERENCE_STEP)
    return sigma * offsets, s


def _gaussian_bump(width: int, height: int, center: np.ndarray, sigma: float) -> ProbabilityMap:
    dx2 = (np.arange(width) + 0.5 - center[0]) ** 2
    dy2 = (np.arange(height) + 0.5 - center[1]) ** 2
    bump = np.exp(-(dx2[None, :] + dy2[:, None]) / (2.0 * sigma * sigma))
    return ProbabilityMap(values=bump / bump.sum())


def _constant_velocity(points: np.ndarray, horizon: int) -> np.ndarray:
    e, v, _ = _scene_geometry(points)
    t = np.arange(1, horizon + 1, dtype=np.float64)
    return e[None, :] + t[:, None] * v[None, :]


class EquivariantReference:
    """Constant-velocity predictor with canonical-frame Gaussian jitter."""

    name = "equivariant"

    def __init__(self, drift: tuple[float, float] = (0.0, 0.0)):
        self.drift = (float(drift[0]), float(drift[1]))

    def predict(self, req: SutRequest) -> SutResponse:
        points = req.history.points
        base = _constant_velocity(points, req.horizon)
        offsets, s = _canonical_noise(points, req.k, req.horizon)
        t = np.arange(1, req.horizon + 1, dtype=np.float64)
        drift = t[:, None] * np.asarray(self.drift)[None, :]
        samples = base[None, :, :] + drift[None, :, :] + offsets
        trajectories = tuple(
            Trajectory(points=samples[i], dt=req.history.dt) for i in range(req.k)
        )
        endpoint = base[-1] + drift[-1]
        prob = _gaussian_bump(req.map.width, req.map.height, endpoint, GOAL_SIGMA_STEPS * s)
        return SutResponse(
            prediction=PredictionSet(trajectories=trajectories, prob_map=prob, sut_seed=req.seed)
        )


class BiasedMutant(EquivariantReference):
    """Equivariant reference plus a fixed world-frame drift per step."""

    name = "mutant"

    def __init__(self, drift: tuple[float, float] = (2.0, 0.0)):
        super().__init__(drift=drift)


def _segment_blocked(p0, p1, blocked: np.ndarray) -> bool:
    h, w = blocked.shape
    for ix, iy in traverse_cells(p0[0], p0[1], p1[0], p1[1], w, h):
        if blocked[iy, ix]:
            return True
    return False


def _greedy_route(
    start: tuple[int, int],
    goal: tuple[int, int],
    passable: np.ndarray,
    max_pops: int = 5000,
) -> list[tuple[int, int]] | None:
    """Greedy best-first search over the 8-neighbourhood, no corner cutting."""
    h, w = passable.shape
    if not passable[start[1], start[0]] or not passable[goal[1], goal[0]]:
        return None
    heap = [(math.hypot(goal[0] - start[0], goal[1] - start[1]), 0, start)]
    parents: dict[tuple[int, int], tuple[int, int] | None] = {start: None}
    counter = 1
    pops = 0
    while heap and pops < max_pops:
        _, _, cell = heapq.heappop(heap)
        pops += 1
        if cell == goal:
            path = [cell]
            while parents[path[-1]] is not None:
                path.append(parents[path[-1]])
            path.reverse()
            return path
        cx, cy = cell
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = cx + dx, cy + dy
                if not (0 <= nx < w and 0 <= ny < h) or (nx, ny) in parents:
                    continue
                if not passable[ny, nx]:
                    continue
                if dx != 0 and dy != 0:
                    if not (passable[cy, cx + dx] and passable[cy + dy, cx]):
                        continue
                parents[(nx, ny)] = cell
                heapq.heappush(
                    heap, (math.hypot(goal[0] - nx, goal[1] - ny), counter, (nx, ny))
                )
                counter += 1
    return None


def _resample_polyline(waypoints: np.ndarray, horizon: int) -> np.ndarray:
    seg = np.diff(waypoints, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    if total == 0.0:
        return np.repeat(waypoints[-1][None, :], horizon, axis=0)
    targets = total * np.arange(1, horizon + 1) / horizon
    xs = np.interp(targets, cum, waypoints[:, 0])
    ys = np.interp(targets, cum, waypoints[:, 1])
    return np.column_stack([xs, ys])


class MapAwareReference:
    """Goal-sampling predictor that respects cell walkability.

    The probability raster is walkability times a Gaussian prior around the
    constant-velocity endpoint. K goal cells are drawn from it with the request
    seed, each connected by a straight line, rerouted around zero-walkability
    cells with a greedy grid search when the direct segment is blocked.
    """

    name = "map-aware"

    def predict(self, req: SutRequest) -> SutResponse:
        points = req.history.points
        e, v, s = _scene_geometry(points)
        w, h = req.map.width, req.map.height
        endpoint = points[-1] + req.horizon * v
        prior = _gaussian_bump(w, h, endpoint, GOAL_SIGMA_STEPS * s).values
        walk = req.map.walkability_grid()
        raw = walk * prior
        total = raw.sum()
        if total <= 0.0:
            raw = (walk > 0).astype(np.float64)
            total = raw.sum()
        if total <= 0.0:
            raw = np.ones((h, w))
            total = raw.sum()
        prob = ProbabilityMap(values=raw / total)

        rng = np.random.default_rng(
            np.random.SeedSequence([_MAP_AWARE_TAG, req.seed & _MASK64])
        )
        goal_idx = rng.choice(w * h, size=req.k, replace=True, p=prob.values.ravel())
        jitter = rng.standard_normal((req.k, req.horizon, 2)) * (JITTER_PX * s / REFERENCE_STEP)

        blocked = walk == 0.0
        inflated = binary_dilation(blocked, structure=np.ones((3, 3), dtype=bool))
        trajectories = []
        for i in range(req.k):
            gx = float(goal_idx[i] % w) + 0.5
            gy = float(goal_idx[i] // w) + 0.5
            waypoints = self._waypoints(e, (gx, gy), blocked, inflated)
            pts = _resample_polyline(waypoints, req.horizon)
            jittered = pts + jitter[i]
            if self._crosses(e, jittered, blocked):
                jittered = pts
            trajectories.append(Trajectory(points=jittered, dt=req.history.dt))
        return SutResponse(
            prediction=PredictionSet(
                trajectories=tuple(trajectories), prob_map=prob, sut_seed=req.seed
            )
        )

    @staticmethod
    def _crosses(e: np.ndarray, pts: np.ndarray, blocked: np.ndarray) -> bool:
        prev = e
        for p in pts:
            if _segment_blocked(prev, p, blocked):
                return True
            prev = p
        return False

    @staticmethod
    def _waypoints(
        e: np.ndarray, goal: tuple[float, float], blocked: np.ndarray, inflated: np.ndarray
    ) -> np.ndarray:
        straight = np.array([[e[0], e[1]], [goal[0], goal[1]]])
        if not _segment_blocked(straight[0], straight[1], blocked):
            return straight
        h, w = blocked.shape
        start = cell_of(e[0], e[1], w, h)
        goal_cell = cell_of(goal[0], goal[1], w, h)
        # Prefer a one-cell safety margin around blockers so resampled chords
        # stay clear; fall back to the raw passable grid, then to the straight
        # segment if the goal is unreachable.
        path = _greedy_route(start, goal_cell, ~inflated)
        if path is None:
            path = _greedy_route(start, goal_cell, ~blocked)
        if path is None:
            return straight
        centers = [(cx + 0.5, cy + 0.5) for cx, cy in path[1:]]
        return np.array([[e[0], e[1]], *centers, [goal[0], goal[1]]])


def encode_request(req: SutRequest) -> dict:
    return {
        "type": "predict",
        "scene_id": req.scene_id,
        "seed": int(req.seed),
        "k": int(req.k),
        "horizon": int(req.horizon),
        "dt": float(req.history.dt),
        "history": [[float(x), float(y)] for x, y in req.history.points],
        "map": {
            "width": req.map.width,
            "height": req.map.height,
            "legend": [
                {"id": e.class_id, "name": e.name} for e in req.map.legend.entries
            ],
            "cells_b64": base64.b64encode(req.map.cells.tobytes()).decode("ascii"),
        },
    }


def decode_response(obj: dict, req: SutRequest) -> SutResponse:
    if not isinstance(obj, dict) or obj.get("type") != "prediction":
        if isinstance(obj, dict) and obj.get("type") == "error":
            raise ProtocolError(
                f"predictor returned an error: {obj.get('message', '')}",
                scene_id=req.scene_id, payload=obj,
            )
        raise ProtocolError(f"unexpected message type {obj!r}", scene_id=req.scene_id, payload=obj)
    if obj.get("scene_id") != req.scene_id:
        raise ProtocolError(
            f"response scene_id {obj.get('scene_id')!r} != request {req.scene_id!r}",
            scene_id=req.scene_id, payload=obj,
        )
    trajs = obj.get("trajectories")
    if not isinstance(trajs, list) or len(trajs) != req.k:
        got = len(trajs) if isinstance(trajs, list) else type(trajs).__name__
        raise ProtocolError(
            f"expected {req.k} trajectories, got {got}", scene_id=req.scene_id, payload=obj
        )
    trajectories = []
    for t in trajs:
        arr = np.asarray(t, dtype=np.float64)
        if arr.ndim != 2 or arr.shape != (req.horizon, 2) or not np.all(np.isfinite(arr)):
            raise ProtocolError(
                f"trajectory with shape {getattr(arr, 'shape', None)} or non-finite values",
                scene_id=req.scene_id, payload=obj,
            )
        trajectories.append(Trajectory(points=arr, dt=req.history.dt))
    prob_map = None
    if obj.get("prob_map_b64"):
        raw = base64.b64decode(obj["prob_map_b64"])
        expected = req.map.width * req.map.height * 4
        if len(raw) != expected:
            raise ProtocolError(
                f"prob map payload has {len(raw)} bytes, expected {expected}",
                scene_id=req.scene_id, payload=obj,
            )
        vals = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(
            req.map.height, req.map.width
        )
        try:
            prob_map = ProbabilityMap(values=vals)
        except ContractError as exc:
            raise ProtocolError(str(exc), scene_id=req.scene_id, payload=obj) from exc
    return SutResponse(
        prediction=PredictionSet(
            trajectories=tuple(trajectories), prob_map=prob_map, sut_seed=req.seed
        )
    )


class _LineChannel:
    """Line-buffered reads from a pipe with a timeout."""

    def __init__(self, pipe):
        self._pipe = pipe
        self._buf = b""

    def read_line(self, timeout: float) -> str:
        deadline = None if timeout is None else (timeout + _monotonic())
        while b"\n" not in self._buf:
            remaining = None if deadline is None else max(0.0, deadline - _monotonic())
            ready, _, _ = select.select([self._pipe], [], [], remaining)
            if not ready:
                raise TimeoutError("timed out waiting for a protocol line")
            chunk = os.read(self._pipe.fileno(), 65536)
            if not chunk:
                raise EOFError("predictor closed its output")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")


def _monotonic() -> float:
    import time

    return time.monotonic()


class ExternalProcessSut:
    """Client for predictors spoken to over stdin/stdout JSON lines."""

    def __init__(self, command: str | list[str], timeout: float = 120.0):
        self._command = shlex.split(command) if isinstance(command, str) else list(command)
        self._timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._chan: _LineChannel | None = None
        self._lock = threading.Lock()
        self.provides_prob_map: bool | None = None
        self.name = "cmd:" + " ".join(self._command)

    def _fail(self, message: str, scene_id: str | None = None) -> ProtocolError:
        detail = message
        if self._proc is not None:
            rc = self._proc.poll()
            stderr_tail = b""
            if self._proc.stderr is not None:
                try:
                    while select.select([self._proc.stderr], [], [], 0)[0]:
                        chunk = os.read(self._proc.stderr.fileno(), 65536)
                        if not chunk:
                            break
                        stderr_tail += chunk
                except OSError:
                    pass
            if rc is not None:
                detail += f" (exit status {rc})"
            if stderr_tail:
                detail += "; stderr: " + stderr_tail.decode("utf-8", "replace")[-2000:]
        return ProtocolError(detail, scene_id=scene_id)

    def _ensure_started(self):
        if self._proc is not None:
            return
        try:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
        except OSError as exc:
            raise ProtocolError(f"could not start predictor: {exc}") from exc
        self._chan = _LineChannel(self._proc.stdout)
        self._send({"type": "hello", "version": PROTOCOL_VERSION})
        ready = self._recv(None)
        if ready.get("type") != "ready" or "provides_prob_map" not in ready:
            raise self._fail(f"bad handshake reply: {ready!r}")
        self.provides_prob_map = bool(ready["provides_prob_map"])

    def _send(self, obj: dict):
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write((json.dumps(obj) + "\n").encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise self._fail(f"predictor pipe closed while writing: {exc}") from exc

    def _recv(self, scene_id: str | None) -> dict:
        assert self._chan is not None
        try:
            line = self._chan.read_line(self._timeout)
        except (TimeoutError, EOFError, OSError) as exc:
            raise self._fail(f"no protocol reply: {exc}", scene_id) from exc
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise self._fail(f"response is not valid JSON: {line[:200]!r}", scene_id) from exc
        if not isinstance(obj, dict):
            raise self._fail(f"response is not an object: {line[:200]!r}", scene_id)
        return obj

    def predict(self, req: SutRequest) -> SutResponse:
        with self._lock:
            self._ensure_started()
            self._send(encode_request(req))
            obj = self._recv(req.scene_id)
            return decode_response(obj, req)

    def close(self):
        if self._proc is None:
            return
        try:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            self._proc.wait(timeout=2.0)
        except Exception:
            self._proc.kill()
        finally:
            self._proc = None
            self._chan = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def build_sut(spec: str, timeout: float = 120.0):
    """Resolve a predictor name used on the command line."""
    if spec == "equivariant":
        return EquivariantReference()
    if spec == "mutant":
        return BiasedMutant()
    if spec == "map-aware":
        return MapAwareReference()
    if spec.startswith("cmd:"):
        return ExternalProcessSut(spec[4:], timeout=timeout)
    raise ContractError(
        f"unknown predictor {spec!r}; expected equivariant, mutant, map-aware, or cmd:<command>"
    )
