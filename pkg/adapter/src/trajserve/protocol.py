"""Newline-delimited JSON request loop for trajectory predictors.

One UTF-8 JSON object per line, version 1:

  client hello:   {"type": "hello", "version": 1}
  server ready:   {"type": "ready", "provides_prob_map": bool}
  request:        {"type": "predict", "scene_id": str, "seed": int, "k": int,
                   "horizon": int, "dt": float, "history": [[x, y], ...],
                   "map": {"width": int, "height": int,
                           "legend": [{"id": int, "name": str}, ...],
                           "cells_b64": base64 of row-major uint8 class ids}}
  response:       {"type": "prediction", "scene_id": str,
                   "trajectories": [[[x, y], ...] x k],
                   "prob_map_b64": optional base64 of row-major
                                   little-endian float32 values}
  failure:        {"type": "error", "message": str}

The loop is single-threaded and answers one request at a time. A predictor
fault or a malformed line produces an error message, never a dead process;
only end of stdin shuts the loop down.
"""
from __future__ import annotations

import base64
import json
import sys
from typing import Callable, Optional, TextIO

import numpy as np

# (history (N, 2) float64, cells (H, W) uint8, k, horizon, seed)
#   -> (trajectories (k, horizon, 2), prob_map (H, W) or None)
PredictorCallback = Callable[
    [np.ndarray, np.ndarray, int, int, int],
    tuple[np.ndarray, Optional[np.ndarray]],
]


class BadMessage(Exception):
    """A request or a callback result that cannot go on the wire."""


def decode_cells(map_obj: dict) -> np.ndarray:
    """Class-id raster from a request's map object, shape (height, width)."""
    width = int(map_obj["width"])
    height = int(map_obj["height"])
    raw = base64.b64decode(map_obj["cells_b64"])
    if len(raw) != width * height:
        raise BadMessage(
            f"cells payload has {len(raw)} bytes, expected {width * height}"
        )
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width)


def encode_prob_map(values: np.ndarray, raster_shape: tuple[int, int]) -> str:
    """Base64 of the renormalized map as row-major little-endian float32."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape != tuple(raster_shape):
        raise BadMessage(
            f"prob map shape {vals.shape} does not match the {tuple(raster_shape)} raster"
        )
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise BadMessage("prob map values must be finite and non-negative")
    total = float(vals.sum())
    if total <= 0.0:
        raise BadMessage("prob map carries no mass")
    vals = vals / total
    return base64.b64encode(vals.astype("<f4").tobytes()).decode("ascii")


def _predict_reply(obj: dict, callback: PredictorCallback) -> dict:
    try:
        scene_id = obj["scene_id"]
        seed = int(obj["seed"])
        k = int(obj["k"])
        horizon = int(obj["horizon"])
        history = np.asarray(obj["history"], dtype=np.float64)
        cells = decode_cells(obj["map"])
    except BadMessage:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise BadMessage(f"malformed predict request: {exc}") from exc
    if history.ndim != 2 or history.shape[1] != 2 or history.shape[0] < 1:
        raise BadMessage(f"history must be an (N, 2) array, got shape {history.shape}")
    if k < 1 or horizon < 1:
        raise BadMessage(f"k and horizon must be >= 1, got k={k}, horizon={horizon}")

    trajectories, prob_map = callback(history, cells, k, horizon, seed)

    trajectories = np.asarray(trajectories, dtype=np.float64)
    if trajectories.shape != (k, horizon, 2):
        raise BadMessage(
            f"predictor returned shape {trajectories.shape}, "
            f"expected ({k}, {horizon}, 2)"
        )
    if not np.all(np.isfinite(trajectories)):
        raise BadMessage("predictor returned non-finite trajectory values")
    reply = {
        "type": "prediction",
        "scene_id": scene_id,
        "trajectories": trajectories.tolist(),
    }
    if prob_map is not None:
        reply["prob_map_b64"] = encode_prob_map(prob_map, cells.shape)
    return reply


def serve(
    callback: PredictorCallback,
    *,
    provides_prob_map: bool = False,
    stdin: TextIO | None = None,
    stdout: TextIO | None = None,
) -> None:
    """Answer protocol messages until stdin closes.

    `provides_prob_map` goes into the ready message and should state whether
    the callback returns probability maps. Streams are injectable for tests.
    """
    src = sys.stdin if stdin is None else stdin
    sink = sys.stdout if stdout is None else stdout

    def reply(obj: dict) -> None:
        sink.write(json.dumps(obj) + "\n")
        sink.flush()

    for raw in src:
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            reply({"type": "error",
                   "message": f"line is not valid JSON: {line[:200]!r} ({exc})"})
            continue
        if not isinstance(obj, dict):
            reply({"type": "error",
                   "message": f"line is not a JSON object: {line[:200]!r}"})
            continue
        mtype = obj.get("type")
        if mtype == "hello":
            reply({"type": "ready", "provides_prob_map": bool(provides_prob_map)})
            continue
        if mtype != "predict":
            reply({"type": "error", "message": f"unsupported message type {mtype!r}"})
            continue
        try:
            reply(_predict_reply(obj, callback))
        except BadMessage as exc:
            reply({"type": "error", "message": str(exc)})
        except Exception as exc:  # predictor faults must not kill the loop
            reply({"type": "error",
                   "message": f"predictor raised {type(exc).__name__}: {exc}"})
