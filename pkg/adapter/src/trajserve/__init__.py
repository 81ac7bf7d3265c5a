"""Stdio adapter that puts a Python trajectory predictor behind a line protocol.

`serve(callback)` turns any function with the `PredictorCallback` signature
into a predictor process speaking newline-delimited JSON on stdin/stdout, so
an external test harness can drive it like any other command-line predictor.
"""
from .demo import constant_velocity_demo
from .protocol import PredictorCallback, decode_cells, encode_prob_map, serve

__all__ = [
    "PredictorCallback",
    "constant_velocity_demo",
    "decode_cells",
    "encode_prob_map",
    "serve",
]
