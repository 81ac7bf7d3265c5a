"""Exception taxonomy used across the harness."""
from __future__ import annotations


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but too degenerate to operate on."""


class PlacementError(ValueError):
    """An obstacle polygon cannot be placed at the requested anchor."""


class SceneSkip(Exception):
    """A relation does not apply to this scene (e.g. no source-class cells)."""


class NumericalFailure(RuntimeError):
    """An iterative solver did not converge; carries the final residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ProtocolError(RuntimeError):
    """An external predictor process broke the wire protocol."""

    def __init__(self, message: str, scene_id: str | None = None, payload: object = None):
        super().__init__(message)
        self.scene_id = scene_id
        self.payload = payload


class SceneFormatError(ValueError):
    """A scene file on disk is malformed."""


class GenerationError(RuntimeError):
    """The scene generator could not satisfy a recipe."""
