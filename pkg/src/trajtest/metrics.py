"""Distances between prediction sets.

A sampled prediction set is treated as a uniform empirical distribution over
trajectories; the ground cost between two trajectories is the Euclidean norm of
their flattened coordinate difference. Small problems are solved exactly via
linear assignment, larger ones with an entropically regularized transport
solver whose plan is rounded back onto the feasible polytope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .core import PredictionSet
from .errors import ContractError, NumericalFailure


def trajectory_cost(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two equal-length trajectories in R^(2T)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@dataclass(frozen=True)
class TrajectoryDistribution:
    """Weighted point cloud over flattened trajectories, shape (K, 2T)."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.float64)
        if support.ndim != 2 or support.shape[0] < 1:
            raise ContractError(f"support must have shape (K>=1, D), got {support.shape}")
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (support.shape[0],):
            raise ContractError("one weight per support point required")
        if np.any(weights < 0) or not math.isclose(float(weights.sum()), 1.0, abs_tol=1e-9):
            raise ContractError("weights must be non-negative and sum to one")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_prediction_set(cls, ps: PredictionSet) -> "TrajectoryDistribution":
        stacked = ps.stacked()
        k = stacked.shape[0]
        return cls(support=stacked.reshape(k, -1), weights=np.full(k, 1.0 / k))


@dataclass(frozen=True)
class OTConfig:
    """Solver knobs for the transport distance.

    epsilon=None regularizes at 1e-2 times the median ground cost of the
    instance at hand. cost_exponent selects |x-y| (1) or |x-y|^2 (2) ground
    cost. Supports up to exact_threshold points per side go through the exact
    assignment solver.
    """

    epsilon: float | None = None
    max_iterations: int = 1000
    marginal_tol: float = 1e-9
    exact_threshold: int = 64
    cost_exponent: int = 1

    def __post_init__(self):
        if self.cost_exponent not in (1, 2):
            raise ContractError(f"cost_exponent must be 1 or 2, got {self.cost_exponent}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ContractError("epsilon must be positive")
        if self.max_iterations < 1 or self.marginal_tol <= 0 or self.exact_threshold < 1:
            raise ContractError("invalid solver configuration")


DEFAULT_OT = OTConfig()


def cost_matrix(p: TrajectoryDistribution, q: TrajectoryDistribution, exponent: int = 1) -> np.ndarray:
    if p.support.shape[1] != q.support.shape[1]:
        raise ContractError(
            f"support dimensions differ: {p.support.shape[1]} vs {q.support.shape[1]}"
        )
    diff = p.support[:, None, :] - q.support[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    return d if exponent == 1 else d * d


def exact_assignment_value(cost: np.ndarray) -> float:
    """Optimal uniform matching cost for a square cost matrix (mean over pairs)."""
    if cost.shape[0] != cost.shape[1]:
        raise ContractError("exact assignment requires equal-size supports")
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def _round_to_feasible(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project an approximately-coupled plan onto the transport polytope."""
    x = np.array(plan, copy=True)
    row = x.sum(axis=1)
    scale = np.minimum(1.0, np.divide(a, row, out=np.ones_like(a), where=row > 0))
    x *= scale[:, None]
    col = x.sum(axis=0)
    scale = np.minimum(1.0, np.divide(b, col, out=np.ones_like(b), where=col > 0))
    x *= scale[None, :]
    err_a = a - x.sum(axis=1)
    err_b = b - x.sum(axis=0)
    total = err_a.sum()
    if total > 0:
        x += np.outer(err_a, err_b) / total
    return x


def sinkhorn_plan(
    cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    epsilon: float,
    max_iterations: int = 1000,
    marginal_tol: float = 1e-9,
) -> tuple[np.ndarray, float, int]:
    """Log-domain scaling iterations with stepwise epsilon annealing.

    Returns (feasible plan, final marginal residual, iterations used). Raises
    NumericalFailure when the residual never reaches the tolerance.
    """
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    # Anneal from a mild regularization down to the requested one; warm starts
    # keep the iteration count manageable for small epsilon.
    start = max(epsilon, float(np.median(cost)) * 0.1, 1e-300)
    stages = [start]
    while stages[-1] > epsilon * 1.0000001:
        stages.append(max(epsilon, stages[-1] / 3.0))
    used = 0
    residual = math.inf
    for eps in stages:
        last_stage = eps == stages[-1]
        # Non-final stages only warm-start the potentials; a loose target and
        # a small budget keep most iterations for the requested epsilon.
        stage_tol = marginal_tol if last_stage else max(marginal_tol * 1e2, 1e-3)
        stage_cap = max_iterations if last_stage else min(used + 200, max_iterations)
        while used < stage_cap:
            m = (f[:, None] + g[None, :] - cost) / eps
            f = f + eps * (log_a - logsumexp(m, axis=1))
            m = (f[:, None] + g[None, :] - cost) / eps
            g = g + eps * (log_b - logsumexp(m, axis=0))
            used += 1
            plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
            residual = float(
                np.abs(plan.sum(axis=1) - a).sum() + np.abs(plan.sum(axis=0) - b).sum()
            )
            if residual <= stage_tol:
                break
        if last_stage and residual <= marginal_tol:
            plan = _round_to_feasible(plan, a, b)
            return plan, residual, used
    raise NumericalFailure(
        f"transport solver failed to converge after {used} iterations "
        f"(marginal residual {residual:.3e})",
        residual=residual,
    )


def wasserstein(
    p: TrajectoryDistribution,
    q: TrajectoryDistribution,
    cfg: OTConfig | None = None,
) -> float:
    """Transport distance between two trajectory distributions."""
    cfg = cfg or DEFAULT_OT
    cost = cost_matrix(p, q, cfg.cost_exponent)
    same_size = p.support.shape[0] == q.support.shape[0]
    uniform = (
        np.allclose(p.weights, p.weights[0]) and np.allclose(q.weights, q.weights[0])
    )
    if same_size and uniform and p.support.shape[0] <= cfg.exact_threshold:
        return exact_assignment_value(cost)
    epsilon = cfg.epsilon
    if epsilon is None:
        med = float(np.median(cost))
        epsilon = 1e-2 * med if med > 0 else 1e-9
    plan, _, _ = sinkhorn_plan(
        cost, p.weights, q.weights, epsilon, cfg.max_iterations, cfg.marginal_tol
    )
    return float((plan * cost).sum())


def wasserstein_between(a: PredictionSet, b: PredictionSet, cfg: OTConfig | None = None) -> float:
    return wasserstein(
        TrajectoryDistribution.from_prediction_set(a),
        TrajectoryDistribution.from_prediction_set(b),
        cfg,
    )


def hellinger(p: np.ndarray, q: np.ndarray) -> float:
    """Hellinger distance (1/sqrt(2)) * ||sqrt(p) - sqrt(q)||_2 between rasters."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractError(f"raster shapes differ: {p.shape} vs {q.shape}")
    diff = np.sqrt(p) - np.sqrt(q)
    return float(np.sqrt(np.sum(diff * diff)) / math.sqrt(2.0))


def hellinger_between(a: PredictionSet, b: PredictionSet) -> float:
    if a.prob_map is None or b.prob_map is None:
        raise ContractError("both prediction sets need probability maps")
    return hellinger(a.prob_map.values, b.prob_map.values)


@dataclass(frozen=True)
class DisplacementErrors:
    """Best-of-K and mean-over-K average/final displacement errors."""

    bon_ade: float
    bon_fde: float
    mean_ade: float
    mean_fde: float


def ade_fde(pred: PredictionSet, ground_truth) -> DisplacementErrors:
    gt = np.asarray(ground_truth.points if hasattr(ground_truth, "points") else ground_truth,
                    dtype=np.float64)
    stacked = pred.stacked()
    if stacked.shape[1] != gt.shape[0]:
        raise ContractError(
            f"prediction horizon {stacked.shape[1]} != ground truth length {gt.shape[0]}"
        )
    per_step = np.linalg.norm(stacked - gt[None, :, :], axis=2)  # (K, T)
    ades = per_step.mean(axis=1)
    fdes = per_step[:, -1]
    return DisplacementErrors(
        bon_ade=float(ades.min()),
        bon_fde=float(fdes.min()),
        mean_ade=float(ades.mean()),
        mean_fde=float(fdes.mean()),
    )


def pairwise_distances(items: list, d) -> list[float]:
    """d(items[i], items[j]) over all unordered pairs, i < j in index order."""
    if len(items) < 2:
        raise ContractError("need at least two runs for a pairwise baseline")
    out = []
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            out.append(float(d(items[i], items[j])))
    return out
