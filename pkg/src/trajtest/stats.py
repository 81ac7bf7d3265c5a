"""Violation criteria and the statistical machinery behind them.

All criteria share one verdict scheme: a distance (or statistic) is reduced to
a p-value and flagged as a violation when p <= alpha. Baselines built from a
deterministic predictor collapse to sigma = 0; that case is reported with an
explicit degenerate flag instead of a silent division.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .core import ProbabilityMap, SegmentationMap, PredictionSet, cell_of
from .errors import ContractError
from .metrics import OTConfig, hellinger, pairwise_distances, wasserstein_between

DEGENERATE_TOL = 1e-9


@dataclass(frozen=True)
class SourceBaseline:
    """Mean and spread of within-source distances."""

    mu: float
    sigma: float
    n: int

    @classmethod
    def from_distances(cls, distances: list[float]) -> "SourceBaseline":
        if len(distances) < 1:
            raise ContractError("baseline needs at least one distance")
        arr = np.asarray(distances, dtype=np.float64)
        sigma = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        return cls(mu=float(arr.mean()), sigma=sigma, n=len(arr))


@dataclass(frozen=True)
class ZTestResult:
    p_value: float
    z: float
    degenerate: bool


def _phi_sf(z: float) -> float:
    """Standard normal survival function."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def z_test(
    d: float,
    baseline: SourceBaseline,
    alternative: str = "greater",
    degenerate_tol: float = DEGENERATE_TOL,
) -> ZTestResult:
    """Position of one distance against the source baseline.

    A zero-sigma baseline yields p=1 when d matches mu (within degenerate_tol
    absolute plus a matching relative slack) and p=0 otherwise.
    """
    if alternative not in ("greater", "two-sided"):
        raise ContractError(f"alternative must be 'greater' or 'two-sided', got {alternative!r}")
    if baseline.sigma == 0.0:
        equal = abs(d - baseline.mu) <= degenerate_tol + 1e-9 * abs(baseline.mu)
        return ZTestResult(p_value=1.0 if equal else 0.0,
                           z=0.0 if equal else math.inf,
                           degenerate=True)
    z = (d - baseline.mu) / baseline.sigma
    if alternative == "greater":
        p = _phi_sf(z)
    else:
        p = 2.0 * _phi_sf(abs(z))
    return ZTestResult(p_value=min(p, 1.0), z=z, degenerate=False)


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    w_plus: float
    n_effective: int
    method: str
    no_signal: bool


def _wilcoxon_exact(doubled_ranks: np.ndarray, w_obs: int, alternative: str) -> float:
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        counts[r:] = counts[r:] + counts[:-r]
    denom = counts.sum()
    p_greater = counts[w_obs:].sum() / denom
    p_less = counts[: w_obs + 1].sum() / denom
    if alternative == "greater":
        return float(p_greater)
    if alternative == "less":
        return float(p_less)
    return float(min(1.0, 2.0 * min(p_greater, p_less)))


def _wilcoxon_normal(ranks: np.ndarray, signs: np.ndarray, alternative: str) -> float:
    n = len(ranks)
    w_plus = float(ranks[signs > 0].sum())
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    sd = math.sqrt(var)
    if alternative == "greater":
        return _phi_sf((w_plus - 0.5 - mean) / sd)
    if alternative == "less":
        return 1.0 - _phi_sf((w_plus + 0.5 - mean) / sd)
    return min(1.0, 2.0 * _phi_sf((abs(w_plus - mean) - 0.5) / sd))


def wilcoxon_signed_rank(
    x,
    y,
    alternative: str = "two-sided",
    method: str = "auto",
    exact_cutoff: int = 25,
) -> WilcoxonResult:
    """Signed-rank test on paired samples, differences taken as y - x.

    Zero differences are dropped; ties receive mid-ranks. Up to exact_cutoff
    effective pairs the null distribution is enumerated exactly (conditional on
    the observed rank multiset), beyond that a tie-corrected normal
    approximation with continuity correction is used.
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ContractError(f"bad alternative {alternative!r}")
    if method not in ("auto", "exact", "normal"):
        raise ContractError(f"bad method {method!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError("x and y must be 1-D arrays of equal length")
    diffs = y - x
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(p_value=1.0, w_plus=0.0, n_effective=0, method="none", no_signal=True)
    ranks = rankdata(np.abs(diffs))
    signs = np.sign(diffs)
    use_exact = method == "exact" or (method == "auto" and n <= exact_cutoff)
    if use_exact:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        w_obs = int(doubled[signs > 0].sum())
        p = _wilcoxon_exact(doubled, w_obs, alternative)
        return WilcoxonResult(p_value=p, w_plus=w_obs / 2.0, n_effective=n,
                              method="exact", no_signal=False)
    p = _wilcoxon_normal(ranks, signs, alternative)
    return WilcoxonResult(p_value=p, w_plus=float(ranks[signs > 0].sum()),
                          n_effective=n, method="normal", no_signal=False)


@dataclass(frozen=True)
class Verdict:
    criterion: str
    distance: float
    p_value: float
    alpha: float
    violated: bool
    degenerate: bool = False


def _make_verdict(criterion: str, distance: float, zr: ZTestResult, alpha: float) -> Verdict:
    return Verdict(criterion=criterion, distance=distance, p_value=zr.p_value,
                   alpha=alpha, violated=zr.p_value <= alpha, degenerate=zr.degenerate)


@dataclass(frozen=True)
class WvcResult:
    verdicts: tuple[Verdict, ...]
    rate: float
    baseline: SourceBaseline


def wvc(
    source_runs: list[PredictionSet],
    follow_up: PredictionSet,
    alpha: float = 0.05,
    ot: OTConfig | None = None,
    degenerate_tol: float = DEGENERATE_TOL,
) -> WvcResult:
    """Transport-distance criterion: one verdict per source run.

    source_runs must already live in the follow-up frame; the baseline is the
    pairwise transport distance among them, so rescaled frames stay
    scale-consistent.
    """
    if len(source_runs) < 2:
        raise ContractError("need at least two source runs")
    dist = lambda a, b: wasserstein_between(a, b, ot)
    baseline = SourceBaseline.from_distances(pairwise_distances(source_runs, dist))
    verdicts = []
    for run in source_runs:
        d = dist(follow_up, run)
        zr = z_test(d, baseline, "greater", degenerate_tol)
        verdicts.append(_make_verdict("wvc", d, zr, alpha))
    rate = sum(v.violated for v in verdicts) / len(verdicts)
    return WvcResult(verdicts=tuple(verdicts), rate=rate, baseline=baseline)


@dataclass(frozen=True)
class HvcResult:
    verdicts: tuple[Verdict, ...]
    rate: float
    mean_distance: float
    std_distance: float
    baseline: SourceBaseline


def hvc(
    source_maps: list[ProbabilityMap],
    follow_up_map: ProbabilityMap,
    alpha: float = 0.05,
    degenerate_tol: float = DEGENERATE_TOL,
) -> HvcResult:
    """Hellinger criterion over probability rasters, same scheme as wvc."""
    if len(source_maps) < 2:
        raise ContractError("need at least two source maps")
    dist = lambda a, b: hellinger(a.values, b.values)
    baseline = SourceBaseline.from_distances(pairwise_distances(source_maps, dist))
    verdicts = []
    for pm in source_maps:
        d = hellinger(follow_up_map.values, pm.values)
        zr = z_test(d, baseline, "greater", degenerate_tol)
        verdicts.append(_make_verdict("hvc", d, zr, alpha))
    distances = np.array([v.distance for v in verdicts])
    rate = sum(v.violated for v in verdicts) / len(verdicts)
    return HvcResult(verdicts=tuple(verdicts), rate=rate,
                     mean_distance=float(distances.mean()),
                     std_distance=float(distances.std(ddof=0)),
                     baseline=baseline)


def alternative_for_effect(effect: str) -> str:
    """Map an expected occupancy effect onto a one-sided alternative."""
    if effect == "increase":
        return "greater"
    if effect in ("decrease", "avoidance"):
        return "less"
    raise ContractError(f"unknown effect {effect!r}")


@dataclass(frozen=True)
class HtcResult:
    verdict: Verdict
    alternative: str
    n_effective: int
    no_signal: bool
    w_plus: float


def htc(
    p_map: ProbabilityMap,
    q_map: ProbabilityMap,
    roi: frozenset[tuple[int, int]],
    alpha: float = 0.05,
    alternative: str = "two-sided",
) -> HtcResult:
    """Signed-rank comparison of cell masses over the edited region."""
    if p_map.values.shape != q_map.values.shape:
        raise ContractError("probability maps must share dimensions")
    if not roi:
        raise ContractError("empty region of interest")
    w, h = p_map.width, p_map.height
    cells = sorted(roi)
    for ix, iy in cells:
        if not (0 <= ix < w and 0 <= iy < h):
            raise ContractError(f"roi cell ({ix}, {iy}) outside raster")
    xs = np.array([p_map.values[iy, ix] for ix, iy in cells])
    ys = np.array([q_map.values[iy, ix] for ix, iy in cells])
    wres = wilcoxon_signed_rank(xs, ys, alternative=alternative)
    verdict = Verdict(criterion="htc", distance=wres.w_plus, p_value=wres.p_value,
                      alpha=alpha, violated=wres.p_value <= alpha, degenerate=wres.no_signal)
    return HtcResult(verdict=verdict, alternative=alternative,
                     n_effective=wres.n_effective, no_signal=wres.no_signal,
                     w_plus=wres.w_plus)


def traverse_cells(
    x0: float, y0: float, x1: float, y1: float, width: int, height: int
) -> list[tuple[int, int]]:
    """Raster cells a segment passes through, in travel order.

    Exact corner crossings step diagonally (neither side cell is included).
    Traversal stops if the segment leaves the raster.
    """
    ix, iy = cell_of(x0, y0, width, height)
    ex, ey = cell_of(x1, y1, width, height)
    cells = [(ix, iy)]
    dx = x1 - x0
    dy = y1 - y0
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    if dx != 0:
        t_max_x = ((ix + (sx > 0)) - x0) / dx
        t_dx = abs(1.0 / dx)
    else:
        t_max_x, t_dx = math.inf, math.inf
    if dy != 0:
        t_max_y = ((iy + (sy > 0)) - y0) / dy
        t_dy = abs(1.0 / dy)
    else:
        t_max_y, t_dy = math.inf, math.inf
    guard = 2 * (abs(ex - ix) + abs(ey - iy)) + 4
    while (ix, iy) != (ex, ey) and guard > 0:
        guard -= 1
        if t_max_x < t_max_y:
            ix += sx
            t_max_x += t_dx
        elif t_max_y < t_max_x:
            iy += sy
            t_max_y += t_dy
        else:
            ix += sx
            iy += sy
            t_max_x += t_dx
            t_max_y += t_dy
        if not (0 <= ix < width and 0 <= iy < height):
            break
        cells.append((ix, iy))
    return cells


def intersection_rate(
    pred: PredictionSet,
    seg_map: SegmentationMap,
    blocked_class_ids: set[int] | None = None,
) -> float:
    """Fraction of sampled trajectories whose path enters a blocked cell."""
    if blocked_class_ids is None:
        blocked_class_ids = {
            e.class_id for e in seg_map.legend.entries if e.walkability == 0.0
        }
    blocked = np.isin(seg_map.cells, sorted(blocked_class_ids))
    w, h = seg_map.width, seg_map.height
    hits = 0
    for traj in pred.trajectories:
        pts = traj.points
        crossed = False
        for i in range(len(pts) - 1):
            for ix, iy in traverse_cells(pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1], w, h):
                if blocked[iy, ix]:
                    crossed = True
                    break
            if crossed:
                break
        if len(pts) == 1:
            ix, iy = cell_of(pts[0, 0], pts[0, 1], w, h)
            crossed = bool(blocked[iy, ix])
        hits += crossed
    return hits / len(pred.trajectories)
