"""Campaign orchestration: source runs, relation transforms, verdicts.

For every (scene, relation) pair the harness performs N source predictions,
one follow-up prediction on the transformed scene, and evaluates:

- label-preserving relations: transport-distance (wvc) and Hellinger (hvc)
  criteria against the baseline of pairwise distances among the source runs,
  all expressed in the follow-up frame;
- map-editing relations: a signed-rank occupancy test (htc) over the edited
  cells with the one-sided alternative implied by the expected effect, plus
  the blocked-cell intersection rate for avoidance relations.

Displacement errors against ground truth are tracked alongside so criterion
verdicts can be compared with accuracy-based labels (agreement analysis).
"""
from __future__ import annotations

import hashlib
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ProbabilityMap, TestCase, Trajectory
from .errors import (
    ContractError,
    DegenerateInputError,
    NumericalFailure,
    PlacementError,
    ProtocolError,
    SceneSkip,
)
from .metrics import DisplacementErrors, OTConfig, ade_fde
from .stats import (
    DEGENERATE_TOL,
    HtcResult,
    HvcResult,
    SourceBaseline,
    WvcResult,
    alternative_for_effect,
    htc,
    hvc,
    intersection_rate,
    wvc,
    z_test,
)
from .sut import Sut, SutRequest
from .transforms import MRSpec, TransformResult, apply_mr, transform_prediction

_FOLLOW_UP_TAG = 1 << 32
_MASK64 = 0xFFFFFFFFFFFFFFFF

DEFAULT_LABEL_PRESERVING = (
    MRSpec.mirror("vertical"),
    MRSpec.mirror("horizontal"),
    MRSpec.rotate(90),
    MRSpec.rotate(180),
    MRSpec.rotate(270),
    MRSpec.rescale(0.25, 0.2),
    MRSpec.rescale(0.25, 0.3),
)


@dataclass(frozen=True)
class HarnessConfig:
    n_runs: int = 8
    k_samples: int = 20
    alpha: float = 0.05
    history_len: int = 8
    horizon: int = 12
    dt: float = 0.4
    seed: int = 0
    parallelism: int = 1
    mrs: tuple[MRSpec, ...] = DEFAULT_LABEL_PRESERVING
    degenerate_tol: float = DEGENERATE_TOL
    ot: OTConfig = field(default_factory=OTConfig)

    def __post_init__(self):
        if self.n_runs < 2:
            raise ContractError("n_runs must be >= 2 so a baseline exists")
        if not (0.0 < self.alpha < 1.0):
            raise ContractError("alpha must lie in (0, 1)")
        if self.k_samples < 1 or self.horizon < 1 or self.history_len < 2:
            raise ContractError("k_samples/horizon must be >= 1, history_len >= 2")
        if self.dt <= 0.0:
            raise ContractError("dt must be positive")
        if self.parallelism < 1:
            raise ContractError("parallelism must be >= 1")


def scene_key(scene_id: str) -> int:
    digest = hashlib.blake2b(scene_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_seed(master: int, scene_id: str, index: int) -> int:
    """Seed for run `index` of a scene; pure function of its arguments."""
    ss = np.random.SeedSequence([master & _MASK64, scene_key(scene_id), index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def follow_up_seed(master: int, scene_id: str) -> int:
    return derive_seed(master, scene_id, _FOLLOW_UP_TAG)


@dataclass(frozen=True)
class MetricCheck:
    """Follow-up displacement error tested against the source-run baseline."""

    metric: str
    follow_up_value: float
    baseline: SourceBaseline
    p_value: float
    violated: bool
    degenerate: bool


@dataclass(frozen=True)
class SceneMRResult:
    scene_id: str
    mr: MRSpec
    status: str  # ok | skipped | error
    detail: str = ""
    n_runs: int = 0
    wvc: WvcResult | None = None
    wvc_p: float | None = None
    hvc: HvcResult | None = None
    hvc_skip: str | None = None
    htc: HtcResult | None = None
    expectation_met: bool | None = None
    intersection: float | None = None
    src_metrics: DisplacementErrors | None = None
    fu_metrics: DisplacementErrors | None = None
    metric_checks: tuple[MetricCheck, ...] = ()

    @property
    def label(self) -> str:
        return self.mr.label

    def check(self, metric: str) -> MetricCheck | None:
        for c in self.metric_checks:
            if c.metric == metric:
                return c
        return None


@dataclass(frozen=True)
class MRAggregate:
    mr_label: str
    label_preserving: bool
    scenes: int
    evaluated: int
    skipped: int
    errors: int
    wvc_rate: float | None = None
    bon_ade_rate: float | None = None
    bon_fde_rate: float | None = None
    mean_ade_rate: float | None = None
    mean_fde_rate: float | None = None
    hvc_mean: float | None = None
    hvc_std: float | None = None
    htc_rate: float | None = None
    expectation_met_rate: float | None = None
    intersection_mean: float | None = None


@dataclass(frozen=True)
class CampaignResult:
    sut_name: str
    config: HarnessConfig
    results: tuple[SceneMRResult, ...]
    aggregates: tuple[MRAggregate, ...]

    @property
    def error_count(self) -> int:
        return sum(1 for r in self.results if r.status == "error")


def _mean_errors(values: list[DisplacementErrors]) -> DisplacementErrors:
    return DisplacementErrors(
        bon_ade=float(np.mean([v.bon_ade for v in values])),
        bon_fde=float(np.mean([v.bon_fde for v in values])),
        mean_ade=float(np.mean([v.mean_ade for v in values])),
        mean_fde=float(np.mean([v.mean_fde for v in values])),
    )


_METRIC_FIELDS = ("bon_ade", "bon_fde", "mean_ade", "mean_fde")


def _metric_checks(
    baseline_errors: list[DisplacementErrors],
    fu_errors: DisplacementErrors,
    alpha: float,
    tol: float,
) -> tuple[MetricCheck, ...]:
    checks = []
    for name in _METRIC_FIELDS:
        base = SourceBaseline.from_distances([getattr(e, name) for e in baseline_errors])
        fu_val = float(getattr(fu_errors, name))
        zr = z_test(fu_val, base, "greater", tol)
        checks.append(
            MetricCheck(
                metric=name,
                follow_up_value=fu_val,
                baseline=base,
                p_value=zr.p_value,
                violated=zr.p_value <= alpha,
                degenerate=zr.degenerate,
            )
        )
    return tuple(checks)


def _mean_prob_map(maps: list[ProbabilityMap]) -> ProbabilityMap:
    return ProbabilityMap(values=np.mean([m.values for m in maps], axis=0))


def run_scene(sut: Sut, tc: TestCase, mr: MRSpec, cfg: HarnessConfig) -> SceneMRResult:
    """N source runs, one follow-up run, criterion verdicts for one relation."""
    try:
        src = [
            sut.predict(
                SutRequest(
                    scene_id=tc.scene_id,
                    history=tc.history,
                    map=tc.map,
                    k=cfg.k_samples,
                    horizon=cfg.horizon,
                    seed=derive_seed(cfg.seed, tc.scene_id, i),
                )
            ).prediction
            for i in range(cfg.n_runs)
        ]
    except (ProtocolError, ContractError, NumericalFailure) as exc:
        return SceneMRResult(scene_id=tc.scene_id, mr=mr, status="error", detail=str(exc))

    try:
        tr = apply_mr(tc, mr, source_prediction=src[0])
    except (SceneSkip, PlacementError, DegenerateInputError) as exc:
        return SceneMRResult(scene_id=tc.scene_id, mr=mr, status="skipped", detail=str(exc))

    try:
        fu = sut.predict(
            SutRequest(
                scene_id=tc.scene_id,
                history=tr.follow_up.history,
                map=tr.follow_up.map,
                k=cfg.k_samples,
                horizon=cfg.horizon,
                seed=follow_up_seed(cfg.seed, tc.scene_id),
            )
        ).prediction
    except (ProtocolError, ContractError, NumericalFailure) as exc:
        return SceneMRResult(scene_id=tc.scene_id, mr=mr, status="error", detail=str(exc))

    try:
        return _evaluate(tc, mr, tr, src, fu, cfg)
    except (ContractError, NumericalFailure) as exc:
        return SceneMRResult(scene_id=tc.scene_id, mr=mr, status="error", detail=str(exc))


def _evaluate(
    tc: TestCase,
    mr: MRSpec,
    tr: TransformResult,
    src: list,
    fu,
    cfg: HarnessConfig,
) -> SceneMRResult:
    wvc_res = hvc_res = htc_res = None
    wvc_p = expectation_met = intersection = None
    hvc_skip = None

    if tr.label_preserving:
        transformed = [transform_prediction(p, tr) for p in src]
        wvc_res = wvc(transformed, fu, cfg.alpha, cfg.ot, cfg.degenerate_tol)
        wvc_p = float(statistics.median(v.p_value for v in wvc_res.verdicts))
        maps = [p.prob_map for p in transformed]
        if fu.prob_map is not None and all(m is not None for m in maps):
            hvc_res = hvc(maps, fu.prob_map, cfg.alpha, cfg.degenerate_tol)
        else:
            hvc_skip = "predictor provides no probability map"
        baseline_frame = transformed
        fu_gt = (
            None
            if tc.ground_truth is None
            else Trajectory(points=tr.forward_xy(tc.ground_truth.points), dt=tc.ground_truth.dt)
        )
    else:
        src_maps = [p.prob_map for p in src]
        if fu.prob_map is not None and all(m is not None for m in src_maps):
            htc_res = htc(
                _mean_prob_map(src_maps),
                fu.prob_map,
                tr.roi,
                cfg.alpha,
                alternative_for_effect(tr.expected_effect),
            )
            expectation_met = htc_res.verdict.violated
        else:
            hvc_skip = "predictor provides no probability map"
        if tr.expected_effect == "avoidance":
            intersection = intersection_rate(fu, tr.follow_up.map)
        baseline_frame = src
        fu_gt = tc.ground_truth

    src_metrics = fu_metrics = None
    checks: tuple[MetricCheck, ...] = ()
    if tc.ground_truth is not None:
        src_metrics = _mean_errors([ade_fde(p, tc.ground_truth) for p in src])
        fu_metrics = ade_fde(fu, fu_gt)
        baseline_errors = [ade_fde(p, fu_gt) for p in baseline_frame]
        checks = _metric_checks(baseline_errors, fu_metrics, cfg.alpha, cfg.degenerate_tol)

    return SceneMRResult(
        scene_id=tc.scene_id,
        mr=mr,
        status="ok",
        n_runs=cfg.n_runs,
        wvc=wvc_res,
        wvc_p=wvc_p,
        hvc=hvc_res,
        hvc_skip=hvc_skip,
        htc=htc_res,
        expectation_met=expectation_met,
        intersection=intersection,
        src_metrics=src_metrics,
        fu_metrics=fu_metrics,
        metric_checks=checks,
    )


def _rate(flags: list[bool]) -> float | None:
    return float(np.mean(flags)) if flags else None


def _aggregate(mr: MRSpec, rows: list[SceneMRResult]) -> MRAggregate:
    ok = [r for r in rows if r.status == "ok"]
    skipped = sum(1 for r in rows if r.status == "skipped")
    errors = sum(1 for r in rows if r.status == "error")

    wvc_rate = _rate([v.violated for r in ok if r.wvc for v in r.wvc.verdicts])
    metric_rates = {}
    for name in _METRIC_FIELDS:
        flags = [r.check(name).violated for r in ok if r.check(name) is not None]
        metric_rates[name] = _rate(flags)

    hvc_mean = hvc_std = None
    hvc_rows = [r.hvc for r in ok if r.hvc is not None]
    if hvc_rows:
        # Pool the per-scene (mean, std) pairs; every scene contributes the
        # same number of follow-up distances, so the grand moments are exact.
        means = np.array([h.mean_distance for h in hvc_rows])
        stds = np.array([h.std_distance for h in hvc_rows])
        hvc_mean = float(means.mean())
        hvc_std = float(np.sqrt(max(0.0, float((stds**2 + means**2).mean()) - hvc_mean**2)))

    htc_rate = _rate([r.htc.verdict.violated for r in ok if r.htc is not None])
    expectation_rate = _rate([r.expectation_met for r in ok if r.expectation_met is not None])
    inter = [r.intersection for r in ok if r.intersection is not None]
    return MRAggregate(
        mr_label=mr.label,
        label_preserving=mr.label_preserving,
        scenes=len(rows),
        evaluated=len(ok),
        skipped=skipped,
        errors=errors,
        wvc_rate=wvc_rate,
        bon_ade_rate=metric_rates["bon_ade"],
        bon_fde_rate=metric_rates["bon_fde"],
        mean_ade_rate=metric_rates["mean_ade"],
        mean_fde_rate=metric_rates["mean_fde"],
        hvc_mean=hvc_mean,
        hvc_std=hvc_std,
        htc_rate=htc_rate,
        expectation_met_rate=expectation_rate,
        intersection_mean=float(np.mean(inter)) if inter else None,
    )


def run_campaign(sut: Sut, scenes: list[TestCase], cfg: HarnessConfig) -> CampaignResult:
    """Every (scene, relation) pair; deterministic for a fixed master seed."""
    if not scenes:
        raise ContractError("campaign needs at least one scene")
    tasks = [(tc, mr) for tc in scenes for mr in cfg.mrs]
    if cfg.parallelism > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(lambda t: run_scene(sut, t[0], t[1], cfg), tasks))
    else:
        results = [run_scene(sut, tc, mr, cfg) for tc, mr in tasks]
    aggregates = []
    for j, mr in enumerate(cfg.mrs):
        rows = [results[i] for i in range(len(results)) if i % len(cfg.mrs) == j]
        aggregates.append(_aggregate(mr, rows))
    return CampaignResult(
        sut_name=getattr(sut, "name", sut.__class__.__name__),
        config=cfg,
        results=tuple(results),
        aggregates=tuple(aggregates),
    )


@dataclass(frozen=True)
class AgreementRow:
    metric: str
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float


@dataclass(frozen=True)
class AgreementReport:
    rows: tuple[AgreementRow, ...]

    def series(self, metric: str, fieldname: str) -> list[float]:
        return [getattr(r, fieldname) for r in self.rows if r.metric == metric]


DEFAULT_THRESHOLDS = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)


def agreement_analysis(
    results: list[SceneMRResult],
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS,
    metrics: tuple[str, ...] = ("mean_ade", "mean_fde"),
) -> AgreementReport:
    """Score transport-criterion verdicts against displacement-error labels.

    At each threshold both p-values are binarized; the criterion verdict is the
    prediction, the displacement-error verdict the label. With degenerate
    (zero-variance) baselines both p-values live in {0, 1}, so the confusion
    matrix, and with it every score, is constant across thresholds strictly
    between 0 and 1.
    """
    pairs = {m: [] for m in metrics}
    for r in results:
        if r.status != "ok" or r.wvc_p is None:
            continue
        for m in metrics:
            c = r.check(m)
            if c is not None:
                pairs[m].append((r.wvc_p, c.p_value))
    if not any(pairs.values()):
        raise ContractError("no rows carry both criterion and displacement-error p-values")
    rows = []
    for m in metrics:
        for theta in thresholds:
            tp = fp = fn = tn = 0
            for wvc_p, metric_p in pairs[m]:
                predicted = wvc_p <= theta
                labeled = metric_p <= theta
                if predicted and labeled:
                    tp += 1
                elif predicted:
                    fp += 1
                elif labeled:
                    fn += 1
                else:
                    tn += 1
            total = tp + fp + fn + tn
            rows.append(
                AgreementRow(
                    metric=m,
                    threshold=theta,
                    tp=tp,
                    fp=fp,
                    fn=fn,
                    tn=tn,
                    accuracy=(tp + tn) / total if total else 1.0,
                    precision=tp / (tp + fp) if (tp + fp) else 1.0,
                    recall=tp / (tp + fn) if (tp + fn) else 1.0,
                )
            )
    return AgreementReport(rows=tuple(rows))
