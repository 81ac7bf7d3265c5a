"""Scene packages and report files.

A scene package is a directory holding map.pgm (binary P5, one byte per cell =
class id), legend.json, and trajectories.csv (columns scene_id, role, t_index,
x, y with role in {history, ground_truth}). Probability rasters use PFM with
scale -1.0 (little-endian float32); unlike the usual PFM convention rows are
stored top-down, matching the row-major raster order used everywhere else.

Report emission is deterministic: stable row order and all floating-point
values rendered at six significant digits.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .core import ClassEntry, ClassLegend, ProbabilityMap, SegmentationMap, TestCase, Trajectory
from .errors import SceneFormatError
from .harness import CampaignResult, MetricCheck, SceneMRResult
from .stats import SourceBaseline, Verdict


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace-separated header tokens and the offset after
    the single whitespace byte that terminates the last one. '#' starts a
    comment running to end of line."""
    toks: list[bytes] = []
    i = 0
    cur = b""
    while i < len(data) and len(toks) < count:
        c = data[i : i + 1]
        if c == b"#" and not cur:
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif c.isspace():
            if cur:
                toks.append(cur)
                cur = b""
            i += 1
        else:
            cur += c
            i += 1
    if len(toks) < count:
        raise SceneFormatError(f"truncated header: wanted {count} tokens, got {len(toks)}")
    return toks, i


def write_pgm(cells: np.ndarray, path: str):
    h, w = cells.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(cells, dtype=np.uint8).tobytes())


def read_pgm(path: str) -> np.ndarray:
    data = open(path, "rb").read()
    toks, off = _tokens(data, 4)
    if toks[0] != b"P5":
        raise SceneFormatError(f"{path}: not a binary graymap (magic {toks[0]!r})")
    w, h, maxval = (int(t) for t in toks[1:])
    if maxval != 255:
        raise SceneFormatError(f"{path}: maxval must be 255, got {maxval}")
    body = data[off:]
    if len(body) != w * h:
        raise SceneFormatError(
            f"{path}: expected {w * h} raster bytes at offset {off}, found {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def write_pfm(values: np.ndarray, path: str):
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_pfm(path: str) -> np.ndarray:
    data = open(path, "rb").read()
    toks, off = _tokens(data, 4)
    if toks[0] != b"Pf":
        raise SceneFormatError(f"{path}: not a single-channel float map (magic {toks[0]!r})")
    w, h = int(toks[1]), int(toks[2])
    if float(toks[3]) >= 0:
        raise SceneFormatError(f"{path}: big-endian scale {toks[3]!r} unsupported; expect -1.0")
    body = data[off:]
    if len(body) != w * h * 4:
        raise SceneFormatError(
            f"{path}: expected {w * h * 4} payload bytes at offset {off}, found {len(body)}"
        )
    return np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(h, w)


def write_legend(legend: ClassLegend, path: str):
    payload = {
        "entries": [
            {"id": e.class_id, "name": e.name, "walkability": e.walkability}
            for e in legend.entries
        ]
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def read_legend(path: str) -> ClassLegend:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    try:
        entries = tuple(
            ClassEntry(class_id=int(e["id"]), name=str(e["name"]), walkability=float(e["walkability"]))
            for e in payload["entries"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFormatError(f"{path}: malformed legend: {exc}") from exc
    return ClassLegend(entries=entries)


_CSV_HEADER = ["scene_id", "role", "t_index", "x", "y"]
_ROLES = ("history", "ground_truth")


def write_trajectories(tc: TestCase, path: str):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(_CSV_HEADER)
        for role, traj in (("history", tc.history), ("ground_truth", tc.ground_truth)):
            if traj is None:
                continue
            for t, (x, y) in enumerate(traj.points):
                # repr keeps the full float so reloading is bit-exact
                writer.writerow([tc.scene_id, role, t, repr(float(x)), repr(float(y))])


def read_trajectories(path: str) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise SceneFormatError(f"{path}: header {header} != {_CSV_HEADER}")
        scene_id = None
        rows: dict[str, list[tuple[int, float, float]]] = {r: [] for r in _ROLES}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise SceneFormatError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            sid, role, t_index, x, y = row
            if scene_id is None:
                scene_id = sid
            elif sid != scene_id:
                raise SceneFormatError(f"{path}:{lineno}: mixed scene ids {scene_id!r}/{sid!r}")
            if role not in _ROLES:
                raise SceneFormatError(f"{path}:{lineno}: unknown role {role!r}")
            rows[role].append((int(t_index), float(x), float(y)))
        if scene_id is None:
            raise SceneFormatError(f"{path}: no trajectory rows")
    out: dict[str, np.ndarray] = {}
    for role, triples in rows.items():
        if not triples:
            continue
        indices = [t for t, _, _ in triples]
        if indices != list(range(len(indices))):
            raise SceneFormatError(f"{path}: {role} t_index not consecutive from 0: {indices}")
        out[role] = np.array([[x, y] for _, x, y in triples], dtype=np.float64)
    return scene_id, out


def save_scene(tc: TestCase, directory: str):
    os.makedirs(directory, exist_ok=True)
    write_pgm(tc.map.cells, os.path.join(directory, "map.pgm"))
    write_legend(tc.map.legend, os.path.join(directory, "legend.json"))
    write_trajectories(tc, os.path.join(directory, "trajectories.csv"))


def load_scene(directory: str, dt: float = 0.4) -> TestCase:
    cells = read_pgm(os.path.join(directory, "map.pgm"))
    legend = read_legend(os.path.join(directory, "legend.json"))
    scene_id, rows = read_trajectories(os.path.join(directory, "trajectories.csv"))
    if "history" not in rows:
        raise SceneFormatError(f"{directory}: trajectories.csv carries no history rows")
    gt = rows.get("ground_truth")
    return TestCase(
        scene_id=scene_id,
        map=SegmentationMap(cells=cells, legend=legend),
        history=Trajectory(points=rows["history"], dt=dt),
        ground_truth=None if gt is None else Trajectory(points=gt, dt=dt),
    )


def save_corpus(scenes: list[TestCase], root: str):
    os.makedirs(root, exist_ok=True)
    for tc in scenes:
        save_scene(tc, os.path.join(root, tc.scene_id))


def load_scenes(root: str, dt: float = 0.4) -> list[TestCase]:
    if not os.path.isdir(root):
        raise SceneFormatError(f"{root}: not a directory")
    out = []
    for name in sorted(os.listdir(root)):
        directory = os.path.join(root, name)
        if os.path.isdir(directory):
            out.append(load_scene(directory, dt=dt))
    if not out:
        raise SceneFormatError(f"{root}: no scene packages found")
    return out


def save_prob_map(pm: ProbabilityMap, path: str):
    write_pfm(pm.values, path)


def load_prob_map(path: str) -> ProbabilityMap:
    return ProbabilityMap(values=read_pfm(path))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def _pct(rate: float | None) -> str:
    return "" if rate is None else format(100.0 * rate, ".6g")


AGGREGATE_HEADER = [
    "mr", "label_preserving", "scenes", "evaluated", "skipped", "errors",
    "wvc_pct", "bon_ade_pct", "bon_fde_pct", "mean_ade_pct", "mean_fde_pct",
    "hvc_mean", "hvc_std", "htc_pct", "expectation_met_pct", "intersection_pct",
]

SCENES_HEADER = [
    "scene_id", "mr", "status", "detail",
    "wvc_rate", "wvc_p", "hvc_rate", "hvc_mean", "hvc_std",
    "htc_p", "htc_alternative", "expectation_met", "intersection_rate",
    "src_bon_ade", "src_bon_fde", "src_mean_ade", "src_mean_fde",
    "fu_bon_ade", "fu_bon_fde", "fu_mean_ade", "fu_mean_fde",
    "p_bon_ade", "p_bon_fde", "p_mean_ade", "p_mean_fde",
]

AGREEMENT_HEADER = [
    "metric", "threshold", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall",
]


def _scene_row(r: SceneMRResult) -> list[str]:
    def p_of(name):
        c = r.check(name)
        return None if c is None else c.p_value

    src, fu = r.src_metrics, r.fu_metrics
    return [
        r.scene_id, r.mr.label, r.status, r.detail,
        _fmt(None if r.wvc is None else r.wvc.rate),
        _fmt(r.wvc_p),
        _fmt(None if r.hvc is None else r.hvc.rate),
        _fmt(None if r.hvc is None else r.hvc.mean_distance),
        _fmt(None if r.hvc is None else r.hvc.std_distance),
        _fmt(None if r.htc is None else r.htc.verdict.p_value),
        "" if r.htc is None else r.htc.alternative,
        _fmt(r.expectation_met),
        _fmt(r.intersection),
        _fmt(None if src is None else src.bon_ade),
        _fmt(None if src is None else src.bon_fde),
        _fmt(None if src is None else src.mean_ade),
        _fmt(None if src is None else src.mean_fde),
        _fmt(None if fu is None else fu.bon_ade),
        _fmt(None if fu is None else fu.bon_fde),
        _fmt(None if fu is None else fu.mean_ade),
        _fmt(None if fu is None else fu.mean_fde),
        _fmt(p_of("bon_ade")), _fmt(p_of("bon_fde")),
        _fmt(p_of("mean_ade")), _fmt(p_of("mean_fde")),
    ]


def _verdict_json(v: Verdict) -> dict:
    return {
        "criterion": v.criterion,
        "distance": v.distance,
        "p_value": v.p_value,
        "alpha": v.alpha,
        "violated": v.violated,
        "degenerate": v.degenerate,
    }


def _baseline_json(b: SourceBaseline) -> dict:
    return {"mu": b.mu, "sigma": b.sigma, "n_pairs": b.n}


def _check_json(c: MetricCheck) -> dict:
    return {
        "metric": c.metric,
        "follow_up_value": c.follow_up_value,
        "baseline": _baseline_json(c.baseline),
        "p_value": c.p_value,
        "violated": c.violated,
        "degenerate": c.degenerate,
    }


def _mr_json(mr) -> dict:
    return {
        "label": mr.label,
        "kind": mr.kind,
        "axis": mr.axis,
        "degrees": mr.degrees,
        "s_old": mr.s_old,
        "s_new": mr.s_new,
        "source_class": mr.source_class,
        "target_class": mr.target_class,
        "expected_effect": mr.expected_effect,
        "obstacle_class": mr.obstacle_class,
        "radius": mr.radius,
        "fraction": mr.fraction,
    }


def _errors_json(e) -> dict | None:
    if e is None:
        return None
    return {"bon_ade": e.bon_ade, "bon_fde": e.bon_fde,
            "mean_ade": e.mean_ade, "mean_fde": e.mean_fde}


def result_to_json(r: SceneMRResult) -> dict:
    return {
        "scene_id": r.scene_id,
        "mr": _mr_json(r.mr),
        "status": r.status,
        "detail": r.detail,
        "n_runs": r.n_runs,
        "wvc": None if r.wvc is None else {
            "rate": r.wvc.rate,
            "baseline": _baseline_json(r.wvc.baseline),
            "verdicts": [_verdict_json(v) for v in r.wvc.verdicts],
        },
        "wvc_p": r.wvc_p,
        "hvc": None if r.hvc is None else {
            "rate": r.hvc.rate,
            "mean_distance": r.hvc.mean_distance,
            "std_distance": r.hvc.std_distance,
            "baseline": _baseline_json(r.hvc.baseline),
            "verdicts": [_verdict_json(v) for v in r.hvc.verdicts],
        },
        "hvc_skip": r.hvc_skip,
        "htc": None if r.htc is None else {
            "alternative": r.htc.alternative,
            "n_effective": r.htc.n_effective,
            "no_signal": r.htc.no_signal,
            "w_plus": r.htc.w_plus,
            "verdict": _verdict_json(r.htc.verdict),
        },
        "expectation_met": r.expectation_met,
        "intersection_rate": r.intersection,
        "src_metrics": _errors_json(r.src_metrics),
        "fu_metrics": _errors_json(r.fu_metrics),
        "metric_checks": [_check_json(c) for c in r.metric_checks],
    }


def aggregate_to_json(a) -> dict:
    return {
        "mr": a.mr_label,
        "label_preserving": a.label_preserving,
        "scenes": a.scenes,
        "evaluated": a.evaluated,
        "skipped": a.skipped,
        "errors": a.errors,
        "wvc_rate": a.wvc_rate,
        "bon_ade_rate": a.bon_ade_rate,
        "bon_fde_rate": a.bon_fde_rate,
        "mean_ade_rate": a.mean_ade_rate,
        "mean_fde_rate": a.mean_fde_rate,
        "hvc_mean": a.hvc_mean,
        "hvc_std": a.hvc_std,
        "htc_rate": a.htc_rate,
        "expectation_met_rate": a.expectation_met_rate,
        "intersection_mean": a.intersection_mean,
    }


def campaign_to_json(campaign: CampaignResult) -> dict:
    cfg = campaign.config
    return {
        "sut": campaign.sut_name,
        "config": {
            "n_runs": cfg.n_runs,
            "k_samples": cfg.k_samples,
            "alpha": cfg.alpha,
            "history_len": cfg.history_len,
            "horizon": cfg.horizon,
            "dt": cfg.dt,
            "seed": cfg.seed,
            "parallelism": cfg.parallelism,
            "degenerate_tol": cfg.degenerate_tol,
            "mrs": [_mr_json(mr) for mr in cfg.mrs],
        },
        "aggregates": [aggregate_to_json(a) for a in campaign.aggregates],
        "scenes": [result_to_json(r) for r in campaign.results],
    }


def write_report(campaign: CampaignResult, out_dir: str) -> list[str]:
    """aggregate.csv, scenes.csv, results.json; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    agg_path = os.path.join(out_dir, "aggregate.csv")
    with open(agg_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(AGGREGATE_HEADER)
        for a in campaign.aggregates:
            writer.writerow([
                a.mr_label, _fmt(a.label_preserving), a.scenes, a.evaluated,
                a.skipped, a.errors, _pct(a.wvc_rate), _pct(a.bon_ade_rate),
                _pct(a.bon_fde_rate), _pct(a.mean_ade_rate), _pct(a.mean_fde_rate),
                _fmt(a.hvc_mean), _fmt(a.hvc_std), _pct(a.htc_rate),
                _pct(a.expectation_met_rate), _pct(a.intersection_mean),
            ])
    scenes_path = os.path.join(out_dir, "scenes.csv")
    with open(scenes_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SCENES_HEADER)
        for r in campaign.results:
            writer.writerow(_scene_row(r))
    json_path = os.path.join(out_dir, "results.json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(campaign_to_json(campaign), f, indent=2)
        f.write("\n")
    return [agg_path, scenes_path, json_path]


def write_agreement(report, path: str):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(AGREEMENT_HEADER)
        for r in report.rows:
            writer.writerow([
                r.metric, _fmt(r.threshold), r.tp, r.fp, r.fn, r.tn,
                _fmt(r.accuracy), _fmt(r.precision), _fmt(r.recall),
            ])


@dataclass(frozen=True)
class _LoadedCheck:
    metric: str
    p_value: float


@dataclass(frozen=True)
class LoadedResult:
    """Just enough of a campaign row to rerun the agreement analysis."""

    scene_id: str
    status: str
    wvc_p: float | None
    checks: tuple[_LoadedCheck, ...]

    def check(self, metric: str) -> _LoadedCheck | None:
        for c in self.checks:
            if c.metric == metric:
                return c
        return None


def load_results(path: str) -> list[LoadedResult]:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    try:
        rows = []
        for rec in payload["scenes"]:
            rows.append(
                LoadedResult(
                    scene_id=rec["scene_id"],
                    status=rec["status"],
                    wvc_p=rec["wvc_p"],
                    checks=tuple(
                        _LoadedCheck(metric=c["metric"], p_value=c["p_value"])
                        for c in rec["metric_checks"]
                    ),
                )
            )
    except (KeyError, TypeError) as exc:
        raise SceneFormatError(f"{path}: malformed results file: {exc}") from exc
    return rows
