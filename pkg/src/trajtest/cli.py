"""Command line entry points.

Exit codes: 0 success; 1 usage error; 2 completed with scene errors,
failed validation, or failed conformance probe; 3 I/O failure.
The environment variable TRAJTEST_SEED overrides --seed when set.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .core import DEFAULT_LEGEND, SegmentationMap, TestCase, Trajectory, validate_test_case
from .errors import ContractError, ProtocolError, SceneFormatError
from .harness import HarnessConfig, agreement_analysis, run_campaign
from .scenegen import default_corpus
from .sceneio import (
    load_results,
    load_scenes,
    save_corpus,
    write_agreement,
    write_report,
)
from .sut import ExternalProcessSut, SutRequest, build_sut
from .transforms import parse_mr

DEFAULT_MR_TOKENS = "mirror-v,mirror-h,rotate-90,rotate-180,rotate-270,rescale-0.2,rescale-0.3"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="trajtest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="write a synthetic scene corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--n", type=int, default=50)
    gen.add_argument("--seed", type=int, default=20260814)
    gen.add_argument("--width", type=int, default=192)
    gen.add_argument("--height", type=int, default=160)

    run = sub.add_parser("run", help="run a metamorphic campaign")
    run.add_argument("--scenes", required=True)
    run.add_argument("--sut", required=True,
                     help="equivariant | mutant | map-aware | cmd:<command line>")
    run.add_argument("--out", required=True)
    run.add_argument("--mr", default=DEFAULT_MR_TOKENS,
                     help="comma-separated relation tokens, e.g. mirror-v,rotate-180,"
                          "rescale-0.2,class-change-terrain-road,obstacle")
    run.add_argument("--n", type=int, default=8, help="source repetitions")
    run.add_argument("--k", type=int, default=20, help="sampled trajectories per call")
    run.add_argument("--alpha", type=float, default=0.05)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--parallel", type=int, default=1)
    run.add_argument("--history", type=int, default=8)
    run.add_argument("--horizon", type=int, default=12)
    run.add_argument("--dt", type=float, default=0.4)
    run.add_argument("--timeout", type=float, default=120.0,
                     help="per-request timeout for external predictors (s)")

    agree = sub.add_parser("agree", help="agreement analysis over a results file")
    agree.add_argument("--results", required=True)
    agree.add_argument("--out", required=True)
    agree.add_argument("--thresholds", default="0.01,0.02,0.05,0.1,0.2,0.3,0.4,0.5")

    probe = sub.add_parser("protocol-check", help="conformance probe of an external predictor")
    probe.add_argument("--cmd", required=True)
    probe.add_argument("--k", type=int, default=6)
    probe.add_argument("--horizon", type=int, default=12)
    probe.add_argument("--timeout", type=float, default=120.0)

    val = sub.add_parser("validate", help="lint scene packages")
    val.add_argument("--scenes", required=True)
    val.add_argument("--history", type=int, default=8)
    val.add_argument("--horizon", type=int, default=12)
    val.add_argument("--dt", type=float, default=0.4)
    return parser


def _env_seed(default: int) -> int:
    raw = os.environ.get("TRAJTEST_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        print(f"trajtest: TRAJTEST_SEED={raw!r} is not an integer", file=sys.stderr)
        raise SystemExit(1)


def _cmd_gen(args) -> int:
    scenes = default_corpus(
        n=args.n, seed=_env_seed(args.seed), width=args.width, height=args.height
    )
    save_corpus(list(scenes), args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def _cmd_run(args) -> int:
    mrs = tuple(parse_mr(tok.strip()) for tok in args.mr.split(",") if tok.strip())
    if not mrs:
        print("trajtest run: --mr selected no relations", file=sys.stderr)
        return 1
    cfg = HarnessConfig(
        n_runs=args.n,
        k_samples=args.k,
        alpha=args.alpha,
        history_len=args.history,
        horizon=args.horizon,
        dt=args.dt,
        seed=_env_seed(args.seed),
        parallelism=args.parallel,
        mrs=mrs,
    )
    scenes = load_scenes(args.scenes, dt=cfg.dt)
    sut = build_sut(args.sut, timeout=args.timeout)
    try:
        campaign = run_campaign(sut, scenes, cfg)
    finally:
        if hasattr(sut, "close"):
            sut.close()
    paths = write_report(campaign, args.out)
    try:
        report = agreement_analysis(list(campaign.results))
    except ContractError:
        report = None
    if report is not None:
        agree_path = os.path.join(args.out, "agreement.csv")
        write_agreement(report, agree_path)
        paths.append(agree_path)
    for a in campaign.aggregates:
        wvc = "-" if a.wvc_rate is None else format(100 * a.wvc_rate, ".6g")
        htc = "-" if a.htc_rate is None else format(100 * a.htc_rate, ".6g")
        print(
            f"{a.mr_label}: scenes={a.evaluated}/{a.scenes} wvc%={wvc} htc%={htc} "
            f"skipped={a.skipped} errors={a.errors}"
        )
    print("reports: " + ", ".join(paths))
    return 2 if campaign.error_count else 0


def _cmd_agree(args) -> int:
    thresholds = tuple(float(t) for t in args.thresholds.split(",") if t.strip())
    rows = load_results(args.results)
    report = agreement_analysis(rows, thresholds=thresholds)
    write_agreement(report, args.out)
    for r in report.rows:
        print(
            f"{r.metric} theta={r.threshold:g}: accuracy={r.accuracy:.6g} "
            f"precision={r.precision:.6g} recall={r.recall:.6g}"
        )
    return 0


def _probe_scene(k: int, horizon: int) -> TestCase:
    cells = np.full((24, 32), DEFAULT_LEGEND.id_of("terrain"), dtype=np.uint8)
    cells[10:14, :] = DEFAULT_LEGEND.id_of("road")
    cells[8:10, :] = DEFAULT_LEGEND.id_of("pavement")
    cells[2:6, 4:9] = DEFAULT_LEGEND.id_of("structure")
    xs = 3.0 + 2.0 * np.arange(8)
    ys = 8.5 + np.array([0.25, -0.25, 0.25, 0.25, -0.25, 0.25, -0.25, 0.25])
    return TestCase(
        scene_id="protocol-probe",
        map=SegmentationMap(cells=cells, legend=DEFAULT_LEGEND),
        history=Trajectory(points=np.column_stack([xs, ys]), dt=0.4),
    )


def _cmd_protocol_check(args) -> int:
    tc = _probe_scene(args.k, args.horizon)
    req = SutRequest(
        scene_id=tc.scene_id, history=tc.history, map=tc.map,
        k=args.k, horizon=args.horizon, seed=424242,
    )
    try:
        with ExternalProcessSut(args.cmd, timeout=args.timeout) as sut:
            first = sut.predict(req).prediction
            second = sut.predict(req).prediction
            for i, (a, b) in enumerate(zip(first.trajectories, second.trajectories)):
                if not np.array_equal(a.points, b.points):
                    print(
                        f"protocol-check: FAIL: trajectory {i} differs between two "
                        "calls with the same seed (reproducibility contract)",
                    )
                    return 2
            has_map = first.prob_map is not None
            if sut.provides_prob_map and not has_map:
                print("protocol-check: FAIL: ready message promised a probability "
                      "map but the response carries none")
                return 2
    except ProtocolError as exc:
        print(f"protocol-check: FAIL: {exc}")
        return 2
    print(
        f"protocol-check: PASS ({args.k} trajectories x {args.horizon} steps, "
        f"provides_prob_map={has_map})"
    )
    return 0


def _cmd_validate(args) -> int:
    cfg = HarnessConfig(history_len=args.history, horizon=args.horizon, dt=args.dt)
    scenes = load_scenes(args.scenes, dt=args.dt)
    bad = 0
    for tc in scenes:
        problems = validate_test_case(tc, cfg)
        if problems:
            bad += 1
            for msg in problems:
                print(f"{tc.scene_id}: {msg}")
    print(f"validated {len(scenes)} scenes, {bad} with problems")
    return 2 if bad else 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "gen": _cmd_gen,
        "run": _cmd_run,
        "agree": _cmd_agree,
        "protocol-check": _cmd_protocol_check,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ContractError as exc:
        print(f"trajtest {args.command}: {exc}", file=sys.stderr)
        return 1
    except (SceneFormatError, OSError) as exc:
        print(f"trajtest {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
