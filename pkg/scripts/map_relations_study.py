#!/usr/bin/env python3
"""Map-altering relations: occupancy shifts under class changes, obstacle avoidance.

Two parts:

1. Class-change campaign with the map-aware predictor: relabel terrain as
   road / pavement / tree and test whether predicted occupancy in the edited
   region moves in the expected direction (signed-rank occupancy test).
2. Obstacle contrast: drop a blocking polygon on the path predicted for the
   unmodified scene, then compare how often the map-aware predictor vs. the
   map-blind reference still routes samples through blocked cells.

Writes the class-change reports under --out and prints summary tables.
"""
from __future__ import annotations

import argparse
import os
import statistics
import time

from trajtest import (
    EquivariantReference,
    HarnessConfig,
    MapAwareReference,
    MRSpec,
    SutRequest,
    default_corpus,
    intersection_rate,
    run_campaign,
)
from trajtest.errors import DegenerateInputError, PlacementError, SceneSkip
from trajtest.harness import derive_seed, follow_up_seed
from trajtest.sceneio import write_report
from trajtest.transforms import mr_obstacle


def pct(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:6.1f}"


def class_change_part(scenes, args) -> None:
    mrs = (
        MRSpec.class_change("terrain", "road"),
        MRSpec.class_change("terrain", "pavement"),
        MRSpec.class_change("terrain", "tree"),
    )
    t0 = time.perf_counter()
    campaign = run_campaign(
        MapAwareReference(), scenes,
        HarnessConfig(n_runs=args.runs, k_samples=args.k, alpha=args.alpha,
                      seed=args.seed, parallelism=args.parallel, mrs=mrs),
    )
    print(f"class-change campaign: {time.perf_counter() - t0:.1f}s")
    paths = write_report(campaign, os.path.join(args.out, "class_change"))
    print(f"wrote {', '.join(paths)}")

    print(f"\nClass changes, map-aware predictor (alpha={args.alpha:g})")
    header = f"{'relation':<32}{'eval':>6}{'skip':>6}{'err':>5}{'shift%':>9}{'htc%':>7}"
    print(header)
    print("-" * len(header))
    for a in campaign.aggregates:
        print(
            f"{a.mr_label:<32}{a.evaluated:>6}{a.skipped:>6}{a.errors:>5}"
            f"{pct(a.expectation_met_rate):>9}{pct(a.htc_rate):>7}"
        )


def obstacle_part(scenes, args) -> None:
    # Anchor every obstacle on the reference's own source prediction so both
    # predictors face the identical edited scene.
    anchor = EquivariantReference()
    aware = MapAwareReference()
    rates: dict[str, list[float]] = {anchor.name: [], aware.name: []}
    skipped = 0
    t0 = time.perf_counter()
    for tc in scenes:
        src = anchor.predict(SutRequest(
            scene_id=tc.scene_id, history=tc.history, map=tc.map,
            k=args.k, horizon=args.horizon,
            seed=derive_seed(args.seed, tc.scene_id, 0),
        )).prediction
        try:
            tr = mr_obstacle(tc, src)
        except (PlacementError, SceneSkip, DegenerateInputError):
            skipped += 1
            continue
        fu = tr.follow_up
        seed = follow_up_seed(args.seed, tc.scene_id)
        for sut in (anchor, aware):
            pred = sut.predict(SutRequest(
                scene_id=fu.scene_id, history=fu.history, map=fu.map,
                k=args.k, horizon=args.horizon, seed=seed,
            )).prediction
            rates[sut.name].append(intersection_rate(pred, fu.map))
    print(f"obstacle contrast: {time.perf_counter() - t0:.1f}s")

    print(f"\nObstacle insertion on the predicted path "
          f"({len(scenes) - skipped}/{len(scenes)} scenes placed)")
    header = f"{'predictor':<16}{'scenes':>7}{'blocked-cell hit rate':>23}"
    print(header)
    print("-" * len(header))
    for name, values in rates.items():
        mean = statistics.fmean(values) if values else float("nan")
        print(f"{name:<16}{len(values):>7}{pct(mean):>23}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/map_relations")
    ap.add_argument("--n-scenes", type=int, default=40)
    ap.add_argument("--seed", type=int, default=23)
    ap.add_argument("--runs", type=int, default=8)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--horizon", type=int, default=12)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--parallel", type=int, default=2)
    args = ap.parse_args()

    t0 = time.perf_counter()
    scenes = default_corpus(n=args.n_scenes, seed=args.seed)
    print(f"generated {len(scenes)} scenes in {time.perf_counter() - t0:.1f}s")

    class_change_part(scenes, args)
    obstacle_part(scenes, args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
