"""End-to-end acceptance gates.

One test per shipping criterion; the terminal summary prints a PASS/FAIL line
for each (see conftest). Scale parameters, tolerances, and runtime budgets in
this file are part of the gates, not tuning knobs.
"""
from __future__ import annotations

import sys
import time

import numpy as np
import pytest

from trajtest import cli
from trajtest.core import DEFAULT_LEGEND, SegmentationMap, TestCase, Trajectory
from trajtest.errors import DegenerateInputError, PlacementError, SceneSkip
from trajtest.harness import (
    DEFAULT_LABEL_PRESERVING,
    HarnessConfig,
    agreement_analysis,
    derive_seed,
    follow_up_seed,
    run_campaign,
)
from trajtest.metrics import (
    OTConfig,
    TrajectoryDistribution,
    cost_matrix,
    exact_assignment_value,
    hellinger,
    wasserstein,
)
from trajtest.scenegen import default_corpus
from trajtest.sceneio import write_agreement, write_report
from trajtest.stats import SourceBaseline, intersection_rate, wilcoxon_signed_rank, z_test
from trajtest.sut import (
    BiasedMutant,
    EquivariantReference,
    ExternalProcessSut,
    MapAwareReference,
    SutRequest,
    build_sut,
)
from trajtest.transforms import (
    MRSpec,
    mr_mirror,
    mr_obstacle,
    mr_rescale,
    mr_rotate,
)

from test_stats import brute_force_wilcoxon

MASTER_SEED = 20260814
ADAPTER_CMD = f"{sys.executable} -m trajserve"


@pytest.fixture(scope="session")
def corpus50():
    return default_corpus(n=50, seed=MASTER_SEED)


@pytest.fixture(scope="session")
def mutant_campaign(corpus50):
    """Biased predictor over the corpus: one revealing, one masking, one identity relation."""
    cfg = HarnessConfig(
        n_runs=8, k_samples=20, alpha=0.05, seed=11,
        mrs=(
            MRSpec.rotate(180),
            MRSpec.mirror("horizontal"),
            MRSpec.rescale(0.25, 0.25),
        ),
    )
    return run_campaign(BiasedMutant(), list(corpus50), cfg)


def test_c01_transform_algebra():
    """Transform algebra: mirror/rotate/rescale group identities hold to 1e-9 on 200 random scenes."""
    start = time.monotonic()
    rng = np.random.default_rng(101)
    for _ in range(200):
        w = int(rng.integers(24, 64))
        h = int(rng.integers(24, 64))
        cells = rng.integers(0, 6, size=(h, w)).astype(np.uint8)
        smap = SegmentationMap(cells=cells, legend=DEFAULT_LEGEND)
        n = int(rng.integers(2, 12))
        hist = np.column_stack([rng.uniform(0, w, n), rng.uniform(0, h, n)])
        tc = TestCase(scene_id="alg", map=smap,
                      history=Trajectory(points=hist, dt=0.4))
        probe = np.column_stack([rng.uniform(0, w, 64), rng.uniform(0, h, 64)])

        # mirror o mirror = id, both axes
        for axis in ("vertical", "horizontal"):
            tr = mr_mirror(tc, axis)
            tr2 = mr_mirror(tr.follow_up, axis)
            err = np.abs(tr2.forward_xy(tr.forward_xy(probe)) - probe).max()
            assert err <= 1e-9
            assert np.array_equal(tr2.follow_up.map.cells, tc.map.cells)

        # rotate-90 applied four times = id
        cur, pp = tc, probe.copy()
        for _ in range(4):
            tr = mr_rotate(cur, 90)
            pp = tr.forward_xy(pp)
            cur = tr.follow_up
        assert np.abs(pp - probe).max() <= 1e-9
        assert np.array_equal(cur.map.cells, tc.map.cells)

        # mirror-v then mirror-h = rotate-180
        tr_v = mr_mirror(tc, "vertical")
        tr_h = mr_mirror(tr_v.follow_up, "horizontal")
        tr_180 = mr_rotate(tc, 180)
        err = np.abs(
            tr_h.forward_xy(tr_v.forward_xy(probe)) - tr_180.forward_xy(probe)
        ).max()
        assert err <= 1e-9
        assert np.array_equal(tr_h.follow_up.map.cells, tr_180.follow_up.map.cells)

        # rescale inverts to 1e-9
        tr = mr_rescale(tc, 0.25, float(rng.uniform(0.15, 0.45)))
        assert np.abs(tr.inverse_xy(tr.forward_xy(probe)) - probe).max() <= 1e-9
    assert time.monotonic() - start < 5.0


def test_c02_transport_solver_oracle():
    """Entropic transport tracks the exact assignment within 1% on 100 random instances."""
    start = time.monotonic()
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 17))
        t = int(rng.integers(1, 13))
        weights = np.full(k, 1.0 / k)
        p = TrajectoryDistribution(
            support=rng.normal(scale=4.0, size=(k, 2 * t)), weights=weights
        )
        q = TrajectoryDistribution(
            support=rng.normal(scale=4.0, size=(k, 2 * t)) + rng.normal(scale=2.0),
            weights=weights,
        )
        cost = cost_matrix(p, q)
        exact = exact_assignment_value(cost)
        cfg = OTConfig(
            epsilon=1e-3 * float(np.median(cost)),
            marginal_tol=1e-4, max_iterations=3000, exact_threshold=1,
        )
        worst = max(worst, abs(wasserstein(p, q, cfg) - exact) / exact)
    assert worst <= 0.01
    assert time.monotonic() - start < 30.0


def test_c03_hellinger_metric():
    """Hellinger distance satisfies the metric axioms on 1000 random map triples."""
    start = time.monotonic()
    rng = np.random.default_rng(303)
    for _ in range(1000):
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        maps = []
        for _ in range(3):
            raw = rng.random((h, w))
            raw[rng.random((h, w)) < 0.2] = 0.0
            if raw.sum() == 0.0:
                raw[0, 0] = 1.0
            maps.append(raw / raw.sum())
        p, q, r = maps
        d_pq = hellinger(p, q)
        assert abs(d_pq - hellinger(q, p)) <= 1e-12
        assert -1e-12 <= d_pq <= 1.0 + 1e-12
        assert hellinger(p, p) <= 1e-12
        assert hellinger(p, r) <= hellinger(p, q) + hellinger(q, r) + 1e-12
    hand = hellinger(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))
    assert abs(hand - 0.54120) <= 1e-4
    assert time.monotonic() - start < 5.0


def test_c04_statistics_oracles():
    """Exact signed-rank p-values equal full enumeration; z-test hits its textbook anchors."""
    rng = np.random.default_rng(404)
    for n in range(1, 11):
        for _ in range(20):
            x = rng.integers(0, 6, size=n).astype(np.float64) / 2.0
            y = rng.integers(0, 6, size=n).astype(np.float64) / 2.0
            for alternative in ("two-sided", "greater", "less"):
                got = wilcoxon_signed_rank(x, y, alternative=alternative, method="exact")
                want = brute_force_wilcoxon(x, y, alternative)
                assert abs(got.p_value - want) <= 1e-12

    unit = SourceBaseline(mu=0.0, sigma=1.0, n=9)
    assert abs(z_test(1.6449, unit, "greater").p_value - 0.05) <= 1e-4
    assert abs(z_test(2.3263, unit, "greater").p_value - 0.01) <= 1e-4


def test_c05_false_positive_control(corpus50):
    """Equivariant reference violates no label-preserving relation: WVC rate exactly 0%."""
    start = time.monotonic()
    cfg = HarnessConfig(
        n_runs=8, k_samples=20, alpha=0.05, seed=MASTER_SEED,
        mrs=DEFAULT_LABEL_PRESERVING,
    )
    campaign = run_campaign(EquivariantReference(), list(corpus50), cfg)
    assert campaign.error_count == 0
    labels = [a.mr_label for a in campaign.aggregates]
    assert labels == [
        "Mirror-v", "Mirror-h", "Rotate-90", "Rotate-180", "Rotate-270",
        "Resize-0.2", "Resize-0.3",
    ]
    for agg in campaign.aggregates:
        assert agg.evaluated == 50
        assert agg.wvc_rate == 0.0
    assert time.monotonic() - start < 120.0


def test_c06_fault_injection(mutant_campaign):
    """Drift fault is flagged under rotation (>=90%) yet stays quiet under identity."""
    by = {a.mr_label: a for a in mutant_campaign.aggregates}
    assert by["Rotate-180"].evaluated == 50
    assert by["Rotate-180"].wvc_rate >= 0.90
    assert by["Identity"].wvc_rate <= 0.05 + 0.05


def test_c07_map_relations(corpus50):
    """Map-aware predictor shifts mass with class changes and reroutes around obstacles."""
    cfg = HarnessConfig(
        n_runs=8, k_samples=20, alpha=0.05, seed=23,
        mrs=(
            MRSpec.class_change("terrain", "road"),
            MRSpec.class_change("terrain", "pavement"),
        ),
    )
    campaign = run_campaign(MapAwareReference(), list(corpus50), cfg)
    by = {a.mr_label: a for a in campaign.aggregates}
    road = by["ClassChange-terrain-road"]
    pavement = by["ClassChange-terrain-pavement"]
    assert road.evaluated >= 40 and pavement.evaluated >= 40
    assert road.expectation_met_rate >= 0.90
    assert pavement.expectation_met_rate >= 0.90

    # one shared set of blocked scenes, anchored on the straight predictor
    eq, ma = EquivariantReference(), MapAwareReference()
    rates = {"eq": [], "ma": []}
    for tc in corpus50:
        seed0 = derive_seed(23, tc.scene_id, 0)
        src = eq.predict(SutRequest(
            scene_id=tc.scene_id, history=tc.history, map=tc.map,
            k=20, horizon=12, seed=seed0,
        )).prediction
        try:
            tr = mr_obstacle(tc, src)
        except (PlacementError, SceneSkip, DegenerateInputError):
            continue
        fu = tr.follow_up
        req = SutRequest(
            scene_id=fu.scene_id, history=fu.history, map=fu.map,
            k=20, horizon=12, seed=follow_up_seed(23, tc.scene_id),
        )
        rates["eq"].append(intersection_rate(eq.predict(req).prediction, fu.map))
        rates["ma"].append(intersection_rate(ma.predict(req).prediction, fu.map))
    assert len(rates["eq"]) >= 40
    assert float(np.mean(rates["ma"])) <= 0.05
    assert float(np.mean(rates["eq"])) >= 0.80


def test_c08_agreement_with_displacement_labels(mutant_campaign):
    """Transport verdicts agree with displacement-error labels: accuracy >= 0.8, stable curves."""
    report = agreement_analysis(list(mutant_campaign.results))
    at_05 = {r.metric: r for r in report.rows if r.threshold == 0.05}
    assert at_05["mean_ade"].accuracy >= 0.8
    for metric in ("mean_ade", "mean_fde"):
        precision = report.series(metric, "precision")
        recall = report.series(metric, "recall")
        # degenerate baselines put every p-value in {0, 1}; the documented
        # consequence is a constant curve over thresholds inside (0, 1),
        # which is monotone in both required directions
        assert len(precision) == 8
        assert max(precision) - min(precision) <= 1e-12
        assert max(recall) - min(recall) <= 1e-12
        assert all(b <= a + 1e-12 for a, b in zip(precision, precision[1:]))
        assert all(b >= a - 1e-12 for a, b in zip(recall, recall[1:]))


def test_c09_reports_are_reproducible(corpus50, tmp_path):
    """Repeating a campaign with the same master seed reproduces reports byte for byte."""
    scenes = list(corpus50[:8])
    mrs = (
        MRSpec.mirror("vertical"),
        MRSpec.rotate(270),
        MRSpec.rescale(0.25, 0.3),
        MRSpec.class_change("terrain", "road"),
        MRSpec.obstacle(),
    )

    def run_once(out_dir):
        cfg = HarnessConfig(
            n_runs=8, k_samples=20, alpha=0.05, seed=77, parallelism=2, mrs=mrs,
        )
        campaign = run_campaign(MapAwareReference(), scenes, cfg)
        paths = write_report(campaign, str(out_dir))
        agree_path = str(out_dir / "agreement.csv")
        write_agreement(agreement_analysis(list(campaign.results)), agree_path)
        return paths + [agree_path]

    first = run_once(tmp_path / "a")
    second = run_once(tmp_path / "b")
    assert len(first) == len(second) == 4
    for pa, pb in zip(first, second):
        with open(pa, "rb") as fa, open(pb, "rb") as fb:
            assert fa.read() == fb.read(), f"{pa} differs from {pb}"


def test_c10_external_adapter_equivalence(corpus50, capsys):
    """Demo adapter passes the conformance probe and matches in-process predictions to 1e-6."""
    rc = cli.main(["protocol-check", "--cmd", ADAPTER_CMD])
    out = capsys.readouterr().out
    assert rc == 0 and "PASS" in out

    scenes = list(corpus50[:4])
    cfg = HarnessConfig(
        n_runs=4, k_samples=8, seed=5,
        mrs=(MRSpec.mirror("vertical"), MRSpec.rotate(180)),
    )
    in_proc = run_campaign(EquivariantReference(), scenes, cfg)
    ext_sut = build_sut(f"cmd:{ADAPTER_CMD}", timeout=60)
    try:
        ext = run_campaign(ext_sut, scenes, cfg)
    finally:
        ext_sut.close()
    assert ext.error_count == 0
    for a, b in zip(in_proc.aggregates, ext.aggregates):
        assert a.mr_label == b.mr_label
        assert a.wvc_rate == b.wvc_rate == 0.0

    # per-coordinate equivalence across the campaign's exact seed schedule
    ref = EquivariantReference()
    worst = 0.0
    with ExternalProcessSut(ADAPTER_CMD, timeout=60) as sut:
        for tc in scenes:
            cases = [(tc, [derive_seed(cfg.seed, tc.scene_id, i)
                           for i in range(cfg.n_runs)])]
            fu = mr_rotate(tc, 180).follow_up
            cases.append((fu, [follow_up_seed(cfg.seed, tc.scene_id)]))
            for case, seeds in cases:
                for seed in seeds:
                    req = SutRequest(
                        scene_id=case.scene_id, history=case.history, map=case.map,
                        k=cfg.k_samples, horizon=cfg.horizon, seed=seed,
                    )
                    a = ref.predict(req).prediction.stacked()
                    b = sut.predict(req).prediction.stacked()
                    worst = max(worst, float(np.abs(a - b).max()))
    assert worst <= 1e-6
