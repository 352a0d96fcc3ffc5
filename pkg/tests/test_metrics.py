import math

import numpy as np
import pytest

from helpers import drop_edges, relabeled_copy, translated_copy
from roadgraph.graph import build_graph
from roadgraph.metrics import (
    AplsConfig,
    MetricsReport,
    TopoConfig,
    TopoEvaluator,
    apls,
    evaluate_pair,
    topo,
)
from roadgraph.synth import SceneSpec, generate_graph


def subdivided_road(y, x0, x1, step=10.0, extent=(256, 256)):
    xs = np.arange(x0, x1 + 1e-9, step)
    coords = [(float(x), float(y)) for x in xs]
    edges = [(i, i + 1) for i in range(len(coords) - 1)]
    return coords, edges


def test_topo_identity_on_relabeled_copy():
    g = generate_graph(SceneSpec(extent=256, style="mixed", seed=2))
    copy = relabeled_copy(g, seed=5)
    p, r, f = topo(g, copy)
    assert abs(p - 1.0) <= 1e-9
    assert abs(r - 1.0) <= 1e-9
    assert abs(f - 1.0) <= 1e-9


def test_topo_empty_proposal_and_empty_gt():
    g = generate_graph(SceneSpec(extent=256, seed=1))
    empty = build_graph([], [], (256, 256))
    assert topo(g, empty) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        topo(empty, g)


def test_topo_missing_one_of_two_disjoint_roads():
    c1, e1 = subdivided_road(50.0, 10.0, 210.0)
    c2, e2 = subdivided_road(150.0, 10.0, 210.0)
    coords = c1 + c2
    edges = e1 + [(a + len(c1), b + len(c1)) for a, b in e2]
    gt = build_graph(coords, edges, (256, 256))
    proposal = build_graph(c1, e1, (256, 256))
    p, r, f = topo(gt, proposal)
    assert p == pytest.approx(1.0, abs=0.05)
    assert r == pytest.approx(0.5, abs=0.05)
    # brute-force check: hole counts on the two roads are equal by symmetry
    ev = TopoEvaluator(gt)
    holes_road1 = sum(len(h) for h, s in zip(ev.holes, ev.seeds) if s[3] == 50.0)
    holes_road2 = sum(len(h) for h, s in zip(ev.holes, ev.seeds) if s[3] == 150.0)
    assert holes_road1 == holes_road2
    assert r == pytest.approx(holes_road1 / (holes_road1 + holes_road2), abs=1e-12)


def test_apls_identity_and_empty_cases():
    g = generate_graph(SceneSpec(extent=256, style="urban-grid", seed=3))
    copy = relabeled_copy(g, seed=7)
    assert abs(apls(g, copy) - 1.0) <= 1e-9
    empty = build_graph([], [], (256, 256))
    assert apls(g, empty) == 0.0
    assert apls(empty, g) == 0.0
    with pytest.raises(ValueError):
        apls(empty, empty)


def test_apls_detour_closed_form():
    gt = build_graph([(10.0, 10.0), (110.0, 10.0)], [(0, 1)], (256, 256))
    h = math.sqrt(60.0**2 - 50.0**2)
    prop = build_graph(
        [(10.0, 10.0), (60.0, 10.0 + h), (110.0, 10.0)],
        [(0, 1), (1, 2)],
        (256, 256),
    )
    cfg = AplsConfig(snap_radius=8.0, max_control_pairs=500, injection_interval=1000.0)
    got = apls(gt, prop, cfg)
    want = 0.5 * ((1 - 20.0 / 100.0) + (1 - 20.0 / 120.0))
    assert got == pytest.approx(want, abs=1e-9)


def test_metrics_translation_equivariance():
    g = generate_graph(SceneSpec(extent=192, style="mixed", seed=4))
    prop = drop_edges(g, 0.2, seed=1)
    base_t = topo(g, prop)
    base_a = apls(g, prop)
    g2 = translated_copy(g, 17.0, 9.0, (256, 256))
    p2 = translated_copy(prop, 17.0, 9.0, (256, 256))
    t2 = topo(g2, p2)
    a2 = apls(g2, p2)
    assert np.allclose(base_t, t2, atol=1e-9)
    assert abs(base_a - a2) <= 1e-9


def test_metric_degradation_is_monotone_nonincreasing():
    g = generate_graph(SceneSpec(extent=256, style="urban-grid", seed=6))
    prev_recall, prev_apls = 1.0 + 1e-9, 1.0 + 1e-9
    for frac in (0.1, 0.25, 0.4):
        prop = drop_edges(g, frac, seed=2)
        _, r, _ = topo(g, prop)
        a = apls(g, prop, seed=0)
        assert r <= prev_recall
        assert a <= prev_apls
        prev_recall, prev_apls = r, a


def test_apls_direction_symmetry():
    g = generate_graph(SceneSpec(extent=192, style="mixed", seed=8))
    prop = drop_edges(g, 0.15, seed=3)
    assert apls(g, prop, seed=4) == apls(prop, g, seed=4)


def test_metrics_deterministic():
    g = generate_graph(SceneSpec(extent=192, style="rural-curves", seed=9))
    prop = drop_edges(g, 0.3, seed=5)
    assert topo(g, prop) == topo(g, prop)
    assert apls(g, prop, seed=1) == apls(g, prop, seed=1)


def test_report_validation():
    with pytest.raises(ValueError):
        MetricsReport(1.2, 0.5, 0.6, 0.4)
    rep = evaluate_pair(
        generate_graph(SceneSpec(extent=192, seed=10)),
        generate_graph(SceneSpec(extent=192, seed=10)),
    )
    assert rep.topo_f1 == pytest.approx(1.0, abs=1e-9)
    assert rep.apls == pytest.approx(1.0, abs=1e-9)
    assert rep.counts["matched_seeds"] == rep.counts["seeds"]
