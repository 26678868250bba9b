"""Consensus evolution, overlap masks, merge primitives and the drawing graph."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedraw.curves import resample_polyline
from curvedraw.drawing import (
    DrawingGraph,
    GraphInvariantError,
    MergeSettings,
    build_drawing,
    classify_merge_primitive,
    closest_points,
    compute_overlap_masks,
    erode_short_runs,
    evolve_cluster,
    graph_from_text,
    graph_to_ply,
    graph_to_text,
    merge_cluster,
    runs_of,
)

H = 0.005
FIXTURE_SETTINGS = MergeSettings(d_merge=2 * H, min_overlap_run=3, d_attach=8 * H, spur_length=6 * H)


def poly(*xy, z=0.0):
    p = np.array([[x, y, z] for x, y in xy], dtype=float)
    return resample_polyline(p, H)[0]


def circle(n, r=1.0):
    a = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([r * np.cos(a), r * np.sin(a), np.zeros(n)])


def degree_summary(g):
    return sorted(g.degree(n) for n in g.junctions()), len(g.links)


# --------------------------------------------------------------------------
# evolution


def test_parallel_lines_meet_at_midline_in_one_step():
    x = np.linspace(0, 1, 101)
    a = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])
    b = a + [0, 0.01, 0]
    res = evolve_cluster([a, b], alpha=1.0, max_iters=1)
    mid = a + [0, 0.005, 0]
    assert max(np.abs(p - mid).max() for p in res.points) < 1e-9


def test_coincident_cluster_is_fixed_point():
    c = circle(200)
    res = evolve_cluster([c, c.copy(), c.copy()], max_iters=5)
    assert res.converged and res.iterations == 1
    assert max(np.abs(p - c).max() for p in res.points) < 1e-9


def test_singleton_cluster_unchanged():
    c = circle(50)
    res = evolve_cluster([c])
    assert np.array_equal(res.points[0], c) and res.converged


def test_non_convergence_is_reported():
    x = np.linspace(0, 1, 51)
    a = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])
    res = evolve_cluster([a, a + [0, 0.01, 0]], alpha=0.1, max_iters=3, tol=1e-12)
    assert not res.converged and res.iterations == 3


def test_noisy_circle_copies_reach_consensus():
    rng = np.random.default_rng(0)
    sigma = 0.003
    errors = []
    for _ in range(100):
        copies = [circle(200) + rng.normal(scale=sigma, size=(200, 3)) for _ in range(3)]
        res = evolve_cluster(copies, tol=1e-7)
        radial = [np.hypot(np.linalg.norm(p[:, :2], axis=1) - 1.0, p[:, 2]) for p in res.points]
        errors.append(np.sqrt(np.mean(np.concatenate(radial) ** 2)))
    # the plain average of three copies has an off-curve RMS of
    # sigma * sqrt(2 / 3); consensus must be at least as good
    assert np.mean(errors) <= sigma * np.sqrt(2 / 3)
    # and the copies end up on top of one another
    gaps = [closest_points(res.points[i], res.points[j])[1] for i in range(3) for j in range(3) if i != j]
    assert np.median(np.concatenate(gaps)) < 0.1 * sigma


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(2, 4))
def test_one_step_stays_within_reach_of_partners(seed, k):
    rng = np.random.default_rng(seed)
    base = np.cumsum(rng.normal(scale=0.01, size=(40, 3)) + [0.01, 0, 0], axis=0)
    curves = [base + rng.normal(scale=0.003, size=base.shape) for _ in range(k)]
    res = evolve_cluster(curves, max_iters=1, max_angle=None, skip_clipped=False)
    for i, p in enumerate(curves):
        reach = np.zeros(len(p))
        for j, q in enumerate(curves):
            if j != i:
                reach = np.maximum(reach, closest_points(p, q)[1])
        move = np.linalg.norm(res.points[i] - p, axis=1)
        assert np.all(move <= reach + 1e-12)


# --------------------------------------------------------------------------
# overlap masks and primitives


def test_masks_for_coincident_and_distant_curves():
    c = poly((0, 0), (1, 0))
    masks = compute_overlap_masks([c, c.copy()], 2 * H)
    assert masks[(0, 1)].all() and masks[(1, 0)].all()
    masks = compute_overlap_masks([c, c + [0, 1, 0]], 2 * H)
    assert not masks[(0, 1)].any()


def test_crossing_is_not_overlap():
    a = poly((-1, 0), (1, 0))
    b = poly((0, -1), (0, 1))
    raw = compute_overlap_masks([a, b], 2 * H, min_run=1, max_angle=None)[(0, 1)]
    assert 0 < raw.sum() <= 5
    assert not compute_overlap_masks([a, b], 2 * H)[(0, 1)].any()


def test_runs_and_erosion():
    m = np.array([1, 1, 0, 1, 1, 1, 0, 1], dtype=bool)
    assert runs_of(m) == [(0, 2), (3, 6), (7, 8)]
    assert erode_short_runs(m, 3).tolist() == [0, 0, 0, 1, 1, 1, 0, 0]


def test_classify_full_overlap_is_identity():
    (p,) = classify_merge_primitive(np.ones(10, bool), np.ones(12, bool))
    assert p.kind == 4 and p.identity


def test_classify_head_to_tail_continuation():
    mi = np.r_[np.zeros(7), np.ones(3)].astype(bool)
    mj = np.r_[np.ones(3), np.zeros(7)].astype(bool)
    (p,) = classify_merge_primitive(mi, mj)
    assert p.kind == 1 and p.name == "continuation"


def test_classify_two_runs_gives_bridge():
    mi = np.r_[np.ones(3), np.zeros(4), np.ones(3)].astype(bool)
    mj = np.r_[np.zeros(2), np.ones(3), np.zeros(3), np.ones(3), np.zeros(2)].astype(bool)
    kinds = [p.kind for p in classify_merge_primitive(mi, mj)]
    assert 5 in kinds and kinds.count(5) == 1


def test_classify_end_on_interior_and_junction():
    mi = np.r_[np.ones(3), np.zeros(7)].astype(bool)
    mj = np.r_[np.zeros(4), np.ones(3), np.zeros(4)].astype(bool)
    assert [p.kind for p in classify_merge_primitive(mi, mj)] == [3]
    assert [p.kind for p in classify_merge_primitive(mi, mj, junction_samples_j=[6])] == [6]
    assert classify_merge_primitive(np.zeros(5, bool), mj) == []


# --------------------------------------------------------------------------
# merging


FIXTURES = {
    "continuation": ([poly((0, 0), (1, 0)), poly((0.8, 0), (2, 0))], [], 1),
    "fork": ([poly((-1, 0), (0, 0), (1, 0.5)), poly((-1, 0), (0, 0), (1, -0.5))], [3], 3),
    "T": ([poly((-1, 0), (1, 0)), poly((0, 0), (0, 1))], [3], 3),
    "Y-Y": (
        [poly((-2, 1), (-1, 0), (1, 0), (2, 1)), poly((-2, -1), (-1, 0), (1, 0), (2, -1))],
        [3, 3],
        5,
    ),
    "bridge": (
        [poly((-1, 0), (1, 0)), poly((-0.8, 0), (-0.5, 0), (-0.3, 0.5), (0.3, 0.5), (0.5, 0), (0.8, 0))],
        [3, 3],
        4,
    ),
    "end at junction": (
        [poly((-1, 0), (1, 0)), poly((-0.3, 0), (0, 0), (0, 1)), poly((0.3, 0), (0, 0), (0, -1))],
        [4],
        4,
    ),
}


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_merge_primitive_fixtures(name):
    curves, junctions, links = FIXTURES[name]
    g = merge_cluster(curves, FIXTURE_SETTINGS)
    assert degree_summary(g) == (junctions, links)
    g.check_invariants()
    total_in = sum(np.linalg.norm(np.diff(c, axis=0), axis=1).sum() for c in curves)
    assert g.arc_length() <= total_in + FIXTURE_SETTINGS.d_merge * len(g.junctions())


def test_yy_junctions_sit_where_the_curves_part():
    curves, _, _ = FIXTURES["Y-Y"]
    g = merge_cluster(curves, FIXTURE_SETTINGS)
    where = sorted(tuple(np.round(g.nodes[n][:2], 1)) for n in g.junctions())
    assert where == [(-1.0, 0.0), (1.0, 0.0)]


def test_disjoint_curves_stay_separate_chains():
    g = merge_cluster([poly((0, 0), (1, 0)), poly((0, 1), (1, 1))], FIXTURE_SETTINGS)
    assert g.junctions() == [] and len(g.links) == 2 and len(g.endpoints()) == 4


def test_identical_curves_merge_into_one_link():
    c = poly((0, 0), (1, 0.3))
    g = merge_cluster([c, c.copy(), c.copy()], FIXTURE_SETTINGS)
    assert degree_summary(g) == ([], 1)
    assert np.allclose(g.polylines()[0][[0, -1]], c[[0, -1]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 4))
def test_random_clusters_give_valid_graphs(seed, k):
    rng = np.random.default_rng(seed)
    curves = []
    for _ in range(k):
        corners = rng.uniform(-1, 1, size=(rng.integers(2, 4), 2))
        if np.min(np.linalg.norm(np.diff(corners, axis=0), axis=1)) < 0.1:
            continue
        curves.append(poly(*map(tuple, corners)))
    if not curves:
        return
    g = merge_cluster(curves, FIXTURE_SETTINGS)
    g.check_invariants()
    assert all(d != 0 for d in g.degrees().values())


def test_build_drawing_components():
    assert len(build_drawing([]).nodes) == 0
    a = merge_cluster([poly((0, 0), (1, 0))], FIXTURE_SETTINGS, cluster=0)
    b = merge_cluster([poly((0, 2), (1, 2))], FIXTURE_SETTINGS, cluster=1)
    g = build_drawing([a, b])
    assert g.clusters() == [0, 1]
    assert len(g.links) == 2 and sorted(g.nodes) == [0, 1, 2, 3]


# --------------------------------------------------------------------------
# the graph itself


def test_invariant_violations_are_caught():
    g = DrawingGraph()
    g.add_node([0, 0, 0])
    with pytest.raises(GraphInvariantError):
        g.check_invariants()
    g = DrawingGraph()
    g.add_chain(poly((0, 0), (1, 0)))
    g.links[0].points[0] += 1.0
    with pytest.raises(GraphInvariantError):
        g.check_invariants()


def test_split_contract_and_prune():
    g = DrawingGraph()
    g.add_chain(poly((0, 0), (1, 0)))
    mid = g.split_link(0, 100, [0.5, 0, 0])
    assert g.degree(mid) == 2
    assert g.contract_degree_two() == 1 and len(g.links) == 1
    g.check_invariants()
    # a short spur off a junction is pruned, the long branches are kept
    n = g.split_link(min(g.links), 100, [0.5, 0, 0])
    tip = g.add_node([0.5, 0.01, 0])
    g.add_link(n, tip, [[0.5, 0, 0], [0.5, 0.01, 0]])
    assert g.degree(n) == 3
    assert g.prune(0.05) == 1
    assert len(g.links) == 1 and g.junctions() == []


def test_text_round_trip_is_lossless():
    curves, _, _ = FIXTURES["Y-Y"]
    g = merge_cluster(curves, FIXTURE_SETTINGS, cluster=4)
    text = graph_to_text(g)
    back = graph_from_text(text)
    assert graph_to_text(back) == text
    assert back.clusters() == [4]


def test_graph_text_rejects_wrong_sample_count():
    text = graph_to_text(merge_cluster([poly((0, 0), (1, 0))], FIXTURE_SETTINGS))
    bad = text.replace("[0, 0, 1, 201,", "[0, 0, 1, 7,")
    assert bad != text
    with pytest.raises(ValueError):
        graph_from_text(bad)


def test_ply_counts():
    curves, _, _ = FIXTURES["T"]
    g = merge_cluster(curves, FIXTURE_SETTINGS)
    ply = graph_to_ply(g).splitlines()
    n_samples = sum(len(p) for p in g.polylines())
    assert f"element vertex {n_samples + len(g.junctions())}" in ply
    assert f"element edge {n_samples - len(g.links)}" in ply
    body = ply[ply.index("end_header") + 1 :]
    assert len(body) == 2 * n_samples + len(g.junctions()) - len(g.links)
    assert body[n_samples + len(g.junctions()) - 1].endswith("255 255 255")
