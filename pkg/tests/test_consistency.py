"""Sample-level link network, curve-level links, clusters and gap filling."""

from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedraw.consistency import MCCN, build_mccn, build_mln, gap_fill, link_masks
from curvedraw.curves import Curve3D


def curve(support, offset=0.0, curve_id=0):
    n = len(support)
    pts = np.column_stack([np.arange(n, dtype=float), np.full(n, offset), np.zeros(n)])
    return Curve3D(pts, [{v: frozenset(ids) for v, ids in s.items()} for s in support], np.ones(n), curve_id, 0)


def shared_pair(n, linked_rows, weight, view0=10):
    """Two n-sample curves whose rows ``linked_rows`` share one edgel in ``weight`` views."""
    a, b = [], []
    for s in range(n):
        if s in linked_rows:
            sa = {view0 + v: {s} for v in range(weight)}
            sb = dict(sa)
        else:
            sa = {view0: {1000 + s}}
            sb = {view0: {2000 + s}}
        a.append(sa)
        b.append(sb)
    return [curve(a), curve(b, 1.0, 1)]


def brute_phi(curves):
    out = {}
    for i, ci in enumerate(curves):
        for j, cj in enumerate(curves):
            if i == j:
                continue
            for s, ss in enumerate(ci.support):
                for t, st_ in enumerate(cj.support):
                    w = sum(1 for v in ss if v in st_ and ss[v] & st_[v])
                    if w:
                        out[(i, j, s, t)] = w
    return out


def mln_entries(mln):
    out = {}
    for i in range(mln.n_curves):
        for j in range(mln.n_curves):
            if i != j:
                for (s, t), w in mln.phi(i, j).items():
                    out[(i, j, s, t)] = w
    return out


def test_disjoint_support_gives_empty_network():
    a = curve([{0: {1}}, {0: {2}}])
    b = curve([{0: {3}}, {0: {4}}], 1.0)
    assert build_mln([a, b]).weights.nnz == 0


def test_identical_support_in_six_views():
    sup = [{v: {10 * s + v} for v in range(6)} for s in range(8)]
    mln = build_mln([curve(sup), curve(sup, 1.0)])
    assert mln.phi(0, 1) == {(s, s): 6 for s in range(8)}


def test_only_sharing_curves_get_links():
    shared = [{v: {s} for v in range(4)} for s in range(6)]
    own = [{v: {100 + s} for v in range(4)} for s in range(6)]
    mln = build_mln([curve(shared), curve(shared, 1.0), curve(own, 2.0)])
    assert mln.curve_pairs() == [(0, 1)]


def test_several_edgels_in_one_view_count_once():
    a = curve([{0: {1, 2, 3}}, {0: {9}}])
    b = curve([{0: {1, 2}}, {0: {8}}], 1.0)
    assert build_mln([a, b]).phi(0, 1) == {(0, 0): 1}


def test_strong_link_boundaries():
    # five links at exactly the weight threshold are enough
    assert build_mccn(build_mln(shared_pair(12, range(5), 3)), 3, 5).linked(0, 1)
    # four links, however heavy, are not
    assert not build_mccn(build_mln(shared_pair(12, range(4), 10)), 3, 5).linked(0, 1)
    # weight below the threshold does not count as strong
    assert not build_mccn(build_mln(shared_pair(12, range(6), 2)), 3, 5).linked(0, 1)
    mccn = build_mccn(build_mln(shared_pair(12, range(6), 3)), 3, 5)
    assert mccn.links == {(0, 1): 6}


def test_chain_forms_one_cluster():
    s_ab = [{v: {s} for v in range(3)} for s in range(6)]
    s_bc = [{v: {100 + s} for v in range(3, 6)} for s in range(6)]
    a = curve(s_ab)
    b = curve([{**x, **y} for x, y in zip(s_ab, s_bc)], 1.0)
    c = curve(s_bc, 2.0)
    d = curve([{0: {999}}, {0: {998}}], 3.0)
    mccn = build_mccn(build_mln([a, b, c, d]))
    assert mccn.linked(0, 1) and mccn.linked(1, 2) and not mccn.linked(0, 2)
    assert mccn.clusters == [[0, 1, 2], [3]]
    assert mccn.format().splitlines()[1:] == ["0 1 6", "1 2 6"]


def hole_pair(hole):
    rows = set(range(20)) - set(range(7, 7 + hole))
    return build_mln(shared_pair(20, rows, 3))


def test_gap_fill_fills_short_holes_only():
    for hole, filled in ((3, True), (5, True), (6, False)):
        mln = hole_pair(hole)
        mccn = build_mccn(mln)
        out = gap_fill(mln, mccn, g_max=5)
        phi = out.phi(0, 1)
        assert all(((s, s) in phi) == filled for s in range(7, 7 + hole))
        if filled:
            assert all(phi[(s, s)] == 3 for s in range(7, 7 + hole))
            assert out.phi(1, 0) == {(t, s): w for (s, t), w in phi.items()}


def test_gap_fill_ignores_unlinked_pairs():
    mln = build_mln(shared_pair(20, {3, 6}, 4))
    mccn = build_mccn(mln)
    assert not mccn.links
    assert (gap_fill(mln, mccn).weights != mln.weights).nnz == 0


def test_link_masks_both_orders():
    mln = build_mln(shared_pair(10, range(2, 9), 3))
    masks = link_masks(mln, build_mccn(mln))
    expected = np.isin(np.arange(10), range(2, 9))
    assert np.array_equal(masks[(0, 1)], expected)
    assert np.array_equal(masks[(1, 0)], expected)


support_maps = st.lists(
    st.lists(
        st.dictionaries(st.integers(0, 5), st.frozensets(st.integers(0, 6), min_size=1, max_size=3), max_size=4),
        min_size=2,
        max_size=6,
    ),
    min_size=1,
    max_size=4,
)


@settings(max_examples=100, deadline=None)
@given(support_maps)
def test_network_matches_brute_force_and_is_symmetric(maps):
    curves = [curve(m, float(k)) for k, m in enumerate(maps)]
    mln = build_mln(curves)
    entries = mln_entries(mln)
    assert entries == brute_phi(curves)
    for (i, j, s, t), w in entries.items():
        assert entries[(j, i, t, s)] == w
        assert 0 < w <= 6
    mccn = build_mccn(mln, 1, 1)
    flat = sorted(i for c in mccn.clusters for i in c)
    assert flat == list(range(len(curves)))


@settings(max_examples=50, deadline=None)
@given(support_maps, st.integers(0, 2**31))
def test_adding_a_view_never_lowers_weights(maps, seed):
    rng = np.random.default_rng(seed)
    curves = [curve(m, float(k)) for k, m in enumerate(maps)]
    extra = [
        curve([{**s, 99: frozenset([int(rng.integers(3))])} for s in m], float(k)) for k, m in enumerate(maps)
    ]
    before, after = mln_entries(build_mln(curves)), mln_entries(build_mln(extra))
    assert all(after.get(k, 0) >= w for k, w in before.items())


def test_empty_inputs():
    mln = build_mln([])
    assert mln.n_curves == 0
    assert build_mccn(mln) == MCCN(0, {}, {}, [])
