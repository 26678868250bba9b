"""Primary-edgel buckets, robust averaging and fusion of redundant curves."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedraw.averaging import fuse_redundant, group_by_primary_edge, robust_average, robust_inliers
from curvedraw.curves import Curve3D
from curvedraw.errors import MissingPrimarySupport


def copy_of(points, edgels, partner_view, primary_view=0, primary_curve=0):
    support = [{primary_view: frozenset([int(e)]), partner_view: frozenset([int(e)])} for e in edgels]
    return Curve3D(
        points, support, np.ones(len(points)), partner_view, primary_view, (primary_view, primary_curve, partner_view, 0)
    )


def line(n=100):
    t = np.linspace(0, 1, n)
    return np.column_stack([t, 0.2 * t, np.zeros(n)])


def test_robust_average_small_buckets():
    p = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(robust_average([p]), p)
    assert np.allclose(robust_average([p, -p]), 0.0)
    with pytest.raises(ValueError):
        robust_average([])


def test_robust_average_drops_far_member():
    offsets = 0.01 * np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]])
    bucket = np.vstack([offsets, [[5.0, 0, 0]]])
    keep = robust_inliers(bucket)
    assert keep.tolist() == [True] * 5 + [False]
    assert np.linalg.norm(robust_average(bucket)) < 0.01


def test_coincident_members_average_to_themselves():
    p = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(robust_average([p] * 4), p)


def test_symmetric_bucket_without_outliers_is_plain_centroid():
    # vertices of a regular tetrahedron: every member is equally placed
    tet = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) + 7.0
    assert robust_inliers(tet).all()
    assert np.allclose(robust_average(tet), tet.mean(axis=0), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 12))
def test_robust_average_permutation_and_translation(seed, n):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(n, 3))
    if n > 3:
        P[0] += 20.0
    shift = rng.normal(scale=10, size=3)
    base = robust_average(P)
    assert np.allclose(robust_average(P[rng.permutation(n)]), base, atol=1e-12)
    assert np.allclose(robust_average(P + shift), base + shift, atol=1e-9)


def test_outliers_rejected_in_noisy_buckets():
    rng = np.random.default_rng(0)
    sigma, rejected, close = 0.01, 0, 0
    trials = 200
    for _ in range(trials):
        # sigma is the 3D RMS spread of the inliers
        inliers = rng.normal(scale=sigma / np.sqrt(3), size=(10, 3))
        outliers = rng.normal(size=(2, 3))
        outliers *= 100 * sigma / np.linalg.norm(outliers, axis=1, keepdims=True)
        keep = robust_inliers(np.vstack([inliers, outliers]))
        rejected += not keep[10:].any()
        close += np.linalg.norm(robust_average(np.vstack([inliers, outliers]))) <= 3 * sigma / np.sqrt(10)
    assert rejected == trials
    assert close >= 0.99 * trials


def test_grouping_by_primary_edgel():
    base = line(50)
    curves = [copy_of(base, np.arange(50), v) for v in (1, 2, 3)]
    buckets = group_by_primary_edge(curves)
    assert len(buckets) == 50
    assert all(len(b) == 3 for b in buckets.values())
    single = group_by_primary_edge(curves[:1])
    assert all(len(b) == 1 for b in single.values())
    assert group_by_primary_edge([]) == {}


def test_grouping_requires_primary_support():
    c = Curve3D(line(3), [{1: frozenset([0])}] * 3, np.ones(3), 0, 0)
    with pytest.raises(MissingPrimarySupport):
        group_by_primary_edge([c])


def test_bumped_copy_is_averaged_away():
    rng = np.random.default_rng(3)
    sigma = 0.002
    truth = line()
    copies = []
    for v in (1, 2, 3):
        pts = truth + rng.normal(scale=sigma, size=truth.shape)
        if v == 3:
            pts[40:60, 2] += 0.1
        copies.append(copy_of(pts, np.arange(100), v))
    (out,) = fuse_redundant(copies)
    assert len(out) == 100
    err = np.linalg.norm(out.points - truth, axis=1)
    # the two surviving copies average to sigma / sqrt(2) per axis
    assert err[40:60].max() < 4 * sigma
    assert err.mean() < 2 * sigma
    assert 3 not in out.support[50]


def test_disjoint_curves_pass_through():
    a = copy_of(line(30), np.arange(30), 1, primary_curve=0)
    far = line(30) + [0, 5, 0]
    b = copy_of(far, np.arange(100, 130), 1, primary_curve=1)
    out = fuse_redundant([a, b])
    assert len(out) == 2
    assert np.array_equal(out[0].points, a.points)
    assert np.array_equal(out[1].points, b.points)


def test_front_and_back_halves_join():
    truth = line()
    front = copy_of(truth[:60], np.arange(60), 1)
    back = copy_of(truth[40:], np.arange(40, 100), 2)
    (out,) = fuse_redundant([front, back])
    assert len(out) == 100
    assert np.allclose(out.points, truth)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 5))
def test_fusion_never_adds_buckets(seed, k):
    rng = np.random.default_rng(seed)
    truth = line(40)
    curves = []
    for v in range(1, k + 1):
        a, b = sorted(rng.choice(41, 2, replace=False))
        if b - a < 2:
            continue
        pts = truth[a:b] + rng.normal(scale=0.001, size=(b - a, 3))
        curves.append(copy_of(pts, np.arange(a, b), v))
    out = fuse_redundant(curves)
    assert sum(len(c) for c in out) <= len(group_by_primary_edge(curves))
