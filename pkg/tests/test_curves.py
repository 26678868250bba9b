"""Curve containers, arc-length helpers and the edgel index."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedraw.curves import (
    Curve2D,
    Curve3D,
    EdgelIndex,
    arc_length,
    query_edgels,
    resample_polyline,
    resample_uniform,
)
from curvedraw.errors import SpacingTooLarge, UnknownView


def curve3d(points, curve_id=0):
    points = np.asarray(points, dtype=float)
    return Curve3D(points, [{} for _ in points], np.ones(len(points)), curve_id, 0)


def circle(n, r=1.0, closed=True):
    a = np.linspace(0, 2 * np.pi, n + 1 if closed else n, endpoint=closed)
    return np.column_stack([r * np.cos(a), r * np.sin(a), np.zeros_like(a)])


def test_arc_length_cases():
    assert arc_length(np.array([[0, 0, 0], [1, 0, 0.0]])) == pytest.approx(1.0)
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
    assert arc_length(square) == pytest.approx(4.0)
    assert arc_length(circle(1000)) == pytest.approx(2 * np.pi, abs=1e-4)


def test_resample_segment_quarter_spacing():
    pts, t = resample_polyline(np.array([[0, 0, 0], [1, 0, 0.0]]), 0.25)
    assert len(pts) == 5
    assert np.allclose(pts[:, 0], [0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(pts[:, 1:], 0)
    assert np.allclose(t, pts[:, 0])


def test_resample_idempotent_on_uniform_samples():
    # irregular vertices along a straight segment: the first pass makes them uniform
    s = np.sort(np.random.default_rng(2).uniform(0, 1, 40))
    line = np.column_stack([np.r_[0, s, 1], 2 * np.r_[0, s, 1], np.zeros(42)])
    once, _ = resample_polyline(line, 0.01)
    twice, _ = resample_polyline(once, 0.01)
    assert np.allclose(once, twice, atol=1e-9)


def test_resample_preserves_circle_length():
    c = circle(400)
    once, _ = resample_polyline(c, 0.01)
    assert arc_length(once) == pytest.approx(arc_length(c), rel=1e-3)


def test_resample_uniform_keeps_support_of_nearest_sample():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]])
    c = Curve3D(pts, [{0: frozenset([k])} for k in range(3)], np.array([0.2, 0.5, 0.9]), 7, 0)
    r = resample_uniform(c, 0.5)
    assert len(r) == 5
    assert [s[0] for s in r.support] == [frozenset([0]), frozenset([0]), frozenset([1]), frozenset([1]), frozenset([2])]
    assert r.curve_id == 7


def test_resample_uniform_rejects_spacing_beyond_length():
    with pytest.raises(SpacingTooLarge):
        resample_uniform(curve3d([[0, 0, 0], [1, 0, 0]]), 2.0)


def test_curve2d_validation():
    with pytest.raises(ValueError):
        Curve2D([[0, 0]], [0.0], [0], 0, 0)
    with pytest.raises(ValueError):
        Curve2D([[0, 0], [0, 0]], [0.0, 0.0], [0, 1], 0, 0)
    c = Curve2D([[0, 0], [1, 0]], [-1e-18, np.pi], [0, 1], 0, 0)
    assert np.all((c.orientations >= 0) & (c.orientations < np.pi))


def test_curve3d_validation():
    with pytest.raises(ValueError):
        curve3d([[0, 0, 0], [0, 0, 0]])
    with pytest.raises(ValueError):
        Curve3D(np.eye(3), [{}] * 3, [0.5, 2.0, 0.5], 0, 0)


def test_point_at_interpolates():
    c = Curve2D([[0, 0], [2, 0], [2, 2]], [0, 0, np.pi / 2], [0, 1, 2], 0, 0)
    assert np.allclose(c.point_at([0.5, 1.5, 2.0]), [[1, 0], [2, 1], [2, 2]])


def random_curves(rng, n_curves, n_edgels, view=0):
    out, eid = [], 0
    for k in range(n_curves):
        pts = np.cumsum(rng.normal(size=(n_edgels, 2)), axis=0) + rng.uniform(0, 500, size=2)
        out.append(Curve2D(pts, rng.uniform(0, np.pi, n_edgels), np.arange(eid, eid + n_edgels), k, view))
        eid += n_edgels
    return out


def test_index_matches_linear_scan():
    rng = np.random.default_rng(0)
    curves = random_curves(rng, 100, 100)
    index = EdgelIndex.from_curves({0: curves})
    pts = np.concatenate([c.points for c in curves])
    ids = np.concatenate([c.edgel_ids for c in curves])
    for q in rng.uniform(0, 500, size=(50, 2)):
        got = {e.edgel_id for e in query_edgels(index, 0, q, 8.0)}
        want = set(ids[np.linalg.norm(pts - q, axis=1) <= 8.0].tolist())
        assert got == want


def test_index_edge_cases():
    index = EdgelIndex.from_curves({0: [], 1: [Curve2D([[5, 5], [50, 50]], [0, 0], [3, 4], 0, 1)]})
    assert index.query(0, (0, 0), 10) == set()
    (e,) = index.query(1, (5, 5.5), 1.0)
    assert e.edgel_id == 3 and e.view_id == 1
    with pytest.raises(UnknownView):
        index.query(9, (0, 0), 1)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=30),
    st.floats(0.05, 2.0),
)
def test_resample_keeps_endpoints_and_even_steps(raw, spacing):
    pts = np.array(raw)
    keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-6])
    pts = pts[keep]
    if len(pts) < 2:
        return
    out, t = resample_polyline(pts, spacing)
    assert np.array_equal(out[0], pts[0]) and np.array_equal(out[-1], pts[-1])
    assert np.all(np.diff(t) > 0)
    assert np.allclose(np.diff(t), t[-1] / (len(t) - 1))
    assert t[-1] == pytest.approx(arc_length(pts))
    steps = np.diff(t)
    if t[-1] >= spacing:
        assert np.all(steps <= 1.5 * spacing + 1e-9) and np.all(steps >= spacing / 1.5 - 1e-9)


def test_circle_resample_arc_length_close_to_analytic():
    out, _ = resample_polyline(circle(2000), 2 * math.pi / 500)
    assert arc_length(out) == pytest.approx(2 * math.pi, rel=1e-3)
