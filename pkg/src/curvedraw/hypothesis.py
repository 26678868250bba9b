"""Curve-pair hypotheses: epipolar matching of 2D curves and their triangulation."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .curves import Curve2D, Curve3D
from .geometry import Camera, epipolar_lines, tangency_weights, triangulate_many
from .parallel import parallel_map

MIN_SOURCE_EDGELS = 5


@dataclass(eq=False)
class CurvePairHypothesis:
    view1: int
    view2: int
    curve1_id: int
    curve2_id: int
    overlap: float
    # rows of (index into curve1, fractional index into curve2)
    correspondence: np.ndarray
    reconstruction: Curve3D

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.view1, self.view2, self.curve1_id, self.curve2_id)


def _intersections(lines: np.ndarray, c2: Curve2D) -> tuple[np.ndarray, np.ndarray]:
    """All (row, t) where a line crosses the polyline ``c2``; t is a fractional vertex index."""
    D = lines[:, :2] @ c2.points.T + lines[:, 2:3]
    a, b = D[:, :-1], D[:, 1:]
    rows, ks = np.nonzero(a * b < 0)
    t = ks + a[rows, ks] / (a[rows, ks] - b[rows, ks])
    vr, vk = np.nonzero(D == 0)
    rows = np.concatenate([rows, vr])
    t = np.concatenate([t, vk.astype(float)])
    return rows, t


def _longest_chain(rows: np.ndarray, t: np.ndarray) -> list[int]:
    """Indices of the longest chain strictly increasing in both ``rows`` and ``t``.

    Candidates sharing a row are visited in decreasing t so at most one of
    them can enter the chain.
    """
    order = np.lexsort((-t, rows))
    tails: list[float] = []
    tail_idx: list[int] = []
    prev = np.full(len(order), -1)
    for pos, c in enumerate(order):
        k = bisect.bisect_left(tails, t[c])
        if k == len(tails):
            tails.append(t[c])
            tail_idx.append(pos)
        else:
            tails[k] = t[c]
            tail_idx[k] = pos
        prev[pos] = tail_idx[k - 1] if k > 0 else -1
    chain = []
    pos = tail_idx[-1] if tail_idx else -1
    while pos >= 0:
        chain.append(order[pos])
        pos = prev[pos]
    return chain[::-1]


def _match(c1: Curve2D, c2: Curve2D, lines: np.ndarray) -> np.ndarray:
    rows, t = _intersections(lines, c2)
    if len(rows) == 0:
        return np.zeros((0, 2))
    up = _longest_chain(rows, t)
    down = _longest_chain(rows, -t)
    chain = up if len(up) >= len(down) else down
    return np.column_stack([rows[chain].astype(float), t[chain]])


def epipolar_overlap(c1: Curve2D, c2: Curve2D, cam1: Camera, cam2: Camera) -> tuple[float, np.ndarray]:
    """Fraction of ``c1``'s edgels matched along ``c2`` and the monotone correspondence.

    Each edgel of ``c1`` maps to the points where its epipolar line crosses
    ``c2``; the longest chain that is ordered along both curves (in either
    relative orientation) is kept.
    """
    lines = epipolar_lines(cam1, cam2, c1.points)
    corr = _match(c1, c2, lines)
    return len(corr) / len(c1), corr


def _reconstruct(
    c1: Curve2D, c2: Curve2D, cam1: Camera, cam2: Camera, corr: np.ndarray, lines12: np.ndarray, curve_id: int
) -> tuple[Curve3D, np.ndarray] | None:
    i = corr[:, 0].astype(int)
    t = corr[:, 1]
    x1 = c1.points[i]
    x2 = c2.point_at(t)
    pts, ok = triangulate_many(cam1, cam2, x1, x2)
    ok &= (cam1.depth(np.nan_to_num(pts)) > 1e-8) & (cam2.depth(np.nan_to_num(pts)) > 1e-8)

    k = np.minimum(np.floor(t).astype(int), len(c2) - 2)
    seg2 = c2.segment_directions()[k]
    w2 = tangency_weights(seg2, lines12[i])
    lines21 = epipolar_lines(cam2, cam1, x2)
    w1 = tangency_weights(c1.tangents()[i], lines21)
    rel = np.minimum(w1, w2)

    keep = np.nonzero(ok)[0]
    if len(keep) < 2:
        return None
    pts = pts[keep]
    step = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    distinct = np.concatenate([[True], step > 0])
    keep = keep[distinct]
    if len(keep) < 2:
        return None
    e1 = c1.edgel_ids[i[keep]]
    e2 = c2.edgel_ids[np.rint(t[keep]).astype(int)]
    support = [
        {c1.view_id: frozenset([int(a)]), c2.view_id: frozenset([int(b)])} for a, b in zip(e1, e2)
    ]
    curve = Curve3D(
        pts[distinct], support, rel[keep], curve_id, c1.view_id, (c1.view_id, c1.curve_id, c2.view_id, c2.curve_id)
    )
    return curve, corr[keep]


def generate_hypotheses(
    view1: int,
    view2: int,
    curves: Mapping[int, Sequence[Curve2D]],
    cams: Mapping[int, Camera],
    tau_overlap: float = 0.5,
    min_edgels: int = MIN_SOURCE_EDGELS,
) -> list[CurvePairHypothesis]:
    """Pair every sufficiently overlapping curve of ``view1`` with one of ``view2``.

    Samples near epipolar tangency are kept; their reliability (the smaller
    of the two views' tangency weights) marks them as geometrically weak.
    Curve ids of the reconstructions are provisional (0..K-1 in output order).
    """
    cam1, cam2 = cams[view1], cams[view2]
    srcs = [c for c in curves.get(view1, ()) if len(c) >= min_edgels]
    dsts = [c for c in curves.get(view2, ()) if len(c) >= min_edgels]
    out: list[CurvePairHypothesis] = []
    for c1 in sorted(srcs, key=lambda c: c.curve_id):
        lines = epipolar_lines(cam1, cam2, c1.points)
        for c2 in sorted(dsts, key=lambda c: c.curve_id):
            corr = _match(c1, c2, lines)
            frac = len(corr) / len(c1)
            if frac < tau_overlap or len(corr) < 2:
                continue
            built = _reconstruct(c1, c2, cam1, cam2, corr, lines, len(out))
            if built is None:
                continue
            curve, corr = built
            out.append(CurvePairHypothesis(view1, view2, c1.curve_id, c2.curve_id, frac, corr, curve))
    return out


def enumerate_view_pairs(n_views: int, strategy: str = "exhaustive", window: int | None = None) -> list[tuple[int, int]]:
    """View pairs to hypothesise from: all of them, or those within a baseline window."""
    if n_views < 2:
        raise ValueError("need at least two views")
    pairs = list(combinations(range(n_views), 2))
    if strategy == "exhaustive":
        return pairs
    if strategy == "baseline_window":
        if window is None or window < 1:
            raise ValueError("baseline_window needs window >= 1")
        return [(a, b) for a, b in pairs if b - a <= window]
    raise ValueError(f"unknown pairing strategy {strategy!r}")


def generate_all(
    curves: Mapping[int, Sequence[Curve2D]],
    cams: Mapping[int, Camera],
    pairs: Sequence[tuple[int, int]],
    tau_overlap: float = 0.5,
    min_edgels: int = MIN_SOURCE_EDGELS,
    threads: int = 1,
) -> list[CurvePairHypothesis]:
    """Hypotheses over all view pairs, renumbered in (v1, v2, curve1, curve2) order."""
    batches = parallel_map(
        lambda p: generate_hypotheses(p[0], p[1], curves, cams, tau_overlap, min_edgels),
        sorted(pairs),
        threads,
    )
    hyps = sorted((h for b in batches for h in b), key=lambda h: h.key)
    for k, h in enumerate(hyps):
        h.reconstruction.curve_id = k
    return hyps


def format_hypotheses(hyps: Sequence[CurvePairHypothesis]) -> str:
    lines = ["# view1 view2 curve1 curve2 overlap samples"]
    for h in hyps:
        lines.append(f"{h.view1} {h.view2} {h.curve1_id} {h.curve2_id} {h.overlap:.6f} {len(h.reconstruction)}")
    return "\n".join(lines) + "\n"
