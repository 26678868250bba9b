"""Edge-support scoring of hypotheses in confirmation views and local selection.

Each hypothesis is reprojected into every view other than its two hypothesis
views. A reprojected sample is supported when an edgel lies within
``delta_d`` pixels with orientation within ``delta_theta``; the per-view
support is the supported reprojected arc length, with samples near epipolar
tangency down-weighted rather than dropped. Only runs of samples supported
in enough views at once are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import VerificationParams
from .curves import Curve3D, EdgelIndex
from .geometry import Camera
from .hypothesis import CurvePairHypothesis
from .parallel import parallel_map

_K_NEAREST = 16


def _angle_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unsigned difference of undirected angles, in [0, pi/2]."""
    return np.abs(np.mod(a - b + np.pi / 2, np.pi) - np.pi / 2)


def edge_support(
    sample_reproj, sample_tangent, view: int, index: EdgelIndex, delta_d: float, delta_theta: float
) -> tuple[float, list[int]]:
    """Binary support of one reprojected sample and the edgels that give it."""
    v = index.view(view)
    t = np.asarray(sample_tangent, dtype=float)
    angle = np.arctan2(t[1], t[0])
    rows = index.query_rows(view, np.reshape(sample_reproj, (1, 2)), delta_d)[0]
    ids = [int(v.edgel_ids[r]) for r in rows if _angle_diff(v.orientations[r], angle) <= delta_theta]
    return (1.0 if ids else 0.0), sorted(ids)


def _tangent_angles(uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward segment angles at each vertex of a polyline."""
    d = np.diff(uv, axis=0)
    ang = np.arctan2(d[:, 1], d[:, 0])
    back = np.concatenate([ang[:1], ang])
    fwd = np.concatenate([ang, ang[-1:]])
    return back, fwd


class SupportHits:
    """Supporting edgels found for each sample of a reprojected polyline.

    Ids are kept as index arrays and only turned into tuples on request,
    since most samples never need them.
    """

    def __init__(self, edgel_ids: np.ndarray, idx: np.ndarray, good: np.ndarray, rows: np.ndarray, extra: dict):
        self._edgel_ids = edgel_ids
        self._idx = idx
        self._good = good
        self._pos = {int(r): j for j, r in enumerate(rows)}
        self._extra = extra

    def __getitem__(self, s: int) -> tuple[int, ...]:
        if s in self._extra:
            return self._extra[s]
        j = self._pos.get(int(s))
        if j is None:
            return ()
        return tuple(sorted(int(e) for e in self._edgel_ids[self._idx[j][self._good[j]]]))


def support_many(
    uv: np.ndarray, view: int, index: EdgelIndex, delta_d: float, delta_theta: float
) -> tuple[np.ndarray, SupportHits]:
    """Vectorised :func:`edge_support` along a reprojected polyline.

    A polyline vertex has a tangent on either side; an edgel supports the
    vertex if it agrees with either, so corners are not starved of support.
    NaN rows (samples that failed to project) get no support.
    """
    v = index.view(view)
    n = len(uv)
    phi = np.zeros(n, dtype=bool)
    valid = np.all(np.isfinite(uv), axis=1)
    empty = np.zeros((0, 1), dtype=int)
    if v.tree is None or not np.any(valid):
        return phi, SupportHits(v.edgel_ids, empty, empty.astype(bool), np.zeros(0, int), {})
    back, fwd = _tangent_angles(np.where(valid[:, None], uv, 0.0))
    rows = np.nonzero(valid)[0]
    k = min(_K_NEAREST, len(v.points))
    dist, idx = v.tree.query(uv[rows], k=k, distance_upper_bound=delta_d)
    dist = dist.reshape(len(rows), k)
    idx = idx.reshape(len(rows), k)
    hit = np.isfinite(dist)
    ori = v.orientations[np.where(hit, idx, 0)]
    good = hit & (
        (_angle_diff(ori, back[rows, None]) <= delta_theta) | (_angle_diff(ori, fwd[rows, None]) <= delta_theta)
    )
    phi[rows] = np.any(good, axis=1)
    extra = {}
    if k == _K_NEAREST:
        # more than k edgels in range: fall back to an exhaustive ball query
        for j in np.nonzero(hit[:, -1])[0]:
            r = int(rows[j])
            cand = v.tree.query_ball_point(uv[r], r=delta_d)
            sel = [
                c
                for c in cand
                if _angle_diff(v.orientations[c], back[r]) <= delta_theta
                or _angle_diff(v.orientations[c], fwd[r]) <= delta_theta
            ]
            phi[r] = bool(sel)
            extra[r] = tuple(sorted(int(v.edgel_ids[c]) for c in sel))
    return phi, SupportHits(v.edgel_ids, idx, good, rows, extra)


@dataclass
class ViewSupport:
    """Support a hypothesis receives from one confirmation view."""

    view: int
    phi: np.ndarray
    weights: np.ndarray
    edgels: SupportHits
    total: float
    length: float
    unprojectable: np.ndarray


@dataclass
class SupportProfile:
    views: dict[int, ViewSupport] = field(default_factory=dict)

    def totals(self) -> dict[int, float]:
        return {v: s.total for v, s in sorted(self.views.items())}

    def supporting_views(self, tau_v: float) -> list[int]:
        return [v for v, s in sorted(self.views.items()) if s.total > tau_v]

    def view_counts(self, tau_v: float = 0.0) -> np.ndarray:
        """Per-sample number of supporting views in which the sample itself is supported."""
        views = self.supporting_views(tau_v)
        if not self.views:
            return np.zeros(0, dtype=int)
        n = len(next(iter(self.views.values())).phi)
        count = np.zeros(n, dtype=int)
        for v in views:
            count += self.views[v].phi
        return count


def trapezoid_support(values: np.ndarray, uv: np.ndarray) -> float:
    """Trapezoidal integral of per-sample values over the polyline's arc length."""
    seg = np.linalg.norm(np.diff(uv, axis=0), axis=1)
    seg = np.nan_to_num(seg, nan=0.0)
    return float(np.sum(0.5 * (values[:-1] + values[1:]) * seg))


def view_support(
    curve: Curve3D | CurvePairHypothesis,
    view: int,
    cams: Mapping[int, Camera],
    index: EdgelIndex,
    params: VerificationParams,
) -> ViewSupport:
    if isinstance(curve, CurvePairHypothesis):
        if view in (curve.view1, curve.view2):
            raise ValueError("confirmation view must differ from the hypothesis views")
        curve = curve.reconstruction
    uv, valid = cams[view].project_many(curve.points)
    phi, ids = support_many(uv, view, index, params.delta_d, params.delta_theta)
    weights = curve.reliability
    total = trapezoid_support(phi * weights, uv)
    seg = np.nan_to_num(np.linalg.norm(np.diff(uv, axis=0), axis=1), nan=0.0)
    return ViewSupport(view, phi, weights, ids, total, float(seg.sum()), ~valid)


def aggregate_support(profile, tau_v: float) -> float:
    """Sum of per-view supports that strictly exceed ``tau_v``."""
    if isinstance(profile, SupportProfile):
        values = profile.totals().values()
    elif isinstance(profile, Mapping):
        values = profile.values()
    else:
        values = profile
    return float(sum(s for s in values if s > tau_v))


def _qualifying_mask(rel: np.ndarray, counts: np.ndarray, n_min_views: int, floor: float) -> np.ndarray:
    reliable = rel >= floor
    qual = reliable & (counts >= n_min_views)
    keep = qual.copy()
    # unreliable stretches are kept when reliable, supported samples flank both sides
    n = len(rel)
    k = 0
    while k < n:
        if reliable[k]:
            k += 1
            continue
        j = k
        while j < n and not reliable[j]:
            j += 1
        if k > 0 and j < n and qual[k - 1] and qual[j]:
            keep[k:j] = True
        k = j
    return keep


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) runs of True."""
    m = np.concatenate([[False], mask, [False]]).astype(int)
    d = np.diff(m)
    return list(zip(np.nonzero(d == 1)[0], np.nonzero(d == -1)[0]))


def localize_supported_portions(
    hyp: CurvePairHypothesis | Curve3D,
    profile: SupportProfile,
    n_min_views: int = 3,
    min_run: int = 5,
    tau_v: float = 0.0,
    reliability_floor: float = 0.1,
) -> list[Curve3D]:
    """Cut a hypothesis down to the stretches supported in enough views at once."""
    curve = hyp.reconstruction if isinstance(hyp, CurvePairHypothesis) else hyp
    counts = profile.view_counts(tau_v) if profile.views else np.zeros(len(curve), dtype=int)
    keep = _qualifying_mask(curve.reliability, counts, n_min_views, reliability_floor)
    views = profile.supporting_views(tau_v)
    out = []
    for a, b in _runs(keep):
        if b - a < max(min_run, 2):
            continue
        support = []
        for s in range(a, b):
            links = dict(curve.support[s])
            for v in views:
                vs = profile.views[v]
                if vs.phi[s]:
                    links[v] = frozenset(vs.edgels[s])
            support.append(links)
        out.append(
            Curve3D(curve.points[a:b], support, curve.reliability[a:b], -1, curve.primary_view, curve.source)
        )
    return out


def confirmation_views(hyp: CurvePairHypothesis, views: Sequence[int]) -> list[int]:
    return [v for v in sorted(views) if v not in (hyp.view1, hyp.view2)]


def verify_hypothesis(
    hyp: CurvePairHypothesis, cams: Mapping[int, Camera], index: EdgelIndex, params: VerificationParams
) -> tuple[list[Curve3D], SupportProfile]:
    profile = SupportProfile()
    for v in confirmation_views(hyp, index.views.keys()):
        if v in cams:
            profile.views[v] = view_support(hyp.reconstruction, v, cams, index, params)
    curves = localize_supported_portions(
        hyp, profile, params.n_min_views, params.min_run, params.tau_v, params.reliability_floor
    )
    return curves, profile


def verify_all(
    hyps: Sequence[CurvePairHypothesis],
    cams: Mapping[int, Camera],
    index: EdgelIndex,
    params: VerificationParams,
    threads: int = 1,
) -> list[Curve3D]:
    """The enhanced curve sketch before redundancy fusion, numbered in hypothesis order."""
    results = parallel_map(lambda h: verify_hypothesis(h, cams, index, params)[0], hyps, threads)
    out = []
    for curves in results:
        for c in curves:
            c.curve_id = len(out)
            out.append(c)
    return out
