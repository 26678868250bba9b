"""Reconciling redundant reconstructions that share a primary hypothesis view.

Every sample of a verified curve came from one edgel of its primary view, so
samples from different hypotheses that share that edgel are estimates of the
same 3D point. They are grouped per edgel, outliers are rejected against a
Gaussian fitted to the pairwise distances, and the survivors are averaged.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .config import FusionParams
from .curves import Curve3D, Sample3D
from .errors import MissingPrimarySupport

# MAD -> standard deviation for a normal population
_MAD_SCALE = 1.4826


def primary_edgel(curve: Curve3D, k: int) -> int:
    try:
        ids = curve.support[k][curve.primary_view]
    except KeyError:
        ids = ()
    if not ids:
        raise MissingPrimarySupport(f"sample {k} of curve {curve.curve_id} has no primary-view edgel")
    return min(ids)


def _bucket_members(curves: Sequence[Curve3D]) -> dict[tuple[int, int], list[tuple[int, int]]]:
    buckets: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    for ci, c in enumerate(curves):
        for k in range(len(c)):
            buckets[(c.primary_view, primary_edgel(c, k))].append((ci, k))
    return dict(buckets)


def group_by_primary_edge(curves: Sequence[Curve3D]) -> dict[tuple[int, int], list[Sample3D]]:
    """Samples keyed by ``(primary_view, edgel_id)`` of the edgel they were triangulated from."""
    members = _bucket_members(curves)
    return {key: [_sample(curves[ci], k) for ci, k in items] for key, items in sorted(members.items())}


def _sample(c: Curve3D, k: int) -> Sample3D:
    return Sample3D(tuple(float(x) for x in c.points[k]), dict(c.support[k]), float(c.reliability[k]))


def fit_distance_gaussian(distances: np.ndarray) -> tuple[float, float]:
    """Robust (median, MAD) Gaussian fit to a population of distances."""
    d = np.asarray(distances, dtype=float)
    if len(d) == 0:
        return 0.0, 0.0
    mu = float(np.median(d))
    return mu, float(_MAD_SCALE * np.median(np.abs(d - mu)))


def robust_inliers(points, sigmas: float = 2.0, scale: tuple[float, float] | None = None) -> np.ndarray:
    """Mask of bucket members kept by the 2-sigma pairwise-distance test.

    A member's statistic is the lower median of its distances to the other
    members; it is rejected when that exceeds ``mu + sigmas * sd`` of the
    distance Gaussian. ``scale`` supplies ``(mu, sd)`` fitted on a larger
    population (e.g. all buckets along one curve); otherwise the bucket's
    own pairwise distances are used. Buckets of one or two members, or of
    coincident members, are kept whole.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(P)
    keep = np.ones(n, dtype=bool)
    if n <= 2:
        return keep
    d = pdist(P)
    if d.max() == 0:
        return keep
    D = np.sort(squareform(d), axis=1)[:, 1:]
    stat = D[:, (n - 2) // 2]
    for mu, sd in ([scale] if scale is not None else []) + [fit_distance_gaussian(d)]:
        keep = stat <= mu + sigmas * sd
        if keep.any():
            return keep
    return np.ones(n, dtype=bool)


def robust_average(bucket, sigmas: float = 2.0, scale: tuple[float, float] | None = None) -> np.ndarray:
    """Centroid of the members that survive :func:`robust_inliers`."""
    if len(bucket) and isinstance(bucket[0], Sample3D):
        bucket = [s.position for s in bucket]
    P = np.asarray(bucket, dtype=float).reshape(-1, 3)
    if len(P) == 0:
        raise ValueError("empty bucket")
    return P[robust_inliers(P, sigmas, scale)].mean(axis=0)


def _group_key(c: Curve3D) -> tuple[int, int]:
    return (c.primary_view, c.source[1] if c.source is not None else -1)


def fuse_redundant(
    curves: Sequence[Curve3D],
    params: FusionParams | None = None,
    edgel_rank: Mapping[tuple[int, int], tuple[int, int]] | None = None,
) -> list[Curve3D]:
    """Fuse curves that share primary-view edgels into single, longer curves.

    Curves are grouped by the primary 2D curve they were reconstructed from.
    Within a group each edgel bucket is robustly averaged (distance statistics
    pooled over the whole group), then the fused samples are strung together
    in the edgel order of the primary curve. Any curve overlapping another
    therefore ends up inside one fused run, which also joins pieces that
    only touch end to end. Runs break where the primary curve has no
    reconstruction or where the fused geometry jumps.

    ``edgel_rank`` maps ``(view, edgel_id)`` to ``(curve_id, position)``
    along the 2D curve; without it edgel ids are assumed to be numbered
    along their curves.
    """
    params = params or FusionParams()
    groups: dict[tuple[int, int], list[int]] = defaultdict(list)
    for ci, c in enumerate(curves):
        groups[_group_key(c)].append(ci)

    out: list[Curve3D] = []
    for key in sorted(groups):
        members = [curves[ci] for ci in groups[key]]
        buckets = _bucket_members(members)
        pooled = [pdist(np.array([members[ci].points[k] for ci, k in items])) for items in buckets.values() if len(items) > 2]
        scale = fit_distance_gaussian(np.concatenate(pooled)) if pooled else None

        def rank(bkey):
            if edgel_rank is not None and bkey in edgel_rank:
                return edgel_rank[bkey][1]
            return bkey[1]

        ordered = sorted(buckets, key=rank)
        pts, sup, rel, ranks = [], [], [], []
        for bkey in ordered:
            items = buckets[bkey]
            P = np.array([members[ci].points[k] for ci, k in items])
            keep = robust_inliers(P, params.outlier_sigmas, scale)
            links: dict[int, set[int]] = defaultdict(set)
            for (ci, k), ok in zip(items, keep):
                if ok:
                    for v, ids in members[ci].support[k].items():
                        links[v].update(ids)
            pts.append(P[keep].mean(axis=0))
            sup.append({v: frozenset(ids) for v, ids in sorted(links.items())})
            rel.append(max(members[ci].reliability[k] for (ci, k), ok in zip(items, keep) if ok))
            ranks.append(rank(bkey))
        out.extend(_split_runs(np.array(pts), sup, np.array(rel), np.array(ranks), key, params.jump_factor))

    for k, c in enumerate(out):
        c.curve_id = k
    return out


def _split_runs(pts, sup, rel, ranks, key, jump_factor) -> list[Curve3D]:
    if len(pts) < 2:
        return []
    step = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    typical = np.median(step[np.diff(ranks) == 1]) if np.any(np.diff(ranks) == 1) else np.median(step)
    breaks = (np.diff(ranks) > 2) | (step > jump_factor * max(typical, 1e-300) * np.maximum(np.diff(ranks), 1))
    breaks |= step == 0
    bounds = np.concatenate([[0], np.nonzero(breaks)[0] + 1, [len(pts)]])
    curves = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b - a >= 2:
            curves.append(Curve3D(pts[a:b], sup[a:b], rel[a:b], -1, key[0], (key[0], key[1], -1, -1)))
    return curves
