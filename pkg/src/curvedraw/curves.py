"""Curve containers shared by every stage, plus arc-length helpers and the edgel index."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import SpacingTooLarge, UnknownView

Support = dict  # view_id -> frozenset of edgel ids


@dataclass(frozen=True)
class Edgel2D:
    position: tuple[float, float]
    orientation: float
    view_id: int
    edgel_id: int


@dataclass(eq=False)
class Curve2D:
    """Ordered chain of oriented edgels in one view.

    Stored column-wise; ``edgels`` materialises :class:`Edgel2D` objects on
    demand. Orientations are undirected and folded into [0, pi).
    """

    points: np.ndarray
    orientations: np.ndarray
    edgel_ids: np.ndarray
    curve_id: int
    view_id: int

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.orientations = np.mod(np.asarray(self.orientations, dtype=float), np.pi)
        # mod can return pi itself for tiny negative inputs
        self.orientations[self.orientations >= np.pi] = 0.0
        self.edgel_ids = np.asarray(self.edgel_ids, dtype=np.int64)
        n = len(self.points)
        if n < 2:
            raise ValueError("a curve needs at least 2 edgels")
        if self.orientations.shape != (n,) or self.edgel_ids.shape != (n,):
            raise ValueError("points, orientations and edgel_ids disagree in length")
        if np.any(np.all(np.diff(self.points, axis=0) == 0, axis=1)):
            raise ValueError("consecutive edgels must be distinct")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def edgels(self) -> list[Edgel2D]:
        return [
            Edgel2D((float(p[0]), float(p[1])), float(o), self.view_id, int(i))
            for p, o, i in zip(self.points, self.orientations, self.edgel_ids)
        ]

    def tangents(self) -> np.ndarray:
        return np.column_stack([np.cos(self.orientations), np.sin(self.orientations)])

    def segment_directions(self) -> np.ndarray:
        """Unit direction of each polyline segment, shape (n - 1, 2)."""
        d = np.diff(self.points, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def point_at(self, t: np.ndarray) -> np.ndarray:
        """Linear interpolation at fractional vertex index ``t``."""
        t = np.clip(np.asarray(t, dtype=float), 0, len(self) - 1)
        k = np.minimum(np.floor(t).astype(int), len(self) - 2)
        f = (t - k)[..., None]
        return self.points[k] * (1 - f) + self.points[k + 1] * f


@dataclass(frozen=True)
class Sample3D:
    position: tuple[float, float, float]
    support: Mapping[int, frozenset[int]]
    reliability: float


@dataclass(eq=False)
class Curve3D:
    """Ordered 3D samples with per-sample 2D support links.

    ``support[k]`` maps view id to the edgel ids that support sample ``k``.
    ``source`` records the hypothesis that produced the curve
    ``(view1, curve1, view2, curve2)`` when known.
    """

    points: np.ndarray
    support: list[dict[int, frozenset[int]]]
    reliability: np.ndarray
    curve_id: int
    primary_view: int
    source: tuple[int, int, int, int] | None = None

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.reliability = np.asarray(self.reliability, dtype=float).reshape(-1)
        n = len(self.points)
        if n < 2:
            raise ValueError("a 3D curve needs at least 2 samples")
        if len(self.support) != n or len(self.reliability) != n:
            raise ValueError("support/reliability length mismatch")
        if np.any(np.linalg.norm(np.diff(self.points, axis=0), axis=1) <= 0):
            raise ValueError("arc length must be strictly increasing")
        if np.any((self.reliability < 0) | (self.reliability > 1)):
            raise ValueError("reliability must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def samples(self) -> list[Sample3D]:
        return [
            Sample3D(tuple(float(c) for c in p), dict(s), float(r))
            for p, s, r in zip(self.points, self.support, self.reliability)
        ]

    def arc_params(self) -> np.ndarray:
        return cumulative_length(self.points)

    def with_points(self, points: np.ndarray) -> "Curve3D":
        return Curve3D(points, self.support, self.reliability, self.curve_id, self.primary_view, self.source)


def cumulative_length(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def arc_length(curve) -> float:
    """Sum of chord lengths between consecutive samples (or edgels)."""
    pts = curve.points if hasattr(curve, "points") else np.asarray(curve, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def resample_polyline(points: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform arc-length resampling of a polyline.

    Returns the new points and their arc-length parameters. The interval
    count is ``round(L / spacing)`` so the realised step is within a factor
    of 1.5 of ``spacing`` and both endpoints are kept exactly.
    """
    s = cumulative_length(points)
    L = s[-1]
    n = max(1, int(round(L / spacing)))
    t = np.linspace(0.0, L, n + 1)
    out = np.column_stack([np.interp(t, s, points[:, d]) for d in range(points.shape[1])])
    out[0], out[-1] = points[0], points[-1]
    return out, t


def resample_uniform(curve: Curve3D, spacing: float) -> Curve3D:
    """Resample at uniform arc-length steps; links come from the nearest original sample."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    L = arc_length(curve)
    if spacing > L:
        raise SpacingTooLarge(f"spacing {spacing} exceeds curve length {L}")
    pts, t = resample_polyline(curve.points, spacing)
    s = curve.arc_params()
    nearest = np.clip(np.searchsorted(s, t), 1, len(s) - 1)
    left = nearest - 1
    nearest = np.where(t - s[left] <= s[nearest] - t, left, nearest)
    return Curve3D(
        pts,
        [curve.support[k] for k in nearest],
        curve.reliability[nearest],
        curve.curve_id,
        curve.primary_view,
        curve.source,
    )


@dataclass
class ViewEdgels:
    """All edgels of one view, flattened from its curves."""

    view_id: int
    points: np.ndarray
    orientations: np.ndarray
    edgel_ids: np.ndarray
    curve_ids: np.ndarray
    width: float = 0.0
    height: float = 0.0
    tree: cKDTree = field(init=False, repr=False)
    _row: dict = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.tree = cKDTree(self.points) if len(self.points) else None
        self._row = {int(e): k for k, e in enumerate(self.edgel_ids)}

    @classmethod
    def from_curves(cls, view_id: int, curves: Sequence[Curve2D], width=0.0, height=0.0) -> "ViewEdgels":
        if curves:
            pts = np.concatenate([c.points for c in curves])
            ori = np.concatenate([c.orientations for c in curves])
            ids = np.concatenate([c.edgel_ids for c in curves])
            cid = np.concatenate([np.full(len(c), c.curve_id) for c in curves])
        else:
            pts, ori = np.zeros((0, 2)), np.zeros(0)
            ids, cid = np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return cls(view_id, pts, ori, ids, cid, width, height)

    def row_of(self, edgel_id: int) -> int:
        return self._row[int(edgel_id)]


class EdgelIndex:
    """Per-view spatial index over edgels for exact radius queries.

    Backed by a k-d tree per view; results are exact (Euclidean distance
    <= radius), which the tests check against a linear scan.
    """

    def __init__(self, views: Iterable[ViewEdgels]):
        self.views: dict[int, ViewEdgels] = {v.view_id: v for v in views}

    @classmethod
    def from_curves(cls, curves_by_view: Mapping[int, Sequence[Curve2D]], sizes=None) -> "EdgelIndex":
        sizes = sizes or {}
        return cls(
            ViewEdgels.from_curves(v, cs, *sizes.get(v, (0.0, 0.0)))
            for v, cs in sorted(curves_by_view.items())
        )

    def view(self, view_id: int) -> ViewEdgels:
        try:
            return self.views[view_id]
        except KeyError:
            raise UnknownView(f"no edgels indexed for view {view_id}") from None

    def query_rows(self, view_id: int, points: np.ndarray, radius: float) -> list[list[int]]:
        """Row indices (into the view arrays) of edgels within ``radius`` of each point."""
        v = self.view(view_id)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if v.tree is None:
            return [[] for _ in range(len(pts))]
        out = v.tree.query_ball_point(pts, r=radius)
        return [sorted(r) for r in out]

    def query(self, view_id: int, p, radius: float) -> set[Edgel2D]:
        v = self.view(view_id)
        rows = self.query_rows(view_id, np.reshape(p, (1, 2)), radius)[0]
        return {
            Edgel2D(tuple(float(c) for c in v.points[r]), float(v.orientations[r]), view_id, int(v.edgel_ids[r]))
            for r in rows
        }


def query_edgels(index: EdgelIndex, view: int, p, radius: float) -> set[Edgel2D]:
    return index.query(view, p, radius)
