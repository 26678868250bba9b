"""Sample-level precision and recall against ground-truth curves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .curves import Curve3D, resample_polyline
from .drawing import DrawingGraph
from .errors import EmptyGroundTruth


@dataclass(frozen=True)
class PRResult:
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tp_gt: int
    tau_prox: float

    def csv_row(self, param) -> str:
        return f"{param},{self.precision:.6f},{self.recall:.6f},{self.tp},{self.fp},{self.fn}"


CSV_HEADER = "param,precision,recall,tp,fp,fn"


class SegmentSet:
    """Exact point-to-polyline distance queries over a set of polylines."""

    def __init__(self, polylines: Iterable[np.ndarray]):
        a, b = [], []
        for p in polylines:
            p = np.asarray(p, dtype=float).reshape(-1, 3)
            if len(p) == 1:
                p = np.vstack([p, p])
            a.append(p[:-1])
            b.append(p[1:])
        self.a = np.concatenate(a) if a else np.zeros((0, 3))
        self.b = np.concatenate(b) if b else np.zeros((0, 3))
        self._split_long()
        mid = 0.5 * (self.a + self.b)
        self.half = float(np.max(np.linalg.norm(self.b - self.a, axis=1)) / 2) if len(self.a) else 0.0
        self.tree = cKDTree(mid) if len(mid) else None
        self.mid = mid

    def _split_long(self, factor: float = 4.0) -> None:
        # queries are padded by half the longest segment, so cut outliers down
        # to a few times the median length
        if not len(self.a):
            return
        length = np.linalg.norm(self.b - self.a, axis=1)
        cap = factor * max(float(np.median(length)), 1e-12)
        pieces = np.maximum(np.ceil(length / cap).astype(np.int64), 1)
        if pieces.max() == 1:
            return
        idx = np.repeat(np.arange(len(self.a)), pieces)
        k = np.arange(len(idx)) - np.repeat(np.cumsum(pieces) - pieces, pieces)
        t0 = (k / pieces[idx])[:, None]
        t1 = ((k + 1) / pieces[idx])[:, None]
        d = self.b[idx] - self.a[idx]
        self.a, self.b = self.a[idx] + t0 * d, self.a[idx] + t1 * d

    def within(self, points: np.ndarray, tau: float) -> np.ndarray:
        """Whether each point lies within ``tau`` of some segment."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.zeros(len(pts), dtype=bool)
        if self.tree is None or len(pts) == 0:
            return out
        # a segment within tau has its midpoint within tau + half its length
        cands = self.tree.query_ball_point(pts, r=tau + self.half)
        counts = np.array([len(c) for c in cands])
        if counts.sum() == 0:
            return out
        q = np.repeat(np.arange(len(pts)), counts)
        s = np.concatenate([np.asarray(c, dtype=np.int64) for c in cands if c])
        d = _segment_distance(pts[q], self.a[s], self.b[s])
        np.logical_or.at(out, q, d <= tau)
        return out

    def distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if self.tree is None:
            return np.full(len(pts), np.inf)
        # nearest midpoint gives an upper bound; every closer segment has its
        # midpoint within that bound plus half a segment length
        d0, k0 = self.tree.query(pts)
        bound = _segment_distance(pts, self.a[k0], self.b[k0])
        out = bound.copy()
        for r, c in enumerate(self.tree.query_ball_point(pts, r=bound + self.half)):
            if c:
                out[r] = min(out[r], _segment_distance(pts[r][None], self.a[c], self.b[c]).min())
        return out


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = np.sum(d * d, axis=1)
    t = np.sum((p - a) * d, axis=1) / np.where(dd > 0, dd, 1.0)
    t = np.clip(np.where(dd > 0, t, 0.0), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * d), axis=1)


def as_polylines(recon) -> list[np.ndarray]:
    if isinstance(recon, DrawingGraph):
        return recon.polylines()
    out = []
    for r in recon:
        out.append(np.asarray(r.points if isinstance(r, Curve3D) else r, dtype=float))
    return out


def gt_diagonal(gt: Sequence[np.ndarray]) -> float:
    pts = np.concatenate([np.asarray(g, dtype=float).reshape(-1, 3) for g in gt])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def default_tau_prox(gt: Sequence[np.ndarray], fraction: float = 0.005) -> float:
    return fraction * gt_diagonal(gt)


def evaluate(recon, gt: Sequence[np.ndarray], tau_prox: float | None = None, spacing: float | None = None) -> PRResult:
    """Precision and recall of a reconstruction at proximity ``tau_prox``.

    Reconstructed polylines are resampled at ``spacing`` (by default the
    median spacing of the ground-truth samples). A reconstructed sample is
    a true positive when it lies within ``tau_prox`` of a ground-truth
    polyline; a ground-truth sample is covered when it lies within
    ``tau_prox`` of the reconstruction. Each ground-truth sample counts
    once however many reconstructed curves cover it.
    """
    gt = [np.asarray(g, dtype=float).reshape(-1, 3) for g in gt if len(g)]
    if not gt:
        raise EmptyGroundTruth("no ground-truth samples")
    if tau_prox is None:
        tau_prox = default_tau_prox(gt)
    if spacing is None:
        steps = np.concatenate([np.linalg.norm(np.diff(g, axis=0), axis=1) for g in gt if len(g) > 1] or [[tau_prox / 2]])
        spacing = float(np.median(steps)) if len(steps) else tau_prox / 2
    polys = [p for p in as_polylines(recon) if len(p)]
    samples = [resample_polyline(p, spacing)[0] if len(p) > 1 else p for p in polys]
    recon_pts = np.concatenate(samples) if samples else np.zeros((0, 3))
    gt_pts = np.concatenate(gt)

    tp_mask = SegmentSet(gt).within(recon_pts, tau_prox)
    cov = SegmentSet(polys).within(gt_pts, tau_prox) if polys else np.zeros(len(gt_pts), dtype=bool)
    tp, fp = int(tp_mask.sum()), int((~tp_mask).sum())
    tp_gt, fn = int(cov.sum()), int((~cov).sum())
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp_gt / (tp_gt + fn)
    return PRResult(precision, recall, tp, fp, fn, tp_gt, float(tau_prox))


@dataclass
class SweepPoint:
    param: str
    value: object
    result: PRResult | None
    error: str = ""
    arc_length: float = 0.0

    def csv_row(self) -> str:
        label = f"{self.param}={self.value}"
        if self.result is None:
            return f"{label},nan,nan,0,0,0"
        return self.result.csv_row(label)


def pr_sweep(run: Callable[[str, object], tuple[object, float]], settings: Sequence[tuple[str, object]]) -> list[SweepPoint]:
    """Evaluate ``run(param, value) -> (PRResult, arc_length)`` at every setting.

    Failures are recorded on their point instead of aborting the sweep.
    """
    out = []
    for param, value in settings:
        try:
            result, length = run(param, value)
            out.append(SweepPoint(param, value, result, arc_length=length))
        except Exception as e:  # noqa: BLE001 - a failed point is reported, not fatal
            out.append(SweepPoint(param, value, None, f"{type(e).__name__}: {e}"))
    return out


def format_sweep(points: Sequence[SweepPoint]) -> str:
    return "\n".join([CSV_HEADER] + [p.csv_row() for p in points]) + "\n"
