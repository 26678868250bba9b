"""From clustered 3D curves to a junction-annotated curve graph.

Curves of one cluster are first pulled to a consensus by repeatedly moving
every sample to the average of its closest points on the curves it is linked
to. The converged curves are then merged one at a time, longest first, into
a graph whose nodes are junctions and curve ends and whose links carry the
curve geometry.
"""

from __future__ import annotations

import colorsys
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .curves import Curve3D, cumulative_length

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# closest points on polylines


def _project_segments(q: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest points of ``q`` on segments ``a -> b`` (broadcast), and the segment parameter."""
    d = b - a
    dd = np.einsum("...i,...i->...", d, d)
    f = np.einsum("...i,...i->...", q - a, d) / np.where(dd > 0, dd, 1.0)
    f = np.clip(np.where(dd > 0, f, 0.0), 0.0, 1.0)
    return a + f[..., None] * d, f


class PolylineLocator:
    """Closest-point queries against one polyline.

    Candidate segments are those adjacent to the ``k`` nearest vertices,
    which is exact for the uniformly sampled curves this is used on.
    """

    def __init__(self, points: np.ndarray, k: int = 3):
        self.points = np.asarray(points, dtype=float)
        self.tree = cKDTree(self.points)
        self.k = min(k, len(self.points))

    def closest(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Closest points, distances, segment index and segment parameter for each query."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        P = self.points
        n = len(P)
        if n == 1:
            d = np.linalg.norm(q - P[0], axis=1)
            return np.repeat(P[:1], len(q), axis=0), d, np.zeros(len(q), int), np.zeros(len(q))
        _, idx = self.tree.query(q, k=self.k)
        idx = np.asarray(idx).reshape(len(q), -1)
        seg = np.concatenate([np.clip(idx - 1, 0, n - 2), np.clip(idx, 0, n - 2)], axis=1)
        cp, f = _project_segments(q[:, None, :], P[seg], P[seg + 1])
        dist = np.linalg.norm(cp - q[:, None, :], axis=2)
        best = np.argmin(dist, axis=1)
        r = np.arange(len(q))
        return cp[r, best], dist[r, best], seg[r, best], f[r, best]


def closest_points(q: np.ndarray, polyline: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cp, d, _, _ = PolylineLocator(polyline).closest(q)
    return cp, d


# --------------------------------------------------------------------------
# evolution


@dataclass
class EvolutionResult:
    points: list[np.ndarray]
    iterations: int
    converged: bool
    displacement: float


def _unit_tangents(P: np.ndarray) -> np.ndarray:
    """Central-difference unit tangents (one-sided at the ends)."""
    if len(P) < 2:
        return np.zeros_like(P)
    d = np.empty_like(P)
    d[1:-1] = P[2:] - P[:-2]
    d[0] = P[1] - P[0]
    d[-1] = P[-1] - P[-2]
    n = np.linalg.norm(d, axis=1, keepdims=True)
    return d / np.where(n > 0, n, 1.0)


def evolve_cluster(
    curves: Sequence[Curve3D | np.ndarray],
    links: Mapping[tuple[int, int], np.ndarray] | None = None,
    alpha: float = 1.0,
    max_iters: int = 50,
    tol: float = 1e-6,
    max_angle: float | None = np.radians(30.0),
    skip_clipped: bool = True,
    weights: Sequence[np.ndarray] | None = None,
    max_dist: float | None = None,
    reject_factor: float | None = None,
    reject_floor: float = 0.0,
) -> EvolutionResult:
    """Synchronously move each sample toward the mean of its linked closest points.

    ``links[(i, j)]`` is a boolean mask over curve ``i``'s samples telling
    which of them are linked to curve ``j``; when ``links`` is None every
    pair is fully linked. The average always includes the sample itself.

    A closest point is only used when it corresponds to the sample: it must
    not be clipped to an end of the other curve, and the two tangents must
    agree within ``max_angle``. Without this, samples near a corner get
    dragged along their own curve toward a linked curve that turns away.

    Closest points farther than ``max_dist`` are ignored too, so a link to
    a curve that only shares a few edgels cannot drag a sample across the
    scene.

    With ``reject_factor`` set, a sample also ignores closest points farther
    than that multiple of the median distance to its usable closest points
    (but never those within ``reject_floor``), which keeps a minority of
    stray partners from biasing the average.

    ``weights`` (one array per curve, default all ones) scale each sample's
    say in the averages it takes part in, its own position included, so a
    weakly triangulated sample follows well-conditioned neighbours without
    pulling them.

    Stops when the largest displacement drops below ``tol``; reaching
    ``max_iters`` first is reported through ``converged=False``.
    """
    pts = [np.array(c.points if isinstance(c, Curve3D) else c, dtype=float) for c in curves]
    K = len(pts)
    if links is None:
        links = {(i, j): np.ones(len(pts[i]), dtype=bool) for i in range(K) for j in range(K) if i != j}
    pairs = sorted((i, j) for (i, j), m in links.items() if i != j and np.any(m))
    if not pairs:
        return EvolutionResult(pts, 0, True, 0.0)
    if weights is None:
        weights = [np.ones(len(p)) for p in pts]
    wts = [np.maximum(np.asarray(w, dtype=float), 1e-6) for w in weights]
    cos_min = np.cos(max_angle) if max_angle is not None else -1.0
    rows = {p: np.nonzero(links[p])[0] for p in pairs}
    # per pair: closest point and whether it counts, cached between iterations
    cache: dict[tuple[int, int], tuple[np.ndarray, ...]] = {}
    stale: list[np.ndarray] | None = None
    moved = 0.0
    for it in range(1, max_iters + 1):
        locators: dict[int, PolylineLocator] = {}
        tangents = [_unit_tangents(p) for p in pts]
        found: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = [[] for _ in range(K)]
        for i, j in pairs:
            r = rows[(i, j)]
            if stale is None or (i, j) not in cache:
                todo = np.arange(len(r))
                cp, ok, seg = np.zeros((len(r), 3)), np.zeros(len(r), bool), np.zeros(len(r), int)
                wj = np.zeros(len(r))
            else:
                cp, ok, seg, wj = cache[(i, j)]
                todo = np.nonzero(stale[i][r] | stale[j][seg] | stale[j][seg + 1])[0]
            if len(todo):
                if j not in locators:
                    locators[j] = PolylineLocator(pts[j])
                q = r[todo]
                c, dist, s, f = locators[j].closest(pts[i][q])
                n_j = len(pts[j])
                d = pts[j][s + 1] - pts[j][s]
                d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
                # at an end vertex, the sample only corresponds to it when it
                # sits square to the end segment rather than beyond it
                at_end = ((s == 0) & (f <= 0)) | ((s == n_j - 2) & (f >= 1))
                beyond = np.abs(np.sum((pts[i][q] - c) * d, axis=1)) > 1e-6 * dist
                clipped = at_end & beyond & skip_clipped
                aligned = np.abs(np.sum(d * tangents[i][q], axis=1)) >= cos_min
                f = np.clip(f, 0.0, 1.0)
                near = dist <= max_dist if max_dist is not None else True
                cp[todo], ok[todo], seg[todo] = c, aligned & ~clipped & near, s
                wj[todo] = (1 - f) * wts[j][s] + f * wts[j][s + 1]
                cache[(i, j)] = (cp, ok, seg, wj)
            found[i].append((r[ok], cp[ok], wj[ok]))
        new = []
        for i in range(K):
            target = _weighted_target(pts[i], wts[i], found[i], reject_factor, reject_floor)
            new.append(pts[i] + alpha * (target - pts[i]))
        step = [np.linalg.norm(a - b, axis=1) for a, b in zip(new, pts)]
        moved = max(float(s.max()) for s in step)
        pts = new
        if moved < tol:
            if stale is None:
                return EvolutionResult(pts, it, True, moved)
            # confirm with a full pass before declaring convergence
            stale = None
            continue
        stale = [_near_motion(s, tol * 1e-3) for s in step]
    log.debug("evolution stopped after %d iterations (last move %.3g)", max_iters, moved)
    return EvolutionResult(pts, max_iters, False, moved)


def _weighted_target(p, w, found, reject_factor, reject_floor) -> np.ndarray:
    """Weighted mean of each sample and its usable closest points."""
    acc = p * w[:, None]
    cnt = w.copy()
    if not found:
        return acc / cnt[:, None]
    rows = np.concatenate([f[0] for f in found])
    cps = np.concatenate([f[1] for f in found])
    ws = np.concatenate([f[2] for f in found])
    if reject_factor is not None and len(rows):
        dist = np.linalg.norm(cps - p[rows], axis=1)
        order = np.lexsort((dist, rows))
        srow, sdist = rows[order], dist[order]
        starts = np.searchsorted(srow, srow, side="left")
        counts = np.bincount(srow, minlength=len(p))[srow]
        lo = sdist[starts + (counts - 1) // 2]
        hi = sdist[starts + counts // 2]
        limit = np.maximum(reject_factor * 0.5 * (lo + hi), reject_floor)
        keep = np.zeros(len(rows), dtype=bool)
        keep[order] = sdist <= limit
        rows, cps, ws = rows[keep], cps[keep], ws[keep]
    np.add.at(acc, rows, cps * ws[:, None])
    np.add.at(cnt, rows, ws)
    return acc / cnt[:, None]


def _near_motion(step: np.ndarray, eps: float, reach: int = 3) -> np.ndarray:
    """Samples within ``reach`` indices of one that moved more than ``eps``."""
    m = (step > eps).astype(float)
    return np.convolve(m, np.ones(2 * reach + 1), mode="same") > 0


# --------------------------------------------------------------------------
# overlap masks and primitive classification


def runs_of(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) runs of True."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]]).astype(np.int8)
    d = np.diff(m)
    return [(int(a), int(b)) for a, b in zip(np.nonzero(d == 1)[0], np.nonzero(d == -1)[0])]


def erode_short_runs(mask: np.ndarray, min_run: int) -> np.ndarray:
    out = np.asarray(mask, dtype=bool).copy()
    for a, b in runs_of(out):
        if b - a < min_run:
            out[a:b] = False
    return out


def compute_overlap_masks(
    curves: Sequence[Curve3D | np.ndarray],
    d_merge: float,
    min_run: int = 3,
    links: Mapping[tuple[int, int], np.ndarray] | None = None,
    max_angle: float | None = np.radians(30.0),
) -> dict[tuple[int, int], np.ndarray]:
    """Per ordered pair, samples of the first curve within ``d_merge`` of the second.

    Samples whose tangent differs from the other curve's by more than
    ``max_angle`` do not overlap, and runs shorter than ``min_run`` samples
    are dropped, so a transversal crossing does not count as overlap. With
    ``links`` given, only linked samples can overlap.
    """
    pts = [np.asarray(c.points if isinstance(c, Curve3D) else c, dtype=float) for c in curves]
    locs = [PolylineLocator(p) for p in pts]
    tangents = [_unit_tangents(p) for p in pts]
    cos_min = np.cos(max_angle) if max_angle is not None else -1.0
    out = {}
    for i in range(len(pts)):
        for j in range(len(pts)):
            if i == j:
                continue
            _, d, s, _ = locs[j].closest(pts[i])
            m = d <= d_merge
            if len(pts[j]) > 1:
                dj = pts[j][s + 1] - pts[j][s]
                dj /= np.maximum(np.linalg.norm(dj, axis=1, keepdims=True), 1e-300)
                m &= np.abs(np.sum(dj * tangents[i], axis=1)) >= cos_min
            if links is not None:
                m &= links.get((i, j), np.zeros(len(m), dtype=bool))
            out[(i, j)] = erode_short_runs(m, min_run)
    return out


PRIMITIVE_NAMES = {
    1: "continuation",
    2: "shared-end fork",
    3: "end on interior",
    4: "interior crossing",
    5: "bridge",
    6: "end at junction",
}


@dataclass(frozen=True)
class MergePrimitive:
    kind: int
    i_span: tuple[int, int]
    j_span: tuple[int, int] | None = None
    identity: bool = False

    @property
    def name(self) -> str:
        return PRIMITIVE_NAMES[self.kind]


def classify_merge_primitive(
    mask_i: np.ndarray,
    mask_j: np.ndarray,
    reversed_j: bool = False,
    junction_samples_j: Sequence[int] = (),
) -> list[MergePrimitive]:
    """Break the overlap of curve ``i`` with curve ``j`` into merge primitives.

    Each maximal overlapping run along ``i`` is paired with the matching run
    along ``j`` (in order, or reverse order when ``reversed_j``) and typed
    by which curve ends it contains:

    1. an end of each, the free parts leaving on opposite sides (the two
       curves continue one another);
    2. an end of each, both free parts leaving on the same side (a fork
       with a shared dangling tail);
    3. an end of one curve lying on the interior of the other (a T);
    4. interior of both (the curves cross along a shared stretch);
    6. like 3, but where ``i`` leaves ``j`` at a sample listed in
       ``junction_samples_j`` (attaching to an existing junction).

    Every gap between consecutive runs of ``i`` additionally yields a
    bridge (5). A run covering all of ``i`` and ``j`` is the identity merge.
    """
    mask_i = np.asarray(mask_i, dtype=bool)
    mask_j = np.asarray(mask_j, dtype=bool)
    ri, rj = runs_of(mask_i), runs_of(mask_j)
    if not ri:
        return []
    ni, nj = len(mask_i), len(mask_j)
    if reversed_j:
        rj = rj[::-1]
    junctions = set(int(s) for s in junction_samples_j)
    prims = []
    for k, (a, b) in enumerate(ri):
        if rj:
            c, d = rj[min(int(round(k * len(rj) / len(ri))), len(rj) - 1)]
        else:
            c, d = 0, nj
        if a == 0 and b == ni and c == 0 and d == nj:
            prims.append(MergePrimitive(4, (a, b), (c, d), identity=True))
            continue
        i_head, i_tail = a == 0, b == ni
        j_head, j_tail = c == 0, d == nj
        # express j's ends in i's direction of travel
        if reversed_j:
            j_head, j_tail = j_tail, j_head
        i_end = i_head or i_tail
        j_end = j_head or j_tail
        if i_end and j_end and not (i_head and i_tail) and not (j_head and j_tail):
            kind = 1 if (i_tail and j_head) or (i_head and j_tail) else 2
        elif i_end or j_end:
            kind = 3
            leave = {a, b} - {0, ni}
            if junctions and (set(range(c, d + 1)) & junctions) and leave:
                kind = 6
        else:
            kind = 4
        prims.append(MergePrimitive(kind, (a, b), (c, d)))
    for (a0, b0), (a1, _) in zip(ri[:-1], ri[1:]):
        prims.append(MergePrimitive(5, (b0, a1)))
    return sorted(prims, key=lambda p: (p.i_span, p.kind))


# --------------------------------------------------------------------------
# the drawing graph


class GraphInvariantError(RuntimeError):
    pass


@dataclass
class Link:
    a: int
    b: int
    points: np.ndarray
    cluster: int = 0
    # number of curves averaged into each vertex
    weight: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.weight is None:
            self.weight = np.ones(len(self.points))

    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def reversed(self) -> "Link":
        return Link(self.b, self.a, self.points[::-1].copy(), self.cluster, self.weight[::-1].copy())


@dataclass
class DrawingGraph:
    """Junctions and curve ends as nodes, curve geometries as links.

    A node's degree counts link ends, so a closed loop contributes 2 to its
    single node. Junctions have degree >= 3 and open ends degree 1; degree 2
    only occurs on a node carrying nothing but one closed loop.
    """

    nodes: dict[int, np.ndarray] = field(default_factory=dict)
    links: dict[int, Link] = field(default_factory=dict)
    node_cluster: dict[int, int] = field(default_factory=dict)
    _next_node: int = 0
    _next_link: int = 0

    # -- construction
    def add_node(self, position, cluster: int = 0) -> int:
        n = self._next_node
        self._next_node += 1
        self.nodes[n] = np.asarray(position, dtype=float).copy()
        self.node_cluster[n] = cluster
        return n

    def add_link(self, a: int, b: int, points, cluster: int = 0, weight=None) -> int:
        pts = np.array(points, dtype=float).reshape(-1, 3)
        if len(pts) < 2:
            pts = np.vstack([self.nodes[a], self.nodes[b]])
            weight = None
        pts[0], pts[-1] = self.nodes[a], self.nodes[b]
        lid = self._next_link
        self._next_link += 1
        self.links[lid] = Link(a, b, pts, cluster, None if weight is None else np.asarray(weight, float).copy())
        return lid

    def add_chain(self, points, cluster: int = 0) -> int:
        pts = np.asarray(points, dtype=float)
        a = self.add_node(pts[0], cluster)
        b = self.add_node(pts[-1], cluster)
        return self.add_link(a, b, pts, cluster)

    def remove_link(self, lid: int) -> Link:
        return self.links.pop(lid)

    def remove_node(self, n: int) -> None:
        del self.nodes[n]
        del self.node_cluster[n]

    # -- queries
    def incident(self, n: int) -> list[int]:
        return sorted(l for l, L in self.links.items() if n in (L.a, L.b))

    def degree(self, n: int) -> int:
        return sum((L.a == n) + (L.b == n) for L in self.links.values())

    def degrees(self) -> dict[int, int]:
        deg = {n: 0 for n in self.nodes}
        for L in self.links.values():
            deg[L.a] += 1
            deg[L.b] += 1
        return deg

    def junctions(self) -> list[int]:
        return sorted(n for n, d in self.degrees().items() if d >= 3)

    def endpoints(self) -> list[int]:
        return sorted(n for n, d in self.degrees().items() if d == 1)

    def arc_length(self) -> float:
        return sum(L.length() for L in self.links.values())

    def clusters(self) -> list[int]:
        return sorted(set(self.node_cluster.values()))

    def polylines(self) -> list[np.ndarray]:
        return [self.links[l].points for l in sorted(self.links)]

    def check_invariants(self) -> None:
        deg = self.degrees()
        for n, d in deg.items():
            if d == 0:
                raise GraphInvariantError(f"node {n} has no links")
            if d == 2:
                inc = self.incident(n)
                if not (len(inc) == 1 and self.links[inc[0]].a == self.links[inc[0]].b):
                    raise GraphInvariantError(f"node {n} has degree 2 without being a closed loop")
        for l, L in self.links.items():
            if L.a not in self.nodes or L.b not in self.nodes:
                raise GraphInvariantError(f"link {l} references a missing node")
            if not (np.array_equal(L.points[0], self.nodes[L.a]) and np.array_equal(L.points[-1], self.nodes[L.b])):
                raise GraphInvariantError(f"link {l} does not start and end at its nodes")
            if len(L.points) < 2:
                raise GraphInvariantError(f"link {l} has fewer than 2 samples")

    # -- surgery
    def set_node_position(self, n: int, position) -> None:
        self.nodes[n] = np.asarray(position, dtype=float).copy()
        for L in self.links.values():
            if L.a == n:
                L.points[0] = self.nodes[n]
            if L.b == n:
                L.points[-1] = self.nodes[n]

    def split_link(self, lid: int, seg: int, position) -> int:
        """Insert a node on link ``lid`` inside segment ``seg`` at ``position``."""
        L = self.links[lid]
        pos = np.asarray(position, dtype=float)
        n = self.add_node(pos, L.cluster)
        head = np.vstack([L.points[: seg + 1], pos])
        tail = np.vstack([pos, L.points[seg + 1 :]])
        wh = np.concatenate([L.weight[: seg + 1], [1.0]])
        wt = np.concatenate([[1.0], L.weight[seg + 1 :]])
        head, wh = _drop_repeats(head, wh)
        tail, wt = _drop_repeats(tail, wt)
        self.remove_link(lid)
        self.add_link(L.a, n, head, L.cluster, wh)
        self.add_link(n, L.b, tail, L.cluster, wt)
        return n

    def merge_nodes(self, keep: int, drop: int) -> None:
        """Re-point every link end at ``drop`` to ``keep`` and delete ``drop``."""
        for L in self.links.values():
            if L.a == drop:
                L.a = keep
                L.points = _with_end(L.points, self.nodes[keep], start=True)
                L.weight = _fit_weight(L.weight, len(L.points), start=True)
            if L.b == drop:
                L.b = keep
                L.points = _with_end(L.points, self.nodes[keep], start=False)
                L.weight = _fit_weight(L.weight, len(L.points), start=False)
        self.remove_node(drop)

    def contract_degree_two(self) -> int:
        """Join the two links meeting at every degree-2 node; returns how many nodes went."""
        removed = 0
        changed = True
        while changed:
            changed = False
            deg = self.degrees()
            for n in sorted(self.nodes):
                if deg.get(n) != 2:
                    continue
                inc = self.incident(n)
                if len(inc) != 2:
                    continue
                l1, l2 = (self.links[l] for l in inc)
                A = l1 if l1.b == n else l1.reversed()
                B = l2 if l2.a == n else l2.reversed()
                pts = np.vstack([A.points, B.points[1:]])
                w = np.concatenate([A.weight, B.weight[1:]])
                for l in inc:
                    self.remove_link(l)
                self.remove_node(n)
                self.add_link(A.a, B.b, pts, A.cluster, w)
                removed += 1
                changed = True
                break
        return removed

    def prune(self, min_length: float, loop_radius: float = 0.0) -> int:
        """Drop short dangling branches off junctions and short isolated links.

        Self-loops that never leave the ball of radius ``loop_radius`` around
        their node are dropped as well.
        """
        dropped = 0
        changed = True
        while changed:
            changed = False
            deg = self.degrees()
            for l in sorted(self.links):
                L = self.links[l]
                if L.a == L.b:
                    if deg[L.a] > 2 and np.linalg.norm(L.points - self.nodes[L.a], axis=1).max() <= loop_radius:
                        self.remove_link(l)
                        dropped += 1
                        changed = True
                        break
                    continue
                if L.length() >= min_length:
                    continue
                da, db = deg[L.a], deg[L.b]
                if (da == 1 and db >= 3) or (db == 1 and da >= 3) or (da == 1 and db == 1):
                    self.remove_link(l)
                    for n in {L.a, L.b}:
                        if self.degree(n) == 0:
                            self.remove_node(n)
                    dropped += 1
                    changed = True
                    break
            if changed:
                self.contract_degree_two()
        return dropped

    def renumbered(self) -> "DrawingGraph":
        """Copy with nodes and links numbered 0.. in (cluster, creation) order."""
        g = DrawingGraph()
        node_map = {}
        for n in sorted(self.nodes, key=lambda n: (self.node_cluster[n], n)):
            node_map[n] = g.add_node(self.nodes[n], self.node_cluster[n])
        for l in sorted(self.links, key=lambda l: (self.links[l].cluster, l)):
            L = self.links[l]
            g.add_link(node_map[L.a], node_map[L.b], L.points, L.cluster, L.weight)
        return g


def _drop_repeats(points: np.ndarray, weight: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    step = np.linalg.norm(np.diff(points, axis=0), axis=1)
    keep = np.concatenate([[True], step > 0])
    if keep.sum() < 2:
        return points[[0, -1]], weight[[0, -1]]
    # keep the final sample (the node) when it duplicates its predecessor
    if not keep[-1]:
        keep[-1] = True
        keep[np.nonzero(keep[:-1])[0][-1]] = False
    return points[keep], weight[keep]


def _with_end(points: np.ndarray, position: np.ndarray, start: bool) -> np.ndarray:
    if start:
        return points.copy() if np.array_equal(points[0], position) else np.vstack([position, points])
    return points.copy() if np.array_equal(points[-1], position) else np.vstack([points, position])


def _fit_weight(weight: np.ndarray, n: int, start: bool) -> np.ndarray:
    if len(weight) == n:
        return weight
    return np.concatenate([[1.0], weight]) if start else np.concatenate([weight, [1.0]])


class GraphLocator:
    """Closest points on the links of a graph, optionally skipping some vertices.

    Skipped vertices are left out of the k-d tree only; segments next to a
    kept vertex are still tested in full.
    """

    def __init__(self, graph: DrawingGraph, skip: Mapping[int, np.ndarray] | None = None, k: int = 4):
        self.graph = graph
        ids = sorted(graph.links)
        self.link_ids = np.array(ids, dtype=np.int64)
        lens = np.array([len(graph.links[l].points) for l in ids], dtype=np.int64)
        self.start = np.concatenate([[0], np.cumsum(lens)[:-1]]) if ids else np.zeros(0, np.int64)
        self.lens = lens
        self.points = np.concatenate([graph.links[l].points for l in ids]) if ids else np.zeros((0, 3))
        self.owner = np.repeat(np.arange(len(ids)), lens)
        self.local = np.arange(len(self.points)) - np.repeat(self.start, lens)
        keep = np.ones(len(self.points), dtype=bool)
        for pos, l in enumerate(ids):
            if skip is not None and l in skip:
                keep[self.start[pos] : self.start[pos] + lens[pos]] = ~np.asarray(skip[l], dtype=bool)
        self.kept = np.nonzero(keep)[0]
        self.tree = cKDTree(self.points[self.kept]) if len(self.kept) else None
        self.k = min(k, len(self.kept))

    def closest(self, q: np.ndarray):
        """Per query: distance, link id, segment index, closest point (inf / -1 when empty)."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        m = len(q)
        best_d = np.full(m, np.inf)
        best_l = np.full(m, -1)
        best_s = np.full(m, -1)
        best_p = np.full((m, 3), np.nan)
        if self.tree is None:
            return best_d, best_l, best_s, best_p
        _, vid = self.tree.query(q, k=self.k)
        g = self.kept[np.asarray(vid).reshape(m, -1)]
        own = self.owner[g]
        for off in (-1, 0):
            s = np.clip(self.local[g] + off, 0, self.lens[own] - 2)
            gs = self.start[own] + s
            cp, _ = _project_segments(q[:, None, :], self.points[gs], self.points[gs + 1])
            d = np.linalg.norm(cp - q[:, None, :], axis=2)
            c = np.argmin(d, axis=1)
            r = np.arange(m)
            better = d[r, c] < best_d
            best_d[better] = d[r, c][better]
            best_l[better] = self.link_ids[own[r, c]][better]
            best_s[better] = s[r, c][better]
            best_p[better] = cp[r, c][better]
        return best_d, best_l, best_s, best_p


# --------------------------------------------------------------------------
# merging


@dataclass
class MergeSettings:
    """Distances used while merging one cluster."""

    d_merge: float
    min_overlap_run: int = 3
    # end attachment radius and snapping radius for existing nodes
    d_attach: float = 0.0
    # dangling branches shorter than this are dropped
    spur_length: float = 0.0

    @property
    def d_node(self) -> float:
        return max(self.d_attach, 2 * self.d_merge)


def _graph_distances(graph: DrawingGraph, pts: np.ndarray):
    return GraphLocator(graph).closest(pts)


def _attach(graph: DrawingGraph, point: np.ndarray, settings: MergeSettings, cluster: int, skip=None) -> int | None:
    """Node of the graph at (or created at) the closest point to ``point``."""
    loc = GraphLocator(graph, skip)
    d, l, s, cp = loc.closest(point)
    if l[0] < 0:
        return None
    L = graph.links[int(l[0])]
    pos = cp[0]
    da = np.linalg.norm(graph.nodes[L.a] - pos)
    db = np.linalg.norm(graph.nodes[L.b] - pos)
    if min(da, db) <= settings.d_node:
        return L.a if da <= db else L.b
    return graph.split_link(int(l[0]), int(s[0]), pos)


def _merge_curve(
    graph: DrawingGraph, pts: np.ndarray, settings: MergeSettings, cluster: int, weak: np.ndarray | None = None
) -> None:
    # mostly weak stretches may refine existing geometry but not add new links
    def mostly_weak(a, b):
        return weak is not None and float(np.mean(weak[a:b])) > 0.5

    if not graph.links:
        if not mostly_weak(0, len(pts)):
            graph.add_chain(pts, cluster)
        return
    dist, lk, seg, cp = _graph_distances(graph, pts)
    mask = erode_short_runs(dist <= settings.d_merge, settings.min_overlap_run)
    n = len(pts)
    if not mask.any():
        if not mostly_weak(0, n):
            graph.add_chain(pts, cluster)
        return

    # average overlapping samples into the interior vertices they are nearest to
    for r in np.nonzero(mask)[0]:
        L = graph.links[int(lk[r])]
        k = int(seg[r]) + int(np.linalg.norm(cp[r] - L.points[seg[r] + 1]) < np.linalg.norm(cp[r] - L.points[seg[r]]))
        if 0 < k < len(L.points) - 1:
            w = L.weight[k]
            L.points[k] = (L.points[k] * w + pts[r]) / (w + 1)
            L.weight[k] = w + 1

    free = runs_of(~mask)
    for a, b in free:
        if mostly_weak(a, b):
            continue
        seglen = float(np.sum(np.linalg.norm(np.diff(pts[max(a - 1, 0) : min(b + 1, n)], axis=0), axis=1)))
        left = a > 0
        right = b < n
        if left and right:
            if seglen < settings.spur_length or dist[a:b].max() < settings.d_node:
                continue
        elif seglen < settings.spur_length:
            # a short overhang only survives as an extension of an existing end
            anchor = pts[a - 1] if left else pts[b]
            d0, l0, _, p0 = GraphLocator(graph).closest(anchor)
            L0 = graph.links[int(l0[0])]
            ends = [e for e in (L0.a, L0.b) if graph.degree(e) == 1]
            if not any(np.linalg.norm(graph.nodes[e] - p0[0]) <= settings.d_node for e in ends):
                continue
        na = _attach(graph, pts[a - 1], settings, cluster) if left else graph.add_node(pts[a], cluster)
        nb = _attach(graph, pts[b], settings, cluster) if right else graph.add_node(pts[b - 1], cluster)
        body = pts[a:b]
        chain = np.vstack([graph.nodes[na], body, graph.nodes[nb]])
        chain, _ = _drop_repeats(chain, np.ones(len(chain)))
        if na == nb and len(chain) < 3:
            continue
        graph.add_link(na, nb, chain, cluster)


def drop_redundant_links(graph: DrawingGraph, radius: float, fraction: float = 0.8) -> int:
    """Remove links that retrace other links, least supported first.

    Only links whose removal cannot disconnect anything are considered:
    self-loops, dangling branches and one of several parallel links between
    the same two nodes. Such a link goes when at least ``fraction`` of its
    vertices lie within ``radius`` of the rest of the graph.
    """
    dropped = 0
    while True:
        deg = graph.degrees()
        pairs = Counter(frozenset((L.a, L.b)) for L in graph.links.values())
        cands = [
            l
            for l, L in graph.links.items()
            if L.a == L.b or min(deg[L.a], deg[L.b]) == 1 or pairs[frozenset((L.a, L.b))] > 1
        ]
        cands.sort(key=lambda l: (float(np.mean(graph.links[l].weight)), graph.links[l].length(), l))
        for l in cands:
            L = graph.links[l]
            if len(graph.links) < 2:
                return dropped
            pts = L.points[1:-1] if len(L.points) > 2 else L.points
            d, _, _, _ = GraphLocator(graph, {l: np.ones(len(L.points), dtype=bool)}).closest(pts)
            if np.mean(d <= radius) >= fraction:
                graph.remove_link(l)
                for n in {L.a, L.b}:
                    if graph.degree(n) == 0:
                        graph.remove_node(n)
                graph.contract_degree_two()
                dropped += 1
                break
        else:
            return dropped


def attach_ends(graph: DrawingGraph, settings: MergeSettings, cluster: int = 0) -> int:
    """Snap free curve ends onto nearby geometry within ``d_attach``.

    A free end is compared against the rest of the graph, excluding the
    stretch of its own link within a few attachment radii of that end. It
    is merged into a nearby node, or into a new node splitting the nearby
    link, and the dangling link is extended to it.
    """
    if settings.d_attach <= 0:
        return 0
    attached = 0
    for _ in range(4 * max(len(graph.nodes), 1)):
        done = True
        for n in graph.endpoints():
            (lid,) = graph.incident(n)
            L = graph.links[lid]
            s = cumulative_length(L.points)
            from_end = s if L.a == n else s[-1] - s
            skip = {lid: from_end <= 3 * settings.d_attach}
            loc = GraphLocator(graph, skip)
            d, l, sg, cp = loc.closest(graph.nodes[n])
            if l[0] < 0 or d[0] > settings.d_attach:
                continue
            T = graph.links[int(l[0])]
            near = [e for e in (T.a, T.b) if e != n and np.linalg.norm(graph.nodes[e] - cp[0]) <= settings.d_node]
            if near:
                target = min(near, key=lambda e: np.linalg.norm(graph.nodes[e] - cp[0]))
                if graph.degree(target) == 1:
                    graph.set_node_position(target, 0.5 * (graph.nodes[target] + graph.nodes[n]))
            else:
                target = graph.split_link(int(l[0]), int(sg[0]), cp[0])
            graph.merge_nodes(target, n)
            attached += 1
            done = False
            break
        if done:
            break
    return attached


def merge_cluster(
    curves: Sequence[Curve3D | np.ndarray],
    settings: MergeSettings,
    cluster: int = 0,
    check: bool = True,
    weak: Sequence[np.ndarray] | None = None,
) -> DrawingGraph:
    """Merge converged curves one by one, longest first, into a graph component.

    Each incoming curve is compared with the current graph: stretches within
    ``d_merge`` are averaged into it, the remaining stretches become new
    links hanging off junctions where they leave the graph. After every
    curve, free ends are attached, degree-2 nodes contracted and the graph
    invariants checked. ``weak`` flags, per curve, samples whose position is
    poorly conditioned; stretches made mostly of them never start new links.
    """
    pts = [np.asarray(c.points if isinstance(c, Curve3D) else c, dtype=float) for c in curves]
    order = sorted(range(len(pts)), key=lambda i: (-float(np.sum(np.linalg.norm(np.diff(pts[i], axis=0), axis=1))), i))
    graph = DrawingGraph()
    for i in order:
        _merge_curve(graph, pts[i], settings, cluster, None if weak is None else np.asarray(weak[i], dtype=bool))
        attach_ends(graph, settings, cluster)
        graph.contract_degree_two()
        if check:
            graph.check_invariants()
    drop_redundant_links(graph, settings.d_node)
    if settings.spur_length > 0:
        graph.prune(settings.spur_length, 2 * settings.d_node)
    graph.contract_degree_two()
    if check:
        graph.check_invariants()
    return graph


def build_drawing(components: Sequence[DrawingGraph]) -> DrawingGraph:
    """Union of per-cluster graphs with deterministic numbering."""
    out = DrawingGraph()
    for g in components:
        g = g.renumbered()
        node_map = {n: out.add_node(g.nodes[n], g.node_cluster[n]) for n in sorted(g.nodes)}
        for l in sorted(g.links):
            L = g.links[l]
            out.add_link(node_map[L.a], node_map[L.b], L.points, L.cluster, L.weight)
    return out


# --------------------------------------------------------------------------
# serialization


def graph_to_text(graph: DrawingGraph) -> str:
    """JSON text with one node or link per line.

    ``nodes``: ``[id, x, y, z, degree]``; ``links``: ``[id, node_a, node_b,
    n, [x0, y0, z0, x1, ...]]``; plus the cluster id of every node and link.
    """
    g = graph.renumbered()
    deg = g.degrees()
    nodes = [[n, *map(float, g.nodes[n]), deg[n]] for n in sorted(g.nodes)]
    links = [
        [l, g.links[l].a, g.links[l].b, len(g.links[l].points), [float(x) for x in g.links[l].points.ravel()]]
        for l in sorted(g.links)
    ]
    out = ['{"nodes": [']
    out.append(",\n".join("  " + json.dumps(n) for n in nodes))
    out.append('],\n"links": [')
    out.append(",\n".join("  " + json.dumps(l) for l in links))
    out.append("],")
    out.append('"node_cluster": ' + json.dumps([g.node_cluster[n] for n in sorted(g.nodes)]) + ",")
    out.append('"link_cluster": ' + json.dumps([g.links[l].cluster for l in sorted(g.links)]))
    out.append("}")
    return "\n".join(out) + "\n"


def graph_from_text(text: str) -> DrawingGraph:
    data = json.loads(text)
    g = DrawingGraph()
    node_cluster = data.get("node_cluster") or [0] * len(data["nodes"])
    link_cluster = data.get("link_cluster") or [0] * len(data["links"])
    ids = {}
    for (nid, x, y, z, _deg), c in zip(data["nodes"], node_cluster):
        ids[nid] = g.add_node([x, y, z], c)
    for (lid, a, b, n, flat), c in zip(data["links"], link_cluster):
        pts = np.asarray(flat, dtype=float).reshape(-1, 3)
        if len(pts) != n:
            raise ValueError(f"link {lid}: expected {n} samples, found {len(pts)}")
        g.add_link(ids[a], ids[b], pts, c)
    return g


def _link_color(k: int) -> tuple[int, int, int]:
    h = (k * 0.618033988749895) % 1.0
    r, gg, b = colorsys.hsv_to_rgb(h, 0.75, 0.95)
    return int(r * 255), int(gg * 255), int(b * 255)


def graph_to_ply(graph: DrawingGraph) -> str:
    """ASCII PLY: link samples as coloured vertices joined by edges, junctions as white marker vertices."""
    g = graph.renumbered()
    verts, edges = [], []
    for l in sorted(g.links):
        color = _link_color(l)
        base = len(verts)
        P = g.links[l].points
        verts.extend((p, color) for p in P)
        edges.extend((base + k, base + k + 1, color) for k in range(len(P) - 1))
    for n in g.junctions():
        verts.append((g.nodes[n], (255, 255, 255)))
    lines = [
        "ply",
        "format ascii 1.0",
        "comment curve drawing: links as polylines, white vertices mark junctions",
        f"element vertex {len(verts)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element edge {len(edges)}",
        "property int vertex1",
        "property int vertex2",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    lines += [f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}" for p, c in verts]
    lines += [f"{a} {b} {c[0]} {c[1]} {c[2]}" for a, b, c in edges]
    return "\n".join(lines) + "\n"
