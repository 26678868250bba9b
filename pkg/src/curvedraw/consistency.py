"""Sample- and curve-level consistency networks built from shared 2D support.

Two 3D samples on different curves are locally linked in a view when some
edgel of that view supports both. The link weight is the number of views in
which this happens. Curves sharing enough strong local links are linked at
the curve level, and connected components of that graph are the clusters
that get merged into the drawing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .curves import Curve3D


@dataclass
class MLN:
    """Sample-level links between distinct curves.

    ``weights`` is a symmetric sparse integer matrix over all samples of all
    curves (concatenated in curve order); entries within one curve are
    always zero.
    """

    offsets: np.ndarray
    weights: sparse.csr_matrix
    n_views: int = 0

    @property
    def n_curves(self) -> int:
        return len(self.offsets) - 1

    def curve_of(self, rows: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.offsets, rows, side="right") - 1

    def block(self, i: int, j: int) -> sparse.csr_matrix:
        a, b = self.offsets[i], self.offsets[i + 1]
        c, d = self.offsets[j], self.offsets[j + 1]
        return self.weights[a:b, c:d].tocsr()

    def phi(self, i: int, j: int) -> dict[tuple[int, int], int]:
        """Nonzero ``(s, t) -> weight`` entries between curves ``i`` and ``j``."""
        B = self.block(i, j).tocoo()
        return {(int(s), int(t)): int(w) for s, t, w in sorted(zip(B.row, B.col, B.data))}

    def curve_pairs(self) -> list[tuple[int, int]]:
        W = self.weights.tocoo()
        ci, cj = self.curve_of(W.row), self.curve_of(W.col)
        up = ci < cj
        return sorted({(int(a), int(b)) for a, b in zip(ci[up], cj[up])})


@dataclass
class MCCN:
    """Curve-level links: pairs with at least ``tau_sl`` strong local links."""

    n_curves: int
    links: dict[tuple[int, int], int] = field(default_factory=dict)
    strong_counts: dict[tuple[int, int], int] = field(default_factory=dict)
    clusters: list[list[int]] = field(default_factory=list)

    def linked(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.links

    def neighbours(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.links if i in (a, b)})

    def format(self) -> str:
        lines = ["# curve_a curve_b strong_links"]
        lines += [f"{a} {b} {n}" for (a, b), n in sorted(self.links.items())]
        return "\n".join(lines) + "\n"


def build_mln(curves: Sequence[Curve3D]) -> MLN:
    """Count, for every cross-curve sample pair, the views in which they share an edgel.

    Per view an incidence matrix (samples x edgels) is built; its Gram
    matrix marks sample pairs sharing at least one edgel of that view, and
    the binarised Gram matrices are summed over views.
    """
    sizes = np.array([len(c) for c in curves], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n = int(offsets[-1])
    per_view: dict[int, tuple[list[int], list[int]]] = {}
    for ci, c in enumerate(curves):
        base = int(offsets[ci])
        for k, links in enumerate(c.support):
            for v, ids in links.items():
                rows, cols = per_view.setdefault(v, ([], []))
                rows.extend([base + k] * len(ids))
                cols.extend(ids)
    total = sparse.csr_matrix((n, n), dtype=np.int64)
    for v in sorted(per_view):
        rows, cols = per_view[v]
        edgels, col = np.unique(np.asarray(cols, dtype=np.int64), return_inverse=True)
        A = sparse.csr_matrix(
            (np.ones(len(rows), dtype=np.int64), (np.asarray(rows, dtype=np.int64), col)), shape=(n, len(edgels))
        )
        A.data[:] = 1
        S = (A @ A.T).tocsr()
        S.data = (S.data > 0).astype(np.int64)
        total = total + S
    total = total.tocoo()
    owner = np.searchsorted(offsets, np.arange(n), side="right") - 1 if n else np.zeros(0, dtype=int)
    cross = owner[total.row] != owner[total.col] if n else np.zeros(0, dtype=bool)
    W = sparse.csr_matrix(
        (total.data[cross], (total.row[cross], total.col[cross])), shape=(n, n), dtype=np.int64
    )
    W.sum_duplicates()
    W.sort_indices()
    return MLN(offsets, W, len(per_view))


def build_mccn(mln: MLN, tau_eps: int = 3, tau_sl: int = 5) -> MCCN:
    """Link curves with at least ``tau_sl`` sample pairs of weight ``>= tau_eps``; cluster by components."""
    W = mln.weights.tocoo()
    strong = W.data >= tau_eps
    ci, cj = mln.curve_of(W.row[strong]), mln.curve_of(W.col[strong])
    up = ci < cj
    K = mln.n_curves
    counts: dict[tuple[int, int], int] = {}
    if np.any(up):
        keys, num = np.unique(ci[up] * K + cj[up], return_counts=True)
        counts = {(int(k // K), int(k % K)): int(c) for k, c in zip(keys, num)}
    links = {p: c for p, c in counts.items() if c >= tau_sl}
    net = MCCN(K, links, counts)
    net.clusters = _components(K, links)
    return net


def _components(n: int, links) -> list[list[int]]:
    if n == 0:
        return []
    pairs = np.array(sorted(links), dtype=np.int64).reshape(-1, 2)
    G = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(G, directed=False)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def _row_peaks(B: sparse.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Per row: column of the heaviest entry (first on ties) and its weight; -1/0 if empty."""
    n = B.shape[0]
    col = np.full(n, -1, dtype=np.int64)
    w = np.zeros(n, dtype=np.int64)
    for r in range(n):
        a, b = B.indptr[r], B.indptr[r + 1]
        if a < b:
            k = a + int(np.argmax(B.data[a:b]))
            col[r], w[r] = B.indices[k], B.data[k]
    return col, w


def _fill_rows(B: sparse.csr_matrix, g_max: int) -> list[tuple[int, int, int]]:
    """Interpolated (s, t, weight) entries for short unlinked runs of rows flanked by linked rows."""
    col, w = _row_peaks(B)
    linked = col >= 0
    out = []
    n = len(col)
    s = 0
    while s < n:
        if linked[s]:
            s += 1
            continue
        e = s
        while e < n and not linked[e]:
            e += 1
        if s > 0 and e < n and e - s <= g_max:
            left, right = s - 1, e
            weight = int(min(w[left], w[right]))
            for r in range(s, e):
                f = (r - left) / (right - left)
                t = int(np.rint(col[left] + f * (col[right] - col[left])))
                out.append((r, t, weight))
        s = e
    return out


def gap_fill(mln: MLN, mccn: MCCN, g_max: int = 5) -> MLN:
    """Bridge short holes in the sample links of MCCN-linked curve pairs.

    A run of at most ``g_max`` consecutive samples of one curve with no link
    to the partner, flanked on both sides by linked samples, gets links to
    partner samples interpolated between the flanking partners, weighted by
    the smaller flanking weight. Holes are filled along both curves.
    """
    rows, cols, vals = [], [], []
    for i, j in sorted(mccn.links):
        B = mln.block(i, j)
        oi, oj = int(mln.offsets[i]), int(mln.offsets[j])
        for s, t, w in _fill_rows(B, g_max):
            rows.append(oi + s)
            cols.append(oj + t)
            vals.append(w)
        for t, s, w in _fill_rows(B.T.tocsr(), g_max):
            rows.append(oi + s)
            cols.append(oj + t)
            vals.append(w)
    if not rows:
        return MLN(mln.offsets, mln.weights.copy(), mln.n_views)
    n = mln.weights.shape[0]
    r = np.array(rows + cols, dtype=np.int64)
    c = np.array(cols + rows, dtype=np.int64)
    v = np.array(vals + vals, dtype=np.int64)
    # the same pair can be filled from both curves: keep the larger weight,
    # and never lower an existing one
    order = np.lexsort((-v, c, r))
    r, c, v = r[order], c[order], v[order]
    first = np.concatenate([[True], (np.diff(r) != 0) | (np.diff(c) != 0)])
    add = sparse.csr_matrix((v[first], (r[first], c[first])), shape=(n, n))
    W = mln.weights.maximum(add).tocsr()
    W.sort_indices()
    return MLN(mln.offsets, W, mln.n_views)


def link_masks(mln: MLN, mccn: MCCN) -> dict[tuple[int, int], np.ndarray]:
    """For each MCCN link (both orders): which samples of the first curve link into the second."""
    out = {}
    for i, j in sorted(mccn.links):
        B = mln.block(i, j)
        out[(i, j)] = np.diff(B.indptr) > 0
        out[(j, i)] = np.diff(B.T.tocsr().indptr) > 0
    return out
