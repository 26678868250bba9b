"""Text formats for cameras, 2D curve fragments and 3D curves.

Cameras
    One block per view: a ``# view <id>`` line followed by the three rows of
    the 3x4 projection matrix. A file holding a bare 3x4 matrix is also
    accepted, with the view id taken from a ``cam_<id>.txt`` file name.

2D curve fragments
    ``view <id> <width> <height>`` opens a view, ``curve <id> <n>`` opens a
    curve followed by ``n`` rows ``x y theta``. Edgel ids are assigned
    sequentially per view in file order.

3D curves
    ``curve <id> <primary_view> <n>`` followed by ``n`` rows
    ``x y z reliability support`` where support is ``v:e1,e2;v2:e3`` or ``-``.

Floats are written with ``repr`` so a write/read round trip is lossless.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .curves import Curve2D, Curve3D
from .geometry import Camera


def _num(x: float) -> str:
    return repr(float(x))


def format_cameras(cams: Mapping[int, Camera]) -> str:
    lines = []
    for v in sorted(cams):
        lines.append(f"# view {v}")
        lines += [" ".join(_num(x) for x in row) for row in cams[v].projection]
    return "\n".join(lines) + "\n"


def parse_cameras(text: str, default_view: int | None = None) -> dict[int, Camera]:
    cams: dict[int, Camera] = {}
    view = default_view
    rows: list[list[float]] = []

    def flush():
        if rows:
            if view is None:
                raise ValueError("camera matrix without a view id")
            if len(rows) != 3:
                raise ValueError(f"view {view}: expected 3 matrix rows, found {len(rows)}")
            cams[view] = Camera(np.array(rows), view)

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        m = re.match(r"#\s*view\s+(-?\d+)", line)
        if m:
            flush()
            view, rows = int(m.group(1)), []
            continue
        if line.startswith("#"):
            continue
        vals = line.split()
        if len(vals) != 4:
            raise ValueError(f"line {lineno}: expected 4 numbers, got {len(vals)}")
        rows.append([float(x) for x in vals])
    flush()
    return cams


def read_cameras(path) -> dict[int, Camera]:
    """Cameras from one file, or from every ``cam_<id>.txt`` in a directory."""
    path = Path(path)
    if path.is_dir():
        cams = {}
        for f in sorted(path.glob("cam_*.txt")):
            cams.update(read_cameras(f))
        if not cams:
            raise FileNotFoundError(f"no cam_<id>.txt files in {path}")
        return cams
    m = re.fullmatch(r"cam_(-?\d+)\.txt", path.name)
    return parse_cameras(path.read_text(), int(m.group(1)) if m else None)


def write_cameras(path, cams: Mapping[int, Camera]) -> None:
    Path(path).write_text(format_cameras(cams))


def format_curves2d(curves_by_view: Mapping[int, Sequence[Curve2D]], sizes: Mapping[int, tuple] | None = None) -> str:
    sizes = sizes or {}
    lines = []
    for v in sorted(curves_by_view):
        w, h = sizes.get(v, (0, 0))
        lines.append(f"view {v} {_num(w)} {_num(h)}")
        for c in curves_by_view[v]:
            lines.append(f"curve {c.curve_id} {len(c)}")
            lines += [f"{_num(p[0])} {_num(p[1])} {_num(o)}" for p, o in zip(c.points, c.orientations)]
    return "\n".join(lines) + "\n"


def parse_curves2d(text: str) -> tuple[dict[int, list[Curve2D]], dict[int, tuple[float, float]]]:
    curves: dict[int, list[Curve2D]] = {}
    sizes: dict[int, tuple[float, float]] = {}
    lines = [l.strip() for l in text.splitlines()]
    k = 0
    view = None
    next_edgel = 0
    while k < len(lines):
        line = lines[k]
        k += 1
        if not line or line.startswith("#"):
            continue
        head = line.split()
        if head[0] == "view":
            view = int(head[1])
            if view in curves:
                raise ValueError(f"view {view} appears twice")
            sizes[view] = (float(head[2]), float(head[3])) if len(head) >= 4 else (0.0, 0.0)
            curves[view] = []
            next_edgel = 0
        elif head[0] == "curve":
            if view is None:
                raise ValueError(f"line {k}: curve before any view")
            cid, n = int(head[1]), int(head[2])
            rows = np.array([[float(x) for x in lines[k + r].split()] for r in range(n)]).reshape(n, 3)
            k += n
            ids = np.arange(next_edgel, next_edgel + n)
            next_edgel += n
            curves[view].append(Curve2D(rows[:, :2], rows[:, 2], ids, cid, view))
        else:
            raise ValueError(f"line {k}: unexpected {head[0]!r}")
    return curves, sizes


def read_curves2d(path):
    return parse_curves2d(Path(path).read_text())


def write_curves2d(path, curves_by_view, sizes=None) -> None:
    Path(path).write_text(format_curves2d(curves_by_view, sizes))


def _format_support(links: Mapping[int, Iterable[int]]) -> str:
    parts = [f"{v}:" + ",".join(str(e) for e in sorted(ids)) for v, ids in sorted(links.items()) if ids]
    return ";".join(parts) if parts else "-"


def _parse_support(field: str) -> dict[int, frozenset[int]]:
    if field == "-":
        return {}
    out = {}
    for part in field.split(";"):
        v, ids = part.split(":")
        out[int(v)] = frozenset(int(e) for e in ids.split(",") if e)
    return out


def format_curves3d(curves: Sequence[Curve3D]) -> str:
    lines = []
    for c in curves:
        lines.append(f"curve {c.curve_id} {c.primary_view} {len(c)}")
        for p, r, s in zip(c.points, c.reliability, c.support):
            lines.append(f"{_num(p[0])} {_num(p[1])} {_num(p[2])} {_num(r)} {_format_support(s)}")
    return "\n".join(lines) + "\n"


def parse_curves3d(text: str) -> list[Curve3D]:
    out = []
    lines = [l.strip() for l in text.splitlines()]
    k = 0
    while k < len(lines):
        line = lines[k]
        k += 1
        if not line or line.startswith("#"):
            continue
        head = line.split()
        if head[0] != "curve":
            raise ValueError(f"line {k}: expected 'curve', got {head[0]!r}")
        cid, view, n = int(head[1]), int(head[2]), int(head[3])
        pts, rel, sup = [], [], []
        for r in range(n):
            f = lines[k + r].split()
            pts.append([float(x) for x in f[:3]])
            rel.append(float(f[3]) if len(f) > 3 else 1.0)
            sup.append(_parse_support(f[4]) if len(f) > 4 else {})
        k += n
        out.append(Curve3D(np.array(pts), sup, np.array(rel), cid, view))
    return out


def read_curves3d(path) -> list[Curve3D]:
    return parse_curves3d(Path(path).read_text())


def write_curves3d(path, curves: Sequence[Curve3D]) -> None:
    Path(path).write_text(format_curves3d(curves))


def polylines_to_curves3d(polylines: Sequence[np.ndarray]) -> list[Curve3D]:
    """Wrap bare polylines (e.g. ground truth) as support-free 3D curves."""
    out = []
    for k, p in enumerate(polylines):
        p = np.asarray(p, dtype=float)
        out.append(Curve3D(p, [{} for _ in range(len(p))], np.ones(len(p)), k, -1))
    return out
