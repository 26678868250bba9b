"""Synthetic scenes: analytic 3D curves, a camera ring, and their 2D curve fragments.

Curves are projected into each view and resampled at one edgel per pixel of
image arc length, with orientations taken from the projected analytic
tangent. On top of that the generator can emulate a 2D edge linker (chaining
curves that meet at a shared 3D endpoint), add smooth normal noise, break
curves apart, drop curves from views and add spurious arcs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .curves import Curve2D, cumulative_length
from .errors import InvalidSpec
from .geometry import Camera, look_at_camera

# --------------------------------------------------------------------------
# primitives


class Primitive:
    """A 3D curve parametrised over u in [0, 1]."""

    kind = ""
    closed = False

    def point(self, u) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, u) -> np.ndarray:
        raise NotImplementedError

    def length(self) -> float:
        u = np.linspace(0.0, 1.0, 20001)
        return float(cumulative_length(self.point(u))[-1])

    def to_dict(self) -> dict:
        raise NotImplementedError

    def samples(self, spacing: float) -> np.ndarray:
        """Points at uniform arc-length spacing; closed curves omit the repeated start."""
        u = self._arc_params(spacing)
        pts = self.point(u)
        return pts[:-1] if self.closed else pts

    def _arc_params(self, spacing: float) -> np.ndarray:
        n = max(1, int(round(self.length() / spacing)))
        return np.linspace(0.0, 1.0, n + 1)


@dataclass
class Segment(Primitive):
    start: Sequence[float]
    end: Sequence[float]
    kind = "segment"

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        if np.allclose(self.start, self.end):
            raise InvalidSpec("segment endpoints coincide")

    def point(self, u):
        u = np.asarray(u, dtype=float)[..., None]
        return self.start + u * (self.end - self.start)

    def derivative(self, u):
        return np.broadcast_to(self.end - self.start, np.shape(u) + (3,)).copy()

    def length(self):
        return float(np.linalg.norm(self.end - self.start))

    def to_dict(self):
        return {"type": self.kind, "start": self.start.tolist(), "end": self.end.tolist()}


def _plane_basis(normal, x_axis=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    if x_axis is None:
        x_axis = [1.0, 0.0, 0.0] if abs(n[0]) < 0.9 else [0.0, 1.0, 0.0]
    e1 = np.asarray(x_axis, dtype=float)
    e1 = e1 - n * (e1 @ n)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1), n


@dataclass
class Arc(Primitive):
    center: Sequence[float]
    radius: float
    normal: Sequence[float] = (0.0, 0.0, 1.0)
    start_angle: float = 0.0
    end_angle: float = 2 * math.pi
    kind = "arc"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.radius <= 0 or self.start_angle == self.end_angle:
            raise InvalidSpec("arc needs a positive radius and a nonzero sweep")
        self._e1, self._e2, _ = _plane_basis(self.normal)
        self.closed = math.isclose(abs(self.end_angle - self.start_angle), 2 * math.pi)

    def _angle(self, u):
        return self.start_angle + np.asarray(u, dtype=float) * (self.end_angle - self.start_angle)

    def point(self, u):
        a = self._angle(u)[..., None]
        return self.center + self.radius * (np.cos(a) * self._e1 + np.sin(a) * self._e2)

    def derivative(self, u):
        a = self._angle(u)[..., None]
        return self.radius * (self.end_angle - self.start_angle) * (-np.sin(a) * self._e1 + np.cos(a) * self._e2)

    def length(self):
        return self.radius * abs(self.end_angle - self.start_angle)

    def to_dict(self):
        return {
            "type": self.kind,
            "center": self.center.tolist(),
            "radius": self.radius,
            "normal": list(map(float, self.normal)),
            "start_angle": self.start_angle,
            "end_angle": self.end_angle,
        }


@dataclass
class Helix(Primitive):
    center: Sequence[float]
    radius: float
    pitch: float
    turns: float
    axis: Sequence[float] = (0.0, 0.0, 1.0)
    kind = "helix"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.radius <= 0 or self.turns <= 0:
            raise InvalidSpec("helix needs positive radius and turns")
        self._e1, self._e2, self._n = _plane_basis(self.axis)

    def point(self, u):
        u = np.asarray(u, dtype=float)[..., None]
        a = 2 * math.pi * self.turns * u
        return self.center + self.radius * (np.cos(a) * self._e1 + np.sin(a) * self._e2) + self.pitch * self.turns * u * self._n

    def derivative(self, u):
        u = np.asarray(u, dtype=float)[..., None]
        w = 2 * math.pi * self.turns
        a = w * u
        return self.radius * w * (-np.sin(a) * self._e1 + np.cos(a) * self._e2) + self.pitch * self.turns * self._n

    def length(self):
        return self.turns * math.hypot(2 * math.pi * self.radius, self.pitch)

    def to_dict(self):
        return {
            "type": self.kind,
            "center": self.center.tolist(),
            "radius": self.radius,
            "pitch": self.pitch,
            "turns": self.turns,
            "axis": list(map(float, self.axis)),
        }


@dataclass
class Polyline(Primitive):
    points: Sequence[Sequence[float]]
    kind = "polyline"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(self.points) < 2:
            raise InvalidSpec("polyline needs at least 2 points")
        self._s = cumulative_length(self.points)
        if np.any(np.diff(self._s) <= 0):
            raise InvalidSpec("polyline has repeated points")
        self._s /= self._s[-1]

    def point(self, u):
        u = np.asarray(u, dtype=float)
        return np.stack([np.interp(u, self._s, self.points[:, d]) for d in range(3)], axis=-1)

    def derivative(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        k = np.clip(np.searchsorted(self._s, u, side="right") - 1, 0, len(self.points) - 2)
        d = (self.points[k + 1] - self.points[k]) / (self._s[k + 1] - self._s[k])[:, None]
        return d

    def length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def to_dict(self):
        return {"type": self.kind, "points": self.points.tolist()}


_KINDS = {"segment": Segment, "arc": Arc, "helix": Helix, "polyline": Polyline}


def primitive_from_dict(d: dict) -> Primitive:
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in _KINDS:
        raise InvalidSpec(f"unknown curve type {kind!r}")
    try:
        return _KINDS[kind](**d)
    except TypeError as e:
        raise InvalidSpec(f"bad {kind} parameters: {e}") from None


def cube_edges(size: float = 1.0, origin=(0.0, 0.0, 0.0)) -> list[Segment]:
    o = np.asarray(origin, dtype=float)
    corners = [o + size * np.array(c, dtype=float) for c in np.ndindex(2, 2, 2)]
    edges = []
    for a in range(8):
        for b in range(a + 1, 8):
            if np.sum(np.abs(np.array(np.unravel_index(a, (2, 2, 2))) - np.unravel_index(b, (2, 2, 2)))) == 1:
                edges.append(Segment(corners[a], corners[b]))
    return edges


# --------------------------------------------------------------------------
# scene spec


@dataclass
class RigSpec:
    count: int = 8
    # 0: five times the scene diameter
    radius: float = 0.0
    # None: the centroid of the curves
    look_at: Sequence[float] | None = None
    elevation_deg: float = 30.0
    # alternate cameras are raised and lowered by this much, so no two
    # baselines are parallel to each other or to the ground plane
    elevation_jitter_deg: float = 5.0
    azimuth_offset_deg: float = 10.0
    # 0: fit the scene into 60% of the smaller image side
    focal: float = 0.0
    width: int = 800
    height: int = 600


@dataclass
class SceneSpec:
    curves: list[Primitive] = field(default_factory=list)
    rig: RigSpec = field(default_factory=RigSpec)
    noise: float = 0.0
    # correlation length of the noise along the curve, in pixels
    noise_correlation: float = 8.0
    # probability that a 2D curve is cut in two at a random edgel
    fragmentation: float = 0.0
    # probability that a curve is missing from a view
    dropout: float = 0.0
    outliers: int = 0
    seed: int = 0
    # chain curves meeting at a shared 3D endpoint, as an edge linker would
    link_junctions: bool = True
    # smallest image angle between two branches that still get chained
    link_min_angle_deg: float = 90.0
    edgel_spacing: float = 1.0

    def validate(self) -> None:
        for name in ("fragmentation", "dropout"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InvalidSpec(f"{name} must be a probability, got {p}")
        if self.noise < 0 or self.noise_correlation < 0:
            raise InvalidSpec("noise parameters must be non-negative")
        if self.outliers < 0:
            raise InvalidSpec("outlier count must be non-negative")
        if not self.curves:
            raise InvalidSpec("scene has no curves")
        if self.rig.count < 2:
            raise InvalidSpec("need at least two cameras")
        if self.edgel_spacing <= 0:
            raise InvalidSpec("edgel spacing must be positive")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("curves", "rig")}
        d["curves"] = [c.to_dict() for c in self.curves]
        d["rig"] = asdict(self.rig)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        preset = d.pop("preset", None)
        base = preset_spec(preset) if preset else cls()
        if "curves" in d:
            base.curves = [primitive_from_dict(c) for c in d.pop("curves")]
        if "rig" in d:
            rig = asdict(base.rig)
            unknown = set(d["rig"]) - set(rig)
            if unknown:
                raise InvalidSpec(f"unknown rig keys {sorted(unknown)}")
            rig.update(d.pop("rig"))
            base.rig = RigSpec(**rig)
        known = {f for f in cls.__dataclass_fields__}
        for k, v in d.items():
            if k not in known:
                raise InvalidSpec(f"unknown scene key {k!r}")
            setattr(base, k, v)
        base.validate()
        return base

    @classmethod
    def load(cls, path) -> "SceneSpec":
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidSpec(f"{path}: not valid JSON ({e})") from None
        return cls.from_dict(data)


def preset_spec(name: str, **overrides) -> SceneSpec:
    """Named scenes: ``cube`` (unit wireframe cube) and ``noisy-cube``."""
    if name == "cube":
        spec = SceneSpec(curves=list(cube_edges()))
    elif name == "noisy-cube":
        spec = SceneSpec(curves=list(cube_edges()), noise=1.0, fragmentation=0.2, outliers=2)
    else:
        raise InvalidSpec(f"unknown preset {name!r}")
    for k, v in overrides.items():
        setattr(spec, k, v)
    spec.validate()
    return spec


# --------------------------------------------------------------------------
# generation


@dataclass
class SynthScene:
    spec: SceneSpec
    ground_truth: list[Primitive]
    cameras: dict[int, Camera]
    curves: dict[int, list[Curve2D]]
    sizes: dict[int, tuple[int, int]]
    # (view, curve id) -> indices of the ground-truth curves it was drawn
    # from; empty for outliers
    provenance: dict[tuple[int, int], tuple[int, ...]]

    def outlier_curves(self) -> set[tuple[int, int]]:
        return {k for k, src in self.provenance.items() if not src}

    def diameter(self) -> float:
        return scene_diameter(self.ground_truth)


def scene_diameter(curves: Sequence[Primitive]) -> float:
    pts = np.concatenate([c.point(np.linspace(0, 1, 257)) for c in curves])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def make_rig(spec: SceneSpec) -> dict[int, Camera]:
    rig = spec.rig
    pts = np.concatenate([c.point(np.linspace(0, 1, 257)) for c in spec.curves])
    target = np.asarray(rig.look_at, dtype=float) if rig.look_at is not None else pts.mean(axis=0)
    diam = scene_diameter(spec.curves)
    radius = rig.radius or 5.0 * diam
    focal = rig.focal or 0.6 * min(rig.width, rig.height) * radius / diam
    cams = {}
    for v in range(rig.count):
        az = math.radians(rig.azimuth_offset_deg + 360.0 * v / rig.count)
        el = math.radians(rig.elevation_deg + (rig.elevation_jitter_deg if v % 2 else -rig.elevation_jitter_deg))
        c = target + radius * np.array([math.cos(az) * math.cos(el), math.sin(az) * math.cos(el), math.sin(el)])
        cams[v] = look_at_camera(c, target, focal, rig.width, rig.height, view_id=v)
    return cams


def _project_with_tangent(cam: Camera, X: np.ndarray, dX: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    P = cam.projection
    h = X @ P[:, :3].T + P[:, 3]
    dh = dX @ P[:, :3].T
    uv = h[:, :2] / h[:, 2:3]
    duv = (dh[:, :2] * h[:, 2:3] - h[:, :2] * dh[:, 2:3]) / h[:, 2:3] ** 2
    return uv, duv


@dataclass
class _Piece:
    """One visible stretch of a ground-truth curve in one view."""

    source: int
    uv: np.ndarray
    theta: np.ndarray
    ends: tuple[bytes, bytes] | None  # 3D endpoint keys when the whole curve is visible


def _point_key(p: np.ndarray, scale: float) -> bytes:
    return np.round(p / scale, 6).tobytes()


def _visible_pieces(prim: Primitive, src: int, cam: Camera, w: int, h: int, spacing: float, scale: float) -> list[_Piece]:
    m = 4001
    u = np.linspace(0.0, 1.0, m)
    X = prim.point(u)
    depth = cam.depth(X)
    uv, _ = _project_with_tangent(cam, X, prim.derivative(u))
    vis = (depth > 1e-8) & (uv[:, 0] >= 0) & (uv[:, 0] <= w) & (uv[:, 1] >= 0) & (uv[:, 1] <= h)
    pieces = []
    edges = np.diff(np.concatenate([[0], vis.astype(int), [0]]))
    for a, b in zip(np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]):
        if b - a < 2:
            continue
        s = cumulative_length(uv[a:b])
        n = int(math.floor(s[-1] / spacing))
        if n < 1:
            continue
        targets = np.linspace(0.0, s[-1], n + 1)
        uu = np.interp(targets, s, u[a:b])
        pts, d = _project_with_tangent(cam, prim.point(uu), prim.derivative(uu))
        keep = np.concatenate([[True], np.any(np.diff(pts, axis=0) != 0, axis=1)])
        pts, d = pts[keep], d[keep]
        if len(pts) < 2:
            continue
        full = a == 0 and b == m and not prim.closed
        ends = (_point_key(prim.point(0.0), scale), _point_key(prim.point(1.0), scale)) if full else None
        pieces.append(_Piece(src, pts, np.arctan2(d[:, 1], d[:, 0]), ends))
    return pieces


def _outgoing(piece: _Piece, end: int, reach: int = 3) -> np.ndarray:
    k = min(reach, len(piece.uv) - 1)
    d = piece.uv[k] - piece.uv[0] if end == 0 else piece.uv[-1 - k] - piece.uv[-1]
    return d / np.linalg.norm(d)


def _chain_pieces(pieces: list[_Piece], min_angle: float) -> list[list[tuple[int, bool]]]:
    """Group pieces into chains of (piece index, reversed) joined at shared endpoints.

    At every shared endpoint the pair of branches closest to a straight
    continuation is joined, provided the angle between them is at least
    ``min_angle``; the other branches end there.
    """
    at: dict[bytes, list[tuple[int, int]]] = {}
    for k, p in enumerate(pieces):
        if p.ends is not None:
            for e in (0, 1):
                at.setdefault(p.ends[e], []).append((k, e))
    partner: dict[tuple[int, int], tuple[int, int]] = {}
    for key in sorted(at):
        branches = at[key]
        best, best_angle = None, -1.0
        for x in range(len(branches)):
            for y in range(x + 1, len(branches)):
                if branches[x][0] == branches[y][0]:
                    continue
                c = float(_outgoing(pieces[branches[x][0]], branches[x][1]) @ _outgoing(pieces[branches[y][0]], branches[y][1]))
                ang = math.acos(max(-1.0, min(1.0, c)))
                if ang > best_angle + 1e-12:
                    best, best_angle = (branches[x], branches[y]), ang
        if best is not None and best_angle >= min_angle:
            partner[best[0]] = best[1]
            partner[best[1]] = best[0]

    seen: set[int] = set()
    chains = []

    def walk(k: int, rev: bool) -> list[tuple[int, bool]]:
        chain = []
        while k not in seen:
            seen.add(k)
            chain.append((k, rev))
            exit_end = 0 if rev else 1
            nxt = partner.get((k, exit_end))
            if nxt is None:
                break
            k, rev = nxt[0], nxt[1] == 1
        return chain

    for k in range(len(pieces)):
        if k in seen:
            continue
        if (k, 0) not in partner:
            chains.append(walk(k, False))
        elif (k, 1) not in partner:
            chains.append(walk(k, True))
    for k in range(len(pieces)):
        if k not in seen:
            chains.append(walk(k, False))
    return chains


def _smooth_noise(rng: np.random.Generator, n: int, sigma: float, corr: float) -> np.ndarray:
    """Unit-variance Gaussian noise smoothed over ``corr`` samples, scaled to ``sigma``."""
    if sigma == 0:
        return np.zeros(n)
    if corr <= 0:
        return sigma * rng.standard_normal(n)
    half = int(math.ceil(3 * corr))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / corr) ** 2)
    k /= np.sqrt(np.sum(k**2))
    z = rng.standard_normal(n + 2 * half)
    return sigma * np.convolve(z, k, mode="valid")


def _perturb(uv: np.ndarray, theta: np.ndarray, rng, sigma: float, corr: float, spacing: float):
    if sigma == 0:
        return uv, theta
    d = _smooth_noise(rng, len(uv), sigma, corr)
    normal = np.column_stack([-np.sin(theta), np.cos(theta)])
    slope = np.gradient(d) / spacing if len(d) > 1 else np.zeros_like(d)
    return uv + d[:, None] * normal, theta + np.arctan(slope)


def _outlier_arc(rng, w: int, h: int, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    for _ in range(100):
        c = np.array([rng.uniform(0.1 * w, 0.9 * w), rng.uniform(0.1 * h, 0.9 * h)])
        r = rng.uniform(30.0, 150.0)
        length = rng.uniform(60.0, 250.0)
        sweep = min(length / r, 1.5 * math.pi) * rng.choice([-1.0, 1.0])
        a0 = rng.uniform(0, 2 * math.pi)
        n = max(2, int(abs(sweep) * r / spacing) + 1)
        a = a0 + np.linspace(0.0, sweep, n)
        uv = c + r * np.column_stack([np.cos(a), np.sin(a)])
        inside = (uv[:, 0] >= 0) & (uv[:, 0] <= w) & (uv[:, 1] >= 0) & (uv[:, 1] <= h)
        if inside.all():
            return uv, a + math.pi / 2
    raise RuntimeError("could not place an outlier arc inside the image")


def _view_curves(spec: SceneSpec, cam: Camera, view: int, scale: float):
    rng = np.random.default_rng([spec.seed, view])
    w, h = spec.rig.width, spec.rig.height
    pieces: list[_Piece] = []
    for src, prim in enumerate(spec.curves):
        dropped = spec.dropout > 0 and rng.random() < spec.dropout
        if not dropped:
            pieces.extend(_visible_pieces(prim, src, cam, w, h, spec.edgel_spacing, scale))
    if spec.link_junctions:
        chains = _chain_pieces(pieces, math.radians(spec.link_min_angle_deg))
    else:
        chains = [[(k, False)] for k in range(len(pieces))]

    raw: list[tuple[np.ndarray, np.ndarray, tuple[int, ...]]] = []
    for chain in chains:
        uvs, ths, srcs = [], [], []
        for k, rev in chain:
            p = pieces[k]
            uv, th = (p.uv[::-1], p.theta[::-1]) if rev else (p.uv, p.theta)
            if uvs:
                uv, th = uv[1:], th[1:]
            uvs.append(uv)
            ths.append(th)
            srcs.append(p.source)
        uv, th = np.concatenate(uvs), np.concatenate(ths)
        uv, th = _perturb(uv, th, rng, spec.noise, spec.noise_correlation, spec.edgel_spacing)
        raw.append((uv, th, tuple(srcs)))

    broken = []
    for uv, th, srcs in raw:
        if spec.fragmentation > 0 and len(uv) >= 4 and rng.random() < spec.fragmentation:
            cut = int(rng.integers(2, len(uv) - 1))
            broken.append((uv[:cut], th[:cut], srcs))
            broken.append((uv[cut:], th[cut:], srcs))
        else:
            broken.append((uv, th, srcs))
    for _ in range(spec.outliers):
        uv, th = _outlier_arc(rng, w, h, spec.edgel_spacing)
        uv, th = _perturb(uv, th, rng, spec.noise, spec.noise_correlation, spec.edgel_spacing)
        broken.append((uv, th, ()))

    curves, prov = [], {}
    next_edgel = 0
    for uv, th, srcs in broken:
        if len(uv) < 2:
            continue
        cid = len(curves)
        curves.append(Curve2D(uv, th, np.arange(next_edgel, next_edgel + len(uv)), cid, view))
        next_edgel += len(uv)
        prov[(view, cid)] = srcs
    return curves, prov


def generate_scene(spec: SceneSpec) -> SynthScene:
    """Cameras, per-view 2D curves and their provenance for a scene spec."""
    spec.validate()
    cams = make_rig(spec)
    scale = scene_diameter(spec.curves)
    curves, prov, sizes = {}, {}, {}
    for v in sorted(cams):
        curves[v], p = _view_curves(spec, cams[v], v, scale)
        prov.update(p)
        sizes[v] = (spec.rig.width, spec.rig.height)
    return SynthScene(spec, list(spec.curves), cams, curves, sizes, prov)


def ground_truth_samples(curves: Sequence[Primitive], spacing: float) -> list[np.ndarray]:
    """Dense uniform arc-length samples of every ground-truth curve."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    return [c.samples(spacing) for c in curves]
