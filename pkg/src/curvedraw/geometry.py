"""Projective cameras, epipolar lines and two-view triangulation.

Cameras are kept as raw 3x4 projection matrices. Everything here is pure and
works on plain numpy arrays; the ``*_many`` variants are the vectorised forms
used by the pipeline's hot loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateCameraPair, DepthTooSmall, RaysNearParallel

EPS_DEPTH = 1e-8
EPS_ANGLE = math.radians(0.5)


@dataclass(frozen=True, eq=False)
class Camera:
    """A finite projective camera mapping world points to pixels."""

    projection: np.ndarray
    view_id: int = 0

    def __post_init__(self) -> None:
        P = np.array(self.projection, dtype=float)
        if P.shape != (3, 4):
            raise ValueError(f"projection must be 3x4, got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ValueError("projection has non-finite entries")
        M = P[:, :3]
        if abs(np.linalg.det(M)) <= 1e-12 * max(np.linalg.norm(M), 1e-300) ** 3:
            raise ValueError("left 3x3 block is singular; camera is not finite")
        P.setflags(write=False)
        object.__setattr__(self, "projection", P)

    @cached_property
    def center(self) -> np.ndarray:
        M = self.projection[:, :3]
        return -np.linalg.solve(M, self.projection[:, 3])

    @cached_property
    def _depth_scale(self) -> tuple[float, np.ndarray]:
        M = self.projection[:, :3]
        sign = 1.0 if np.linalg.det(M) > 0 else -1.0
        return sign / np.linalg.norm(M[2]), M

    def depth(self, points: np.ndarray) -> np.ndarray:
        """Signed depth of world points along the principal axis."""
        X = np.asarray(points, dtype=float)
        scale, _ = self._depth_scale
        w = X @ self.projection[2, :3] + self.projection[2, 3]
        return w * scale

    def project(self, point) -> np.ndarray:
        X = np.asarray(point, dtype=float).reshape(3)
        if self.depth(X) <= EPS_DEPTH:
            raise DepthTooSmall(f"point {X.tolist()} has depth <= {EPS_DEPTH}")
        x = self.projection @ np.append(X, 1.0)
        return x[:2] / x[2]

    def project_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project an (n, 3) array.

        Returns pixel coordinates and a validity mask; rows with depth at or
        below ``EPS_DEPTH`` are NaN and marked invalid instead of raising.
        """
        X = np.asarray(points, dtype=float).reshape(-1, 3)
        x = X @ self.projection[:, :3].T + self.projection[:, 3]
        valid = self.depth(X) > EPS_DEPTH
        uv = np.full((len(X), 2), np.nan)
        uv[valid] = x[valid, :2] / x[valid, 2:3]
        return uv, valid

    def ray_directions(self, pixels: np.ndarray) -> np.ndarray:
        """Unit world-space directions of the rays through ``pixels``."""
        p = np.atleast_2d(np.asarray(pixels, dtype=float))
        h = np.column_stack([p, np.ones(len(p))])
        d = np.linalg.solve(self.projection[:, :3], h.T).T
        # orient towards positive depth
        scale, _ = self._depth_scale
        d *= np.sign(scale * (d @ self.projection[2, :3]))[:, None]
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True)
class EpipolarLine:
    """Homogeneous image line ``a x + b y + c = 0`` with ``a^2 + b^2 = 1``."""

    coefficients: tuple[float, float, float]

    @classmethod
    def from_homogeneous(cls, line) -> "EpipolarLine":
        return cls(tuple(float(v) for v in _normalize_lines(np.asarray(line)[None])[0]))

    @property
    def normal(self) -> np.ndarray:
        return np.array(self.coefficients[:2])

    @property
    def direction(self) -> np.ndarray:
        a, b, _ = self.coefficients
        return np.array([-b, a])

    def signed_distance(self, points) -> np.ndarray:
        a, b, c = self.coefficients
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return p[:, 0] * a + p[:, 1] * b + c


def _normalize_lines(lines: np.ndarray) -> np.ndarray:
    n = np.hypot(lines[:, 0], lines[:, 1])
    return lines / n[:, None]


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def epipole(cam_src: Camera, cam_dst: Camera) -> np.ndarray:
    """Homogeneous image of ``cam_src``'s centre in ``cam_dst``."""
    C = np.append(cam_src.center, 1.0)
    e = cam_dst.projection @ C
    scale = np.linalg.norm(cam_dst.projection) * np.linalg.norm(C)
    if np.linalg.norm(e) <= 1e-12 * scale:
        raise DegenerateCameraPair("camera centres coincide")
    return e


def fundamental_matrix(cam_src: Camera, cam_dst: Camera) -> np.ndarray:
    """F such that ``F @ x_src`` is the epipolar line in ``cam_dst``."""
    e = epipole(cam_src, cam_dst)
    F = _skew(e) @ cam_dst.projection @ np.linalg.pinv(cam_src.projection)
    return F / np.linalg.norm(F)


def _line_through_epipole(e: np.ndarray) -> np.ndarray:
    if abs(e[2]) > 1e-12 * np.linalg.norm(e):
        return np.array([0.0, 1.0, -e[1] / e[2]])
    return np.array([-e[1], e[0], 0.0])


def epipolar_lines(cam_src: Camera, cam_dst: Camera, points_src: np.ndarray) -> np.ndarray:
    """Normalised epipolar lines in ``cam_dst`` for an (n, 2) array of source pixels."""
    F = fundamental_matrix(cam_src, cam_dst)
    p = np.atleast_2d(np.asarray(points_src, dtype=float))
    lines = np.column_stack([p, np.ones(len(p))]) @ F.T
    norms = np.hypot(lines[:, 0], lines[:, 1])
    bad = norms <= 1e-12 * np.linalg.norm(lines, axis=1).clip(min=1e-300)
    bad |= norms == 0
    if np.any(bad):
        lines[bad] = _line_through_epipole(epipole(cam_src, cam_dst))
        norms = np.hypot(lines[:, 0], lines[:, 1])
    return lines / norms[:, None]


def epipolar_line(cam_src: Camera, cam_dst: Camera, point_src) -> EpipolarLine:
    """Epipolar line in ``cam_dst`` of a pixel in ``cam_src``.

    Built from two points of the back-projected ray (the source centre and a
    second point), which is better conditioned than going through F. At the
    source epipole the ray meets the destination centre and any line through
    the destination epipole is returned.
    """
    e = epipole(cam_src, cam_dst)
    x = np.append(np.asarray(point_src, dtype=float).reshape(2), 1.0)
    X = np.linalg.pinv(cam_src.projection) @ x
    v = cam_dst.projection @ X
    line = np.cross(e, v)
    if np.hypot(line[0], line[1]) <= 1e-12 * np.linalg.norm(e) * np.linalg.norm(v):
        line = _line_through_epipole(e)
    return EpipolarLine.from_homogeneous(line)


def _dlt_rows(P: np.ndarray, p: np.ndarray) -> np.ndarray:
    # rows u*P3 - P1 and v*P3 - P2 for each of n points -> (n, 2, 4)
    return np.stack([p[:, :1] * P[2] - P[0], p[:, 1:2] * P[2] - P[1]], axis=1)


def triangulation_angles(cam1: Camera, cam2: Camera, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Acute angle (radians) between the two back-projected rays, per point."""
    d1 = cam1.ray_directions(p1)
    d2 = cam2.ray_directions(p2)
    c = np.abs(np.sum(d1 * d2, axis=1)).clip(max=1.0)
    return np.arccos(c)


def triangulate_many(
    cam1: Camera, cam2: Camera, p1: np.ndarray, p2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Linear least-squares triangulation of corresponding pixel arrays.

    Returns ``(points, ok)``; ``ok`` is False where the rays are closer to
    parallel than ``EPS_ANGLE``. Those rows still hold the DLT solution.
    """
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    p2 = np.atleast_2d(np.asarray(p2, dtype=float))
    if np.linalg.norm(cam1.center - cam2.center) <= 1e-12 * max(
        np.linalg.norm(cam1.center), np.linalg.norm(cam2.center), 1.0
    ):
        ok = np.zeros(len(p1), dtype=bool)
        return np.full((len(p1), 3), np.nan), ok
    A = np.concatenate([_dlt_rows(cam1.projection, p1), _dlt_rows(cam2.projection, p2)], axis=1)
    A /= np.linalg.norm(A, axis=2, keepdims=True)
    _, _, vt = np.linalg.svd(A)
    X = vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = X[:, :3] / X[:, 3:4]
    ok = triangulation_angles(cam1, cam2, p1, p2) >= EPS_ANGLE
    return pts, ok & np.all(np.isfinite(pts), axis=1)


def triangulate(cam1: Camera, cam2: Camera, p1, p2) -> np.ndarray:
    pts, ok = triangulate_many(cam1, cam2, np.reshape(p1, (1, 2)), np.reshape(p2, (1, 2)))
    if not ok[0]:
        raise RaysNearParallel("triangulation angle below %.3g deg" % math.degrees(EPS_ANGLE))
    return pts[0]


def tangency_weight(curve_tangent, epi_line: EpipolarLine) -> float:
    """sin^2 of the angle between a curve tangent and an epipolar line.

    0 when the curve runs along the epipolar line (triangulation there is
    unreliable), 1 when it crosses it at a right angle.
    """
    t = np.asarray(curve_tangent, dtype=float).reshape(2)
    if abs(np.linalg.norm(t) - 1.0) > 1e-6:
        raise ValueError("tangent must be a unit vector")
    return float(min(1.0, float(np.dot(t, epi_line.normal)) ** 2))


def tangency_weights(tangents: np.ndarray, lines: np.ndarray) -> np.ndarray:
    """Vectorised :func:`tangency_weight` for (n, 2) tangents and (n, 3) normalised lines."""
    return np.minimum(1.0, np.sum(tangents * lines[:, :2], axis=1) ** 2)


def look_at_camera(
    center, target, focal: float, width: int, height: int, up=(0.0, 0.0, 1.0), view_id: int = 0
) -> Camera:
    """Pinhole camera at ``center`` looking at ``target`` (image y axis points down)."""
    c = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - c
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    K = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    P = K @ np.column_stack([R, -R @ c])
    return Camera(P, view_id)
