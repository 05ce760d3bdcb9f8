"""Slice poses and image <-> patient coordinate transforms.

Pixel convention: continuous (row, col) indices with pixel (0, 0) *centre*
at ``ImagePlane.origin``.  Increasing ``row`` moves along ``row_dir`` by
``pixel_spacing[0]`` mm, increasing ``col`` moves along ``col_dir`` by
``pixel_spacing[1]`` mm.  The plane normal is ``row_dir x col_dir``.

Closed contours are stored counter-clockwise seen from the tip of the plane
normal, i.e. with positive signed area in the (row_dir, col_dir) basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

_ORTHO_TOL = 1e-9
_COPLANAR_TOL = 1e-6


class ContourKind(str, Enum):
    ENDO = "endo"
    EPI = "epi"


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImagePlane:
    """Pose of one 2D slice in patient space (mm)."""

    origin: np.ndarray
    row_dir: np.ndarray
    col_dir: np.ndarray
    pixel_spacing: tuple[float, float] = (1.0, 1.0)
    slice_thickness: float = 6.0
    slice_gap: float = 4.0
    rows: int = 256
    cols: int = 256

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "row_dir", _vec3(self.row_dir))
        object.__setattr__(self, "col_dir", _vec3(self.col_dir))
        sp = tuple(float(s) for s in self.pixel_spacing)
        object.__setattr__(self, "pixel_spacing", sp)
        vals = np.concatenate([self.origin, self.row_dir, self.col_dir])
        if not np.all(np.isfinite(vals)):
            raise ValueError("plane pose must be finite")
        if abs(np.linalg.norm(self.row_dir) - 1) > _ORTHO_TOL:
            raise ValueError("row_dir is not unit length")
        if abs(np.linalg.norm(self.col_dir) - 1) > _ORTHO_TOL:
            raise ValueError("col_dir is not unit length")
        if abs(float(self.row_dir @ self.col_dir)) > _ORTHO_TOL:
            raise ValueError("row_dir and col_dir are not orthogonal")
        if len(sp) != 2 or min(sp) <= 0:
            raise ValueError("pixel_spacing must be two positive values")
        if self.slice_thickness <= 0:
            raise ValueError("slice_thickness must be positive")
        if self.slice_gap < 0:
            raise ValueError("slice_gap must be non-negative")

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.row_dir, self.col_dir)

    @property
    def spacing(self) -> float:
        """Distance between neighbouring slice centres (thickness + gap)."""
        return self.slice_thickness + self.slice_gap

    @classmethod
    def from_normal(cls, origin, normal, row_hint=None, **kwargs) -> "ImagePlane":
        """Build a plane through ``origin`` perpendicular to ``normal``."""
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        if row_hint is None:
            row_hint = (1.0, 0.0, 0.0) if abs(n[0]) < 0.9 else (0.0, 1.0, 0.0)
        r = np.asarray(row_hint, dtype=float)
        r = r - (r @ n) * n
        r /= np.linalg.norm(r)
        c = np.cross(n, r)
        return cls(origin=origin, row_dir=r, col_dir=c, **kwargs)

    def shifted(self, offset_mm: float) -> "ImagePlane":
        """Copy of the plane translated ``offset_mm`` along its normal."""
        return ImagePlane(
            origin=self.origin + offset_mm * self.normal,
            row_dir=self.row_dir,
            col_dir=self.col_dir,
            pixel_spacing=self.pixel_spacing,
            slice_thickness=self.slice_thickness,
            slice_gap=self.slice_gap,
            rows=self.rows,
            cols=self.cols,
        )


def image_to_patient(p, plane: ImagePlane) -> np.ndarray:
    """Map continuous (row, col) pixel indices to patient coordinates.

    Accepts a single ``(row, col)`` pair or an ``(N, 2)`` array.
    """
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite pixel coordinates")
    rows = p[..., 0] * plane.pixel_spacing[0]
    cols = p[..., 1] * plane.pixel_spacing[1]
    return (
        plane.origin
        + rows[..., None] * plane.row_dir
        + cols[..., None] * plane.col_dir
    )


def patient_to_image(q, plane: ImagePlane) -> np.ndarray:
    """Orthogonal projection of patient points onto ``plane``.

    Returns ``(..., 3)`` holding ``(row, col, out_of_plane_mm)``; the last
    entry is the signed distance along ``plane.normal``.
    """
    d = np.asarray(q, dtype=float) - plane.origin
    row = (d @ plane.row_dir) / plane.pixel_spacing[0]
    col = (d @ plane.col_dir) / plane.pixel_spacing[1]
    off = d @ plane.normal
    return np.stack([row, col, off], axis=-1)


def signed_area_2d(xy: np.ndarray) -> float:
    """Shoelace signed area of a closed polygon given as (N, 2)."""
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _check_polyline(points: np.ndarray, closed: bool):
    if closed and len(points) < 3:
        raise ValueError("closed contour needs at least 3 points")
    if len(points) >= 2:
        step = np.diff(points, axis=0)
        if closed:
            step = np.vstack([step, points[0] - points[-1]])
        if np.any(np.all(step == 0, axis=1)):
            raise ValueError("contour has consecutive identical points")


@dataclass(frozen=True)
class Contour2D:
    """Contour in (row, col) pixel coordinates of an unspecified plane."""

    points: np.ndarray
    kind: ContourKind = ContourKind.ENDO
    closed: bool = True

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        _check_polyline(pts, self.closed)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "kind", ContourKind(self.kind))

    def oriented_ccw(self) -> "Contour2D":
        if self.closed and signed_area_2d(self.points) < 0:
            return Contour2D(self.points[::-1], self.kind, self.closed)
        return self


@dataclass(frozen=True)
class Contour3D:
    """Closed contour in patient space lying on ``plane``."""

    points: np.ndarray
    plane: ImagePlane
    kind: ContourKind = ContourKind.ENDO
    closed: bool = True

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        _check_polyline(pts, self.closed)
        off = (pts - self.plane.origin) @ self.plane.normal
        if len(pts) and np.max(np.abs(off)) > _COPLANAR_TOL:
            raise ValueError(
                f"contour leaves its plane by {np.max(np.abs(off)):.3g} mm"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "kind", ContourKind(self.kind))

    @classmethod
    def from_image(cls, c: Contour2D, plane: ImagePlane) -> "Contour3D":
        return cls(image_to_patient(c.points, plane), plane, c.kind, c.closed)

    def in_plane_mm(self) -> np.ndarray:
        """(N, 2) coordinates in mm along (row_dir, col_dir) from the origin."""
        d = self.points - self.plane.origin
        return np.stack([d @ self.plane.row_dir, d @ self.plane.col_dir], axis=1)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def translated(self, dx_mm: float, dy_mm: float) -> "Contour3D":
        """Shift in-plane by ``dx_mm`` along row_dir and ``dy_mm`` along col_dir."""
        t = dx_mm * self.plane.row_dir + dy_mm * self.plane.col_dir
        return Contour3D(self.points + t, self.plane, self.kind, self.closed)

    def oriented_ccw(self) -> "Contour3D":
        if self.closed and signed_area_2d(self.in_plane_mm()) < 0:
            return Contour3D(self.points[::-1], self.plane, self.kind, self.closed)
        return self


@dataclass(frozen=True)
class LandmarkSet:
    """Mitral valve hinge points and RV insertion points.

    ``rv_inserts`` maps a short-axis slice index to its (anterior, inferior)
    pair.  The long-axis planes are optional; when given, every mitral
    point is checked to lie on its plane.
    """

    mv_2ch: np.ndarray
    mv_4ch: np.ndarray
    rv_inserts: dict = field(default_factory=dict)
    plane_2ch: ImagePlane | None = None
    plane_4ch: ImagePlane | None = None

    def __post_init__(self):
        mv2 = np.array(self.mv_2ch, dtype=float).reshape(-1, 3)
        mv4 = np.array(self.mv_4ch, dtype=float).reshape(-1, 3)
        for pts, pl, name in ((mv2, self.plane_2ch, "2CH"), (mv4, self.plane_4ch, "4CH")):
            if pl is not None and len(pts):
                off = np.abs((pts - pl.origin) @ pl.normal)
                if off.max() > _COPLANAR_TOL:
                    raise ValueError(f"{name} mitral point off its plane")
        rv = {}
        for k, pair in self.rv_inserts.items():
            arr = np.array(pair, dtype=float).reshape(2, 3)
            arr.setflags(write=False)
            rv[int(k)] = arr
        mv2.setflags(write=False)
        mv4.setflags(write=False)
        object.__setattr__(self, "mv_2ch", mv2)
        object.__setattr__(self, "mv_4ch", mv4)
        object.__setattr__(self, "rv_inserts", dict(sorted(rv.items())))

    @property
    def mv_points(self) -> np.ndarray:
        return np.vstack([self.mv_2ch, self.mv_4ch])


def _arc_params(points: np.ndarray) -> tuple[np.ndarray, float]:
    seg = np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s, float(s[-1])


def resample_points(points: np.ndarray, n: int, smooth: bool = False) -> np.ndarray:
    """Resample a closed polygon to ``n`` points equally spaced by arc length.

    The first output point is the first input point.  With ``smooth=True``
    the vertices are interpolated by a periodic cubic spline (chord-length
    parameter) before resampling, which follows curved outlines that were
    sampled sparsely.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    pts = np.asarray(points, dtype=float)
    s, perim = _arc_params(pts)
    if perim <= 0:
        raise ValueError("degenerate contour: zero perimeter")
    closed = np.vstack([pts, pts[:1]])
    if smooth:
        from scipy.interpolate import CubicSpline

        spline = CubicSpline(s, closed, bc_type="periodic")
        fine = spline(np.linspace(0.0, perim, 64 * max(n, len(pts)) + 1))
        fs, fperim = _arc_params(fine[:-1])
        targets = np.arange(n) * (fperim / n)
        return np.stack(
            [np.interp(targets, fs, fine[:, k]) for k in range(pts.shape[1])], axis=1
        )
    targets = np.arange(n) * (perim / n)
    return np.stack(
        [np.interp(targets, s, closed[:, k]) for k in range(pts.shape[1])], axis=1
    )


def resample_contour(c, n: int, smooth: bool = False):
    """Equal arc-length resampling of a closed :class:`Contour2D`/``Contour3D``."""
    if not c.closed:
        raise ValueError("only closed contours can be resampled")
    pts = resample_points(c.points, n, smooth=smooth)
    if isinstance(c, Contour3D):
        # snap back onto the plane to kill round-off drift
        d = pts - c.plane.origin
        pts = pts - np.outer(d @ c.plane.normal, c.plane.normal)
        return Contour3D(pts, c.plane, c.kind, True)
    return Contour2D(pts, c.kind, True)


def boundary_centroid(points: np.ndarray) -> np.ndarray:
    """Centroid of a closed polygon's boundary, weighted by edge length."""
    pts = np.asarray(points, dtype=float)
    nxt = np.roll(pts, -1, axis=0)
    w = np.linalg.norm(nxt - pts, axis=1)
    return ((pts + nxt) / 2 * w[:, None]).sum(axis=0) / w.sum()


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Right-handed rotation about ``axis`` by ``angle`` radians."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed proper rotation."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def transform_plane(plane: ImagePlane, R: np.ndarray, t) -> ImagePlane:
    """Apply ``x -> R x + t`` to a plane pose."""
    return ImagePlane(
        origin=R @ plane.origin + np.asarray(t, dtype=float),
        row_dir=R @ plane.row_dir,
        col_dir=R @ plane.col_dir,
        pixel_spacing=plane.pixel_spacing,
        slice_thickness=plane.slice_thickness,
        slice_gap=plane.slice_gap,
        rows=plane.rows,
        cols=plane.cols,
    )


def points_in_polygon(xy: np.ndarray, poly: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Even-odd inclusion test; points within ``tol`` of an edge count as inside."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    poly = np.asarray(poly, dtype=float)
    x, y = xy[:, 0:1], xy[:, 1:2]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    inside = np.count_nonzero(straddle & (x < xcross), axis=1) % 2 == 1
    # distance to each segment for the on-boundary case
    dx, dy = x1 - x0, y1 - y0
    len2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(np.where(len2 > 0, ((x - x0) * dx + (y - y0) * dy) / len2, 0.0), 0, 1)
    dist2 = (x - (x0 + t * dx)) ** 2 + (y - (y0 + t * dy)) ** 2
    on_edge = np.any(dist2 <= tol * tol, axis=1)
    return inside | on_edge


def is_simple_polygon(poly: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed polygon intersect."""
    p = np.asarray(poly, dtype=float)
    n = len(p)
    a, b = p, np.roll(p, -1, axis=0)

    def orient(p1, p2, p3):
        return np.sign(
            (p2[..., 0] - p1[..., 0]) * (p3[..., 1] - p1[..., 1])
            - (p2[..., 1] - p1[..., 1]) * (p3[..., 0] - p1[..., 0])
        )

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    o1 = orient(a[i], b[i], a[j])
    o2 = orient(a[i], b[i], b[j])
    o3 = orient(a[j], b[j], a[i])
    o4 = orient(a[j], b[j], b[i])
    return not np.any((o1 * o2 < 0) & (o3 * o4 < 0))
