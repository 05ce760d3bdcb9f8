"""Assemble per-case annotations: label masks -> contours, slice ordering, and
matching of unposed contour groups to short-axis planes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import (
    Contour2D,
    Contour3D,
    ContourKind,
    ImagePlane,
    LandmarkSet,
    image_to_patient,
    patient_to_image,
    points_in_polygon,
    signed_area_2d,
)

BACKGROUND, MYOCARDIUM, CAVITY = 0, 1, 2
FRAMES = ("ED", "ES")
PARALLEL_TOL_DEG = 2.0


@dataclass(frozen=True)
class LabelMask:
    grid: np.ndarray
    plane: ImagePlane

    def __post_init__(self):
        g = np.asarray(self.grid)
        if g.ndim != 2:
            raise ValueError("label grid must be 2D")
        if not np.isin(g, (BACKGROUND, MYOCARDIUM, CAVITY)).all():
            raise ValueError("labels must be background(0), myocardium(1) or cavity(2)")
        g = g.astype(np.uint8)
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)


@dataclass(frozen=True)
class SliceData:
    """One short-axis slice of one frame; ``endo`` is absent on apical caps."""

    plane: ImagePlane
    endo: Contour3D | None
    epi: Contour3D | None


def _pairwise_parallel(planes, tol_deg=PARALLEL_TOL_DEG) -> bool:
    n0 = planes[0].normal
    cos_tol = math.cos(math.radians(tol_deg))
    return all(abs(float(p.normal @ n0)) >= cos_tol - 1e-12 for p in planes)


@dataclass(frozen=True)
class Case:
    case_id: str
    frames: dict
    landmarks: LandmarkSet
    height_cm: float
    weight_kg: float

    def __post_init__(self):
        frames = {}
        for name, slices in self.frames.items():
            if name not in FRAMES:
                raise ValueError(f"unknown frame {name!r}")
            slices = tuple(slices)
            _validate_frame(name, slices, self.landmarks)
            frames[name] = slices
        object.__setattr__(self, "frames", frames)


def _validate_frame(name, slices, landmarks):
    if not slices:
        raise ValueError(f"frame {name} has no slices")
    planes = [s.plane for s in slices]
    if not _pairwise_parallel(planes):
        raise ValueError(f"frame {name}: slices not parallel within {PARALLEL_TOL_DEG} deg")
    n0 = planes[0].normal
    pos = np.array([p.origin @ n0 for p in planes])
    if len(pos) > 1:
        d = np.diff(pos)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError(f"frame {name}: slices are not in stacking order")
        if len(landmarks.mv_points):
            mv = landmarks.mv_points.mean(axis=0) @ n0
            if abs(pos[0] - mv) < abs(pos[-1] - mv):
                raise ValueError(f"frame {name}: slices must run apex -> base")
    for i, s in enumerate(slices):
        if s.endo is not None and s.epi is not None:
            inside = points_in_polygon(s.endo.in_plane_mm(), s.epi.in_plane_mm())
            if not inside.all():
                raise ValueError(f"frame {name} slice {i}: endocardium leaves epicardium")


# -- boundary tracing ---------------------------------------------------------

# Moore neighbourhood, clockwise on screen (row down, col right), from west.
_NBRS = np.array([(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)])
_NBR_INDEX = {tuple(v): i for i, v in enumerate(_NBRS)}


def trace_boundary(region: np.ndarray) -> np.ndarray:
    """Outer boundary of a binary region by Moore-neighbour following.

    Returns (N, 2) pixel-centre (row, col) indices, starting at the topmost,
    leftmost pixel; stops when the trace is back at the start and about to
    repeat its first move (Jacob's criterion).
    """
    reg = np.pad(np.asarray(region, dtype=bool), 1)
    rr, cc = np.nonzero(reg)
    if len(rr) == 0:
        raise ValueError("empty region")
    first = np.lexsort((cc, rr))[0]
    start = (int(rr[first]), int(cc[first]))
    cur, back = start, 0
    out = [start]
    second = None
    for _ in range(8 * reg.size):
        for k in range(1, 9):
            d = (back + k) % 8
            nxt = (cur[0] + _NBRS[d][0], cur[1] + _NBRS[d][1])
            if reg[nxt]:
                break
        else:
            break  # isolated pixel
        if second is None:
            second = nxt
        elif cur == start and nxt == second:
            out.pop()  # closing return to start
            break
        prev = _NBRS[(d - 1) % 8]
        bpos = (cur[0] + prev[0], cur[1] + prev[1])
        back = _NBR_INDEX[(bpos[0] - nxt[0], bpos[1] - nxt[1])]
        out.append(nxt)
        cur = nxt
    return np.asarray(out, dtype=float) - 1.0


def _single_component(region, what):
    lab, n = ndimage.label(region)
    if n == 0:
        raise ValueError(f"no {what}")
    if n > 1:
        raise ValueError(f"ambiguous {what}: {n} components")


def extract_contours(mask: LabelMask) -> tuple[Contour3D, Contour3D]:
    """Endo (cavity outline) and epi (myocardium+cavity outline) in patient space."""
    g = mask.grid
    cavity = g == CAVITY
    if not cavity.any():
        raise ValueError("no cavity")
    _single_component(cavity, "cavity")
    blood_and_wall = (g == CAVITY) | (g == MYOCARDIUM)
    _single_component(blood_and_wall, "myocardium")
    out = []
    for region, kind in ((cavity, ContourKind.ENDO), (blood_and_wall, ContourKind.EPI)):
        pix = trace_boundary(region)
        if len(pix) < 3:
            raise ValueError(f"{kind.value} region too small to outline")
        c2 = Contour2D(pix, kind).oriented_ccw()
        out.append(Contour3D.from_image(c2, mask.plane))
    return out[0], out[1]


def rasterize(poly_rc: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Pixels whose centres lie inside or on the (row, col) polygon."""
    poly = np.asarray(poly_rc, dtype=float)
    out = np.zeros(shape, dtype=bool)
    r0 = max(int(np.floor(poly[:, 0].min())), 0)
    r1 = min(int(np.ceil(poly[:, 0].max())), shape[0] - 1)
    c0 = max(int(np.floor(poly[:, 1].min())), 0)
    c1 = min(int(np.ceil(poly[:, 1].max())), shape[1] - 1)
    if r1 < r0 or c1 < c0:
        return out
    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    pts = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(float)
    inside = points_in_polygon(pts, poly, tol=1e-7)
    out[r0:r1 + 1, c0:c1 + 1] = inside.reshape(rr.shape)
    return out


def mask_from_contours(endo: Contour3D | None, epi: Contour3D, plane: ImagePlane) -> LabelMask:
    """Three-class label mask of one slice from its contours."""
    shape = (plane.rows, plane.cols)
    grid = np.zeros(shape, dtype=np.uint8)
    grid[rasterize(patient_to_image(epi.points, plane)[:, :2], shape)] = MYOCARDIUM
    if endo is not None:
        grid[rasterize(patient_to_image(endo.points, plane)[:, :2], shape)] = CAVITY
    return LabelMask(grid, plane)


# -- slice ordering and matching -------------------------------------------------

def order_slices(planes, mv_centroid=None, apex_direction=None) -> list[int]:
    """Permutation listing ``planes`` from apex to base.

    The apex end is the end farther from ``mv_centroid``; without landmarks
    pass ``apex_direction`` (a vector pointing towards the apex).  Ties keep
    input order.
    """
    planes = list(planes)
    if len(planes) < 2:
        raise ValueError("need at least two planes")
    if not _pairwise_parallel(planes):
        raise ValueError(f"planes are not parallel within {PARALLEL_TOL_DEG} deg")
    n0 = planes[0].normal
    pos = np.array([p.origin @ n0 for p in planes])
    if apex_direction is not None:
        key = -np.array([p.origin @ np.asarray(apex_direction, float) for p in planes])
    elif mv_centroid is not None:
        m = float(np.asarray(mv_centroid, float) @ n0)
        lo, hi = pos.min(), pos.max()
        key = -pos if abs(lo - m) < abs(hi - m) else pos
    else:
        raise ValueError("need mitral valve centroid or an apex direction")
    return [int(i) for i in np.argsort(key, kind="stable")]


@dataclass(frozen=True)
class MatchReport:
    assignment: dict = field(default_factory=dict)   # group index -> plane index
    rejected: bool = False
    reason: str = ""


def _group_area(group, spacing) -> float:
    endo = [c for c in group if c.kind == ContourKind.ENDO]
    pool = endo or list(group)
    sx, sy = spacing
    return max(abs(signed_area_2d(c.points * (sx, sy))) for c in pool)


def match_contours_to_slices(
    groups,
    planes,
    reference_areas=None,
    mv_centroid=None,
    apex_direction=None,
) -> MatchReport:
    """Assign unposed contour groups (one group per unknown slice) to planes.

    Groups are ordered apex -> base by increasing cavity area, planes by
    position (``order_slices`` when landmarks/direction are given, input
    order otherwise).  An order-preserving injective map is chosen by
    dynamic programming, minimising total relative area mismatch against
    ``reference_areas`` (mm^2 per plane).  Without reference areas every
    order-preserving map costs the same and the tie goes to the contiguous
    block flush with the base, i.e. missing slices are assumed apical.
    The match is rejected when the best map skips an interior slice.
    """
    groups = [list(g) for g in groups]
    planes = list(planes)
    if not groups:
        return MatchReport({}, True, "no contours")
    if mv_centroid is not None or apex_direction is not None:
        plane_order = order_slices(planes, mv_centroid, apex_direction)
    else:
        plane_order = list(range(len(planes)))
    m, s = len(groups), len(planes)
    if m > s:
        return MatchReport({}, True, f"{m} contour groups for {s} slices")
    spacing = planes[0].pixel_spacing
    areas = np.array([_group_area(g, spacing) for g in groups])
    group_order = [int(i) for i in np.argsort(areas, kind="stable")]

    if reference_areas is None:
        cost = np.zeros((m, s))
    else:
        ref = np.asarray([reference_areas[i] for i in plane_order], dtype=float)
        scale = max(float(np.nanmax(ref)), 1e-12)
        a = areas[group_order]
        cost = np.abs(a[:, None] - ref[None, :]) / scale
        cost[:, ~np.isfinite(ref)] = 1.0

    gap_penalty = 1e-9
    dp = np.full((m, s), np.inf)
    prev = np.full((m, s), -1, dtype=int)
    dp[0, : s - m + 1] = cost[0, : s - m + 1]
    for j in range(1, m):
        for i in range(j, s - m + j + 1):
            best, arg = np.inf, -1
            for k in range(j - 1, i):
                v = dp[j - 1, k] + gap_penalty * (i - k - 1)
                if v <= best + 1e-15:
                    best, arg = v, k       # later k wins ties -> basal preference
            dp[j, i] = best + cost[j, i]
            prev[j, i] = arg
    last = dp[m - 1]
    end = int(np.flatnonzero(last <= last.min() + 1e-15)[-1])
    path = [end]
    for j in range(m - 1, 0, -1):
        path.append(int(prev[j, path[-1]]))
    path.reverse()

    assignment = {group_order[j]: plane_order[path[j]] for j in range(m)}
    interior_gap = any(b - a > 1 for a, b in zip(path, path[1:]))
    if interior_gap:
        return MatchReport(assignment, True, "alignment skips an interior slice")
    return MatchReport(assignment, False, "")
