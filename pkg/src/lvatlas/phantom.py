"""Synthetic LV phantoms with closed-form ground truth.

Each phantom is a pair of concentric truncated ellipsoids (endo inside epi)
cut by a basal plane.  Local frame: origin at the centre of the basal cut,
+z from base to apex, +x towards the septum.  The acquisition is a stack
of short-axis planes perpendicular to the true axis, one every
``thickness + gap`` mm starting half a spacing below the base.

Breath-hold misregistration is drawn per physical slice (shared by ED and
ES).  The most apical slice of each frame is the reference breath-hold and
stays unshifted: with short-axis contours and mitral points alone, a shift
profile that varies linearly along the axis is indistinguishable from an
axis tilt, so shifts are only defined relative to a reference slice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import Case, SliceData
from .geometry import Contour3D, ContourKind, ImagePlane, LandmarkSet, rotation_matrix
from .measures import MYOCARDIAL_DENSITY_G_PER_ML

CONTOUR_POINTS = 60
LATENT_NAMES = ("wall_thickness", "size", "length", "ellipticity", "contraction", "long_contraction")


@dataclass(frozen=True)
class PhantomSpec:
    endo_axes: tuple[float, float, float] = (26.0, 24.0, 112.0)
    wall_base: float = 8.5
    wall_apex: float = 7.0
    truncation: float = 0.55
    es_radial: float = 0.72
    es_longitudinal: float = 0.88
    rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    translation: tuple = (0.0, 0.0, 0.0)
    noise_mm: float = 0.5
    shift_mm: float = 0.0
    n_slices: int | None = None
    slice_thickness: float = 6.0
    slice_gap: float = 4.0
    pixel_spacing: float = 1.5
    matrix: int = 160
    rv_angle_deg: float = 40.0
    height_cm: float = 170.0
    weight_kg: float = 75.0
    seed: int = 0

    def __post_init__(self):
        a, b, c = self.endo_axes
        if min(a, b, c) <= 0 or min(self.wall_base, self.wall_apex) <= 0:
            raise ValueError("semi-axes and wall thickness must be positive")
        if min(a, b) <= self.wall_base or c <= self.wall_apex:
            raise ValueError("semi-axes must exceed the wall thickness")
        if not (0.0 <= self.truncation < 1.0):
            raise ValueError("truncation must be in [0, 1)")
        for f in (self.es_radial, self.es_longitudinal):
            if not (0.0 < f <= 1.0):
                raise ValueError("contraction factors must lie in (0, 1]")
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be a proper 3x3 rotation")

    @property
    def spacing(self) -> float:
        return self.slice_thickness + self.slice_gap


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipsoid centred at local depth ``center_depth`` on the axis, cut at depth 0."""

    a: float
    b: float
    c: float
    center_depth: float

    @property
    def apex_depth(self) -> float:
        return self.center_depth + self.c

    def section(self, depth):
        """In-plane semi-axes at ``depth`` (0 where the plane misses)."""
        w = np.asarray(depth, dtype=float) - self.center_depth
        f = np.sqrt(np.clip(1 - (w / self.c) ** 2, 0, None))
        f = np.where(np.asarray(depth) < 0, 0.0, f)
        return self.a * f, self.b * f

    def truncated_volume_mm3(self) -> float:
        lo = max(-self.c, -self.center_depth)
        hi = self.c
        return math.pi * self.a * self.b * ((hi - lo) - (hi ** 3 - lo ** 3) / (3 * self.c ** 2))


def ellipse_radius(alpha, beta, phi):
    """Polar radius of an axis-aligned ellipse at angle ``phi``."""
    return 1.0 / np.sqrt((np.cos(phi) / alpha) ** 2 + (np.sin(phi) / beta) ** 2)


@dataclass(frozen=True)
class PhantomTruth:
    edv_ml: float
    esv_ml: float
    myo_volume_ml: float
    mass_g: float
    lvef_pct: float
    base_center: tuple
    long_axis: tuple
    septal_ref: tuple
    shifts_mm: tuple             # per ED slice, apex -> base, (dx, dy)
    es_shifts_mm: tuple          # per ES slice, apex -> base
    latent: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)


def frame_shapes(spec: PhantomSpec) -> dict:
    """Endo/epi ellipsoids for ED and ES in the local frame."""
    a, b, c = spec.endo_axes
    base_w = c * (2 * spec.truncation - 1)    # cut position relative to the centre
    center = -base_w
    ed_endo = Ellipsoid(a, b, c, center)
    ed_epi = Ellipsoid(a + spec.wall_base, b + spec.wall_base, c + spec.wall_apex, center)
    fr, fl = spec.es_radial, spec.es_longitudinal
    es_endo = Ellipsoid(fr * a, fr * b, fl * c, fl * center)
    ab, ab_e = a * b, ed_epi.a * ed_epi.b
    g = math.sqrt((fr * fr * ab + (ab_e - ab) / fl) / ab_e)
    es_epi = Ellipsoid(g * ed_epi.a, g * ed_epi.b, fl * ed_epi.c, fl * center)
    return {"ED": (ed_endo, ed_epi), "ES": (es_endo, es_epi)}


def generate_truth(spec: PhantomSpec, latent=None, labels=None) -> PhantomTruth:
    """Closed-form volumes of the truncated ellipsoid shell (shifts filled by slicing)."""
    shapes = frame_shapes(spec)
    edv = shapes["ED"][0].truncated_volume_mm3() / 1000.0
    esv = shapes["ES"][0].truncated_volume_mm3() / 1000.0
    myo = shapes["ED"][1].truncated_volume_mm3() / 1000.0 - edv
    R = np.asarray(spec.rotation, dtype=float)
    return PhantomTruth(
        edv_ml=edv,
        esv_ml=esv,
        myo_volume_ml=myo,
        mass_g=myo * MYOCARDIAL_DENSITY_G_PER_ML,
        lvef_pct=(edv - esv) / edv * 100.0,
        base_center=tuple(float(v) for v in spec.translation),
        long_axis=tuple(float(v) for v in R[:, 2]),
        septal_ref=tuple(float(v) for v in R[:, 0]),
        shifts_mm=(),
        es_shifts_mm=(),
        latent=dict(latent or {}),
        labels=dict(labels or {}),
    )


def _slice_depths(spec: PhantomSpec, epi_apex_depth: float) -> np.ndarray:
    depths = spec.spacing / 2 + spec.spacing * np.arange(200)
    depths = depths[depths < epi_apex_depth]
    if spec.n_slices is not None:
        if len(depths) < spec.n_slices:
            raise ValueError(f"only {len(depths)} slices intersect the phantom")
        depths = depths[: spec.n_slices]
    return depths


def _plane(spec, R, T, depth) -> ImagePlane:
    half = (spec.matrix - 1) / 2 * spec.pixel_spacing
    center = T + R @ np.array([0.0, 0.0, depth])
    return ImagePlane(
        origin=center - half * R[:, 0] - half * R[:, 1],
        row_dir=R[:, 0],
        col_dir=R[:, 1],
        pixel_spacing=(spec.pixel_spacing, spec.pixel_spacing),
        slice_thickness=spec.slice_thickness,
        slice_gap=spec.slice_gap,
        rows=spec.matrix,
        cols=spec.matrix,
    )


def _ring(R, T, depth, alpha, beta, eps, shift, kind, plane):
    phi = 2 * np.pi * np.arange(CONTOUR_POINTS) / CONTOUR_POINTS
    rho = ellipse_radius(alpha, beta, phi) + eps
    local = np.stack([rho * np.cos(phi) + shift[0], rho * np.sin(phi) + shift[1],
                      np.full_like(phi, depth)], axis=1)
    return Contour3D(local @ R.T + T, plane, kind)


def slice_phantom(truth: PhantomTruth, spec: PhantomSpec, noise: bool = True,
                  shifts: bool = True, case_id: str = "phantom") -> tuple[Case, PhantomTruth]:
    """Cut the phantom into short-axis contours and landmarks.

    Returns the case and a copy of ``truth`` with the injected shifts.
    The random stream is drawn identically whether or not noise/shifts are
    applied, so a clean twin of a noisy case shares every other detail.
    """
    rng = np.random.default_rng(spec.seed)
    R = np.asarray(spec.rotation, dtype=float)
    T = np.asarray(spec.translation, dtype=float)
    shapes = frame_shapes(spec)
    ed_depths = _slice_depths(spec, shapes["ED"][1].apex_depth)
    if len(ed_depths) < 3:
        raise ValueError("fewer than 3 slices intersect the phantom")
    drawn = rng.uniform(-1.0, 1.0, size=(len(ed_depths), 2)) * spec.shift_mm
    slice_shift = drawn if shifts else np.zeros_like(drawn)
    sigma = spec.noise_mm if noise else 0.0

    frames, frame_shifts = {}, {}
    for name in ("ED", "ES"):
        endo_e, epi_e = shapes[name]
        keep = [i for i, d in enumerate(ed_depths) if epi_e.section(d)[0] > 0]
        if len(keep) < 3:
            raise ValueError(f"fewer than 3 slices intersect the {name} phantom")
        apical = keep[-1]
        slices, used = [], []
        for i in reversed(keep):                      # apex -> base
            d = ed_depths[i]
            sh = np.zeros(2) if i == apical else slice_shift[i]
            plane = _plane(spec, R, T, d)
            ea, eb = endo_e.section(d)
            pa, pb = epi_e.section(d)
            eps = rng.normal(size=(2, CONTOUR_POINTS)) * sigma   # drawn even when sigma == 0
            epi = _ring(R, T, d, pa, pb, eps[1], sh, ContourKind.EPI, plane)
            endo = None
            if ea > 0:
                endo = _ring(R, T, d, ea, eb, eps[0], sh, ContourKind.ENDO, plane)
            slices.append(SliceData(plane, endo, epi))
            used.append((float(sh[0]), float(sh[1])))
        frames[name] = slices
        frame_shifts[name] = tuple(used)

    landmarks = _landmarks(spec, R, T, shapes["ED"], ed_depths, slice_shift, frames["ED"])
    case = Case(case_id, frames, landmarks, spec.height_cm, spec.weight_kg)
    truth = replace(truth, shifts_mm=frame_shifts["ED"], es_shifts_mm=frame_shifts["ES"])
    return case, truth


def _landmarks(spec, R, T, ed_shapes, depths, slice_shift, ed_slices):
    endo, epi = ed_shapes
    a0, b0 = endo.section(0.0)

    def lax_plane(phi):
        in_plane = np.array([math.cos(phi), math.sin(phi), 0.0])
        return ImagePlane(
            origin=T, row_dir=R @ np.array([0.0, 0.0, 1.0]), col_dir=R @ in_plane,
            pixel_spacing=(spec.pixel_spacing, spec.pixel_spacing),
            slice_thickness=spec.slice_thickness, slice_gap=0.0,
            rows=spec.matrix, cols=spec.matrix,
        )

    def rim(phi):
        r = float(ellipse_radius(a0, b0, phi))
        return T + R @ np.array([r * math.cos(phi), r * math.sin(phi), 0.0])

    phi2, phi4 = math.radians(90.0), math.radians(0.0)
    mv2 = [rim(phi2), rim(phi2 + math.pi)]
    mv4 = [rim(phi4), rim(phi4 + math.pi)]

    # RV inserts on up to five central ED slices carrying a cavity.
    with_cavity = [k for k, s in enumerate(ed_slices) if s.endo is not None]
    mid = len(with_cavity) // 2
    chosen = with_cavity[max(mid - 2, 0): mid + 3]
    rv = {}
    th = math.radians(spec.rv_angle_deg)
    n_ed = len(ed_slices)
    for k in chosen:
        depth_index = n_ed - 1 - k              # apex->base index back to acquisition order
        d = depths[depth_index]
        pa, pb = epi.section(d)
        sh = slice_shift[depth_index] if k != 0 else np.zeros(2)
        pts = []
        for ang in (th, -th):
            r = float(ellipse_radius(pa, pb, ang))
            local = np.array([r * math.cos(ang) + sh[0], r * math.sin(ang) + sh[1], d])
            pts.append(R @ local + T)
        rv[k] = pts
    return LandmarkSet(mv2, mv4, rv, plane_2ch=lax_plane(phi2), plane_4ch=lax_plane(phi4))


def make_phantom(spec: PhantomSpec, case_id: str = "phantom", noise: bool = True,
                 shifts: bool = True, latent=None, labels=None):
    truth = generate_truth(spec, latent, labels)
    return slice_phantom(truth, spec, noise=noise, shifts=shifts, case_id=case_id)


def cylinder_case(radius=20.0, length=80.0, spacing=10.0, n_points=CONTOUR_POINTS,
                  wall=8.0) -> Case:
    """Straight cylinder stack (one slice per ``spacing`` along ``length``)."""
    n = int(round(length / spacing))
    phi = 2 * np.pi * np.arange(n_points) / n_points
    slices = []
    for k in range(n):
        depth = length - spacing * (k + 0.5)           # apex -> base
        plane = ImagePlane.from_normal((0.0, 0.0, depth), (0.0, 0.0, 1.0), row_hint=(1, 0, 0),
                                       slice_thickness=spacing * 0.6,
                                       slice_gap=spacing * 0.4)
        ring = lambda r: np.stack([r * np.cos(phi), r * np.sin(phi), np.full_like(phi, depth)], 1)
        slices.append(SliceData(plane, Contour3D(ring(radius), plane, ContourKind.ENDO),
                                Contour3D(ring(radius + wall), plane, ContourKind.EPI)))
    mv = [(radius, 0, 0), (-radius, 0, 0)]
    lm = LandmarkSet(mv, [(0, radius, 0), (0, -radius, 0)], {})
    es = [SliceData(s.plane, s.endo, s.epi) for s in slices]
    return Case("cylinder", {"ED": slices, "ES": es}, lm, 170.0, 75.0)


# -- cohorts -------------------------------------------------------------------------

@dataclass(frozen=True)
class Effect:
    """Binary factor drawn from a logistic model on one standardised latent."""

    factor: str
    target: str = "wall_thickness"
    slope: float = 0.0


@dataclass(frozen=True)
class CohortRanges:
    """Nominal values and per-unit-latent spreads of the cohort parameters."""

    a: float = 26.0
    size_sd: float = 0.08            # relative
    ellipticity: float = 0.92
    ellipticity_sd: float = 0.03
    c: float = 112.0
    length_sd: float = 6.0
    wall_base: float = 8.5
    wall_sd: float = 1.2
    wall_apex_ratio: float = 0.82
    es_radial: float = 0.72
    es_radial_sd: float = 0.03
    es_longitudinal: float = 0.88
    es_longitudinal_sd: float = 0.02
    tilt_deg: float = 15.0
    translation_mm: float = 20.0
    noise_mm: float = 0.5
    shift_mm: float = 0.0


@dataclass(frozen=True)
class CohortTable:
    case_ids: tuple
    labels: dict                     # factor -> tuple of 0/1


def case_spec(index: int, seed: int, ranges: CohortRanges) -> tuple[PhantomSpec, dict]:
    """Parameters of cohort member ``index``; depends only on (seed, index)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    u = dict(zip(LATENT_NAMES, rng.normal(size=len(LATENT_NAMES))))
    a = ranges.a * (1 + ranges.size_sd * u["size"])
    ell = float(np.clip(ranges.ellipticity + ranges.ellipticity_sd * u["ellipticity"], 0.75, 1.0))
    c = ranges.c + ranges.length_sd * u["length"]
    wall = max(ranges.wall_base + ranges.wall_sd * u["wall_thickness"], 3.0)
    es_r = float(np.clip(ranges.es_radial + ranges.es_radial_sd * u["contraction"], 0.4, 0.95))
    es_l = float(np.clip(ranges.es_longitudinal + ranges.es_longitudinal_sd * u["long_contraction"], 0.7, 1.0))
    tilt_axis = np.array([*rng.normal(size=2), 0.0])
    tilt = math.radians(ranges.tilt_deg) * rng.uniform()
    spin = rng.uniform(-math.pi, math.pi)
    R = rotation_matrix(tilt_axis, tilt) @ rotation_matrix((0, 0, 1), spin)
    T = rng.uniform(-1, 1, size=3) * ranges.translation_mm
    height = float(np.clip(rng.normal(170, 10), 140, 205))
    weight = float(np.clip(rng.normal(78, 14), 40, 150))
    spec = PhantomSpec(
        endo_axes=(a, a * ell, c),
        wall_base=wall,
        wall_apex=wall * ranges.wall_apex_ratio,
        es_radial=es_r,
        es_longitudinal=es_l,
        rotation=tuple(map(tuple, R)),
        translation=tuple(T),
        noise_mm=ranges.noise_mm,
        shift_mm=ranges.shift_mm,
        height_cm=height,
        weight_kg=weight,
        seed=int(rng.integers(2 ** 31)),
    )
    return spec, {k: float(v) for k, v in u.items()}


def draw_labels(latent: dict, effects, seed: int, index: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index, 1]))
    out = {}
    for eff in effects:
        p = 1.0 / (1.0 + math.exp(-eff.slope * latent[eff.target]))
        out[eff.factor] = int(rng.uniform() < p)
    return out


def generate_cohort(n: int, effects=(Effect("hypertension", "wall_thickness", 2.0),),
                    ranges: CohortRanges = CohortRanges(), seed: int = 0,
                    noise: bool = True, shifts: bool = True):
    """Cases, factor table and truths for ``n`` phantoms (per-case sub-seeds)."""
    if n < 2:
        raise ValueError("a cohort needs at least two cases")
    cases, truths, ids = [], [], []
    labels = {e.factor: [] for e in effects}
    for i in range(n):
        case, truth = cohort_member(i, seed, ranges, effects, noise=noise, shifts=shifts)
        cases.append(case)
        truths.append(truth)
        ids.append(case.case_id)
        for k, v in truth.labels.items():
            labels[k].append(v)
    table = CohortTable(tuple(ids), {k: tuple(v) for k, v in labels.items()})
    return cases, table, truths


def cohort_member(i, seed, ranges, effects, noise=True, shifts=True):
    spec, latent = case_spec(i, seed, ranges)
    labels = draw_labels(latent, effects, seed, i)
    return make_phantom(spec, f"case{i:04d}", noise=noise, shifts=shifts,
                        latent=latent, labels=labels)
