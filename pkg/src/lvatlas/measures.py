"""Clinical LV measures from short-axis contours.

Volumes follow the slice-summation rule: cavity area times slice spacing
(thickness + gap) over the slices that carry an endocardial contour.  The
cavity label includes papillary muscles (they belong to the blood pool).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import Contour2D, Contour3D, ImagePlane, is_simple_polygon, signed_area_2d

MYOCARDIAL_DENSITY_G_PER_ML = 1.05


class MeasureWarning(UserWarning):
    """A measure was computed from questionable input."""


def contour_area(c, pixel_spacing: tuple[float, float] | None = None) -> float:
    """Enclosed area in mm^2.

    2D contours are in pixel units and need ``pixel_spacing`` (row_mm,
    col_mm); 3D contours are measured in their own plane.
    """
    if isinstance(c, Contour3D):
        xy = c.in_plane_mm()
    elif isinstance(c, Contour2D):
        if pixel_spacing is None:
            raise ValueError("pixel_spacing is required for 2D contours")
        xy = c.points * np.asarray(pixel_spacing, dtype=float)
    else:
        xy = np.asarray(c, dtype=float)
    if len(xy) < 3:
        raise ValueError("need at least 3 points")
    if not is_simple_polygon(xy):
        warnings.warn("self-intersecting contour; area is the signed-sum value",
                      MeasureWarning, stacklevel=2)
    return abs(signed_area_2d(xy))


def simpson_volume(areas_mm2, spacing_mm: float) -> float:
    """Disc-summation volume in ml; ``None``/NaN areas count as slices without contours."""
    if spacing_mm <= 0:
        raise ValueError("slice spacing must be positive")
    a = np.array([np.nan if v is None else v for v in areas_mm2], dtype=float)
    if not np.any(np.isfinite(a)):
        raise ValueError("no slice carries a contour")
    return float(np.nansum(a) * spacing_mm / 1000.0)


def lv_mass(epi_areas_mm2, endo_areas_mm2, spacing_mm: float) -> float:
    """Myocardial mass in g = myocardial volume (ml) x 1.05 g/ml.

    A missing endocardial area counts as zero cavity on that slice.
    """
    if spacing_mm <= 0:
        raise ValueError("slice spacing must be positive")
    epi = np.array([0.0 if v is None else v for v in epi_areas_mm2], dtype=float)
    endo = np.array([0.0 if v is None else v for v in endo_areas_mm2], dtype=float)
    if epi.shape != endo.shape:
        raise ValueError("epi and endo areas must be paired per slice")
    wall = epi - endo
    if np.any(wall < 0):
        warnings.warn("epicardial area below endocardial area; slice clamped to 0",
                      MeasureWarning, stacklevel=2)
        wall = np.clip(wall, 0, None)
    return float(wall.sum() * spacing_mm / 1000.0 * MYOCARDIAL_DENSITY_G_PER_ML)


def _mosteller(h, w):
    return math.sqrt(h * w / 3600.0)


def _dubois(h, w):
    return 0.007184 * h ** 0.725 * w ** 0.425


BSA_FORMULAS = {"mosteller": _mosteller, "dubois": _dubois}


def bsa(height_cm: float, weight_kg: float, formula: str = "mosteller") -> float:
    """Body surface area in m^2 (Mosteller by default, DuBois optional)."""
    if not (height_cm > 0 and weight_kg > 0):
        raise ValueError("height and weight must be positive")
    try:
        return BSA_FORMULAS[formula](float(height_cm), float(weight_kg))
    except KeyError:
        raise ValueError(f"unknown BSA formula {formula!r}") from None


@dataclass(frozen=True)
class ClinicalResult:
    lvedv_ml: float
    lvesv_ml: float
    lvm_g: float
    bsa_m2: float
    lvedvi: float
    lvesvi: float
    lvmi: float
    lvef_pct: float
    bsa_formula: str = "mosteller"
    flags: tuple[str, ...] = field(default_factory=tuple)


def frame_areas(slices) -> tuple[list, list, float]:
    """Per-slice (endo, epi) areas and the common slice spacing of a frame."""
    endo, epi = [], []
    for s in slices:
        endo.append(None if s.endo is None else contour_area(s.endo))
        epi.append(None if s.epi is None else contour_area(s.epi))
    spacing = slices[0].plane.spacing
    return endo, epi, spacing


def clinical_result(case, formula: str = "mosteller") -> ClinicalResult:
    """Volumes, ED mass, BSA indexing and ejection fraction for one case."""
    flags = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", MeasureWarning)
        ed_endo, ed_epi, ed_sp = frame_areas(case.frames["ED"])
        es_endo, _, es_sp = frame_areas(case.frames["ES"])
        edv = simpson_volume(ed_endo, ed_sp)
        esv = simpson_volume(es_endo, es_sp)
        mass = lv_mass(ed_epi, ed_endo, ed_sp)
    for w in caught:
        if issubclass(w.category, MeasureWarning):
            flags.append("self_intersecting" if "self-intersecting" in str(w.message)
                         else "epi_below_endo")
    body = bsa(case.height_cm, case.weight_kg, formula)
    edvi, esvi = edv / body, esv / body
    if edvi == 0:
        raise ValueError("LVEDVi is zero; ejection fraction undefined")
    ef = (edvi - esvi) / edvi * 100.0
    if esv > edv:
        flags.append("esv_exceeds_edv")
    if not 0 <= ef <= 100:
        flags.append("lvef_out_of_range")
    return ClinicalResult(
        lvedv_ml=edv, lvesv_ml=esv, lvm_g=mass, bsa_m2=body,
        lvedvi=edvi, lvesvi=esvi, lvmi=mass / body, lvef_pct=ef,
        bsa_formula=formula, flags=tuple(sorted(set(flags))),
    )
