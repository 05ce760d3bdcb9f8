"""Shared oracles and case manipulation for the test suite."""
import numpy as np
from scipy.optimize import brentq

from lvatlas.assembly import Case, SliceData
from lvatlas.geometry import Contour3D, LandmarkSet, transform_plane


def ellipsoid_distance(p, axes):
    """Exact distance from p to the ellipsoid sum (x_i / e_i)^2 = 1 (centred frame).

    The foot point is x_i = e_i^2 y_i / (t + e_i^2) with t the unique root of
    sum (e_i y_i / (t + e_i^2))^2 = 1 on (-min e_i^2, inf).
    """
    y = np.abs(np.asarray(p, float))
    e = np.asarray(axes, float)
    y = np.maximum(y, 1e-12)
    f = lambda t: np.sum((e * y / (t + e * e)) ** 2) - 1.0
    lo = -e.min() ** 2 * (1 - 1e-15)
    hi = np.linalg.norm(e * y) + 1.0
    t = brentq(f, lo, hi, xtol=1e-14, maxiter=500)
    x = e * e * y / (t + e * e)
    return float(np.linalg.norm(x - y))


def transform_case(case: Case, R, t) -> Case:
    R, t = np.asarray(R, float), np.asarray(t, float)
    move = lambda p: np.asarray(p, float) @ R.T + t

    def tc(c, plane):
        return None if c is None else Contour3D(move(c.points), plane, c.kind)

    frames = {}
    for name, slices in case.frames.items():
        out = []
        for s in slices:
            pl = transform_plane(s.plane, R, t)
            out.append(SliceData(pl, tc(s.endo, pl), tc(s.epi, pl)))
        frames[name] = out
    lm = case.landmarks
    lm2 = LandmarkSet(move(lm.mv_2ch), move(lm.mv_4ch),
                      {k: move(v) for k, v in lm.rv_inserts.items()},
                      None if lm.plane_2ch is None else transform_plane(lm.plane_2ch, R, t),
                      None if lm.plane_4ch is None else transform_plane(lm.plane_4ch, R, t))
    return Case(case.case_id, frames, lm2, case.height_cm, case.weight_kg)


def shift_slice(case: Case, frame: str, k: int, d) -> Case:
    """Translate slice k of one frame in-plane by d = (dx, dy) mm."""
    sl = list(case.frames[frame])
    s = sl[k]
    off = d[0] * s.plane.row_dir + d[1] * s.plane.col_dir
    mv = lambda c: None if c is None else Contour3D(c.points + off, c.plane, c.kind)
    sl[k] = SliceData(s.plane, mv(s.endo), mv(s.epi))
    frames = dict(case.frames)
    frames[frame] = sl
    return Case(case.case_id, frames, case.landmarks, case.height_cm, case.weight_kg)


def disk(shape, center, radius):
    rr, cc = np.mgrid[: shape[0], : shape[1]]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius ** 2
