"""Two-surface LV model fitted by regularised linear least squares.

Each surface is a radius function r(theta, z) about the long axis:

* theta: angle about the axis, 0 at the septal reference, periodic cubic
  B-spline with ``ktheta`` uniformly spaced control values;
* z: normalised depth, 0 on the mitral-valve plane and 1 at the apex,
  clamped cubic B-spline with ``kz`` control values.

The z = 1 control row is tied to one value so the surface meets the apex
in a single ring.  Smoothing adds ``lam`` times the squared second
differences of the control grid (theta wrapped, z open).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.optimize import lsq_linear

from .geometry import Contour3D

log = logging.getLogger(__name__)

SURFACES = ("endo", "epi")
MIN_RADIUS_MM = 0.5       # floor applied only when the plain solve goes nonpositive


class FitError(ValueError):
    """The least-squares system cannot be solved."""


class ModelWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LVFrameAxes:
    base_center: np.ndarray
    apex: np.ndarray
    long_axis: np.ndarray
    septal_ref: np.ndarray

    def __post_init__(self):
        for name in ("base_center", "apex", "long_axis", "septal_ref"):
            v = np.array(getattr(self, name), dtype=float).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if abs(np.linalg.norm(self.long_axis) - 1) > 1e-9:
            raise ValueError("long_axis must be unit length")
        if abs(np.linalg.norm(self.septal_ref) - 1) > 1e-9:
            raise ValueError("septal_ref must be unit length")
        if abs(float(self.septal_ref @ self.long_axis)) > 1e-9:
            raise ValueError("septal_ref must be perpendicular to long_axis")
        if self.length <= 0:
            raise ValueError("apex coincides with base")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.apex - self.base_center))

    @cached_property
    def lateral_ref(self) -> np.ndarray:
        """theta = pi/2 direction (long_axis x septal_ref)."""
        return np.cross(self.long_axis, self.septal_ref)

    def transformed(self, R, t) -> "LVFrameAxes":
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float)
        return LVFrameAxes(R @ self.base_center + t, R @ self.apex + t,
                           R @ self.long_axis, R @ self.septal_ref)


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("zero-length direction")
    return v / n


def _slice_holding(slices, pts, tol=1e-3):
    for k, s in enumerate(slices):
        off = np.abs((np.asarray(pts) - s.plane.origin) @ s.plane.normal)
        if off.max() < tol:
            return k
    return None


def build_axes(landmarks, slices) -> LVFrameAxes:
    """Anatomical frame from mitral points, the apical contour and RV inserts.

    ``slices`` are one frame's :class:`SliceData`, ordered apex -> base.
    RV insert pairs are matched to slices by plane membership, so the same
    landmark set serves both ED and ES.
    """
    mv = landmarks.mv_points
    if len(mv) < 3:
        raise ValueError("need at least 3 mitral valve points")
    sv = np.linalg.svd(mv - mv.mean(axis=0), compute_uv=False)
    if len(sv) < 2 or sv[1] < 1e-6:
        raise ValueError("mitral valve points are collinear")
    if len(slices) < 3:
        raise ValueError("need at least 3 slices")
    base = mv.mean(axis=0)

    apical = next((s for s in slices if s.epi is not None), None)
    if apical is None:
        raise ValueError("no epicardial contour")
    c_apex = apical.epi.centroid()
    n = apical.plane.normal
    if (c_apex - base) @ n < 0:
        n = -n
    apex = c_apex + 0.5 * apical.plane.spacing * n
    if np.linalg.norm(apex - base) < 1e-6:
        raise ValueError("apex coincides with base")
    axis = _unit(apex - base)

    annotated = []
    for key, pair in landmarks.rv_inserts.items():
        k = _slice_holding(slices, pair)
        if k is not None:
            annotated.append((k, pair))
    if not annotated:
        raise ValueError("need at least one RV insert pair on this frame")
    middle = (len(slices) - 1) / 2
    k, pair = min(annotated, key=lambda kp: (abs(kp[0] - middle), kp[0]))
    s = slices[k]
    ref = s.endo if s.endo is not None else s.epi
    c = ref.centroid()
    bis = _unit(pair[0] - c) + _unit(pair[1] - c)
    bis = bis - (bis @ axis) * axis
    return LVFrameAxes(base, apex, axis, _unit(bis))


@dataclass(frozen=True)
class ModelCoords:
    theta: np.ndarray
    z: np.ndarray
    r: np.ndarray
    out_of_range: np.ndarray     # z outside [0, 1]
    kept: np.ndarray             # indices into the input points


def to_model_coords(points, axes: LVFrameAxes) -> ModelCoords:
    """(theta, z, r) of patient-space points; points on the axis are dropped."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts - axes.base_center
    along = d @ axes.long_axis
    perp = d - np.outer(along, axes.long_axis)
    r = np.linalg.norm(perp, axis=1)
    keep = r > 1e-9
    if not keep.all():
        warnings.warn(f"{np.count_nonzero(~keep)} point(s) on the long axis dropped",
                      ModelWarning, stacklevel=2)
    x = perp[keep] @ axes.septal_ref
    y = perp[keep] @ axes.lateral_ref
    theta = np.mod(np.arctan2(y, x), 2 * np.pi)
    z = along[keep] / axes.length
    return ModelCoords(theta, z, r[keep], (z < 0) | (z > 1), np.flatnonzero(keep))


def contour_to_model_coords(c: Contour3D, axes: LVFrameAxes) -> ModelCoords:
    return to_model_coords(c.points, axes)


# -- basis -------------------------------------------------------------------------

def periodic_basis(theta, k: int) -> np.ndarray:
    """(N, k) uniform periodic cubic B-spline basis; control j sits at 2*pi*j/k."""
    t = np.mod(np.asarray(theta, dtype=float), 2 * np.pi) * k / (2 * np.pi)
    i = np.floor(t).astype(int)
    u = t - i
    w = np.stack([
        (1 - u) ** 3 / 6,
        (3 * u ** 3 - 6 * u ** 2 + 4) / 6,
        (-3 * u ** 3 + 3 * u ** 2 + 3 * u + 1) / 6,
        u ** 3 / 6,
    ], axis=1)
    out = np.zeros((len(t), k))
    rows = np.arange(len(t))
    for off in range(4):
        np.add.at(out, (rows, (i - 1 + off) % k), w[:, off])
    return out


def clamped_knots(k: int) -> np.ndarray:
    inner = np.linspace(0.0, 1.0, k - 2)[1:-1]
    return np.concatenate([[0.0] * 4, inner, [1.0] * 4])


def clamped_basis(z, k: int) -> np.ndarray:
    """(N, k) clamped cubic B-spline basis on [0, 1] (inputs clipped)."""
    if k < 4:
        raise ValueError("need at least 4 longitudinal controls")
    zz = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
    return BSpline.design_matrix(zz, clamped_knots(k), 3).toarray()


def design_matrix(theta, z, ktheta: int, kz: int) -> np.ndarray:
    """Tensor-product basis; column index is j * kz + m (theta j, z m)."""
    bt = periodic_basis(theta, ktheta)
    bz = clamped_basis(z, kz)
    return (bt[:, :, None] * bz[:, None, :]).reshape(len(bt), ktheta * kz)


def roughness_operator(ktheta: int, kz: int) -> np.ndarray:
    """Stacked second-difference rows over the control grid."""
    idx = np.arange(ktheta * kz).reshape(ktheta, kz)
    rows = []
    for j in range(ktheta):
        for m in range(kz):
            row = np.zeros(ktheta * kz)
            row[idx[(j - 1) % ktheta, m]] += 1
            row[idx[j, m]] -= 2
            row[idx[(j + 1) % ktheta, m]] += 1
            rows.append(row)
    for j in range(ktheta):
        for m in range(1, kz - 1):
            row = np.zeros(ktheta * kz)
            row[idx[j, m - 1]] += 1
            row[idx[j, m]] -= 2
            row[idx[j, m + 1]] += 1
            rows.append(row)
    return np.asarray(rows)


def apex_tie(ktheta: int, kz: int) -> np.ndarray:
    """Map reduced parameters (free rows + one apex value) to the full grid."""
    n_free = ktheta * (kz - 1)
    T = np.zeros((ktheta * kz, n_free + 1))
    col = 0
    for j in range(ktheta):
        for m in range(kz):
            if m == kz - 1:
                T[j * kz + m, n_free] = 1.0
            else:
                T[j * kz + m, col] = 1.0
                col += 1
    return T


def evaluate(ctrl: np.ndarray, theta, z) -> np.ndarray:
    ktheta, kz = ctrl.shape
    return design_matrix(theta, z, ktheta, kz) @ ctrl.ravel()


def roughness(ctrl: np.ndarray) -> float:
    ktheta, kz = ctrl.shape
    D = roughness_operator(ktheta, kz)
    v = D @ ctrl.ravel()
    return float(v @ v)


def fit_surface(theta, z, r, lam: float, ktheta: int = 8, kz: int = 6) -> np.ndarray:
    """Penalised least-squares control grid (ktheta x kz) for one surface."""
    theta, z, r = (np.asarray(a, dtype=float) for a in (theta, z, r))
    if len(r) < ktheta * kz:
        raise FitError(f"need at least {ktheta * kz} samples, got {len(r)}")
    if len(np.unique(np.round(z, 9))) < 3:
        raise FitError("rank deficient in the longitudinal (z) direction: "
                       "samples cover fewer than 3 distinct depths")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    T = apex_tie(ktheta, kz)
    A = design_matrix(theta, z, ktheta, kz) @ T
    D = roughness_operator(ktheta, kz) @ T
    N = A.T @ A + lam * (D.T @ D)
    rhs = A.T @ r
    try:
        cf = linalg.cho_factor(N, lower=True, check_finite=True)
    except linalg.LinAlgError:
        cf = None
    if cf is None or np.linalg.cond(N) > 1e13:
        zc = A.T @ A
        direction = "circumferential (theta)"
        if np.linalg.matrix_rank(clamped_basis(z, kz)) < kz:
            direction = "longitudinal (z)"
        raise FitError(f"rank deficient in the {direction} direction "
                       f"(cond={np.linalg.cond(zc):.3g})")
    p = linalg.cho_solve(cf, rhs)
    # iterative refinement; the residual is formed factor-wise so that the
    # penalty term is exact on its null space even when lam is large
    for _ in range(3):
        p = p + linalg.cho_solve(cf, rhs - A.T @ (A @ p) - lam * (D.T @ (D @ p)))
    return (T @ p).reshape(ktheta, kz)


@dataclass(frozen=True)
class ShiftSet:
    """Estimated in-plane misregistration per slice, (dx along row_dir, dy along col_dir) mm.

    The registered contour is the observed one translated by the negative.
    """

    offsets: np.ndarray

    def __post_init__(self):
        o = np.array(self.offsets, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(o)):
            raise ValueError("shifts must be finite")
        o.setflags(write=False)
        object.__setattr__(self, "offsets", o)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=1)


@dataclass(frozen=True)
class LVModel:
    axes: LVFrameAxes
    endo_ctrl: np.ndarray
    epi_ctrl: np.ndarray
    lam: float
    rms_residual: float = float("nan")
    flags: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("endo_ctrl", "epi_ctrl"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 2:
                raise ValueError(f"{name} must be a 2D grid")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.endo_ctrl.shape != self.epi_ctrl.shape:
            raise ValueError("endo and epi grids differ in shape")

    @property
    def ktheta(self) -> int:
        return self.endo_ctrl.shape[0]

    @property
    def kz(self) -> int:
        return self.endo_ctrl.shape[1]

    def ctrl(self, surface: str) -> np.ndarray:
        return self.endo_ctrl if surface == "endo" else self.epi_ctrl

    def radius(self, surface: str, theta, z) -> np.ndarray:
        return evaluate(self.ctrl(surface), theta, z)

    def invariant_violations(self) -> list[str]:
        bad = []
        if (self.endo_ctrl <= 0).any() or (self.epi_ctrl <= 0).any():
            bad.append("nonpositive_control_radius")
        th = 2 * np.pi * np.arange(48) / 48
        zz = np.linspace(0.0, 1.0, 24)
        T, Z = np.meshgrid(th, zz)
        gap = self.radius("epi", T.ravel(), Z.ravel()) - self.radius("endo", T.ravel(), Z.ravel())
        if (gap < 0).any():
            bad.append("epi_inside_endo")
        return bad


def frame_samples(slices, axes: LVFrameAxes, offsets=None):
    """Model-coordinate samples per surface, with per-point slice indices.

    ``offsets`` (n_slices, 2) are estimated misregistrations; contours are
    translated by their negative before conversion.  Points above the
    mitral plane (z < 0) are discarded.
    """
    out = {}
    for surface in SURFACES:
        pts, si = [], []
        for k, s in enumerate(slices):
            c = getattr(s, surface)
            if c is None:
                continue
            p = c.points
            if offsets is not None:
                dx, dy = offsets[k]
                p = p - dx * s.plane.row_dir - dy * s.plane.col_dir
            pts.append(p)
            si.append(np.full(len(p), k))
        if not pts:
            raise FitError(f"no {surface} contours")
        pts, si = np.concatenate(pts), np.concatenate(si)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ModelWarning)
            mc = to_model_coords(pts, axes)
        ok = mc.z >= 0
        keep = mc.kept[ok]
        out[surface] = (mc.theta[ok], np.minimum(mc.z[ok], 1.0), mc.r[ok], si[keep], pts[keep])
    return out


def fit_surface_bounded(theta, z, r, lam: float, ktheta: int = 8, kz: int = 6,
                        floor: float = MIN_RADIUS_MM) -> np.ndarray:
    """Same objective as ``fit_surface`` with every control value >= ``floor``.

    The region past the last contour is unconstrained by data and a free
    extrapolation can dip below zero there; the bound keeps the radius
    function valid while leaving fits that already satisfy it unchanged.
    """
    T = apex_tie(ktheta, kz)
    A = design_matrix(np.asarray(theta, float), np.asarray(z, float), ktheta, kz) @ T
    D = roughness_operator(ktheta, kz) @ T
    M = np.vstack([A, np.sqrt(lam) * D])
    b = np.concatenate([np.asarray(r, float), np.zeros(D.shape[0])])
    sol = lsq_linear(M, b, bounds=(floor, np.inf), method="bvls", tol=1e-12)
    return (T @ sol.x).reshape(ktheta, kz)


def fit_surfaces(samples, lam: float = 1e-3, ktheta: int = 8, kz: int = 6, axes=None):
    """Fit both surfaces from ``{surface: (theta, z, r, ...)}``; returns an LVModel."""
    grids, sq, count, flags = {}, 0.0, 0, []
    for surface in SURFACES:
        th, zz, rr = samples[surface][:3]
        g = fit_surface(th, zz, rr, lam, ktheta, kz)
        if (g <= 0).any():
            g = fit_surface_bounded(th, zz, rr, lam, ktheta, kz)
            flags.append(f"{surface}_radius_floor")
        grids[surface] = g
        res = rr - evaluate(g, th, zz)
        sq += float(res @ res)
        count += len(res)
    model = LVModel(axes, grids["endo"], grids["epi"], lam, float(np.sqrt(sq / count)))
    flags += model.invariant_violations()
    if flags:
        model = LVModel(axes, model.endo_ctrl, model.epi_ctrl, lam, model.rms_residual, tuple(flags))
    return model


def objective(model: LVModel, samples, lam: float) -> float:
    """Data misfit plus ``lam`` times roughness, summed over both surfaces."""
    total = 0.0
    for surface in SURFACES:
        th, zz, rr = samples[surface][:3]
        res = rr - model.radius(surface, th, zz)
        total += float(res @ res) + lam * roughness(model.ctrl(surface))
    return total


def _shift_step(model: LVModel, samples, slices) -> np.ndarray:
    """Per-slice translation that best removes the radial misfit (linearised).

    Moving a slice by d changes each radius by approximately u . d, with u
    the in-plane radial direction, so the least-squares step solves
    (sum u u^T) d = sum u (r - S).
    """
    axes = model.axes
    n = len(slices)
    M = np.zeros((n, 2, 2))
    b = np.zeros((n, 2))
    for surface in SURFACES:
        th, zz, rr, si, pts = samples[surface]
        S = model.radius(surface, th, zz)
        d = pts - axes.base_center
        perp = d - np.outer(d @ axes.long_axis, axes.long_axis)
        u3 = perp / np.linalg.norm(perp, axis=1, keepdims=True)
        for k in np.unique(si):
            sel = si == k
            pl = slices[k].plane
            u = np.stack([u3[sel] @ pl.row_dir, u3[sel] @ pl.col_dir], axis=1)
            M[k] += u.T @ u
            b[k] += u.T @ (rr[sel] - S[sel])
    step = np.zeros((n, 2))
    for k in range(n):
        if np.linalg.cond(M[k]) < 1e8:
            step[k] = np.linalg.solve(M[k], b[k])
    return step


@dataclass(frozen=True)
class MisregistrationConfig:
    lambda_stiff: float = 1e2
    lambda_final: float = 1e-3
    max_iters: int = 5
    tol_mm: float = 0.1
    ktheta: int = 8
    kz: int = 6


@dataclass(frozen=True)
class FrameFit:
    shifts: ShiftSet | None      # None when fit without correction
    model: LVModel
    converged: bool
    iterations: int
    objectives: tuple             # objective at lambda_stiff after each cycle


def correct_misregistration(slices, landmarks, config: MisregistrationConfig = MisregistrationConfig(),
                            axes: LVFrameAxes | None = None) -> FrameFit:
    """Alternate model fits and per-slice in-plane shifts, then refit.

    Shifts are always matched against the heavily smoothed (``lambda_stiff``)
    fit: a flexible surface would bend to follow misplaced slices and absorb
    part of their offset.  The returned model is refit at ``lambda_final``
    on the registered contours.  Never raises on non-convergence;
    ``converged`` is False and a ModelWarning is issued instead.
    """
    slices = list(slices)
    if len(slices) < 3:
        raise ValueError("need at least 3 slices")
    if axes is None:
        axes = build_axes(landmarks, slices)
    offsets = np.zeros((len(slices), 2))
    objectives = []
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        samples = frame_samples(slices, axes, offsets)
        model = fit_surfaces(samples, config.lambda_stiff, config.ktheta, config.kz, axes)
        step = _shift_step(model, samples, slices)
        # the step is linearised; halve it until the objective does not rise
        before = objective(model, samples, config.lambda_stiff)
        for _ in range(8):
            after = frame_samples(slices, axes, offsets + step)
            value = objective(model, after, config.lambda_stiff)
            if value <= before:
                break
            step = step / 2
        else:
            step = np.zeros_like(step)
            value = before
        offsets = offsets + step
        objectives.append(value)
        if np.max(np.linalg.norm(step, axis=1)) < config.tol_mm:
            converged = True
            break
    samples = frame_samples(slices, axes, offsets)
    model = fit_surfaces(samples, config.lambda_final, config.ktheta, config.kz, axes)
    if not converged:
        warnings.warn("misregistration correction did not converge", ModelWarning, stacklevel=2)
        model = LVModel(axes, model.endo_ctrl, model.epi_ctrl, model.lam,
                        model.rms_residual, model.flags + ("shift_not_converged",))
    return FrameFit(ShiftSet(offsets), model, converged, it, tuple(objectives))


def fit_frame(slices, landmarks, lam: float = 1e-3, ktheta: int = 8, kz: int = 6,
              axes: LVFrameAxes | None = None) -> LVModel:
    """Single fit without misregistration correction."""
    slices = list(slices)
    if axes is None:
        axes = build_axes(landmarks, slices)
    return fit_surfaces(frame_samples(slices, axes), lam, ktheta, kz, axes)


def fit_case(case, config: MisregistrationConfig = MisregistrationConfig(),
             correct: bool = True, frames=("ED", "ES")) -> dict:
    """Per-frame FrameFit for each requested frame present in ``case``.

    With ``correct=False`` the frame is fit once at ``lambda_final`` and
    reported with zero shifts.
    """
    out = {}
    for name in frames:
        if name not in case.frames:
            continue
        slices = case.frames[name]
        axes = build_axes(case.landmarks, slices)
        if correct:
            out[name] = correct_misregistration(slices, case.landmarks, config, axes)
        else:
            model = fit_frame(slices, case.landmarks, config.lambda_final,
                              config.ktheta, config.kz, axes)
            out[name] = FrameFit(None, model, True, 0, ())
    return out


def sample_surface(model: LVModel, surface: str, ntheta: int = 24, nz: int = 12) -> np.ndarray:
    """(nz * ntheta, 3) patient points, z-major then theta."""
    th = 2 * np.pi * np.arange(ntheta) / ntheta
    zz = np.arange(nz) / (nz - 1)
    T, Z = np.meshgrid(th, zz)              # rows z, cols theta
    T, Z = T.ravel(), Z.ravel()
    r = model.radius(surface, T, Z)
    ax = model.axes
    return (ax.base_center
            + np.outer(Z * ax.length, ax.long_axis)
            + (r * np.cos(T))[:, None] * ax.septal_ref
            + (r * np.sin(T))[:, None] * ax.lateral_ref)
