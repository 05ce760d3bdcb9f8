"""Shape vectors, generalised Procrustes alignment and a PCA shape atlas.

Shape vector layout (length 3 * ntheta * nz * 2 * 2, default 3456):
frame (ED, ES) -> surface (endo, epi) -> z row -> theta column -> (x, y, z).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SURFACES, LVModel, sample_surface

ATLAS_FRAMES = ("ED", "ES")
GPA_TOL_MM = 1e-8
GPA_MAX_ITERS = 100


def shape_vector(models: dict, ntheta: int = 24, nz: int = 12) -> np.ndarray:
    """Concatenate sampled ED and ES surfaces of one case into a flat vector."""
    parts = []
    for frame in ATLAS_FRAMES:
        m: LVModel = models[frame]
        for surface in SURFACES:
            parts.append(sample_surface(m, surface, ntheta, nz).ravel())
    return np.concatenate(parts)


def as_points(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size % 3:
        raise ValueError("shape vector length must be a multiple of 3")
    return v.reshape(-1, 3)


def kabsch(src: np.ndarray, dst: np.ndarray, scaling: bool = False):
    """Rotation R, translation t (and scale s) minimising |s * src @ R.T + t - dst|."""
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - ms, dst - md
    U, sv, Vt = np.linalg.svd(b.T @ a)
    d = np.sign(np.linalg.det(U @ Vt)) or 1.0
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    s = 1.0
    if scaling:
        s = float((sv * np.diag(D)).sum() / (a * a).sum())
    t = md - s * R @ ms
    return R, t, s


def apply_rigid(points, R, t, s=1.0) -> np.ndarray:
    return s * np.asarray(points, float) @ R.T + t


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def apply(self, v) -> np.ndarray:
        return apply_rigid(as_points(v), self.rotation, self.translation, self.scale).ravel()


def _check_shapes(shapes) -> np.ndarray:
    X = np.asarray(shapes, dtype=float)
    if X.ndim != 2:
        raise ValueError("shapes must be a 2D array (n, p)")
    if len(X) < 2:
        raise ValueError("need at least 2 shapes")
    if X.shape[1] % 3:
        raise ValueError("shape vector length must be a multiple of 3")
    if not np.all(np.isfinite(X)):
        raise ValueError("shape vectors must be finite")
    for i, x in enumerate(X):
        p = x.reshape(-1, 3)
        if np.ptp(p, axis=0).max() == 0:
            raise ValueError(f"shape {i} is degenerate (all points identical)")
    return X


def gpa_align(shapes, scaling: bool = False, tol: float = GPA_TOL_MM,
              max_iters: int = GPA_MAX_ITERS):
    """Generalised Procrustes alignment.

    Returns (aligned (n, p), transforms, mean (p,)).  Each transform maps the
    input shape onto its aligned copy.  The reference starts as the first
    shape (centred) and is replaced by the mean of the aligned shapes until it
    moves by less than ``tol`` mm RMS.  With ``scaling`` the mean is kept at
    the size of the first shape so the iteration cannot shrink towards zero.
    The output pose is fixed so the per-shape rotations average to identity.
    """
    X = _check_shapes(shapes)
    pts = X.reshape(len(X), -1, 3)
    ref = pts[0] - pts[0].mean(axis=0)
    ref_norm = np.linalg.norm(ref)
    transforms = []
    aligned = pts
    for _ in range(max_iters):
        transforms = [kabsch(p, ref, scaling) for p in pts]
        aligned = np.stack([apply_rigid(p, *tr) for p, tr in zip(pts, transforms)])
        mean = aligned.mean(axis=0)
        mean -= mean.mean(axis=0)
        if scaling:
            mean *= ref_norm / np.linalg.norm(mean)
        change = np.sqrt(np.mean(np.sum((mean - ref) ** 2, axis=1)))
        ref = mean
        if change < tol:
            break
    # The fixed point is unique only up to a global rotation (and scale).
    # Choose the pose whose rotations average to the identity, with unit
    # geometric-mean scale, so that re-aligning aligned output is a no-op.
    U, _, Vt = np.linalg.svd(sum(R for R, _, _ in transforms))
    Q = U @ np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0]) @ Vt
    g = float(np.exp(np.mean([np.log(s) for _, _, s in transforms]))) if scaling else 1.0
    aligned = aligned @ Q / g
    ref = ref @ Q / g
    out = [RigidTransform(Q.T @ R, Q.T @ t / g, s / g) for R, t, s in transforms]
    return aligned.reshape(len(X), -1), out, ref.ravel()


def align_to(shape, mean, scaling: bool = False):
    """Single-pass rigid alignment of one shape onto a fixed mean."""
    p = as_points(shape)
    R, t, s = kabsch(p, as_points(mean), scaling)
    return apply_rigid(p, R, t, s).ravel(), RigidTransform(R, t, s)


@dataclass(frozen=True)
class Atlas:
    mean: np.ndarray           # (p,)
    components: np.ndarray     # (M, p), rows orthonormal
    variances: np.ndarray      # (M,), mm^2, descending
    ntheta: int = 24
    nz: int = 12
    scaling: bool = False

    def __post_init__(self):
        C = np.asarray(self.components, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 1 or C.ndim != 2 or C.shape[1] != mean.size or len(v) != len(C):
            raise ValueError("atlas mean, components and variances disagree in shape")
        if not np.allclose(C @ C.T, np.eye(len(C)), atol=1e-8):
            raise ValueError("atlas components must be orthonormal")
        if np.any(v < 0) or np.any(np.diff(v) > 0):
            raise ValueError("atlas variances must be non-negative and descending")

    @property
    def n_modes(self) -> int:
        return len(self.variances)

    def reconstruct(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=float)
        return self.mean + s @ self.components[: s.shape[-1]]


def pca(aligned, ntheta: int = 24, nz: int = 12, scaling: bool = False) -> Atlas:
    """PCA by SVD of the centred data; each mode's largest-magnitude entry is positive."""
    X = np.asarray(aligned, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least 2 shapes")
    n, p = X.shape
    mean = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - mean, full_matrices=False)
    m = min(n - 1, p)
    Vt, s = Vt[:m], s[:m]
    idx = np.argmax(np.abs(Vt), axis=1)
    sign = np.sign(Vt[np.arange(m), idx])
    sign[sign == 0] = 1.0
    Vt = Vt * sign[:, None]
    return Atlas(mean, Vt, s ** 2 / (n - 1), ntheta, nz, scaling)


def build_atlas(shapes, scaling: bool = False, ntheta: int = 24, nz: int = 12):
    """GPA followed by PCA; returns (atlas, aligned shapes)."""
    aligned, _, _ = gpa_align(shapes, scaling)
    return pca(aligned, ntheta, nz, scaling), aligned


def project(atlas: Atlas, shape, m: int | None = None, prealigned: bool = False,
            standardize: bool = False) -> np.ndarray:
    """First ``m`` PC scores of a shape after alignment to the atlas mean.

    Scores are in mm; ``standardize`` divides each by its mode's standard
    deviation.
    """
    m = atlas.n_modes if m is None else int(m)
    if m > atlas.n_modes:
        raise ValueError(f"requested {m} modes, atlas has {atlas.n_modes}")
    if m < 0:
        raise ValueError("mode count must be non-negative")
    v = np.asarray(shape, dtype=float)
    if v.shape != atlas.mean.shape:
        raise ValueError("shape vector layout does not match the atlas")
    if not prealigned:
        v, _ = align_to(v, atlas.mean, atlas.scaling)
    scores = atlas.components[:m] @ (v - atlas.mean)
    if standardize:
        sd = np.sqrt(atlas.variances[:m])
        scores = np.divide(scores, sd, out=np.zeros_like(scores), where=sd > 0)
    return scores
