import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import transform_case
from lvatlas.atlas import (
    Atlas,
    align_to,
    apply_rigid,
    as_points,
    build_atlas,
    gpa_align,
    kabsch,
    pca,
    project,
    shape_vector,
)
from lvatlas.geometry import random_rotation
from lvatlas.model import fit_case
from lvatlas.phantom import CohortRanges, case_spec, make_phantom

pytestmark = pytest.mark.filterwarnings("ignore::lvatlas.model.ModelWarning")

def rigid(v, R, t):
    return apply_rigid(as_points(v), R, t).ravel()

def synthetic(rng, n, npts=40, spread=1.0, move=True):
    base = rng.normal(scale=20, size=(npts, 3))
    out = []
    for _ in range(n):
        pts = base + rng.normal(scale=spread, size=base.shape)
        if move:
            pts = pts @ random_rotation(rng).T + rng.normal(scale=50, size=3)
        out.append(pts.ravel())
    return np.array(out)

def centred_rms_var(X):
    P = np.stack([as_points(x) for x in X])
    P = P - P.mean(axis=1, keepdims=True)
    return float(((P - P.mean(axis=0)) ** 2).sum())

_phantom_cache = {}

def phantom_shapes(n=12, seed=31):
    if (n, seed) not in _phantom_cache:
        cases, vecs = [], []
        for i in range(n):
            spec, _ = case_spec(i, seed, CohortRanges())
            case, _ = make_phantom(spec)
            cases.append(case)
            vecs.append(shape_vector({k: f.model for k, f in fit_case(case).items()}))
        _phantom_cache[(n, seed)] = (cases, np.array(vecs))
    return _phantom_cache[(n, seed)]

def test_shape_vector_layout():
    _, X = phantom_shapes()
    assert X.shape[1] == 3 * 24 * 12 * 2 * 2 == 3456
    assert np.all(np.isfinite(X))

def test_kabsch_recovers_rotation_no_reflection():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(30, 3))
    R0, t0 = random_rotation(rng), rng.normal(size=3)
    R, t, s = kabsch(src, src @ R0.T + t0)
    assert np.allclose(R, R0, atol=1e-10) and np.allclose(t, t0, atol=1e-10) and s == 1.0
    mirror = src * [1, 1, -1]
    R, _, _ = kabsch(src, mirror)
    assert np.linalg.det(R) > 0

def test_gpa_copies_collapse():
    rng = np.random.default_rng(1)
    X = synthetic(rng, 8, spread=0.0)
    aligned, transforms, mean = gpa_align(X)
    assert np.max(np.abs(aligned - aligned[0])) < 1e-6
    assert np.allclose(as_points(mean).mean(axis=0), 0, atol=1e-9)
    for x, tr, a in zip(X, transforms, aligned):
        assert np.allclose(tr.apply(x), a, atol=1e-9)
        assert abs(np.linalg.det(tr.rotation) - 1) < 1e-9

def test_gpa_identity_on_aligned():
    rng = np.random.default_rng(2)
    X = synthetic(rng, 6, spread=0.5)
    aligned, _, _ = gpa_align(X)
    again, transforms, _ = gpa_align(aligned)
    for tr in transforms:
        assert np.allclose(tr.rotation, np.eye(3), atol=1e-8)
        assert np.allclose(tr.translation, 0, atol=1e-8)
    # idempotent
    assert np.sqrt(np.mean((again - aligned) ** 2)) < 1e-9

def test_gpa_reduces_variance_on_phantoms():
    _, X = phantom_shapes()
    aligned, _, _ = gpa_align(X)
    pre = float(((X - X.mean(axis=0)) ** 2).sum())
    assert ((aligned - aligned.mean(axis=0)) ** 2).sum() <= pre
    # brute-force: the centred-only arrangement is one feasible alignment
    assert ((aligned - aligned.mean(axis=0)) ** 2).sum() <= centred_rms_var(X) * (1 + 1e-9)

def test_gpa_errors():
    with pytest.raises(ValueError, match="degenerate"):
        gpa_align(np.array([np.zeros(30), np.arange(30.0)]))
    with pytest.raises(ValueError):
        gpa_align(np.zeros((1, 30)))

def test_gpa_scaling_flag():
    rng = np.random.default_rng(3)
    X = synthetic(rng, 5, spread=0.0)
    X[2] = rigid(as_points(X[2]).ravel() * 1.0, np.eye(3), 0)
    big = (as_points(X[0]) * 1.7).ravel()
    aligned, _, _ = gpa_align(np.vstack([X, big]), scaling=True)
    assert np.max(np.abs(aligned - aligned[0])) < 1e-6
    plain, _, _ = gpa_align(np.vstack([X, big]))
    assert np.max(np.abs(plain - plain[0])) > 1.0

def test_pca_two_shapes():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(2, 30))
    at = pca(X, ntheta=1, nz=1)
    assert at.n_modes == 1
    d = (X[1] - X[0]) / np.linalg.norm(X[1] - X[0])
    assert abs(abs(at.components[0] @ d) - 1) < 1e-12
    assert at.variances[0] == pytest.approx(np.sum((X[1] - X[0]) ** 2) / 2, rel=1e-12)

def test_pca_rank_one():
    rng = np.random.default_rng(5)
    mean, v = rng.normal(size=60), rng.normal(size=60)
    t = rng.normal(size=15)
    at = pca(mean + np.outer(t, v))
    u = v / np.linalg.norm(v)
    assert abs(abs(at.components[0] @ u) - 1) < 1e-10
    assert at.variances[0] == pytest.approx(np.var(t, ddof=1) * (v @ v), rel=1e-10)
    assert np.all(at.variances[1:] < 1e-10)

def test_pca_sign_and_orthonormal():
    _, X = phantom_shapes()
    at, aligned = build_atlas(X)
    C = at.components
    assert np.allclose(C @ C.T, np.eye(at.n_modes), atol=1e-8)
    assert np.all(np.diff(at.variances) <= 0) and np.all(at.variances >= 0)
    for c in C:
        assert c[np.argmax(np.abs(c))] > 0
    centred = aligned - aligned.mean(axis=0)
    total = (centred ** 2).sum() / (len(X) - 1)
    assert at.variances.sum() == pytest.approx(total, rel=1e-8)

def test_reconstruction_round_trip():
    _, X = phantom_shapes()
    at, aligned = build_atlas(X)
    for a in aligned:
        rec = at.reconstruct(project(at, a, prealigned=True))
        assert np.linalg.norm(rec - a) <= 1e-8 * np.linalg.norm(a)
        # the aligned training shapes sit at their optimal pose already
        assert np.allclose(project(at, a), project(at, a, prealigned=True), atol=1e-6)

def test_project_examples():
    _, X = phantom_shapes()
    at, _ = build_atlas(X)
    assert np.allclose(project(at, at.mean, prealigned=True), 0, atol=1e-12)
    s = project(at, at.mean + 2 * at.components[0], m=4, prealigned=True)
    assert np.allclose(s, [2, 0, 0, 0], atol=1e-10)
    with pytest.raises(ValueError):
        project(at, at.mean, m=at.n_modes + 1)
    with pytest.raises(ValueError):
        project(at, at.mean[:-3])
    z = project(at, at.mean + 2 * at.components[0], m=2, prealigned=True, standardize=True)
    assert z[0] == pytest.approx(2 / np.sqrt(at.variances[0]))

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_scores_rigid_invariant(seed):
    _, X = phantom_shapes()
    at, _ = build_atlas(X[:-1])
    rng = np.random.default_rng(seed)
    v = X[-1]
    moved = rigid(v, random_rotation(rng), rng.normal(scale=100, size=3))
    assert np.max(np.abs(project(at, moved) - project(at, v))) < 1e-6

def test_scores_rigid_invariant_through_fit():
    cases, X = phantom_shapes()
    at, _ = build_atlas(X[:-1])
    rng = np.random.default_rng(8)
    moved = transform_case(cases[-1], random_rotation(rng), rng.normal(scale=80, size=3))
    v = shape_vector({k: f.model for k, f in fit_case(moved).items()})
    assert np.max(np.abs(project(at, v) - project(at, X[-1]))) < 1e-6

def test_align_to_frozen_mean():
    _, X = phantom_shapes()
    at, aligned = build_atlas(X)
    rng = np.random.default_rng(6)
    moved = rigid(aligned[3], random_rotation(rng), rng.normal(size=3) * 40)
    out, tr = align_to(moved, at.mean)
    assert np.allclose(out, aligned[3], atol=1e-6)

def test_atlas_invariants():
    with pytest.raises(ValueError):
        Atlas(np.zeros(6), np.ones((1, 6)), np.ones(1))
    with pytest.raises(ValueError):
        Atlas(np.zeros(2), np.eye(2), np.array([1.0, 2.0]))
