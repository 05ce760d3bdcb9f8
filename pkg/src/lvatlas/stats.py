"""Agreement and association statistics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from sklearn.model_selection import StratifiedKFold

LOA_Z = 1.96
COEF_FLAG = 50.0


class StatsWarning(UserWarning):
    pass


def dice(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0      # both empty: treated as perfect agreement
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def landmark_distance(p, q, spacing=(1.0, 1.0)) -> float:
    """Distance in mm between two image points (row, col) on the same plane."""
    d = (np.asarray(p, float) - np.asarray(q, float)) * np.asarray(spacing, float)
    return float(np.linalg.norm(d))


# -- intraclass correlation ------------------------------------------------

@dataclass(frozen=True)
class AnovaTable:
    n: int
    k: int
    msr: float      # between targets (rows)
    msc: float      # between raters (columns)
    mse: float      # residual


def two_way_anova(table) -> AnovaTable:
    Y = np.asarray(table, dtype=float)
    if Y.ndim != 2:
        raise ValueError("agreement table must be n targets x k raters")
    n, k = Y.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 targets and 2 raters")
    if not np.all(np.isfinite(Y)):
        raise ValueError("agreement table has missing cells")
    g = Y.mean()
    ssr = k * np.sum((Y.mean(axis=1) - g) ** 2)
    ssc = n * np.sum((Y.mean(axis=0) - g) ** 2)
    sst = np.sum((Y - g) ** 2)
    sse = sst - ssr - ssc
    return AnovaTable(n, k, ssr / (n - 1), ssc / (k - 1), sse / ((n - 1) * (k - 1)))


ICC_FORMS = ("2,1", "2,k", "3,1", "3,k")


def icc(table, form: str = "2,1") -> tuple[float, tuple]:
    """Intraclass correlation and flags.

    "2,1": two-way random, absolute agreement, single rater (default).
    "2,k": as above for the mean of k raters; "3,*": consistency forms.
    """
    if form not in ICC_FORMS:
        raise ValueError(f"unknown ICC form {form!r}; choose from {ICC_FORMS}")
    a = two_way_anova(table)
    n, k = a.n, a.k
    if form == "2,1":
        den = a.msr + (k - 1) * a.mse + k / n * (a.msc - a.mse)
        num = a.msr - a.mse
    elif form == "2,k":
        den = a.msr + (a.msc - a.mse) / n
        num = a.msr - a.mse
    elif form == "3,1":
        den = a.msr + (k - 1) * a.mse
        num = a.msr - a.mse
    else:
        den = a.msr
        num = a.msr - a.mse
    total = np.var(np.asarray(table, float))
    if total == 0 or den == 0:
        return 1.0, ("zero_variance",)
    return float(num / den), ()


def icc2_1(table) -> float:
    return icc(table, "2,1")[0]


# -- paired agreement ------------------------------------------------------

@dataclass(frozen=True)
class BlandAltmanResult:
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    means: np.ndarray = field(repr=False)
    diffs: np.ndarray = field(repr=False)


def bland_altman(x, y) -> BlandAltmanResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1D sequences")
    if len(x) < 2:
        raise ValueError("need at least 2 pairs")
    d = x - y
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    return BlandAltmanResult(bias, sd, bias - LOA_Z * sd, bias + LOA_Z * sd, (x + y) / 2, d)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1D sequences")
    if len(x) < 3:
        raise ValueError("need at least 3 pairs")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise ValueError("zero variance")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


# -- logistic regression ---------------------------------------------------

@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray            # intercept first
    iterations: int
    converged: bool
    flags: tuple = ()

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.coef[0] + X @ self.coef[1:]

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision(X))


def _sigmoid(t):
    return np.exp(-np.logaddexp(0.0, -t))


def logistic_fit(X, y, ridge: float = 1e-6, tol: float = 1e-8, max_iters: int = 100) -> LogisticFit:
    """Ridge-penalised logistic regression by Newton / IRLS; intercept unpenalised."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    if len(y) != n:
        raise ValueError("X and y lengths differ")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if n <= m:
        raise ValueError(f"need more cases ({n}) than predictors ({m})")
    if y.min() == y.max():
        raise ValueError("labels contain a single class")
    A = np.hstack([np.ones((n, 1)), X])
    P = np.full(m + 1, ridge)
    P[0] = 0.0
    beta = np.zeros(m + 1)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        mu = _sigmoid(A @ beta)
        w = np.maximum(mu * (1 - mu), 1e-12)
        grad = A.T @ (y - mu) - P * beta
        H = (A * w[:, None]).T @ A + np.diag(P)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    flags = []
    if np.any(np.abs(beta) > COEF_FLAG):
        flags.append("large_coefficient")
    if not converged:
        flags.append("not_converged")
    return LogisticFit(beta, it, converged, tuple(flags))


def logistic_standard_errors(fit: LogisticFit, X, ridge: float = 1e-6) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    A = np.hstack([np.ones((len(X), 1)), X])
    mu = _sigmoid(A @ fit.coef)
    P = np.full(A.shape[1], ridge)
    P[0] = 0.0
    H = (A * (mu * (1 - mu))[:, None]).T @ A + np.diag(P)
    return np.sqrt(np.diag(np.linalg.inv(H)))


# -- ROC -------------------------------------------------------------------

def _classes(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1D sequences")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both classes must be present")
    return pos, neg


def _placements(pos, neg):
    """Per-positive and per-negative placement values (ties count one half)."""
    allv = np.concatenate([pos, neg])
    rank_all = sps.rankdata(allv)
    rank_pos = sps.rankdata(pos)
    rank_neg = sps.rankdata(neg)
    m, n = len(pos), len(neg)
    # number of negatives below each positive (+ half ties)
    v10 = (rank_all[:m] - rank_pos) / n
    # fraction of positives above each negative (+ half ties)
    v01 = 1.0 - (rank_all[m:] - rank_neg) / m
    return v10, v01


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(s+ > s-) + P(s+ = s-) / 2."""
    pos, neg = _classes(scores, labels)
    v10, _ = _placements(pos, neg)
    return float(v10.mean())


def roc_curve(scores, labels):
    """(fpr, tpr, thresholds) with thresholds descending, starting at +inf."""
    pos, neg = _classes(scores, labels)
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    thr = np.unique(s)[::-1]
    tpr = [(pos >= t).mean() for t in thr]
    fpr = [(neg >= t).mean() for t in thr]
    return (np.concatenate([[0.0], fpr]), np.concatenate([[0.0], tpr]),
            np.concatenate([[np.inf], thr]))


@dataclass(frozen=True)
class DeLongResult:
    auc_a: float
    auc_b: float
    z: float
    p_two_sided: float
    var: float


def delong_test(scores_a, scores_b, labels) -> DeLongResult:
    """Paired DeLong test of two AUCs on the same cases."""
    pa, na = _classes(scores_a, labels)
    pb, nb = _classes(scores_b, labels)
    va10, va01 = _placements(pa, na)
    vb10, vb01 = _placements(pb, nb)
    auc_a, auc_b = float(va10.mean()), float(vb10.mean())
    m, n = len(va10), len(va01)
    s10 = np.cov(np.stack([va10, vb10]), ddof=1) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(np.stack([va01, vb01]), ddof=1) if n > 1 else np.zeros((2, 2))
    S = s10 / m + s01 / n
    var = float(S[0, 0] + S[1, 1] - 2 * S[0, 1])
    diff = auc_a - auc_b
    if var <= 1e-300 or np.array_equal(np.asarray(scores_a, float), np.asarray(scores_b, float)):
        if diff == 0:
            return DeLongResult(auc_a, auc_b, 0.0, 1.0, max(var, 0.0))
        raise ValueError("degenerate variance")
    z = diff / np.sqrt(var)
    p = float(2 * sps.norm.sf(abs(z)))
    return DeLongResult(auc_a, auc_b, float(z), min(p, 1.0), var)


# -- cross-validated association -------------------------------------------

@dataclass(frozen=True)
class AssociationResult:
    factor: str
    auc: float
    fold_coefs: tuple
    oof_scores: np.ndarray = field(repr=False)
    folds: np.ndarray = field(repr=False)
    flags: tuple = ()


def stratified_folds(labels, k: int = 10, seed: int = 0) -> np.ndarray:
    """Fold index per case from a seeded stratified split."""
    y = np.asarray(labels)
    counts = np.bincount(y.astype(int), minlength=2)
    if counts.min() < k:
        raise ValueError(f"minority class has {counts.min()} cases, fewer than k={k}; "
                         "use a smaller k")
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = np.empty(len(y), dtype=int)
    for f, (_, test) in enumerate(skf.split(np.zeros(len(y)), y)):
        folds[test] = f
    return folds


def _zscore(train, test):
    mu = train.mean(axis=0)
    sd = train.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return (train - mu) / sd, (test - mu) / sd


def _fold_fit(X, y, folds, f, ridge, standardize):
    tr, te = folds != f, folds == f
    Xtr, Xte = X[tr], X[te]
    if standardize:
        Xtr, Xte = _zscore(Xtr, Xte)
    fit = logistic_fit(Xtr, y[tr], ridge)
    return fit, fit.decision(Xte)


def cv_associate(scores, labels, k: int = 10, seed: int = 0, factor: str = "factor",
                 ridge: float = 1e-6, standardize: bool = False, min_cases: int = 50,
                 mapper=map) -> AssociationResult:
    """Pooled out-of-fold AUC of a logistic model on PC scores.

    ``mapper`` may be a parallel map; folds are fixed before dispatch and
    results are collected in fold order.
    """
    X = np.asarray(scores, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels).astype(int)
    if len(X) != len(y):
        raise ValueError("scores and labels lengths differ")
    if len(y) < min_cases:
        raise ValueError(f"need at least {min_cases} cases, got {len(y)}")
    folds = stratified_folds(y, k, seed)
    for f in range(k):
        if len(np.unique(y[folds == f])) < 2:
            raise ValueError(f"fold {f} lacks a class; use a smaller k")
    results = list(mapper(_fold_fit, *zip(*[(X, y, folds, f, ridge, standardize) for f in range(k)])))
    oof = np.empty(len(y))
    coefs, flags = [], set()
    for f, (fit, dec) in enumerate(results):
        oof[folds == f] = dec
        coefs.append(fit.coef)
        flags.update(fit.flags)
    if flags:
        warnings.warn(f"{factor}: fold fits flagged {sorted(flags)}", StatsWarning, stacklevel=2)
    return AssociationResult(factor, roc_auc(oof, y), tuple(coefs), oof, folds, tuple(sorted(flags)))
