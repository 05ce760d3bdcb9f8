"""Command-line pipeline: phantom -> fit -> measure / atlas -> associate, plus agree and report.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
Worker count: --workers, else the LVATLAS_WORKERS environment variable, else 1.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as lio
from .assembly import FRAMES, mask_from_contours, CAVITY, MYOCARDIUM
from .atlas import build_atlas, project, shape_vector
from .geometry import patient_to_image
from .io import DataError
from .measures import clinical_result
from .model import FitError, MisregistrationConfig, fit_case
from .phantom import CohortRanges, Effect, LATENT_NAMES, cohort_member
from .stats import (bland_altman, cv_associate, delong_test, dice, icc, landmark_distance,
                    pearson, roc_curve)

log = logging.getLogger("lvatlas")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
WORKERS_ENV = "LVATLAS_WORKERS"
MEASURE_COLUMNS = ("case_id", "lvedv_ml", "lvesv_ml", "lvm_g", "bsa_m2",
                   "lvedvi", "lvesvi", "lvmi", "lvef_pct", "flags")
DEFAULT_MODES = 20


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid(text):
    try:
        a, b = text.lower().split("x")
        a, b = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NxM, got {text!r}")
    if a < 3 or b < 2:
        raise argparse.ArgumentTypeError("grid needs at least 3x2")
    return a, b


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def workers_from(args) -> int:
    if getattr(args, "workers", None) is not None:
        n = args.workers
    else:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise UsageError("worker count must be at least 1")
    return n


def pmap(fn, items, workers: int):
    """Order-preserving map, in-process for one worker."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=1))


def _json_files(path, what):
    p = Path(path)
    if not p.exists():
        raise DataError(f"{p}: no such {what} directory")
    if p.is_file():
        return [p]
    return sorted(x for x in p.iterdir() if x.suffix == ".json")


# -- phantom -----------------------------------------------------------------

def _phantom_one(job):
    i, seed, ranges, effects, out, clean = job
    case, truth = cohort_member(i, seed, ranges, effects)
    lio.save_case(case, out / "cases" / f"{case.case_id}.json")
    lio.save_truth(truth, case.case_id, out / "truth" / f"{case.case_id}.truth.json")
    if clean:
        twin, _ = cohort_member(i, seed, ranges, effects, noise=False, shifts=False)
        lio.save_case(twin, out / "clean" / "cases" / f"{twin.case_id}.json")
    return case.case_id, truth.labels


def cmd_phantom(args):
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    if args.target not in LATENT_NAMES:
        raise UsageError(f"--target must be one of {', '.join(LATENT_NAMES)}")
    out = Path(args.out_dir)
    ranges = CohortRanges(noise_mm=args.noise_mm, shift_mm=args.shift_mm)
    effects = (Effect(args.factor, args.target, args.effect_slope),)
    jobs = [(i, args.seed, ranges, effects, out, args.clean) for i in range(args.n)]
    results = pmap(_phantom_one, jobs, workers_from(args))
    header = ["case_id", args.factor]
    lio.write_csv(out / "cohort.csv", header, [[cid, lab[args.factor]] for cid, lab in results])
    log.info("wrote %d phantom cases to %s", len(results), out)


# -- fit ---------------------------------------------------------------------

def _fit_one(job):
    path, out_dir, config, correct = job
    case = lio.load_case(path)
    frames, summary = {}, []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fits = fit_case(case, config, correct, FRAMES)
    for name, ff in fits.items():
        model, shifts = ff.model, ff.shifts
        frames[name] = lio.frame_model_to_dict(model, shifts, ff.converged, ff.iterations)
        max_shift = 0.0 if shifts is None else float(shifts.magnitudes.max())
        summary.append([case.case_id, name, model.rms_residual, max_shift, ff.iterations,
                        int(ff.converged), ";".join(model.flags)])
    lio.save_model(lio.model_doc(case.case_id, frames), Path(out_dir) / f"{case.case_id}.model.json")
    return summary


def cmd_fit(args):
    files = _json_files(args.cases, "case")
    kt, kz = args.grid
    config = MisregistrationConfig(lambda_stiff=args.lambda_stiff, lambda_final=args.lam,
                                   max_iters=args.max_iters, tol_mm=args.tol_mm,
                                   ktheta=kt, kz=kz)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(f, out, config, not args.no_shift_correction) for f in files]
    rows = [r for rs in pmap(_fit_one, jobs, workers_from(args)) for r in rs]
    lio.write_csv(out / "fit_summary.csv",
                  ["case_id", "frame", "rms_residual_mm", "max_shift_mm", "iterations",
                   "converged", "flags"], rows)
    log.info("fitted %d cases", len(files))


# -- measure -----------------------------------------------------------------

def _measure_one(job):
    path, formula = job
    case = lio.load_case(path)
    r = clinical_result(case, formula)
    return [case.case_id, r.lvedv_ml, r.lvesv_ml, r.lvm_g, r.bsa_m2, r.lvedvi, r.lvesvi,
            r.lvmi, r.lvef_pct, ";".join(r.flags)]


def cmd_measure(args):
    files = _json_files(args.cases, "case")
    rows = pmap(_measure_one, [(f, args.bsa_formula) for f in files], workers_from(args))
    text = lio.csv_text(MEASURE_COLUMNS, rows)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        lio.write_text(args.out, text)


# -- atlas -------------------------------------------------------------------

def _shape_one(job):
    path, ntheta, nz = job
    cid, frames, _ = lio.load_model(path)
    missing = [f for f in FRAMES if f not in frames]
    if missing:
        raise DataError(f"{path}: model lacks frame(s) {', '.join(missing)}")
    return cid, shape_vector({k: v[0] for k, v in frames.items()}, ntheta, nz)


def _score_rows(ids, S):
    return [[cid] + [float(v) for v in s] for cid, s in zip(ids, S)]


def cmd_atlas(args):
    files = [f for f in _json_files(args.models, "model") if f.name.endswith(".model.json")]
    ntheta, nz = args.sample_grid
    workers = workers_from(args)
    if args.project_onto:
        atlas, _, _ = lio.load_atlas(args.project_onto)
        ntheta, nz = atlas.ntheta, atlas.nz
    pairs = pmap(_shape_one, [(f, ntheta, nz) for f in files], workers)
    ids = [p[0] for p in pairs]
    out = Path(args.out_dir)
    if args.project_onto:
        if not pairs:
            raise DataError("no models to project")
        m = min(args.modes, atlas.n_modes)
        S = np.array([project(atlas, v, m, standardize=args.standardize) for _, v in pairs])
    else:
        if len(pairs) < 2:
            raise DataError(f"need at least 2 models for an atlas, found {len(pairs)}")
        X = np.stack([p[1] for p in pairs])
        atlas, aligned = build_atlas(X, args.scaling, ntheta, nz)
        total = float(np.sum((aligned - aligned.mean(axis=0)) ** 2) / (len(X) - 1))
        m = min(args.modes, atlas.n_modes)
        S = np.array([project(atlas, v, m, prealigned=True, standardize=args.standardize)
                      for v in aligned])
        keep = atlas.n_modes if args.keep_all_modes else m
        stored = replace(atlas, components=atlas.components[:keep], variances=atlas.variances[:keep])
        lio.save_atlas(stored, ids, total, out / "atlas.json")
        var = atlas.variances
        cum = np.cumsum(var)
        lio.write_csv(out / "variance.csv", ["mode", "variance_mm2", "fraction", "cumulative"],
                      [[k + 1, float(v), float(v / total) if total else 0.0,
                        float(c / total) if total else 0.0] for k, (v, c) in enumerate(zip(var, cum))])
    header = ["case_id"] + [f"pc{k + 1:02d}" for k in range(S.shape[1])]
    lio.write_csv(out / "scores.csv", header, _score_rows(ids, S))


# -- associate ---------------------------------------------------------------

def _aligned_scores(scores_path, cohort: lio.CohortTable, modes):
    ids, X = lio.read_scores(scores_path)
    idx = {c: i for i, c in enumerate(ids)}
    missing = [c for c in cohort.case_ids if c not in idx]
    extra = sorted(set(ids) - set(cohort.case_ids))
    if missing or extra:
        raise DataError(f"{scores_path}: case ids differ from cohort; "
                        f"missing {missing[:10]}, unexpected {extra[:10]}")
    X = X[[idx[c] for c in cohort.case_ids]]
    return X[:, : min(modes, X.shape[1])]


def cmd_associate(args):
    cohort = lio.read_cohort(args.cohort)
    Xa = _aligned_scores(args.scores, cohort, args.modes)
    Xb = _aligned_scores(args.compare, cohort, args.modes) if args.compare else None
    workers = workers_from(args)
    rows, roc_rows, oof_rows = [], [], []
    header = ["factor", "n", "n_positive", "auc", "flags"]
    if Xb is not None:
        header += ["auc_compare", "delong_z", "delong_p"]
    for factor in sorted(cohort.labels):
        y = np.asarray(cohort.labels[factor])
        if args.permute_seed is not None:
            y = np.random.default_rng(args.permute_seed).permutation(y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as ex:
                    ra = cv_associate(Xa, y, args.k, args.seed, factor, standardize=args.standardize,
                                      mapper=ex.map)
            else:
                ra = cv_associate(Xa, y, args.k, args.seed, factor, standardize=args.standardize)
            rb = None
            if Xb is not None:
                rb = cv_associate(Xb, y, args.k, args.seed, factor, standardize=args.standardize)
        row = [factor, len(y), int(y.sum()), ra.auc, ";".join(ra.flags)]
        if rb is not None:
            d = delong_test(ra.oof_scores, rb.oof_scores, y)
            row += [rb.auc, d.z, d.p_two_sided]
        rows.append(row)
        for src, res in (("scores", ra), ("compare", rb)):
            if res is None:
                continue
            fpr, tpr, thr = roc_curve(res.oof_scores, y)
            roc_rows += [[factor, src, float(a), float(b), float(t)] for a, b, t in zip(fpr, tpr, thr)]
            oof_rows += [[cid, factor, src, int(f), float(s)] for cid, f, s
                         in zip(cohort.case_ids, res.folds, res.oof_scores)]
    lio.write_csv(args.out, header, rows)
    base = Path(args.out)
    lio.write_csv(base.with_name(base.stem + "_roc.csv"),
                  ["factor", "source", "fpr", "tpr", "threshold"], roc_rows)
    lio.write_csv(base.with_name(base.stem + "_oof.csv"),
                  ["case_id", "factor", "source", "fold", "score"], oof_rows)


# -- agree -------------------------------------------------------------------

MEASURES = MEASURE_COLUMNS[1:-1]


def _measure_table(path):
    header, rows = lio.read_csv(path)
    if list(header[: len(MEASURE_COLUMNS)]) != list(MEASURE_COLUMNS):
        raise DataError(f"{path}: not a measure CSV (header {header})")
    out = {}
    for r in rows:
        out[r[0]] = {m: float(v) for m, v in zip(MEASURES, r[1:-1])}
    return out


def _check_ids(a: dict, b: dict):
    missing_b = sorted(set(a) - set(b))
    missing_a = sorted(set(b) - set(a))
    if missing_a or missing_b:
        raise DataError(f"case ids differ: only in A {missing_b}, only in B {missing_a}")
    return sorted(a)


def _agreement_rows(ta, tb, ids, form="2,1"):
    rows, pairs = [], []
    for m in MEASURES:
        x = np.array([tb[c][m] for c in ids])      # test set
        y = np.array([ta[c][m] for c in ids])      # reference set
        if len(ids) < 2:
            rows.append([m, len(ids)] + [""] * 7)
            continue
        value, flags = icc(np.stack([y, x], axis=1), form)
        try:
            r = pearson(x, y)
        except ValueError:
            r = float("nan")
        ba = bland_altman(x, y)
        rows.append([m, len(ids), value, r, ba.bias, ba.sd, ba.loa_low, ba.loa_high, ";".join(flags)])
        pairs += [[m, c, float(mn), float(d)] for c, mn, d in zip(ids, ba.means, ba.diffs)]
    return rows, pairs



def _slice_dice(ca, cb):
    rows = []
    for frame in FRAMES:
        sa, sb = ca.frames.get(frame, ()), cb.frames.get(frame, ())
        if len(sa) != len(sb):
            raise DataError(f"{ca.case_id} {frame}: {len(sa)} vs {len(sb)} slices")
        for k, (a, b) in enumerate(zip(sa, sb)):
            if np.max(np.abs(a.plane.origin - b.plane.origin)) > 1e-6:
                raise DataError(f"{ca.case_id} {frame} slice {k}: planes differ")
            if a.epi is None or b.epi is None:
                continue
            ma = mask_from_contours(a.endo, a.epi, a.plane).grid
            mb = mask_from_contours(b.endo, b.epi, a.plane).grid
            rows.append([ca.case_id, frame, k, dice(ma == CAVITY, mb == CAVITY),
                         dice(ma == MYOCARDIUM, mb == MYOCARDIUM)])
    return rows


def _landmark_rows(ca, cb):
    la, lb = ca.landmarks, cb.landmarks
    rows = []
    for name, pa, pb, plane in (("mv_2ch", la.mv_2ch, lb.mv_2ch, la.plane_2ch),
                                ("mv_4ch", la.mv_4ch, lb.mv_4ch, la.plane_4ch)):
        for k, (p, q) in enumerate(zip(pa, pb)):
            if plane is not None:
                d = landmark_distance(patient_to_image(p, plane)[:2], patient_to_image(q, plane)[:2],
                                      plane.pixel_spacing)
            else:
                d = float(np.linalg.norm(p - q))
            rows.append([ca.case_id, f"{name}_{k}", d])
    for key in sorted(set(la.rv_inserts) & set(lb.rv_inserts)):
        for k in range(2):
            d = float(np.linalg.norm(la.rv_inserts[key][k] - lb.rv_inserts[key][k]))
            rows.append([ca.case_id, f"rv_{key}_{k}", d])
    return rows


def cmd_agree(args):
    out = Path(args.out_dir)
    if bool(args.measures_a) != bool(args.measures_b):
        raise UsageError("--measures-a and --measures-b go together")
    if bool(args.cases_a) != bool(args.cases_b):
        raise UsageError("--cases-a and --cases-b go together")
    if not (args.cases_a or args.measures_a):
        raise UsageError("give --cases-a/--cases-b and/or --measures-a/--measures-b")
    if args.cases_a:
        # annotation agreement; the measures come from the cases unless CSVs are given
        fa = {lio.load_case(f).case_id: f for f in _json_files(args.cases_a, "case")}
        fb = {lio.load_case(f).case_id: f for f in _json_files(args.cases_b, "case")}
        ids = _check_ids(fa, fb)
        dice_rows, lm_rows, ta, tb = [], [], {}, {}
        for cid in ids:
            ca, cb = lio.load_case(fa[cid]), lio.load_case(fb[cid])
            dice_rows += _slice_dice(ca, cb)
            lm_rows += _landmark_rows(ca, cb)
            if not args.measures_a:
                for tab, c in ((ta, ca), (tb, cb)):
                    r = clinical_result(c, args.bsa_formula)
                    tab[cid] = {m: getattr(r, m) for m in MEASURES}
        lio.write_csv(out / "dice.csv", ["case_id", "frame", "slice", "dice_cavity", "dice_myocardium"],
                      dice_rows)
        lio.write_csv(out / "landmarks.csv", ["case_id", "landmark", "distance_mm"], lm_rows)
    if args.measures_a:
        ta, tb = _measure_table(args.measures_a), _measure_table(args.measures_b)
        ids = _check_ids(ta, tb)
    rows, pairs = _agreement_rows(ta, tb, ids, args.icc_form)
    lio.write_csv(out / "agreement.csv",
                  ["measure", "n", f"icc_{args.icc_form.replace(',', '_')}", "pearson_r",
                   "bias", "sd", "loa_low", "loa_high", "flags"], rows)
    lio.write_csv(out / "ba_pairs.csv", ["measure", "case_id", "mean", "difference"], pairs)


# -- report -------------------------------------------------------------------

def cmd_report(args):
    from . import plotting

    src = Path(args.in_dir)
    if not src.is_dir():
        raise DataError(f"{src}: no such directory")
    out = Path(args.out_dir) if args.out_dir else src / "figures"
    rows = []
    ag = src / "agreement.csv"
    bp = src / "ba_pairs.csv"
    if ag.exists() and bp.exists():
        h, arows = lio.read_csv(ag)
        _, prows = lio.read_csv(bp)
        for r in arows:
            if r[4] == "":
                continue
            m = r[0]
            sel = [p for p in prows if p[0] == m]
            means = [float(p[2]) for p in sel]
            diffs = [float(p[3]) for p in sel]
            fig = plotting.bland_altman_figure(means, diffs, float(r[4]), float(r[6]), float(r[7]),
                                               m, out / f"bland_altman_{m}.png")
            rows.append([fig.name, "agreement.csv", m, "bias", float(r[4])])
    for roc in sorted(src.glob("*_roc.csv")):
        _, rr = lio.read_csv(roc)
        assoc = roc.with_name(roc.name[: -len("_roc.csv")] + ".csv")
        aucs = {}
        if assoc.exists():
            ah, ar = lio.read_csv(assoc)
            for r in ar:
                aucs[(r[0], "scores")] = float(r[3])
                if "auc_compare" in ah:
                    aucs[(r[0], "compare")] = float(r[ah.index("auc_compare")])
        for factor in sorted({r[0] for r in rr}):
            curves = {}
            for source in sorted({r[1] for r in rr if r[0] == factor}):
                pts = [r for r in rr if r[0] == factor and r[1] == source]
                curves[source] = ([float(p[2]) for p in pts], [float(p[3]) for p in pts],
                                  aucs.get((factor, source), float("nan")))
            fig = plotting.roc_figure(curves, out / f"roc_{assoc.stem}_{factor}.png", factor)
            for source, (_, _, auc) in curves.items():
                rows.append([fig.name, roc.name, f"{factor}:{source}", "auc", auc])
    var = src / "variance.csv"
    if var.exists():
        _, vr = lio.read_csv(var)
        v = [float(r[1]) for r in vr]
        fig = plotting.variance_figure(v, out / "mode_variance.png")
        top = float(vr[0][2]) if vr else float("nan")
        rows.append([fig.name, "variance.csv", "mode1", "fraction", top])
    if not rows:
        raise DataError(f"{src}: no agreement, ROC or variance tables found")
    lio.write_csv(out / "report.csv", ["figure", "source", "item", "statistic", "value"], rows)


# -- entry point ------------------------------------------------------------------

def build_parser() -> Parser:
    p = Parser(prog="lvatlas", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=Parser, required=True)

    def with_workers(sp):
        sp.add_argument("--workers", type=int, default=None,
                        help=f"worker processes (default ${WORKERS_ENV} or 1)")
        return sp

    s = with_workers(sub.add_parser("phantom", help="generate a synthetic cohort"))
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-mm", type=_nonneg_float, default=0.5)
    s.add_argument("--shift-mm", type=_nonneg_float, default=0.0)
    s.add_argument("--effect-slope", type=float, default=2.0)
    s.add_argument("--factor", default="hypertension")
    s.add_argument("--target", default="wall_thickness",
                   help="generating parameter the factor depends on")
    s.add_argument("--clean", action="store_true",
                   help="also write noiseless, unshifted twins under OUT/clean/cases")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_phantom)

    s = with_workers(sub.add_parser("fit", help="fit LV models to case files"))
    s.add_argument("--cases", required=True, help="case file or directory")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--lambda", dest="lam", type=_nonneg_float, default=1e-3)
    s.add_argument("--lambda-stiff", type=_nonneg_float, default=1e2)
    s.add_argument("--max-iters", type=int, default=5)
    s.add_argument("--tol-mm", type=_positive_float, default=0.1)
    s.add_argument("--grid", type=_grid, default=(8, 6), help="control grid NTHETAxNZ")
    s.add_argument("--no-shift-correction", action="store_true")
    s.set_defaults(func=cmd_fit)

    s = with_workers(sub.add_parser("measure", help="clinical volumes and mass as CSV"))
    s.add_argument("--cases", required=True)
    s.add_argument("--out", default=None, help="CSV path (default stdout)")
    s.add_argument("--bsa-formula", choices=("mosteller", "dubois"), default="mosteller")
    s.set_defaults(func=cmd_measure)

    s = with_workers(sub.add_parser("atlas", help="Procrustes + PCA atlas and scores"))
    s.add_argument("--models", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--modes", type=int, default=DEFAULT_MODES)
    s.add_argument("--sample-grid", type=_grid, default=(24, 12))
    s.add_argument("--scaling", action="store_true", help="also remove size")
    s.add_argument("--standardize", action="store_true", help="scores in units of mode SD")
    s.add_argument("--keep-all-modes", action="store_true", help="store every mode in atlas.json")
    s.add_argument("--project-onto", default=None, help="existing atlas.json; only write scores")
    s.set_defaults(func=cmd_atlas)

    s = with_workers(sub.add_parser("associate", help="cross-validated AUC per factor"))
    s.add_argument("--scores", required=True)
    s.add_argument("--cohort", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--compare", default=None, help="second scores CSV for a DeLong comparison")
    s.add_argument("--modes", type=int, default=DEFAULT_MODES)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--standardize", action="store_true")
    s.add_argument("--permute-seed", type=int, default=None,
                   help="shuffle labels with this seed (null check)")
    s.set_defaults(func=cmd_associate)

    s = sub.add_parser("agree", help="agreement between two annotation or measure sets")
    s.add_argument("--cases-a")
    s.add_argument("--cases-b")
    s.add_argument("--measures-a")
    s.add_argument("--measures-b")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--icc-form", choices=("2,1", "2,k", "3,1", "3,k"), default="2,1")
    s.add_argument("--bsa-formula", choices=("mosteller", "dubois"), default="mosteller")
    s.set_defaults(func=cmd_agree)

    s = sub.add_parser("report", help="render figures from exported tables")
    s.add_argument("--in-dir", required=True)
    s.add_argument("--out-dir", default=None)
    s.set_defaults(func=cmd_report)
    return p


def _validate(args):
    for name in ("modes", "k", "max_iters"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be at least 1")
    if getattr(args, "k", 2) < 2:
        raise UsageError("--k must be at least 2")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"lvatlas: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"lvatlas: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"lvatlas: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"lvatlas: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
