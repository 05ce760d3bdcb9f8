"""Versioned JSON documents for cases, models, atlases and phantom truth, plus CSV tables.

Every document carries ``format`` and ``version``; loaders validate against
the schemas below (unknown fields rejected).  Floats are written with
Python's shortest round-trip representation, so load(save(x)) is exact.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
from pathlib import Path

import jsonschema
import numpy as np

from .assembly import FRAMES, Case, SliceData
from .atlas import Atlas
from .geometry import Contour3D, ContourKind, ImagePlane, LandmarkSet
from .model import LVFrameAxes, LVModel, ShiftSet
from .phantom import CohortTable, PhantomTruth

VERSION = 1


class DataError(ValueError):
    """Input file missing, malformed or failing schema validation."""


# -- schemas ----------------------------------------------------------------

_num = {"type": "number"}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_points = {"type": "array", "items": _vec3}
# bulk numeric arrays: structure here, shape and finiteness checked with numpy
_bulk = {"type": "array"}
_grid = {"type": "array", "items": {"type": "array", "items": _num}}
_flags = {"type": "array", "items": {"type": "string"}}


def _obj(props, required=None):
    return {"type": "object", "properties": props, "required": list(required or props),
            "additionalProperties": False}


def _header(fmt):
    return {"format": {"const": fmt}, "version": {"const": VERSION}}


_plane = _obj({
    "origin": _vec3, "row_dir": _vec3, "col_dir": _vec3,
    "pixel_spacing": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
    "slice_thickness": _num, "slice_gap": _num,
    "rows": {"type": "integer", "minimum": 1}, "cols": {"type": "integer", "minimum": 1},
})
_contour = {"type": ["array", "null"], "minItems": 3}
_slice = _obj({"plane": _plane, "endo": _contour, "epi": _contour})
_frames = {"type": "object", "propertyNames": {"enum": list(FRAMES)},
           "additionalProperties": {"type": "array", "items": _slice, "minItems": 1}}
_landmarks = _obj({
    "mv_2ch": _points, "mv_4ch": _points,
    "rv_inserts": {"type": "object", "propertyNames": {"pattern": "^[0-9]+$"},
                   "additionalProperties": {"type": "array", "items": _vec3,
                                            "minItems": 2, "maxItems": 2}},
    "plane_2ch": {"oneOf": [{"type": "null"}, _plane]},
    "plane_4ch": {"oneOf": [{"type": "null"}, _plane]},
})

CASE_SCHEMA = _obj({**_header("lvatlas.case"), "case_id": {"type": "string", "minLength": 1},
                    "height_cm": _num, "weight_kg": _num,
                    "frames": _frames, "landmarks": _landmarks})

_axes = _obj({"base_center": _vec3, "apex": _vec3, "long_axis": _vec3, "septal_ref": _vec3})
_frame_model = _obj({
    "axes": _axes, "endo_ctrl": _grid, "epi_ctrl": _grid, "lambda": _num,
    "rms_residual": {"oneOf": [_num, {"type": "null"}]}, "flags": _flags,
    "shifts_mm": {"type": "array", "items": {"type": "array", "items": _num,
                                              "minItems": 2, "maxItems": 2}},
    "shift_corrected": {"type": "boolean"}, "converged": {"type": "boolean"},
    "iterations": {"type": "integer", "minimum": 0},
})
MODEL_SCHEMA = _obj({**_header("lvatlas.model"), "case_id": {"type": "string"},
                     "frames": {"type": "object", "propertyNames": {"enum": list(FRAMES)},
                                "additionalProperties": _frame_model}})

ATLAS_SCHEMA = _obj({**_header("lvatlas.atlas"),
                     "case_ids": {"type": "array", "items": {"type": "string"}},
                     "ntheta": {"type": "integer", "minimum": 3},
                     "nz": {"type": "integer", "minimum": 2},
                     "scaling": {"type": "boolean"},
                     "mean": _bulk,
                     "components": _bulk,
                     "variances": {"type": "array", "items": _num},
                     "total_variance": _num})

TRUTH_SCHEMA = _obj({**_header("lvatlas.truth"), "case_id": {"type": "string"},
                     "edv_ml": _num, "esv_ml": _num, "myo_volume_ml": _num,
                     "mass_g": _num, "lvef_pct": _num,
                     "base_center": _vec3, "long_axis": _vec3, "septal_ref": _vec3,
                     "shifts_mm": {"type": "array", "items": {"type": "array", "items": _num}},
                     "es_shifts_mm": {"type": "array", "items": {"type": "array", "items": _num}},
                     "latent": {"type": "object", "additionalProperties": _num},
                     "labels": {"type": "object", "additionalProperties": {"enum": [0, 1]}}})

SCHEMAS = {"lvatlas.case": CASE_SCHEMA, "lvatlas.model": MODEL_SCHEMA,
           "lvatlas.atlas": ATLAS_SCHEMA, "lvatlas.truth": TRUTH_SCHEMA}


# -- low level ---------------------------------------------------------------

def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


def dumps(doc: dict) -> str:
    """Canonical text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def read_document(path, fmt: str) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: {e}") from e
    validate(doc, fmt, str(path))
    return doc


_VALIDATORS = {k: jsonschema.Draft202012Validator(v) for k, v in SCHEMAS.items()}


def validate(doc, fmt: str, where: str = "document") -> None:
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise DataError(f"{where}: expected format {fmt!r}")
    err = next(_VALIDATORS[fmt].iter_errors(doc), None)
    if err is not None:
        loc = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise DataError(f"{where}: {loc}: {err.message}")


def numeric_array(value, shape, where: str) -> np.ndarray:
    """Float array with the given shape (None = any length); finite values only."""
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise DataError(f"{where}: expected numbers") from None
    if a.ndim != len(shape) or any(s is not None and s != d for s, d in zip(shape, a.shape)):
        raise DataError(f"{where}: expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{where}: non-finite value")
    return a


# -- case --------------------------------------------------------------------

def plane_to_dict(p: ImagePlane) -> dict:
    return {"origin": _tolist(p.origin), "row_dir": _tolist(p.row_dir),
            "col_dir": _tolist(p.col_dir), "pixel_spacing": list(map(float, p.pixel_spacing)),
            "slice_thickness": float(p.slice_thickness), "slice_gap": float(p.slice_gap),
            "rows": int(p.rows), "cols": int(p.cols)}


def plane_from_dict(d: dict) -> ImagePlane:
    return ImagePlane(np.array(d["origin"]), np.array(d["row_dir"]), np.array(d["col_dir"]),
                      tuple(d["pixel_spacing"]), d["slice_thickness"], d["slice_gap"],
                      d["rows"], d["cols"])


def case_to_dict(case: Case) -> dict:
    frames = {}
    for name, slices in case.frames.items():
        frames[name] = [{"plane": plane_to_dict(s.plane),
                         "endo": None if s.endo is None else _tolist(s.endo.points),
                         "epi": None if s.epi is None else _tolist(s.epi.points)}
                        for s in slices]
    lm = case.landmarks
    return {
        "format": "lvatlas.case", "version": VERSION, "case_id": case.case_id,
        "height_cm": float(case.height_cm), "weight_kg": float(case.weight_kg),
        "frames": frames,
        "landmarks": {
            "mv_2ch": _tolist(lm.mv_2ch), "mv_4ch": _tolist(lm.mv_4ch),
            "rv_inserts": {str(k): _tolist(v) for k, v in lm.rv_inserts.items()},
            "plane_2ch": None if lm.plane_2ch is None else plane_to_dict(lm.plane_2ch),
            "plane_4ch": None if lm.plane_4ch is None else plane_to_dict(lm.plane_4ch),
        },
    }


def case_from_dict(doc: dict, where: str = "case") -> Case:
    validate(doc, "lvatlas.case", where)
    try:
        frames = {}
        for name, slices in doc["frames"].items():
            out = []
            for i, s in enumerate(slices):
                pl = plane_from_dict(s["plane"])
                cs = {}
                for kind in ContourKind:
                    raw = s[kind.value]
                    cs[kind] = None if raw is None else Contour3D(
                        numeric_array(raw, (None, 3), f"{where}: {name}[{i}].{kind.value}"), pl, kind)
                endo, epi = cs[ContourKind.ENDO], cs[ContourKind.EPI]
                out.append(SliceData(pl, endo, epi))
            frames[name] = out
        lm = doc["landmarks"]
        landmarks = LandmarkSet(
            np.array(lm["mv_2ch"]).reshape(-1, 3), np.array(lm["mv_4ch"]).reshape(-1, 3),
            {int(k): np.array(v) for k, v in lm["rv_inserts"].items()},
            None if lm["plane_2ch"] is None else plane_from_dict(lm["plane_2ch"]),
            None if lm["plane_4ch"] is None else plane_from_dict(lm["plane_4ch"]))
        return Case(doc["case_id"], frames, landmarks, doc["height_cm"], doc["weight_kg"])
    except ValueError as e:
        raise DataError(f"{where}: {e}") from e


def save_case(case: Case, path) -> None:
    write_text(path, dumps(case_to_dict(case)))


def load_case(path) -> Case:
    return case_from_dict(read_document(path, "lvatlas.case"), str(path))


# -- model -------------------------------------------------------------------

def frame_model_to_dict(model: LVModel, shifts: ShiftSet | None = None,
                        converged: bool = True, iterations: int = 0) -> dict:
    ax = model.axes
    rms = model.rms_residual
    return {
        "axes": {"base_center": _tolist(ax.base_center), "apex": _tolist(ax.apex),
                 "long_axis": _tolist(ax.long_axis), "septal_ref": _tolist(ax.septal_ref)},
        "endo_ctrl": _tolist(model.endo_ctrl), "epi_ctrl": _tolist(model.epi_ctrl),
        "lambda": float(model.lam),
        "rms_residual": None if not np.isfinite(rms) else float(rms),
        "flags": list(model.flags),
        "shifts_mm": [] if shifts is None else _tolist(shifts.offsets),
        "shift_corrected": shifts is not None,
        "converged": bool(converged), "iterations": int(iterations),
    }


def frame_model_from_dict(d: dict):
    a = d["axes"]
    axes = LVFrameAxes(np.array(a["base_center"]), np.array(a["apex"]),
                       np.array(a["long_axis"]), np.array(a["septal_ref"]))
    rms = float("nan") if d["rms_residual"] is None else d["rms_residual"]
    model = LVModel(axes, np.array(d["endo_ctrl"]), np.array(d["epi_ctrl"]), d["lambda"],
                    rms, tuple(d["flags"]))
    shifts = ShiftSet(np.array(d["shifts_mm"]).reshape(-1, 2)) if d["shift_corrected"] else None
    return model, shifts


def model_doc(case_id: str, frames: dict) -> dict:
    """``frames`` maps frame name -> frame_model_to_dict output."""
    return {"format": "lvatlas.model", "version": VERSION, "case_id": case_id,
            "frames": frames}


def save_model(doc: dict, path) -> None:
    validate(doc, "lvatlas.model")
    write_text(path, dumps(doc))


def load_model(path):
    """(case_id, {frame: (LVModel, ShiftSet | None)}, raw document)."""
    doc = read_document(path, "lvatlas.model")
    try:
        frames = {k: frame_model_from_dict(v) for k, v in doc["frames"].items()}
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    return doc["case_id"], frames, doc


# -- atlas -------------------------------------------------------------------

def atlas_to_dict(atlas: Atlas, case_ids, total_variance: float) -> dict:
    return {"format": "lvatlas.atlas", "version": VERSION, "case_ids": list(case_ids),
            "ntheta": int(atlas.ntheta), "nz": int(atlas.nz), "scaling": bool(atlas.scaling),
            "mean": _tolist(atlas.mean), "components": _tolist(atlas.components),
            "variances": _tolist(atlas.variances), "total_variance": float(total_variance)}


def save_atlas(atlas: Atlas, case_ids, total_variance: float, path) -> None:
    write_text(path, dumps(atlas_to_dict(atlas, case_ids, total_variance)))


def load_atlas(path):
    """(Atlas, case_ids, total_variance)."""
    d = read_document(path, "lvatlas.atlas")
    mean = numeric_array(d["mean"], (None,), f"{path}: mean")
    comps = numeric_array(d["components"], (len(d["variances"]), len(mean)), f"{path}: components")
    var = np.array(d["variances"], dtype=float)
    if len(var) != len(comps):
        raise DataError(f"{path}: {len(var)} variances for {len(comps)} components")
    if len(mean) != 3 * d["ntheta"] * d["nz"] * 4:
        raise DataError(f"{path}: mean length does not match the sampling grid")
    return Atlas(mean, comps, var, d["ntheta"], d["nz"], d["scaling"]), tuple(d["case_ids"]), d["total_variance"]


# -- truth -------------------------------------------------------------------

def truth_to_dict(truth: PhantomTruth, case_id: str) -> dict:
    return {"format": "lvatlas.truth", "version": VERSION, "case_id": case_id,
            "edv_ml": float(truth.edv_ml), "esv_ml": float(truth.esv_ml),
            "myo_volume_ml": float(truth.myo_volume_ml), "mass_g": float(truth.mass_g),
            "lvef_pct": float(truth.lvef_pct),
            "base_center": _tolist(truth.base_center), "long_axis": _tolist(truth.long_axis),
            "septal_ref": _tolist(truth.septal_ref),
            "shifts_mm": _tolist(truth.shifts_mm) if len(truth.shifts_mm) else [],
            "es_shifts_mm": _tolist(truth.es_shifts_mm) if len(truth.es_shifts_mm) else [],
            "latent": {k: float(v) for k, v in truth.latent.items()},
            "labels": {k: int(v) for k, v in truth.labels.items()}}


def save_truth(truth: PhantomTruth, case_id: str, path) -> None:
    write_text(path, dumps(truth_to_dict(truth, case_id)))


def load_truth(path):
    d = read_document(path, "lvatlas.truth")
    t = PhantomTruth(d["edv_ml"], d["esv_ml"], d["myo_volume_ml"], d["mass_g"], d["lvef_pct"],
                     tuple(d["base_center"]), tuple(d["long_axis"]), tuple(d["septal_ref"]),
                     tuple(map(tuple, d["shifts_mm"])), tuple(map(tuple, d["es_shifts_mm"])),
                     dict(d["latent"]), dict(d["labels"]))
    return d["case_id"], t


# -- CSV ---------------------------------------------------------------------

def fmt_float(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if not np.isfinite(x):
        return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return repr(x)


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    write_text(path, csv_text(header, rows))


def read_csv(path) -> tuple[list, list]:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    if not rows:
        raise DataError(f"{path}: empty CSV (no header)")
    return rows[0], rows[1:]


def cohort_rows(table: CohortTable, case_ids=None):
    factors = sorted(table.labels)
    header = ["case_id"] + factors
    rows = [[cid] + [table.labels[f][i] for f in factors] for i, cid in enumerate(table.case_ids)]
    return header, rows


def read_cohort(path) -> CohortTable:
    header, rows = read_csv(path)
    if not header or header[0] != "case_id":
        raise DataError(f"{path}: first column must be case_id")
    ids = tuple(r[0] for r in rows)
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate case ids")
    labels = {}
    for j, name in enumerate(header[1:], start=1):
        vals = []
        for i, r in enumerate(rows):
            if len(r) != len(header):
                raise DataError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
            if r[j] not in ("0", "1"):
                raise DataError(f"{path}: {name} row {i + 2}: expected 0/1, got {r[j]!r}")
            vals.append(int(r[j]))
        labels[name] = tuple(vals)
    return CohortTable(ids, labels)


def read_scores(path):
    """(case_ids, (n, m) scores) from a scores CSV."""
    header, rows = read_csv(path)
    if not header or header[0] != "case_id":
        raise DataError(f"{path}: first column must be case_id")
    try:
        X = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(header) - 1)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    return [r[0] for r in rows], X
