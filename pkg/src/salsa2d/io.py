"""File formats: CSV point sets, GeoJSON geometry, binary distance
matrices, dataset round-trips and the model JSON exchanged between CLI
subcommands."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .design import RSequence
from .fit import FittedModel
from .geometry import EUCLIDEAN, GEODESIC, DistanceMatrix, FeatureSet, PointSet, Polygon
from .ppm import PpmDataset
from .terms import FactorThresholdSpec, SmoothTermSpec, TermSet

_DMAT_MAGIC = b"SDMX"
_DMAT_VERSION = 1
_METRIC_CODE = {EUCLIDEAN: 0, GEODESIC: 1}
_METRIC_NAME = {v: k for k, v in _METRIC_CODE.items()}


# -- CSV ------------------------------------------------------------------

def read_table_csv(path):
    """Read a headed CSV into a dict of float columns (UTF-8, '.' decimal)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        columns = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in columns:
                columns[name].append(float(row[name]))
    return {name: np.asarray(vals, float) for name, vals in columns.items()}


def write_table_csv(path, columns, float_format="%.10g"):
    names = list(columns)
    arrays = [np.asarray(columns[name]) for name in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(len(arrays[0]) if arrays else 0):
            writer.writerow([
                float_format % a[i] if np.issubdtype(a.dtype, np.floating) else a[i]
                for a in arrays
            ])


def read_points_csv(path):
    """Point set from a CSV with mandatory x,y headers (other columns kept)."""
    table = read_table_csv(path)
    if "x" not in table or "y" not in table:
        raise ValueError(f"{path}: point CSV needs 'x' and 'y' headers")
    extra = {k: v for k, v in table.items() if k not in ("x", "y")}
    return PointSet(np.column_stack([table["x"], table["y"]])), extra


def write_points_csv(path, points, extra=None):
    columns = {"x": points.coords[:, 0], "y": points.coords[:, 1]}
    columns.update(extra or {})
    write_table_csv(path, columns)


# -- GeoJSON ----------------------------------------------------------------

def _geometries(obj):
    if obj.get("type") == "FeatureCollection":
        for feature in obj["features"]:
            yield feature.get("geometry") or {}
    elif obj.get("type") == "Feature":
        yield obj.get("geometry") or {}
    else:
        yield obj


def read_geojson(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def polygons_from_geojson(obj):
    """All Polygon/MultiPolygon geometries as Polygon objects."""
    polys = []
    for geom in _geometries(obj):
        gtype = geom.get("type")
        if gtype == "Polygon":
            rings = geom["coordinates"]
            polys.append(Polygon(rings[0], rings[1:]))
        elif gtype == "MultiPolygon":
            for rings in geom["coordinates"]:
                polys.append(Polygon(rings[0], rings[1:]))
    if not polys:
        raise ValueError("no Polygon/MultiPolygon geometry found")
    return polys


def features_from_geojson(obj):
    """Point/LineString geometries as a FeatureSet."""
    pts, lines = [], []
    for geom in _geometries(obj):
        gtype = geom.get("type")
        if gtype == "Point":
            pts.append(geom["coordinates"])
        elif gtype == "MultiPoint":
            pts.extend(geom["coordinates"])
        elif gtype == "LineString":
            lines.append(np.asarray(geom["coordinates"], float))
        elif gtype == "MultiLineString":
            lines.extend(np.asarray(c, float) for c in geom["coordinates"])
    points = np.asarray(pts, float) if pts else None
    fs = FeatureSet(points, lines)
    if fs.is_empty():
        raise ValueError("no point or line features found")
    return fs


# -- distance matrices -------------------------------------------------------

def write_dmat_bin(path, dmat):
    """Binary layout: magic, version, rows, cols, metric code, row-major f64."""
    values = np.ascontiguousarray(dmat.values, dtype=np.float64)
    header = _DMAT_MAGIC + struct.pack(
        "<HQQB", _DMAT_VERSION, values.shape[0], values.shape[1],
        _METRIC_CODE[dmat.metric],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes(order="C"))


def read_dmat_bin(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _DMAT_MAGIC:
        raise ValueError(f"{path}: not a distance-matrix file")
    version, rows, cols, metric = struct.unpack_from("<HQQB", blob, 4)
    if version != _DMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = 4 + struct.calcsize("<HQQB")
    values = np.frombuffer(blob, dtype=np.float64, count=rows * cols,
                           offset=offset).reshape(rows, cols).copy()
    return DistanceMatrix(values, _METRIC_NAME[metric])


def write_dmat_csv(path, dmat):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# metric", dmat.metric])
        for row in dmat.values:
            writer.writerow(["%.17g" % v for v in row])


# -- PpmDataset --------------------------------------------------------------

def write_ppm_csv(path, data, provenance=None):
    """Dataset CSV plus a JSON sidecar carrying area/spacing/provenance."""
    path = Path(path)
    columns = {
        "x": data.points[:, 0],
        "y": data.points[:, 1],
        "response": data.y,
        "weight": data.w,
        "is_presence": data.is_presence.astype(int),
    }
    for name, col in data.covariates.items():
        columns[name] = col
    write_table_csv(path, columns, float_format="%.17g")
    sidecar = {
        "region_area": data.region_area,
        "grid_spacing": data.grid_spacing,
        "n_presence": data.n_presence,
        "n_pseudo": data.n_pseudo,
        "provenance": provenance or {},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2),
                                         encoding="utf-8")


def read_ppm_csv(path):
    path = Path(path)
    table = read_table_csv(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    reserved = {"x", "y", "response", "weight", "is_presence"}
    covariates = {k: v for k, v in table.items() if k not in reserved}
    return PpmDataset(
        points=np.column_stack([table["x"], table["y"]]),
        y=table["response"],
        w=table["weight"],
        is_presence=table["is_presence"].astype(bool),
        covariates=covariates,
        region_area=sidecar["region_area"],
        grid_spacing=sidecar.get("grid_spacing"),
    )


# -- fitted-model documents ---------------------------------------------------

def model_document(model, knot_coords, rseq, basis, metric, term_set=None,
                   spatial_reference=0.0, extra=None):
    """JSON-serializable description of a fitted model.

    ``knot_coords`` maps the model's candidate indices to coordinates so
    prediction does not need the original candidate set.
    """
    doc = {
        "format": "salsa2d-model",
        "version": 1,
        "basis": basis,
        "distance_metric": metric,
        "coefficients": [float(c) for c in model.coefficients],
        "labels": list(model.labels),
        "radial": [[int(k), int(r)] for k, r in model.radial],
        "knots": [[float(x), float(y)] for x, y in np.atleast_2d(knot_coords)]
                 if len(model.radial) else [],
        "r_values": [float(v) for v in rseq.values],
        "log_pl": model.log_pl,
        "n_total": model.n_total,
        "n_params": model.n_params,
        "bic": model.bic,
        "aicc": model.aicc,
        "converged": model.converged,
        "iterations": model.iterations,
        "has_covariates": model.has_covariates,
        "spatial_reference": float(spatial_reference),
        "coef_covariance": np.asarray(model.coef_covariance).tolist(),
    }
    if term_set is not None:
        doc["terms"] = {
            "factors": [
                {"name": t.name, "candidates": t.candidates, "threshold": t.threshold}
                for t in term_set.factors
            ],
            "smooths": [
                {"name": t.name, "degree": t.degree,
                 "interior_knots": t.interior_knots,
                 "boundary": list(t.boundary) if t.boundary else None}
                for t in term_set.smooths
            ],
        }
    doc.update(extra or {})
    return doc


def save_model(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def load_model(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "salsa2d-model":
        raise ValueError(f"{path}: not a salsa2d model document")
    model = FittedModel(
        coefficients=np.asarray(doc["coefficients"], float),
        labels=list(doc["labels"]),
        radial=[tuple(kr) for kr in doc["radial"]],
        log_pl=doc["log_pl"],
        n_total=doc["n_total"],
        n_params=doc["n_params"],
        bic=doc["bic"],
        aicc=doc["aicc"],
        coef_covariance=np.asarray(doc["coef_covariance"], float),
        converged=doc["converged"],
        iterations=doc["iterations"],
        has_covariates=doc["has_covariates"],
    )
    knots = np.asarray(doc["knots"], float) if doc["knots"] else np.empty((0, 2))
    rseq = RSequence(np.asarray(doc["r_values"], float), doc["basis"])
    term_set = None
    if "terms" in doc:
        term_set = TermSet(
            factors=[FactorThresholdSpec(t["name"], t["candidates"], t["threshold"])
                     for t in doc["terms"]["factors"]],
            smooths=[SmoothTermSpec(t["name"], t["degree"], t["interior_knots"],
                                    tuple(t["boundary"]) if t["boundary"] else None)
                     for t in doc["terms"]["smooths"]],
        )
    return doc, model, knots, rseq, term_set


def document_intensity(doc, model, knots, rseq, term_set, points,
                       covariates=None, graph=None, algorithm="dijkstra"):
    """Predict intensity at new points from a loaded model document.

    Radial columns are rebuilt against the document's stored knot
    coordinates; geodesic models need a grid graph containing both the
    prediction points and the knots as nodes. Covariate values outside a
    smooth's training range are clamped.
    """
    from .design import radial_basis
    from .geometry import euclidean_distances, geodesic_distances

    pts = points.coords if isinstance(points, PointSet) else np.asarray(points, float)
    cols = [np.ones((len(pts), 1))]
    if term_set is not None and (term_set.factors or term_set.smooths):
        if covariates is None:
            raise ValueError("model has covariate terms; covariate values required")
        covs = dict(covariates)
        for smooth in term_set.smooths:
            if smooth.boundary is not None:
                covs[smooth.name] = np.clip(covs[smooth.name], *smooth.boundary)
        cols.append(term_set.build(covs).matrix)
    if len(knots):
        if doc["distance_metric"] == EUCLIDEAN:
            h = euclidean_distances(pts, knots).values
        else:
            if graph is None:
                raise ValueError("geodesic model: a grid graph is required")
            h = geodesic_distances(graph, PointSet(pts), PointSet(knots),
                                   algorithm=algorithm).values
        radial = np.column_stack([
            radial_basis(h[:, i], rseq.value(ri), doc["basis"])
            for i, (_, ri) in enumerate(doc["radial"])
        ])
        cols.append(radial)
    x = np.hstack(cols)
    if x.shape[1] != len(model.coefficients):
        raise ValueError(
            f"rebuilt design has {x.shape[1]} columns, model expects "
            f"{len(model.coefficients)}"
        )
    return np.exp(x @ model.coefficients)


def write_trace_jsonl(path, trace):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in trace:
            fh.write(json.dumps({
                "step": entry.step,
                "action": entry.action,
                "criterion_before": entry.criterion_before,
                "criterion_after": entry.criterion_after,
                "accepted": entry.accepted,
            }) + "\n")


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
