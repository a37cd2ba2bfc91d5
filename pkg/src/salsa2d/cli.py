"""Batch command-line interface.

Subcommands mirror the analysis workflow: ``grid`` builds pseudo-absence
lattices and runs the spacing-convergence procedure, ``fit`` runs the
knot search (or the model-averaging baseline, or the start-knot sweep),
``predict`` evaluates a saved model on new locations and ``partial``
emits covariate effect curves.

Exit codes: 0 success, 1 numerical failure, 2 input error. Every command
writes a manifest (config echo, input hashes, timings) into the output
directory before it starts and finalizes it when done.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, fit as fitmod, io, modelavg, ppm, salsa, terms
from .errors import NumericalError
from .geometry import PointSet, build_grid_graph, distance_to_nearest_feature, euclidean_distances
from .terms import TermSet

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_INPUT = 2

SWEEP_START_KNOTS = tuple(range(5, 65, 5))
DEFAULT_K_LIST = tuple(range(5, 65, 5))


def _parse_spacings(text):
    return [float(s) for s in text.split(",") if s.strip()]


def _read_config_file(path):
    """Flat ``key = value`` file; '#' starts a comment. Flags win over it."""
    config = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        config[key.strip().replace("-", "_")] = value.strip()
    return config


_OPTION_TYPES = {
    "seed": int, "threads": int, "r_count": int, "start_knots": int,
    "min_knots": int, "max_knots": int, "residual_candidates": int,
    "candidate_pseudo_count": int, "max_1d_knots": int, "grid_points": int,
    "spacing": float, "convergence_tol": float, "candidate_fraction": float,
    "delta_threshold": float, "top_percent": float, "graph_spacing": float,
    "sweep": lambda v: str(v).lower() in ("1", "true", "yes"),
    "strict_delta": lambda v: str(v).lower() in ("1", "true", "yes"),
}


def _resolve(args, config):
    """Fill unset CLI options from the config file (flags win)."""
    for key, value in config.items():
        if getattr(args, key, None) in (None, False) and hasattr(args, key):
            cast = _OPTION_TYPES.get(key, str)
            setattr(args, key, cast(value))
    return args


class _Manifest:
    def __init__(self, out_dir, command, args):
        self.path = Path(out_dir) / "manifest.json"
        self.started = time.time()
        skip = {"func", "config"}
        self.doc = {
            "command": command,
            "version": __version__,
            "status": "running",
            "options": {k: v for k, v in sorted(vars(args).items()) if k not in skip},
            "input_hashes": {},
            "started_unix": self.started,
        }
        self.write()

    def hash_input(self, label, path):
        if path:
            self.doc["input_hashes"][label] = io.file_sha256(path)

    def write(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.doc, indent=2, default=str),
                             encoding="utf-8")

    def finish(self, **summary):
        self.doc["status"] = "complete"
        self.doc["elapsed_seconds"] = time.time() - self.started
        self.doc["result"] = summary
        self.write()


def _load_region(args, manifest):
    if not args.region:
        raise ValueError("missing --region")
    region = io.polygons_from_geojson(io.read_geojson(args.region))
    manifest.hash_input("region", args.region)
    exclusion = None
    if getattr(args, "exclusion", None):
        exclusion = io.polygons_from_geojson(io.read_geojson(args.exclusion))
        manifest.hash_input("exclusion", args.exclusion)
    return region, exclusion


def _region_area(region, exclusion):
    area = sum(p.area() for p in region)
    if exclusion:
        area -= sum(p.area() for p in exclusion)
    if area <= 0:
        raise ValueError("region area is not positive after exclusions")
    return area


def _load_presences(args, manifest):
    if not args.presences:
        raise ValueError("missing --presences")
    presences, _ = io.read_points_csv(args.presences)
    manifest.hash_input("presences", args.presences)
    return presences


def _attach_covariates(points, args, manifest):
    """Covariate columns at arbitrary points.

    Values from a ``--covariates`` CSV are joined by nearest sample point;
    ``--dist-covariate name=file.geojson`` columns are computed as the
    distance to the nearest feature in the file.
    """
    cov = {}
    if getattr(args, "covariates", None):
        table = io.read_table_csv(args.covariates)
        manifest.hash_input("covariates", args.covariates)
        if "x" not in table or "y" not in table:
            raise ValueError("covariates CSV needs x,y columns")
        samples = np.column_stack([table["x"], table["y"]])
        nearest = euclidean_distances(points, samples).values.argmin(axis=1)
        for name, col in table.items():
            if name not in ("x", "y"):
                cov[name] = col[nearest]
    for spec in getattr(args, "dist_covariate", None) or []:
        if "=" not in spec:
            raise ValueError("--dist-covariate expects name=features.geojson")
        name, path = spec.split("=", 1)
        features = io.features_from_geojson(io.read_geojson(path))
        manifest.hash_input(f"dist_covariate:{name}", path)
        cov[name] = distance_to_nearest_feature(points, features)
    return cov


# -- grid -------------------------------------------------------------------


def cmd_grid(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(out_dir, "grid", args)
    region, exclusion = _load_region(args, manifest)

    if args.spacings:
        spacings = _parse_spacings(args.spacings)
        presences = _load_presences(args, manifest)
        result = ppm.grid_convergence(
            presences, region, exclusion, spacings,
            tol=args.convergence_tol, r_count=args.r_count, seed=args.seed,
        )
        io.write_table_csv(out_dir / "convergence.csv", {
            "spacing": [r["spacing"] for r in result.table],
            "spec": [r["spec"] for r in result.table],
            "n_pseudo": [r["n_pseudo"] for r in result.table],
            "log_pl": [r["log_pl"] for r in result.table],
        })
        spacing = result.chosen_spacing
        summary = {"chosen_spacing": spacing, "rule_satisfied": result.satisfied}
    else:
        if args.spacing is None:
            raise ValueError("pass --spacing or --spacings")
        spacing = float(args.spacing)
        summary = {}

    pseudo = ppm.generate_pseudo_absences(region, exclusion, spacing)
    io.write_points_csv(out_dir / "pseudo_grid.csv", pseudo)
    manifest.finish(n_pseudo=len(pseudo), spacing=spacing, **summary)
    return EXIT_OK


# -- fit ---------------------------------------------------------------------


def _prepare_spatial_inputs(args, manifest):
    region, exclusion = _load_region(args, manifest)
    presences = _load_presences(args, manifest)
    area = _region_area(region, exclusion)
    if args.spacing is None:
        raise ValueError("missing --spacing for the pseudo-absence lattice")
    spacing = float(args.spacing)
    pseudo = ppm.generate_pseudo_absences(region, exclusion, spacing)
    candidates = salsa.build_candidate_knots(
        presences, pseudo, pseudo_fraction=args.candidate_fraction,
        seed=args.seed,
        paper_style_count=args.candidate_pseudo_count,
    )
    return region, exclusion, presences, pseudo, candidates, area, spacing


def _make_provider(data, candidates, metric, pseudo, exclusion, spacing,
                   connectivity=8):
    if metric == "euclidean":
        return salsa.make_distance_provider(data, candidates), None
    graph = build_grid_graph(
        pseudo, exclusion=None, connectivity=connectivity,
        extra_nodes=PointSet(np.vstack([data.points, candidates.coords])),
        spacing=spacing,
    )
    return salsa.make_distance_provider(data, candidates, metric="geodesic",
                                        graph=graph), graph


def _run_one(data, candidates, metric, basis, k_start, k_min, k_max, args,
             pseudo, exclusion, spacing, covariate_blocks=None):
    provider, _ = _make_provider(data, candidates, metric, pseudo, exclusion,
                                 spacing)
    rseq = salsa.r_sequence(provider.cand_to_cand, args.r_count, basis)
    config = salsa.SalsaConfig(
        criterion=args.criterion,
        n_residual_candidates=args.residual_candidates,
        r_select_mode=args.r_select_mode,
        rng_seed=args.seed,
    )
    t0 = time.perf_counter()
    model, state, trace = salsa.run_salsa2d(
        data, candidates, provider, basis=basis, k_start=k_start,
        k_min=k_min, k_max=k_max, config=config, rseq=rseq,
        covariate_blocks=covariate_blocks,
    )
    minutes = (time.perf_counter() - t0) / 60.0
    return model, state, trace, provider, rseq, minutes


def _sweep_worker(payload):
    ns = argparse.Namespace(**payload["args"])
    manifest = _Manifest(payload["tmp_dir"], "fit-sweep-worker", ns)
    _, exclusion, presences, pseudo, candidates, area, spacing = \
        _prepare_spatial_inputs(ns, manifest)
    data = ppm.assemble_dataset(presences, pseudo, area, grid_spacing=spacing)
    model, state, _, _, _, minutes = _run_one(
        data, candidates, payload["metric"], payload["basis"],
        payload["k_start"], ns.min_knots, ns.max_knots, ns,
        pseudo, exclusion, spacing)
    return {
        "distance": payload["metric"],
        "basis": payload["basis"],
        "start_knots": payload["k_start"],
        "end_knots": state.k,
        "log_lik": model.log_pl,
        "bic": model.bic,
        "time_min": minutes,
    }


def cmd_fit(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(out_dir, "fit", args)
    region, exclusion, presences, pseudo, candidates, area, spacing = \
        _prepare_spatial_inputs(args, manifest)

    if args.sweep:
        rows = _run_sweep(args, out_dir, manifest)
        io.write_table_csv(out_dir / "sweep.csv", {
            "distance": [r["distance"] for r in rows],
            "basis": [r["basis"] for r in rows],
            "start_knots": [r["start_knots"] for r in rows],
            "end_knots": [r["end_knots"] for r in rows],
            "log_lik": [r["log_lik"] for r in rows],
            "bic": [r["bic"] for r in rows],
            "time_min": [r["time_min"] for r in rows],
        })
        manifest.finish(n_runs=len(rows), table="sweep.csv")
        return EXIT_OK

    covariate_names = list(args.smooth or [])
    factor_name = args.factor
    term_set = TermSet()
    covariate_blocks = None
    data = None
    if covariate_names or factor_name:
        cov = _attach_covariates(PointSet(np.vstack([presences.coords,
                                                     pseudo.coords])),
                                 args, manifest)
        missing = [n for n in covariate_names + ([factor_name] if factor_name else [])
                   if n not in cov]
        if missing:
            raise ValueError(f"covariates not available: {missing}")
        data = ppm.assemble_dataset(presences, pseudo, area, covariates=cov,
                                    grid_spacing=spacing)
        if factor_name:
            thresholds = _parse_spacings(args.thresholds or "1,2,3,4,5")
            spec = terms.select_threshold(data, factor_name, thresholds,
                                          criterion=args.criterion)
            term_set.factors.append(spec)
        for name in covariate_names:
            spec = terms.select_knots_1d(data, name, max_knots=args.max_1d_knots,
                                         criterion=args.criterion,
                                         base_terms=term_set)
            term_set.smooths.append(spec)
        covariate_blocks = term_set.build(data.covariates)
    else:
        data = ppm.assemble_dataset(presences, pseudo, area,
                                    grid_spacing=spacing)

    if args.method == "average":
        provider, _ = _make_provider(data, candidates, args.distance, pseudo,
                                     exclusion, spacing)
        rseq = salsa.r_sequence(provider.cand_to_cand, args.r_count, args.basis)
        k_list = [int(k) for k in _parse_spacings(args.k_list)] if args.k_list \
            else list(DEFAULT_K_LIST)
        k_list = [k for k in k_list if k <= provider.n_candidates]
        members = modelavg.fit_grid(data, candidates, provider, k_list, rseq,
                                    args.basis, covariate_blocks)
        ensemble = modelavg.aicc_weights(members, args.delta_threshold,
                                         strict=args.strict_delta)
        io.write_table_csv(out_dir / "ensemble.csv", {
            "k": [m.k for m in ensemble.members],
            "r_index": [m.r_index for m in ensemble.members],
            "log_pl": [m.model.log_pl for m in ensemble.members],
            "aicc": [m.aicc for m in ensemble.members],
            "delta": [m.delta for m in ensemble.members],
            "weight": [m.weight for m in ensemble.members],
        })
        log_pl = modelavg.ensemble_log_pseudolikelihood(ensemble, data,
                                                        provider, rseq, args.basis)
        manifest.finish(n_members=len(ensemble.members),
                        n_averaged=ensemble.n_averaged,
                        averaged_log_pl=log_pl)
        return EXIT_OK

    model, state, trace, provider, rseq, minutes = _run_one(
        data, candidates, args.distance, args.basis, args.start_knots,
        args.min_knots, args.max_knots, args, pseudo, exclusion, spacing,
        covariate_blocks)

    design = salsa.build_design(state.active, state.r_index,
                                provider.data_to_candidates, rseq,
                                args.basis, covariate_blocks)
    spatial_ref = float(np.mean(terms.spatial_contribution(model, design)))
    doc = io.model_document(
        model, candidates.coords[state.active], rseq, args.basis,
        args.distance, term_set=term_set if covariate_blocks is not None else None,
        spatial_reference=spatial_ref,
        extra={"grid_spacing": spacing, "seed": args.seed},
    )
    io.save_model(out_dir / "model.json", doc)
    io.write_trace_jsonl(out_dir / "trace.jsonl", trace)
    manifest.finish(end_knots=state.k, log_pl=model.log_pl, bic=model.bic,
                    minutes=minutes, model="model.json", trace="trace.jsonl")
    return EXIT_OK


def _run_sweep(args, out_dir, manifest):
    payloads = []
    arg_dict = {k: v for k, v in vars(args).items() if k != "func"}
    for metric in ("euclidean", "geodesic"):
        for basis in ("exponential", "gaussian"):
            for k_start in SWEEP_START_KNOTS:
                overrides = dict(arg_dict)
                overrides["min_knots"] = args.min_knots
                overrides["max_knots"] = args.max_knots
                payloads.append({
                    "args": overrides,
                    "metric": metric,
                    "basis": basis,
                    "k_start": k_start,
                    "tmp_dir": str(out_dir / f"sweep_{metric}_{basis}_{k_start}"),
                })
    threads = args.threads or int(os.environ.get("SALSA2D_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_worker, payloads))
    else:
        rows = [_sweep_worker(p) for p in payloads]
    return rows


# -- predict ------------------------------------------------------------------


def cmd_predict(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(out_dir, "predict", args)
    doc, model, knots, rseq, term_set = io.load_model(args.model)
    manifest.hash_input("model", args.model)
    points, extra_cols = io.read_points_csv(args.grid)
    manifest.hash_input("grid", args.grid)

    covariates = None
    if term_set is not None and (term_set.factors or term_set.smooths):
        covariates = dict(extra_cols)
        covariates.update(_attach_covariates(points, args, manifest))
        needed = set(term_set.covariate_names())
        missing = needed - set(covariates)
        if missing:
            raise ValueError(
                f"prediction points lack covariates: {sorted(missing)}"
            )

    graph = None
    if doc["distance_metric"] == "geodesic" and len(knots):
        if not args.region:
            raise ValueError("geodesic model: pass --region (and --exclusion) "
                             "to rebuild the distance graph")
        region = io.polygons_from_geojson(io.read_geojson(args.region))
        exclusion = None
        if args.exclusion:
            exclusion = io.polygons_from_geojson(io.read_geojson(args.exclusion))
        spacing = args.graph_spacing or doc.get("grid_spacing")
        if not spacing:
            raise ValueError("geodesic model: pass --graph-spacing")
        lattice = ppm.generate_pseudo_absences(region, exclusion, float(spacing))
        graph = build_grid_graph(
            lattice, exclusion=None,
            extra_nodes=PointSet(np.vstack([points.coords, knots])),
            spacing=float(spacing),
        )

    lam = io.document_intensity(doc, model, knots, rseq, term_set, points,
                                covariates=covariates, graph=graph)
    columns = {"x": points.coords[:, 0], "y": points.coords[:, 1],
               "intensity": lam}
    summary = {"n_points": len(points)}
    if args.top_percent is not None:
        threshold = float(np.quantile(lam, 1.0 - args.top_percent / 100.0))
        columns[f"top{args.top_percent:g}pct"] = (lam > threshold).astype(int)
        summary["top_percent_threshold"] = threshold
    out_path = out_dir / args.out_name
    io.write_table_csv(out_path, columns)
    manifest.finish(output=str(out_path), **summary)
    return EXIT_OK


# -- partial -------------------------------------------------------------------


def cmd_partial(args):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(out_dir, "partial", args)
    doc, model, _, _, term_set = io.load_model(args.model)
    manifest.hash_input("model", args.model)
    if term_set is None:
        raise ValueError("model has no covariate terms; nothing to plot")

    fixed = {}
    for spec in args.fix or []:
        if "=" not in spec:
            raise ValueError("--fix expects name=value")
        name, value = spec.split("=", 1)
        fixed[name] = float(value)

    factor_names = {t.name: t for t in term_set.factors}
    smooth_names = {t.name: t for t in term_set.smooths}
    if args.term in factor_names:
        t = factor_names[args.term].threshold
        grid = np.array([t - 1e-9, t + 1e-9])  # the two factor levels
    elif args.term in smooth_names and smooth_names[args.term].boundary:
        lo, hi = smooth_names[args.term].boundary
        grid = np.linspace(lo, hi, args.grid_points)
    elif args.range:
        lo, hi = _parse_spacings(args.range)
        grid = np.linspace(lo, hi, args.grid_points)
    else:
        raise ValueError(f"unknown term {args.term!r}; pass --range lo,hi")

    lam = terms.partial_effect(model, term_set, args.term, grid, fixed,
                               spatial_reference=doc.get("spatial_reference", 0.0))
    out_path = out_dir / args.out_name
    io.write_table_csv(out_path, {args.term: grid, "intensity": lam})
    manifest.finish(output=str(out_path), n_points=len(grid))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _add_common_inputs(sub):
    sub.add_argument("--region", help="region GeoJSON (Polygon/MultiPolygon)")
    sub.add_argument("--exclusion", help="exclusion-zone GeoJSON")
    sub.add_argument("--presences", help="presence CSV with x,y headers")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out-dir", default="salsa2d_out")
    sub.add_argument("--threads", type=int, default=None,
                     help="parallel workers (default: SALSA2D_THREADS or 1)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="salsa2d",
        description="Adaptive knot selection for spatial intensity surfaces",
    )
    parser.add_argument("--config", help="flat key=value config file; flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grid", help="pseudo-absence grids and spacing convergence")
    _add_common_inputs(g)
    g.add_argument("--spacing", type=float, help="single lattice spacing (km)")
    g.add_argument("--spacings", help="comma list, coarse to fine, runs convergence")
    g.add_argument("--convergence-tol", type=float, default=0.005)
    g.add_argument("--r-count", type=int, default=10)
    g.set_defaults(func=cmd_grid)

    f = sub.add_parser("fit", help="fit by knot search, averaging, or sweep")
    _add_common_inputs(f)
    f.add_argument("--method", choices=["salsa2d", "average"], default="salsa2d")
    f.add_argument("--spacing", type=float, required=False,
                   help="pseudo-absence lattice spacing (km)")
    f.add_argument("--distance", choices=["euclidean", "geodesic"],
                   default="euclidean")
    f.add_argument("--basis", choices=["exponential", "gaussian"],
                   default="exponential")
    f.add_argument("--start-knots", type=int, default=20)
    f.add_argument("--min-knots", type=int, default=2)
    f.add_argument("--max-knots", type=int, default=100)
    f.add_argument("--r-count", type=int, default=10)
    f.add_argument("--criterion", choices=list(fitmod.CRITERIA), default="bic")
    f.add_argument("--r-select-mode",
                   choices=[salsa.AFTER_EACH_STEP, salsa.DURING_STEPS],
                   default=salsa.AFTER_EACH_STEP)
    f.add_argument("--residual-candidates", type=int, default=10)
    f.add_argument("--candidate-fraction", type=float, default=0.2,
                   help="share of candidate knots drawn from pseudo points")
    f.add_argument("--candidate-pseudo-count", type=int, default=None,
                   help="fixed space-filled pseudo candidate count (overrides fraction)")
    f.add_argument("--sweep", action="store_true",
                   help="run all distance x basis x start-knot combinations")
    f.add_argument("--k-list", help="comma list of knot counts (average method)")
    f.add_argument("--delta-threshold", type=float, default=10.0)
    f.add_argument("--strict-delta", action="store_true",
                   help="filter with < instead of <= at the delta threshold")
    f.add_argument("--covariates", help="CSV of x,y plus covariate columns")
    f.add_argument("--dist-covariate", action="append",
                   help="name=features.geojson distance covariate (repeatable)")
    f.add_argument("--smooth", action="append",
                   help="covariate to model with a B-spline smooth (repeatable)")
    f.add_argument("--factor", help="covariate to model as a binary threshold factor")
    f.add_argument("--thresholds", help="comma list of candidate cutoffs (km)")
    f.add_argument("--max-1d-knots", type=int, default=5)
    f.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="intensity at new locations")
    _add_common_inputs(p)
    p.add_argument("--model", required=True, help="model JSON from 'fit'")
    p.add_argument("--grid", required=True, help="CSV of x,y prediction points")
    p.add_argument("--top-percent", type=float, default=None,
                   help="flag cells above this top intensity share (e.g. 5)")
    p.add_argument("--graph-spacing", type=float, default=None)
    p.add_argument("--covariates", help="CSV of x,y plus covariate columns")
    p.add_argument("--dist-covariate", action="append")
    p.add_argument("--out-name", default="intensity.csv")
    p.set_defaults(func=cmd_predict)

    q = sub.add_parser("partial", help="covariate effect curve from a model")
    _add_common_inputs(q)
    q.add_argument("--model", required=True)
    q.add_argument("--term", required=True)
    q.add_argument("--fix", action="append",
                   help="name=value for every other covariate (repeatable)")
    q.add_argument("--grid-points", type=int, default=100)
    q.add_argument("--range", help="lo,hi grid range for terms without one")
    q.add_argument("--out-name", default="partial.csv")
    q.set_defaults(func=cmd_partial)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            args = _resolve(args, _read_config_file(args.config))
        except OSError as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_INPUT
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
