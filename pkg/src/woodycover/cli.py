"""Command line driver: ``woodycover <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure. Every run writes a ``run_manifest_<subcommand>.json`` next to its
outputs recording the resolved settings.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .evaluate import EvalReport, Protocol, default_workers, run_benchmark
from .features import (build_features, drop_bad_bands, load_band_flags, read_feature_table,
                       resample_mean, write_feature_table)
from .fractions import (ClassLegend, LabelMap, aggregate_fractions, coarse_grid_for, default_legend,
                        merge_class, read_samples_csv, write_samples_csv)
from .raster import load_raster, save_raster
from .regression.kernels import NumericalError
from .regression.model import ALGORITHMS, GridSearch, RegressorSpec, load_model, predict_map, save_model, train
from .stm import DEFAULT_PERCENTILES, DEFAULT_SEASONS, SeasonWindow, compute_stm, load_stack
from .synth import SceneConfig, generate_scene, scene_truth_check, write_scene

log = logging.getLogger("woodycover")

OUT_ENV = "WOODYCOVER_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _atomic_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _load_config(path) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return data


def _out_path(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    base = os.environ.get(OUT_ENV)
    if not base:
        raise UsageError(f"--out is required (or set {OUT_ENV})")
    return Path(base) / default_name


def _legend(path) -> ClassLegend:
    return ClassLegend.load(path) if path else default_legend()


def _seasons(cfg) -> tuple:
    if "seasons" in cfg:
        return tuple(SeasonWindow.from_dict(s) for s in cfg["seasons"])
    return DEFAULT_SEASONS


def _specs(cfg: dict, seed) -> dict:
    """Per-algorithm specs from ``{"specs": {"KR": {...}}, "algorithms": [...]}``."""
    params = cfg.get("specs", {})
    out = {}
    for a in cfg.get("algorithms", ALGORITHMS):
        p = dict(params.get(a, {}))
        if seed is not None and a in ("RF", "GBT"):
            p.setdefault("seed", seed)
        out[a] = RegressorSpec(a, p)
    return out


# ---------------------------------------------------------------- subcommands

def cmd_synth(args, cfg):
    d = dict(cfg)
    if args.seed is not None:
        d["seed"] = args.seed
    config = SceneConfig.from_dict(d)
    scene = generate_scene(config)
    out = _out_path(args, "scene")
    paths = write_scene(scene, out)
    check = scene_truth_check(scene)
    _atomic_json(out / "truth_check.json", check)
    settings = config.to_dict()
    settings.pop("endmembers")
    return {"outputs": paths, "settings": settings, "out_dir": out}


def cmd_aggregate(args, cfg):
    grid = load_raster(args.labels)
    legend = _legend(args.legend)
    labels = LabelMap(grid, legend)
    merges = list(args.merge or [])
    if args.merge_shadow_into:
        merges.append(f"Shadow:{args.merge_shadow_into}")
    for pair in merges:
        src, sep, dst = pair.partition(":")
        if not sep:
            raise UsageError(f"--merge expects SRC:DST, got {pair!r}")
        labels = merge_class(labels, src, dst)
    if args.like:
        coarse = load_raster(args.like).geometry
    elif args.coarse_size:
        coarse = coarse_grid_for(grid.geometry, args.coarse_size)
    else:
        raise UsageError("one of --coarse-size or --like is required")
    samples = aggregate_fractions(labels, coarse, legend, args.theta)
    out = _out_path(args, "samples.csv")
    write_samples_csv(samples, out)
    return {"outputs": {"samples": str(out)}, "inputs": {"labels": args.labels},
            "settings": {"theta": args.theta, "coarse_geometry": coarse.to_dict(), "merge": merges,
                         "n_samples": len(samples)}, "out_dir": out.parent}


def cmd_stm(args, cfg):
    stack = load_stack(args.stack)
    pcts = [float(p) for p in args.percentiles.split(",")] if args.percentiles else \
        cfg.get("percentiles", list(DEFAULT_PERCENTILES))
    min_obs = args.min_obs if args.min_obs is not None else int(cfg.get("min_obs", 3))
    seasons = _seasons(cfg)
    cube = compute_stm(stack, seasons, pcts, min_obs)
    out = _out_path(args, "stm")
    save_raster(cube, out)
    return {"outputs": {"stm": str(out)}, "inputs": {"stack": args.stack},
            "settings": {"percentiles": pcts, "min_obs": min_obs, "seasons": [s.to_dict() for s in seasons],
                         "n_bands": cube.n_bands}, "out_dir": out.parent}


def _enmap(path, flags_path):
    cube = load_raster(path)
    if flags_path:
        cube = drop_bad_bands(cube, load_band_flags(flags_path))
    return cube


def cmd_features(args, cfg):
    samples = read_samples_csv(args.samples)
    enmap = _enmap(args.enmap, args.bad_bands)
    stm = None
    if args.stm:
        stm = load_raster(args.stm)
        if stm.geometry != samples.coarse_geometry:
            stm = resample_mean(stm, samples.coarse_geometry)
    table = build_features(samples, enmap, stm, args.species)
    out = _out_path(args, "features.csv")
    write_feature_table(table, out)
    return {"outputs": {"table": str(out)},
            "inputs": {"samples": args.samples, "enmap": args.enmap, "stm": args.stm, "bad_bands": args.bad_bands},
            "settings": {"species": args.species, "experiment": table.experiment, "n_rows": len(table),
                         "dropped": table.dropped}, "out_dir": out.parent}


def cmd_train(args, cfg):
    table = read_feature_table(args.table)
    algorithm = args.algorithm or cfg.get("algorithm")
    if algorithm is None:
        raise UsageError("--algorithm is required")
    params = dict(cfg.get("params", cfg.get("specs", {}).get(algorithm, {})))
    if args.seed is not None and algorithm in ("RF", "GBT"):
        params.setdefault("seed", args.seed)
    spec = RegressorSpec(algorithm, params)
    search = GridSearch.from_dict(cfg["grid_search"]) if "grid_search" in cfg else None
    model = train(table, spec, search)
    out = _out_path(args, "model.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    if not model.converged:
        log.warning("solver did not converge; model saved with converged=false")
    return {"outputs": {"model": str(out)}, "inputs": {"table": args.table},
            "settings": {"spec": model.spec.to_dict(),
                         "grid_search": None if search is None else search.to_dict(),
                         "chosen": model.info.get("grid_search", {}).get("chosen")}, "out_dir": out.parent}


def cmd_predict(args, cfg):
    model = load_model(args.model)
    enmap = _enmap(args.enmap, args.bad_bands)
    stm = None
    if args.stm:
        stm = load_raster(args.stm)
        if stm.geometry != enmap.geometry:
            stm = resample_mean(stm, enmap.geometry)
    result = predict_map(model, enmap, stm)
    out = _out_path(args, "fwc_map")
    save_raster(result.grid, out)
    return {"outputs": {"map": str(out)}, "inputs": {"model": args.model, "enmap": args.enmap, "stm": args.stm},
            "settings": {"n_clipped_low": result.n_clipped_low, "n_clipped_high": result.n_clipped_high},
            "out_dir": Path(out).parent}


def cmd_evaluate(args, cfg):
    samples = read_samples_csv(args.samples)
    enmap = load_raster(args.enmap)
    flags = load_band_flags(args.bad_bands) if args.bad_bands else None
    stm = load_raster(args.stm) if args.stm else None
    proto = dict(cfg.get("protocol", {}))
    if args.seed is not None:
        proto["seed"] = args.seed
    if args.cv:
        proto["mode"] = "cv"
    protocol = Protocol(**proto)
    specs = _specs(cfg, args.seed)
    workers = args.workers if args.workers is not None else default_workers()
    report = run_benchmark(samples, enmap, stm, specs, protocol, cfg.get("species"), flags, workers)
    out = _out_path(args, "evaluation")
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    report.write_csv(out / "report.csv")
    report.write_scatter(out / "scatter")
    return {"outputs": {"report": str(out / "report.json"), "matrix": str(out / "report.csv"),
                        "scatter": str(out / "scatter")},
            "inputs": {"samples": args.samples, "enmap": args.enmap, "stm": args.stm, "bad_bands": args.bad_bands},
            "settings": {"protocol": protocol.to_dict(), "specs": {a: s.to_dict() for a, s in specs.items()},
                         "workers": workers}, "out_dir": out}


def cmd_report(args, cfg):
    from .render import render_map, render_scatter
    out = _out_path(args, "figures")
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    if args.report:
        report = EvalReport.load(args.report)
        report.write_csv(out / "report.csv")
        outputs["matrix"] = str(out / "report.csv")
        for (s, e, a), cell in sorted(report.cells.items()):
            p = out / f"scatter_{s.replace(' ', '_')}_{e.replace('+', 'plus')}_{a}.png"
            render_scatter(p, cell.y_true, cell.y_pred, fit=cell.scatter_fit)
        outputs["scatter_png"] = str(out)
    if args.map:
        grid = load_raster(args.map)
        p = out / (Path(args.map).name.removesuffix(".bin") + ".png")
        render_map(p, grid.values[0], grid.valid_mask)
        outputs["map_png"] = str(p)
    if not outputs:
        raise UsageError("nothing to render: give --report and/or --map")
    return {"outputs": outputs, "inputs": {"report": args.report, "map": args.map}, "settings": {},
            "out_dir": out}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    common.add_argument("--out", help=f"output path (default under ${OUT_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="woodycover", description="Fractional woody cover mapping pipeline")
    p.add_argument("--version", action="version", version=f"woodycover {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scene")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("aggregate", parents=[common], help="fine labels -> coarse fraction samples")
    s.add_argument("--labels", required=True)
    s.add_argument("--legend")
    s.add_argument("--coarse-size", type=float)
    s.add_argument("--like", help="take the coarse grid from this raster")
    s.add_argument("--theta", type=float, default=0.95)
    s.add_argument("--merge", action="append", metavar="SRC:DST", help="relabel class SRC as DST first")
    s.add_argument("--merge-shadow-into", metavar="CLASS", help="relabel Shadow cells as CLASS first")
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("stm", parents=[common], help="dated stack -> spectro-temporal metrics")
    s.add_argument("--stack", required=True, help="JSON stack manifest")
    s.add_argument("--percentiles", help="comma separated, e.g. 10,25,50,75,90")
    s.add_argument("--min-obs", type=int)
    s.set_defaults(func=cmd_stm)

    s = sub.add_parser("features", parents=[common], help="assemble a predictor table")
    s.add_argument("--samples", required=True)
    s.add_argument("--enmap", required=True)
    s.add_argument("--bad-bands")
    s.add_argument("--stm")
    s.add_argument("--species", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", parents=[common], help="fit a regressor on a feature table")
    s.add_argument("--table", required=True)
    s.add_argument("--algorithm", choices=ALGORITHMS)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="predict a cover map")
    s.add_argument("--model", required=True)
    s.add_argument("--enmap", required=True)
    s.add_argument("--bad-bands")
    s.add_argument("--stm")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="run the species x experiment x algorithm benchmark")
    s.add_argument("--samples", required=True)
    s.add_argument("--enmap", required=True)
    s.add_argument("--bad-bands")
    s.add_argument("--stm")
    s.add_argument("--cv", action="store_true", help="k-fold cross-validation instead of one split")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", parents=[common], help="render report CSV and PNG figures")
    s.add_argument("--report")
    s.add_argument("--map")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    try:
        cfg = _load_config(args.config)
        result = args.func(args, cfg)
    except UsageError as exc:
        print(f"woodycover {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ArithmeticError) as exc:
        print(f"woodycover {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"woodycover {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    manifest = {
        "subcommand": args.command,
        "config": args.config,
        "seed": args.seed,
        "inputs": result.get("inputs", {}),
        "outputs": result["outputs"],
        "settings": result.get("settings", {}),
        "tool_version": __version__,
        "wall_time_s": round(time.perf_counter() - start, 3),
    }
    _atomic_json(Path(result["out_dir"]) / f"run_manifest_{args.command}.json", manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
