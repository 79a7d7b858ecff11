"""Command-line entry point: ``floodgen <subcommand> [--config FILE] [--set section.key=value]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, default_config_text, load_config
from .errors import ConfigError, DataError, FloodgenError
from .store import atomic_write, atomic_write_json, dumps

log = logging.getLogger("floodgen")


# helpers ---------------------------------------------------------------------


def _mesh(cfg: PipelineConfig):
    from .mesh import Mesh
    return Mesh.from_geojson(cfg.mesh)


def _events(cfg: PipelineConfig, mesh):
    from .mesh import read_events
    return read_events(cfg.events, mesh)


def _update_manifest(cfg: PipelineConfig, command: str, record: dict) -> None:
    path = cfg.path("run_manifest.json")
    manifest = {}
    if path.exists():
        manifest = json.loads(path.read_text())
    manifest.update({"version": __version__, "config_digest": cfg.digest})
    manifest.setdefault("commands", {})[command] = record
    atomic_write_json(path, manifest)


def _split(cfg: PipelineConfig, events, mesh):
    from .mesh import stratified_split
    path = cfg.path("split.json")
    by_id = {e.event_id: e for e in events}
    if path.exists():
        doc = json.loads(path.read_text())
        try:
            return tuple([by_id[i] for i in doc[k]] for k in ("train", "validation", "test"))
        except KeyError as exc:
            raise DataError(f"split.json references unknown event {exc}") from exc
    return stratified_split(events, cfg.split_ratio, cfg.validation_fraction, cfg.class_bounds_inches,
                            cfg.split_seed, cfg.split_sample_size)


# commands --------------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig, args) -> dict:
    mesh = _mesh(cfg)
    events = _events(cfg, mesh)
    atomic_write(cfg.path("mesh.geojson"), lambda fh: fh.write(json.dumps(mesh.to_geojson_dict())))
    from .mesh import write_events
    write_events(cfg.path("events.csv"), events)
    summary = {"cells": mesh.n_cells, "watersheds": mesh.watershed_count,
               "channel_cells": int(mesh.channel.sum()), "events": len(events),
               "with_depth": sum(e.depth is not None for e in events), "mesh_fingerprint": mesh.fingerprint}
    _update_manifest(cfg, "ingest", summary)
    return summary


def cmd_split(cfg: PipelineConfig, args) -> dict:
    from .mesh import stratified_split
    mesh = _mesh(cfg)
    events = _events(cfg, mesh)
    train, val, test = stratified_split(events, cfg.split_ratio, cfg.validation_fraction,
                                        cfg.class_bounds_inches, cfg.split_seed, cfg.split_sample_size)
    doc = {k: [e.event_id for e in v] for k, v in (("train", train), ("validation", val), ("test", test))}
    atomic_write_json(cfg.path("split.json"), doc)
    summary = {k: len(v) for k, v in doc.items()}
    _update_manifest(cfg, "split", {**summary, "seed": cfg.split_seed})
    return summary


def cmd_train_estimator(cfg: PipelineConfig, args) -> dict:
    from .depth_estimator import evaluate_estimator, save_estimator, train_cellwise, train_universal
    mesh = _mesh(cfg)
    train, val, test = _split(cfg, _events(cfg, mesh), mesh)
    workers = args.workers or cfg.workers
    best, best_rmse, scores = None, np.inf, []
    for gbt in cfg.gbt_grid:
        est = train_cellwise(mesh, train, gbt, workers, cfg.heavy_threshold_in)
        if len(cfg.gbt_grid) == 1:
            best = est
            break
        score = evaluate_estimator(est, mesh, val, workers).rmse() if val else np.inf
        scores.append({"config": gbt.__dict__, "validation_rmse": score})
        if score < best_rmse:
            best, best_rmse = est, score
    universal = train_universal(mesh, train, best.config)
    save_estimator(cfg.path("models", "cellwise"), best)
    save_estimator(cfg.path("models", "universal"), universal)
    report = {"selected_config": best.config.__dict__, "grid": scores}
    if test:
        report["cellwise"] = evaluate_estimator(best, mesh, test, workers).to_dict()
        report["universal"] = evaluate_estimator(universal, mesh, test, workers).to_dict()
        for k in ("cellwise", "universal"):
            report[k]["predict_seconds"] = None  # wall time varies between runs
    atomic_write_json(cfg.path("reports", "estimator_eval.json"), report)
    _update_manifest(cfg, "train-estimator", {"train": len(train), "validation": len(val), "test": len(test),
                                              "seed": best.config.seed})
    return {"cellwise_rmse": report.get("cellwise", {}).get("partitions", {}).get("overall", {}).get("rmse"),
            "universal_rmse": report.get("universal", {}).get("partitions", {}).get("overall", {}).get("rmse")}


def cmd_eval_estimator(cfg: PipelineConfig, args) -> dict:
    from .depth_estimator import evaluate_estimator, load_estimator
    mesh = _mesh(cfg)
    _, _, test = _split(cfg, _events(cfg, mesh), mesh)
    if not test:
        raise DataError("test split is empty")
    out = {}
    for mode in ("cellwise", "universal"):
        path = cfg.path("models", mode)
        if path.exists():
            out[mode] = evaluate_estimator(load_estimator(path, mesh), mesh, test, args.workers or cfg.workers).to_dict()
    if not out:
        raise DataError("no trained estimator found; run train-estimator first")
    atomic_write_json(cfg.path("reports", "estimator_test.json"), out)
    return {m: r["partitions"]["overall"] for m, r in out.items()}


def cmd_train_generator(cfg: PipelineConfig, args) -> dict:
    from .point_generator import PointRecords, select_generator
    mesh = _mesh(cfg)
    train, _, _ = _split(cfg, _events(cfg, mesh), mesh)
    points = PointRecords.from_events(mesh, train)
    model, reports = select_generator(points, cfg.generator_grid, cfg.selection_sample_size, cfg.generator_seed,
                                      mesh, cfg.generator_backend, cfg.allow_dry, cfg.max_attempt_factor)
    model.save(cfg.path("generator.json"))
    doc = [{"config": c, "ks": r.ks, "score": r.score} for c, r in reports]
    atomic_write_json(cfg.path("reports", "generator_quality.json"), doc)
    best = max(r.score for _, r in reports)
    _update_manifest(cfg, "train-generator", {"quality_score": best, "seed": cfg.generator_seed,
                                              "candidates": len(reports)})
    return {"quality_score": best}


def cmd_sample_points(cfg: PipelineConfig, args) -> dict:
    from .point_generator import GeneratorModel, sample_constrained
    mesh = _mesh(cfg)
    model = GeneratorModel.load(cfg.path("generator.json"))
    cloud = sample_constrained(model, cfg.cloud_size, mesh, cfg.max_attempt_factor, cfg.generator_seed + 1,
                               cfg.allow_dry)
    cloud.to_csv(cfg.path("points.csv"))
    _update_manifest(cfg, "sample-points", {"points": len(cloud), "seed": cfg.generator_seed + 1})
    return {"points": len(cloud)}


def _load_points(cfg):
    from .point_generator import PointRecords
    return PointRecords.from_csv(cfg.path("points.csv"))


def cmd_build_pools(cfg: PipelineConfig, args) -> dict:
    from .pools import aggregate_duration_bounds, build_pools, compute_all_thresholds
    mesh = _mesh(cfg)
    train, _, _ = _split(cfg, _events(cfg, mesh), mesh)
    thr = compute_all_thresholds(train, mesh, cfg.theta1, cfg.theta2)
    pools = build_pools(_load_points(cfg), mesh, thr, aggregate_duration_bounds(train, cfg.theta1, cfg.theta2))
    pools.save(cfg.path("pools"))
    summary = {"indexed": pools.n_indexed, "skipped": pools.skipped,
               "empty_buckets": int((pools.sizes == 0).sum())}
    _update_manifest(cfg, "build-pools", summary)
    return summary


def _load_pools(cfg, mesh):
    from .pools import PoolIndex
    return PoolIndex.load(cfg.path("pools"), _load_points(cfg), mesh)


def cmd_gen_events(cfg: PipelineConfig, args) -> dict:
    from .depth_estimator import load_estimator
    from .event_synth import generate_batch, write_batch
    mesh = _mesh(cfg)
    estimator = load_estimator(cfg.path("models", "cellwise"), mesh)
    pools = _load_pools(cfg, mesh)
    n = args.n_events or cfg.n_events
    events = generate_batch(pools, mesh, estimator, n, cfg.base_seed, cfg.knn, args.workers or cfg.workers)
    write_batch(cfg.path("synthetic_events"), events, {"base_seed": cfg.base_seed,
                                                       "mesh_fingerprint": mesh.fingerprint})
    fallback = int(sum(e.fallback_cells for e in events))
    _update_manifest(cfg, "gen-events", {"events": n, "base_seed": cfg.base_seed, "fallback_cells": fallback})
    return {"events": n, "fallback_cells": fallback}


def cmd_eval_synth(cfg: PipelineConfig, args) -> dict:
    from .distribution_metrics import aggregate_report, compare_all, write_report_csv
    from .event_synth import read_batch
    mesh = _mesh(cfg)
    train, _, _ = _split(cfg, _events(cfg, mesh), mesh)
    synth = read_batch(cfg.path("synthetic_events"), mesh.n_cells)
    t = np.stack([e.depth for e in train])
    s = np.stack([e.depth for e in synth])
    comps = compare_all(t, s, cfg.metric_repeats, cfg.metric_seed, cfg.metric_sort)
    report = aggregate_report(comps, mesh)
    write_report_csv(cfg.path("reports", "synthetic_depth_comparison.csv"), report)
    _update_manifest(cfg, "eval-synth", {"repeats": cfg.metric_repeats, "sorted": cfg.metric_sort})
    return {m: report["overall"][m]["q50"] for m in report["overall"]}


def cmd_probmap(cfg: PipelineConfig, args) -> dict:
    from .event_synth import read_batch
    from .probmap import export_map, probability_maps, write_maps_manifest
    mesh = _mesh(cfg)
    synth = read_batch(cfg.path("synthetic_events"), mesh.n_cells)
    maps = probability_maps(np.stack([e.depth for e in synth]), cfg.thresholds_ft, mesh.fingerprint)
    for m in maps:
        export_map(m, mesh, cfg.path("maps", f"probability_ge_{m.threshold:g}ft"), cfg.formats, cfg.raster_width)
    write_maps_manifest(cfg.path("maps", "manifest.json"), maps)
    _update_manifest(cfg, "probmap", {"thresholds_ft": list(cfg.thresholds_ft), "events": len(synth)})
    return {f"{m.threshold:g}ft_mean_probability": float(m.probability.mean()) for m in maps}


def cmd_generate(cfg: PipelineConfig, args) -> dict:
    out = {}
    for step in (cmd_train_generator, cmd_sample_points, cmd_build_pools, cmd_gen_events, cmd_eval_synth,
                 cmd_probmap):
        out.update(step(cfg, args))
    return out


def cmd_bench_synthetic(cfg: PipelineConfig, args) -> dict:
    from .benchmark import make_benchmark
    from .mesh import write_events
    out = Path(args.out)
    mesh, events, _ = make_benchmark(args.nx, args.ny, args.watersheds, args.events, args.seed)
    atomic_write(out / "mesh.geojson", lambda fh: fh.write(json.dumps(mesh.to_geojson_dict())))
    write_events(out / "events.csv", events)
    sample = int(round(args.events * 0.7))
    cfg_text = default_config_text().replace("sample_size =\n", f"sample_size = {sample}\n")
    atomic_write(out / "floodgen.ini", lambda fh: fh.write(cfg_text))
    return {"cells": mesh.n_cells, "events": len(events), "dir": str(out)}


COMMANDS = {
    "ingest": (cmd_ingest, "validate mesh and events and write normalised copies"),
    "split": (cmd_split, "stratified train/validation/test split"),
    "train-estimator": (cmd_train_estimator, "train cell-wise and universal depth estimators"),
    "eval-estimator": (cmd_eval_estimator, "evaluate stored estimators on the test split"),
    "train-generator": (cmd_train_generator, "fit and select the point generator"),
    "sample-points": (cmd_sample_points, "sample the constrained synthetic point cloud"),
    "build-pools": (cmd_build_pools, "index the point cloud into per-cell LMH pools"),
    "gen-events": (cmd_gen_events, "generate synthetic precipitation-flood events"),
    "eval-synth": (cmd_eval_synth, "compare synthetic and training depth distributions"),
    "probmap": (cmd_probmap, "exceedance-probability maps"),
    "generate": (cmd_generate, "train-generator through probmap in one go"),
    "bench-synthetic": (cmd_bench_synthetic, "write the bundled synthetic benchmark"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floodgen", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", "-c", help="INI config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--workers", type=int, default=0)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "gen-events":
            p.add_argument("--n-events", type=int, default=0)
        if name == "bench-synthetic":
            p.add_argument("--out", required=True)
            p.add_argument("--nx", type=int, default=20)
            p.add_argument("--ny", type=int, default=10)
            p.add_argument("--watersheds", type=int, default=3)
            p.add_argument("--events", type=int, default=90)
            p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not hasattr(args, "n_events"):
        args.n_events = 0
    fn = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, args.overrides)
        result = fn(cfg, args)
    except FloodgenError as exc:
        print(f"floodgen {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"floodgen {args.command}: {exc}", file=sys.stderr)
        return 5
    print(dumps(result), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
