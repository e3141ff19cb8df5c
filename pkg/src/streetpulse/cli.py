"""Pipeline command line: reproducible file-based stages plus the survey server.

Every stage reads its inputs from the paths in the config file, writes its
artifacts plus a manifest (input digests, seed, parameters) into
``<out>/<stage>/``, and is bit-reproducible: rerunning with an identical
manifest produces identical bytes. Stages are ordered sample, cluster,
qa, rank, mlm, interpret, map; ``run all`` executes them in sequence
(``serve`` is interactive and runs on its own).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import ingest_features, kmeans, stratified_sample, write_assignments
from .geo import (
    bbox_of,
    build_sample_plan,
    dedupe_images,
    generate_grid,
    read_road_points,
    snap_to_roads,
    write_sample_plan,
)
from .geomap import (
    aggregate,
    assign_deciles,
    assign_points,
    export_geojson,
    read_areas_geojson,
    write_aggregates_csv,
)
from .interpret import (
    fit_logistic_cv,
    label_extremes,
    read_feature_table,
    select_features,
    write_coefficients_csv,
    write_cv_report,
)
from .mlm import fit_mlm, write_effects_csv
from .qa import qa_report, usable_games, write_qa_report
from .ranking import rank_all, read_scores_csv, write_scores_csv
from .records import read_sessions_csv, read_votes_csv, write_votes_csv
from .scheduler import SchedulerConfig, load_scheduler_config

STAGES = ("sample", "cluster", "qa", "rank", "mlm", "interpret", "map")


class StageError(SystemExit):
    pass


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest_key(path: Path, out: Path) -> str:
    # artifacts produced inside the out dir are keyed relative to it, so
    # reruns into a different directory stay byte-identical
    try:
        return str(path.resolve().relative_to(out.resolve()))
    except ValueError:
        return str(path)


def _write_manifest(stage_dir: Path, stage: str, config: dict, inputs: list[Path], report: dict) -> None:
    out = stage_dir.parent
    manifest = {
        "stage": stage,
        "seed": config.get("seed", 0),
        "parameters": {k: v for k, v in config.items() if not isinstance(v, str)},
        "inputs": {_manifest_key(Path(p), out): _sha256(Path(p)) for p in inputs},
        "outputs": {
            p.name: _sha256(p)
            for p in sorted(stage_dir.iterdir())
            if p.name != "manifest.json"
        },
        "report": report,
        "version": __version__,
    }
    with open(stage_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _stage_dir(out: Path, stage: str) -> Path:
    path = out / stage
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise StageError(f"missing artifact {path}: run the '{producer}' stage first")
    return path


def _input(config: dict, key: str) -> Path:
    if key not in config:
        raise StageError(f"config is missing the {key!r} path")
    path = Path(config[key])
    if not path.exists():
        raise StageError(f"{key} file not found: {path}")
    return path


def stage_sample(config: dict, out: Path) -> dict:
    roads_path = _input(config, "roads")
    roads = read_road_points(roads_path)
    if "bbox" in config:
        south, west, north, east = config["bbox"]
        from .geo import GeoPoint

        box = (GeoPoint(south, west), GeoPoint(north, east))
    else:
        box = bbox_of([r.point for r in roads])
    grid = generate_grid(box, config.get("spacing_m", 20.0))
    assignments = snap_to_roads(grid, roads, config.get("snap_max_dist_m", 15.0))
    unique, coverage = dedupe_images(assignments, n_roads=len(roads))
    plan = build_sample_plan(roads, assignments, config.get("spacing_m", 20.0))

    stage = _stage_dir(out, "sample")
    write_sample_plan(plan, stage / "sample_plan.csv")
    report = {
        "grid_points": len(grid),
        "road_points": len(roads),
        "unique_images": len(unique),
        "road_coverage": round(coverage, 6),
    }
    _write_manifest(stage, "sample", config, [roads_path], report)
    return report


def stage_cluster(config: dict, out: Path) -> dict:
    features_path = _input(config, "features")
    corpus = ingest_features(features_path)
    seed = config.get("seed", 0)
    result = kmeans(corpus.features, config.get("k", 8), seed=seed)
    n = min(config.get("sample_n", 25_000), len(corpus))
    survey = stratified_sample(corpus.image_ids, result.assignments, n, seed=seed)

    stage = _stage_dir(out, "cluster")
    write_assignments(corpus.image_ids, result.assignments, stage / "assignments.csv")
    (stage / "survey_images.csv").write_text(
        "image_id\n" + "".join(f"{img}\n" for img in survey)
    )
    report = {
        "images": len(corpus),
        "dim": corpus.dim,
        "k": result.k,
        "iterations": result.n_iter,
        "inertia": round(result.inertia, 6),
        "survey_size": len(survey),
    }
    _write_manifest(stage, "cluster", config, [features_path], report)
    return report


def stage_qa(config: dict, out: Path) -> dict:
    votes_path = _input(config, "votes")
    sessions_path = _input(config, "sessions")
    votes = read_votes_csv(votes_path)
    sessions = read_sessions_csv(sessions_path)
    params = config.get("qa", {})
    threshold = params.get("threshold", 0.9)
    min_games = params.get("min_games", 10)
    window_s = params.get("window_s", 60.0)

    corpus_size = None
    if "features" in config:
        corpus_size = len(ingest_features(_input(config, "features")))
    n_images = corpus_size or len(
        {v.left_image for v in votes} | {v.right_image for v in votes}
    )

    usable = usable_games(votes, threshold, min_games, window_s)
    report = qa_report(votes, sessions, n_images, threshold, min_games, window_s)

    stage = _stage_dir(out, "qa")
    write_votes_csv(usable.votes, stage / "usable_votes.csv")
    write_qa_report(report, stage / "qa_report.json")
    _write_manifest(
        stage,
        "qa",
        config,
        [votes_path, sessions_path],
        {"usable_games": report["usable_games"], "raw_votes": report["pairwise_ratings"]},
    )
    return report


def stage_rank(config: dict, out: Path) -> dict:
    usable_path = _require(out / "qa" / "usable_votes.csv", "qa")
    features_path = _input(config, "features")
    votes = read_votes_csv(usable_path)
    corpus = ingest_features(features_path)
    scores = rank_all(votes, corpus.image_ids)
    sigma_mean = sum(s.sigma for s in scores.values()) / len(scores)

    stage = _stage_dir(out, "rank")
    write_scores_csv(scores, stage / "scores.csv")
    report = {
        "images": len(scores),
        "games": len(votes),
        "games_multiplier": round(len(votes) / len(scores), 6),
        "mean_sigma": round(sigma_mean, 6),
    }
    _write_manifest(stage, "rank", config, [usable_path, features_path], report)
    return report


def stage_mlm(config: dict, out: Path) -> dict:
    usable_path = _require(out / "qa" / "usable_votes.csv", "qa")
    sessions_path = _input(config, "sessions")
    votes = [v for v in read_votes_csv(usable_path) if v.pair_kind == "repeated"]
    sessions = read_sessions_csv(sessions_path)
    grouping = config.get("grouping")

    stage = _stage_dir(out, "mlm")
    baseline = fit_mlm(votes)
    write_effects_csv(baseline, stage / "mlm_effects.csv")
    report = {
        "model": "baseline",
        "beta0": round(baseline.beta0, 6),
        "sigma_u": round(baseline.sigma_u, 6),
        "converged": baseline.converged,
        "cells": len(baseline.effects),
    }
    if grouping:
        grouped = fit_mlm(votes, sessions, grouping=grouping)
        write_effects_csv(grouped, stage / f"mlm_effects_{grouping}.csv")
        report["grouped"] = {
            "grouping": grouping,
            "beta0": round(grouped.beta0, 6),
            "sigma_u": round(grouped.sigma_u, 6),
            "converged": grouped.converged,
            "cells": len(grouped.effects),
        }
    _write_manifest(stage, "mlm", config, [usable_path, sessions_path], report)
    return report


def stage_interpret(config: dict, out: Path) -> dict:
    scores_path = _require(out / "rank" / "scores.csv", "rank")
    table_path = _input(config, "feature_table")
    meta_path = _input(config, "feature_meta")
    table = read_feature_table(table_path, meta_path)
    scaled = read_scores_csv(scores_path)
    labels = label_extremes(scaled)

    if "l1_strength" in config:
        retained = select_features(table, labels, config["l1_strength"])
        keep_idx = [table.feature_names.index(name) for name in retained]
        from .interpret import FeatureTable

        table = FeatureTable(
            table.image_ids,
            retained,
            table.matrix[:, keep_idx],
            {n: table.semantics[n] for n in retained},
        )

    result = fit_logistic_cv(
        table,
        labels,
        folds=config.get("folds", 5),
        l2=config.get("l2", 1.0),
        seed=config.get("seed", 0),
    )
    stage = _stage_dir(out, "interpret")
    write_coefficients_csv(result, stage / "coefficients.csv")
    write_cv_report(result, stage / "cv_report.json")
    report = {
        "labelled_images": len(labels),
        "features": len(table.feature_names),
        "mean_cv_accuracy": round(result.mean_accuracy, 6),
    }
    _write_manifest(stage, "interpret", config, [scores_path, table_path, meta_path], report)
    return report


def stage_map(config: dict, out: Path) -> dict:
    scores_path = _require(out / "rank" / "scores.csv", "rank")
    areas_path = _input(config, "areas")
    features_path = _input(config, "features")
    corpus = ingest_features(features_path)
    scaled = read_scores_csv(scores_path)
    areas = read_areas_geojson(areas_path)
    locations = {img: loc for img, loc in zip(corpus.image_ids, corpus.locations)}
    assignment = assign_points(locations, areas)
    aggregates, summary = aggregate(scaled, assignment, areas)
    aggregates = assign_deciles(aggregates)

    stage = _stage_dir(out, "map")
    export_geojson(aggregates, areas, stage / "areas_scored.geojson")
    write_aggregates_csv(aggregates, stage / "aggregates.csv")
    report = dict(summary)
    _write_manifest(stage, "map", config, [scores_path, areas_path, features_path], report)
    return report


STAGE_FUNCS = {
    "sample": stage_sample,
    "cluster": stage_cluster,
    "qa": stage_qa,
    "rank": stage_rank,
    "mlm": stage_mlm,
    "interpret": stage_interpret,
    "map": stage_map,
}


def run_stage(stage: str, config: dict, out: Path) -> None:
    report = STAGE_FUNCS[stage](config, out)
    print(f"[{stage}] {json.dumps(report, sort_keys=True)}")


PATH_KEYS = ("roads", "features", "areas", "feature_table", "feature_meta", "votes", "sessions")


def cmd_run(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    with open(config_path) as fh:
        config = json.load(fh)
    for key in PATH_KEYS:  # relative input paths are anchored at the config file
        if key in config and not Path(config[key]).is_absolute():
            config[key] = str(config_path.resolve().parent / config[key])
    if args.seed is not None:
        config["seed"] = args.seed
    if args.grouping is not None:
        config["grouping"] = args.grouping or None
    out = Path(args.out) if args.out else Path(config.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)

    stages = STAGES if args.stage == "all" else (args.stage,)
    for stage in stages:
        run_stage(stage, config, out)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .corpus import read_assignments
    from .service import SurveyService
    from .webapp import create_app

    if args.scheduler_config:
        sched_cfg = load_scheduler_config(args.scheduler_config)
    else:
        sched_cfg = SchedulerConfig()

    clusters = None
    if args.assignments:
        clusters = read_assignments(args.assignments)
        image_ids = sorted(clusters)
    elif args.survey_images:
        with open(args.survey_images) as fh:
            image_ids = [line.strip() for line in fh.readlines()[1:] if line.strip()]
    else:
        images_dir = Path(args.images_dir)
        image_ids = sorted(p.stem for p in images_dir.iterdir() if p.is_file())
    if len(image_ids) < 2:
        raise StageError("need at least 2 survey images to serve")

    service = SurveyService(args.store_dir, image_ids, clusters, sched_cfg)
    app = create_app(service, args.images_dir, args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_fixture(args: argparse.Namespace) -> int:
    from .simulate import build_fixture

    paths = build_fixture(args.out, n_images=args.images, seed=args.seed)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="streetpulse", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a pipeline stage (or 'all')")
    run.add_argument("stage", choices=STAGES + ("all",))
    run.add_argument("--config", required=True, help="pipeline config JSON")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="artifact directory (default: config 'out')")
    run.add_argument(
        "--grouping",
        default=None,
        choices=("source", "location", "gender", "activity", ""),
        help="rater attribute for the grouped multilevel model ('' for baseline only)",
    )
    run.set_defaults(func=cmd_run)

    serve = sub.add_parser("serve", help="run the survey HTTP service")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--images-dir", default=None, help="static image files keyed by image id")
    serve.add_argument("--store-dir", required=True, help="durable event-log directory")
    serve.add_argument("--scheduler-config", default=None, help="key=value scheduler settings")
    serve.add_argument("--ui-dir", default=None, help="serve the built voting UI at /app")
    serve.add_argument("--assignments", default=None, help="image_id,cluster CSV for the survey set")
    serve.add_argument("--survey-images", default=None, help="image_id list CSV for the survey set")
    serve.set_defaults(func=cmd_serve)

    fixture = sub.add_parser("fixture", help="generate the bundled synthetic fixture")
    fixture.add_argument("--out", required=True)
    fixture.add_argument("--images", type=int, default=200)
    fixture.add_argument("--seed", type=int, default=0)
    fixture.set_defaults(func=cmd_fixture)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
