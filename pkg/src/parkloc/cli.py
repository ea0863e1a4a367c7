"""Command-line interface.

Subcommands cover the whole pipeline:

    parkloc synth     write a seeded synthetic corpus
    parkloc index     build a gallery index from a manifest
    parkloc match     match two images, dump correspondences
    parkloc localize  localize queries against an index
    parkloc evaluate  score a localization run (optionally the ablation)

Every subcommand accepts --config, --jobs, and --verbose. Flag values
override the config file; the effective algorithm parameters are echoed
into every artifact written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import RunConfig
from .errors import ParklocError
from .evaluation import (
    QueryRecord,
    accuracy,
    annotations_from_manifest,
    run_ablation,
    write_ablation_table,
    write_report,
)
from .features import extract
from .gallery import build_index, load_index
from .imaging import load_image
from .localizer import (
    COUNTS_NAME,
    RAW_COUNTS_NAME,
    RESULTS_NAME,
    LocalizationResult,
    format_match_line,
    localize_pyramid,
    read_counts_csv,
    read_results,
    write_counts_csv,
    write_results,
)
from .matcher import match_pair
from .synth import SceneSpec, generate
from .vehicle_filter import load_detections

logger = logging.getLogger(__name__)


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    for flag, attr in (
        ("backend", "backend"),
        ("temperature", "temperature"),
        ("threshold", "threshold"),
        ("window", "window"),
        ("min_score", "min_score"),
        ("removal_mode", "removal_mode"),
        ("target_long_side", "target_long_side"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "no_vehicle_filter", False):
        cfg.use_vehicle_filter = False
    cfg.jobs = args.jobs
    cfg.verbose = args.verbose
    cfg.validate()
    return cfg


def _load_query_records(
    manifest: Path, detections: Path | None, cfg: RunConfig
) -> list[QueryRecord]:
    annotations = annotations_from_manifest(manifest)
    images = [
        load_image(a.image_path, cfg.target_long_side, source_id=a.query_id)
        for a in annotations
    ]
    detection_map = {}
    if detections is not None:
        scales = {
            img.source_id: (
                img.width / img.original_size[0],
                img.height / img.original_size[1],
            )
            for img in images
        }
        detection_map = load_detections(
            detections, scales, frozenset(cfg.vehicle_classes), cfg.min_score
        )
    records = []
    for ann, img in zip(annotations, images):
        dets = detection_map.get(ann.query_id)
        if dets is not None:
            dets = dets.prune_outside(img.width, img.height)
        records.append(QueryRecord(ann, img, dets))
    return records


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.spec is not None:
        spec = SceneSpec.from_file(args.spec)
    else:
        spec = SceneSpec()
    overrides = {}
    for name in ("seed", "sections", "wall_texture", "churn", "templates", "queries_per_section"):
        value = getattr(args, name)
        if value is not None:
            key = {
                "sections": "n_sections",
                "wall_texture": "wall_texture_strength",
                "churn": "vehicle_churn",
                "templates": "vehicle_templates",
            }.get(name, name)
            overrides[key] = value
    if args.vehicles is not None:
        overrides["vehicles_per_section"] = list(args.vehicles)
    if args.photometric is not None:
        overrides["photometric_jitter"] = list(args.photometric)
    if args.geometric is not None:
        overrides["geometric_jitter"] = list(args.geometric)
    if overrides:
        merged = spec.to_json_dict()
        merged.update(overrides)
        spec = SceneSpec.from_json_dict(merged)
    spec.validate()
    paths = generate(spec, args.out)
    print(f"wrote corpus to {paths.root} "
          f"({spec.n_sections} sections, {spec.n_sections * spec.queries_per_section} queries)")
    return 0


def cmd_index(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} exists and is not empty (use --force to overwrite)",
              file=sys.stderr)
        return 1
    index = build_index(
        args.manifest,
        backend=cfg.feature_backend(),
        detections_path=args.detections,
        out_dir=out,
        target_long_side=cfg.target_long_side,
        vehicle_classes=frozenset(cfg.vehicle_classes),
        min_score=cfg.min_score,
        jobs=cfg.jobs,
    )
    (out / "config.json").write_text(
        json.dumps(cfg.echo_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    print(f"indexed {len(index.entries)} entries across {len(index.sections)} sections -> {out}")
    return 0


def cmd_match(args: argparse.Namespace, cfg: RunConfig) -> int:
    image_a = load_image(args.image_a, cfg.target_long_side)
    image_b = load_image(args.image_b, cfg.target_long_side)
    matches = match_pair(image_a, image_b, cfg.feature_backend(), cfg.match_params())
    lines = ["# parkloc matches v1 (xa ya xb yb confidence)"]
    lines.append("# config: " + json.dumps(cfg.echo_dict(), sort_keys=True))
    lines += [format_match_line(m) for m in matches]
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"{len(matches)} matches between {image_a.source_id} and {image_b.source_id}")
    return 0


def cmd_localize(args: argparse.Namespace, cfg: RunConfig) -> int:
    expect = {"backend": cfg.feature_backend().kind, "target_long_side": cfg.target_long_side}
    index = load_index(args.index, expect=expect)
    records = _load_query_records(Path(args.queries), args.detections, cfg)

    def _one(rec: QueryRecord) -> LocalizationResult:
        pyramid = extract(rec.image, cfg.feature_backend())
        return localize_pyramid(
            rec.annotation.query_id, pyramid, rec.detections, index,
            cfg.match_params(), cfg.use_vehicle_filter, cfg.removal_mode, jobs=1,
        )

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_one, records))
    else:
        results = [_one(r) for r in records]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo_dict()
    write_results(results, out / RESULTS_NAME, echo)
    write_counts_csv(results, out / COUNTS_NAME, echo)
    write_counts_csv(results, out / RAW_COUNTS_NAME, echo, raw=True)
    n_low = sum(r.low_confidence for r in results)
    print(f"localized {len(results)} queries -> {out}" +
          (f" ({n_low} low-confidence)" if n_low else ""))
    return 0


def _results_from_files(results_dir: Path) -> list[LocalizationResult]:
    if results_dir.is_file():  # accept the results.txt path itself
        results_dir = results_dir.parent
    records = read_results(results_dir / RESULTS_NAME)
    entry_ids, rows = read_counts_csv(results_dir / COUNTS_NAME)
    counts_by_id = dict(rows)
    if [r.query_id for r in records] != [qid for qid, _ in rows]:
        raise ParklocError(
            f"{results_dir}: {RESULTS_NAME} and {COUNTS_NAME} disagree on queries"
        )
    rebuilt = []
    for rec in records:
        counts = counts_by_id[rec.query_id]
        rebuilt.append(
            LocalizationResult(
                query_id=rec.query_id,
                counts=counts,
                raw_counts=counts,
                entry_ids=entry_ids,
                best_entry=rec.best_entry,
                predicted_section=rec.predicted_section,
                best_count=rec.best_count,
                second_count=rec.second_count,
                second_best_ratio=rec.second_best_ratio,
                low_confidence=rec.best_count == 0,
            )
        )
    return rebuilt


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out)
    echo = cfg.echo_dict()
    if args.ablation:
        index = load_index(args.index)
        records = _load_query_records(Path(args.queries), args.detections, cfg)
        outcome = run_ablation(
            records, index, cfg.match_params(), cfg.feature_backend(),
            cfg.removal_mode, bins=args.bins, jobs=cfg.jobs,
        )
        write_report(outcome.with_filter, out / "with_filter", echo, args.render_matrix)
        write_report(outcome.without_filter, out / "without_filter", echo, args.render_matrix)
        write_ablation_table(outcome, out / "ablation.txt", echo)
        print(f"accuracy with vehicle remover    {outcome.with_filter.accuracy:.3f}")
        print(f"accuracy without vehicle remover {outcome.without_filter.accuracy:.3f}")
        return 0

    results = _results_from_files(Path(args.results))
    annotations = annotations_from_manifest(args.queries)
    report = accuracy(results, annotations, bins=args.bins)
    write_report(report, out, echo, args.render_matrix)
    print(f"accuracy {report.accuracy:.3f} ({report.n_correct}/{report.n_queries})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parkloc",
        description="Indoor parking-lot visual localization pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON run config")
    common.add_argument("--jobs", type=int, default=1, help="worker threads")
    common.add_argument("--verbose", action="store_true", help="info-level logging")

    knobs = argparse.ArgumentParser(add_help=False)
    knobs.add_argument("--backend", default=None, help='"hog" or "injected:<dir>"')
    knobs.add_argument("--target-long-side", dest="target_long_side", type=int, default=None)
    knobs.add_argument("--temperature", type=float, default=None)
    knobs.add_argument("--threshold", type=float, default=None)
    knobs.add_argument("--window", type=int, default=None)

    filt = argparse.ArgumentParser(add_help=False)
    filt.add_argument("--min-score", dest="min_score", type=float, default=None)
    filt.add_argument("--removal-mode", dest="removal_mode", default=None,
                      choices=("either", "both"))
    filt.add_argument("--no-vehicle-filter", action="store_true")

    p = sub.add_parser("synth", help="generate a synthetic corpus", parents=[common])
    p.add_argument("--spec", type=Path, default=None, help="scene spec JSON")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sections", type=int, default=None)
    p.add_argument("--wall-texture", dest="wall_texture", type=float, default=None)
    p.add_argument("--vehicles", nargs=2, type=int, metavar=("LO", "HI"), default=None)
    p.add_argument("--churn", type=float, default=None)
    p.add_argument("--photometric", nargs=2, type=float, metavar=("B", "C"), default=None)
    p.add_argument("--geometric", nargs=2, type=float, metavar=("SHIFT", "DEG"), default=None)
    p.add_argument("--templates", type=int, default=None)
    p.add_argument("--queries-per-section", dest="queries_per_section", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("index", help="build a gallery index",
                       parents=[common, knobs, filt])
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--detections", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("match", help="match two images", parents=[common, knobs])
    p.add_argument("image_a", type=Path)
    p.add_argument("image_b", type=Path)
    p.add_argument("--out", type=Path, default=None, help="match dump file (default stdout)")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("localize", help="localize queries against an index",
                       parents=[common, knobs, filt])
    p.add_argument("--queries", type=Path, required=True, help="query manifest")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--detections", type=Path, default=None, help="query detections")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="score a run", parents=[common, knobs, filt])
    p.add_argument("--results", type=Path, default=None, help="directory written by localize")
    p.add_argument("--queries", type=Path, required=True, help="query manifest with labels")
    p.add_argument("--index", type=Path, default=None, help="index (ablation mode)")
    p.add_argument("--detections", type=Path, default=None, help="query detections")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ablation", action="store_true",
                   help="run both filter arms from scratch")
    p.add_argument("--bins", type=int, default=20, help="ratio histogram bins")
    p.add_argument("--render-matrix", action="store_true",
                   help="also write the normalized count matrix as PNG")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage error or --help; keep in-process callers alive
        return int(exc.code or 0)

    if args.command == "evaluate":
        problem = None
        if args.ablation and args.index is None:
            problem = "--ablation requires --index"
        elif not args.ablation and args.results is None:
            problem = "--results is required unless --ablation is given"
        if problem is not None:
            parser.print_usage(sys.stderr)
            print(f"parkloc evaluate: error: {problem}", file=sys.stderr)
            return 2

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args)
        return args.func(args, cfg)
    except (ParklocError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
