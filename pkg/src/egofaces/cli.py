"""Command-line interface.

Exit status: 0 on success, 1 when a dataset fails validation or a stage
fails, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import formats
from .calibration import calibrate_dataset
from .clustering import LINKAGES, agglomerative_cluster
from .dissimilarity import CONSTRAINT_MODES, DissimilarityMatrix, apply_constraints, build_dissimilarity_matrix, constraint_matrix
from .errors import ConfigError, EgoFacesError, ValidationFailed
from .matching import DESCRIPTOR_METRICS, MATCHER_KINDS, MatcherConfig, make_matcher
from .metrics import NMI_NORMALIZATIONS, evaluate
from .model import validate_dataset
from .pipeline import BASELINES, PipelineConfig, load_dataset, render_table, run_pipeline
from .synth import SynthConfig, generate_calibration_split, generate_dataset
from .tracklets import TrackingConfig, track_dataset

log = logging.getLogger("egofaces")


def _pair(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(",")
    return int(lo), int(hi or lo)


def _add_matcher(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("matcher")
    g.add_argument("--matcher", choices=MATCHER_KINDS, default="descriptor")
    g.add_argument("--metric", choices=DESCRIPTOR_METRICS, default="inv_euclidean",
                   help="descriptor similarity")
    g.add_argument("--patch-size", type=int, default=64)
    g.add_argument("--grid", type=int, default=4)
    g.add_argument("--search-radius", type=int, default=4)
    g.add_argument("--score-table", help="TSV of precomputed example scores")
    g.add_argument("--parallelism", type=int, default=1, help="concurrent pair evaluations, 0 = one per CPU")


def _matcher_config(args) -> MatcherConfig:
    return MatcherConfig(kind=args.matcher, patch_size=args.patch_size, grid=args.grid,
                         search_radius=args.search_radius, descriptor_metric=args.metric,
                         score_table_path=args.score_table)


def _add_tracking(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("tracking")
    d = TrackingConfig()
    g.add_argument("--max-gap", type=int, default=d.max_gap)
    g.add_argument("--iou-min", type=float, default=d.iou_min)
    g.add_argument("--sim-min", type=float, default=d.sim_min)
    g.add_argument("--overlap-min", type=float, default=d.overlap_min)
    g.add_argument("--min-face-frame-ratio", type=float, default=d.min_face_frame_ratio)


def _tracking_config(args) -> TrackingConfig:
    return TrackingConfig(args.max_gap, args.iou_min, args.sim_min, args.overlap_min,
                          args.min_face_frame_ratio)


def _theta(text: str) -> float | str:
    return text if text == "calibrate" else float(text)


def cmd_validate(args) -> int:
    dataset = formats.read_manifest(args.manifest)
    violations = validate_dataset(dataset)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return 1
    print(f"ok: {len(dataset.sequences)} sequences, {len(dataset.face_sets)} face-sets, "
          f"{sum(1 for _ in dataset.examples())} face-examples")
    return 0


def cmd_simulate(args) -> int:
    config = SynthConfig(
        num_identities=args.identities, sets_per_identity=args.sets_per_identity,
        examples_per_set=_pair(args.examples_per_set), descriptor_dim=args.dim,
        intra_sigma=args.intra_sigma, inter_margin=args.inter_margin,
        cooccurrence_rate=args.cooccurrence_rate, confusable_pairs=args.confusable_pairs,
        confusable_distance=args.confusable_distance, sigma_ratio=args.sigma_ratio,
        mode=args.mode, patch_size=args.synth_patch_size, contiguous_frames=args.contiguous,
        with_detections=args.with_detections, seed=args.seed)
    dataset, truth = generate_dataset(config, split=args.split)
    formats.write_manifest(dataset, args.out)
    if args.truth_out:
        formats.atomic_write(args.truth_out, formats.dumps_truth(truth))
    if args.calibration_out:
        cal, _ = generate_calibration_split(config)
        formats.write_manifest(cal, args.calibration_out)
    print(f"wrote {len(dataset.face_sets)} face-sets to {args.out}")
    return 0


def cmd_track(args) -> int:
    dataset = formats.read_manifest(args.manifest)
    if not dataset.detections:
        raise ConfigError("manifest has no detections to track")
    tracked = track_dataset(dataset, _tracking_config(args))
    formats.write_manifest(tracked, args.out)
    print(f"wrote {len(tracked.face_sets)} face-sets to {args.out}")
    return 0


def cmd_dissim(args) -> int:
    dataset = load_dataset(args.manifest)
    D = build_dissimilarity_matrix(dataset, make_matcher(_matcher_config(args)), args.parallelism)
    C = constraint_matrix(dataset)
    D = apply_constraints(D, C, args.constraint_mode)
    formats.write_matrix(D.values, args.out)
    if args.constraints_out:
        formats.write_matrix(C.flags, args.constraints_out)
    return 0


def cmd_calibrate(args) -> int:
    dataset = load_dataset(args.manifest)
    pairs = formats.loads_pairs(Path(args.pairs).read_text("utf-8"), args.pairs) if args.pairs else None
    result = calibrate_dataset(dataset, make_matcher(_matcher_config(args)), pairs,
                               allow_untagged=args.allow_untagged, parallelism=args.parallelism)
    out = Path(args.out_dir)
    doc = {"theta": result.theta, "median_d": result.median_d if result.delta_d_values else None,
           "n_same": len(result.delta_s_values), "n_different": len(result.delta_d_values)}
    formats.atomic_write(out / "calibration.json", formats.dumps_json(doc))
    formats.atomic_write(out / "plotdata.csv", formats.dumps_plotdata(
        result.delta_s_values, result.delta_d_values, result.theta, result.median_d))
    config = {"manifest": args.manifest, "pairs": args.pairs, "matcher": _matcher_config(args).to_dict()}
    formats.atomic_write(out / "config.json", formats.dumps_json(config))
    print(f"theta = {result.theta!r}")
    return 0


def cmd_cluster(args) -> int:
    dataset = load_dataset(args.manifest)
    if args.matrix:
        values = formats.read_matrix(args.matrix)
        D = DissimilarityMatrix(values, tuple(dataset.set_ids))
    else:
        D = build_dissimilarity_matrix(dataset, make_matcher(_matcher_config(args)), args.parallelism)
        D = apply_constraints(D, constraint_matrix(dataset), args.constraint_mode)
    cannot_link = constraint_matrix(dataset) if args.constraint_mode == "hard_max" else None
    _, assignment = agglomerative_cluster(D, args.linkage, args.theta, cannot_link)
    formats.atomic_write(args.out, formats.dumps_assignment(assignment))
    print(f"{assignment.num_clusters} clusters")
    return 0


def cmd_evaluate(args) -> int:
    assignment = formats.loads_assignment(Path(args.assignment).read_text("utf-8"), args.assignment)
    if args.truth:
        truth = formats.loads_truth(Path(args.truth).read_text("utf-8"), args.truth)
    else:
        truth = formats.read_manifest(args.manifest).truth_labels()
        if truth is None:
            raise ConfigError("manifest lacks true identities; pass --truth")
    text = formats.dumps_json(evaluate(truth, assignment, args.normalization))
    if args.out:
        formats.atomic_write(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_run(args) -> int:
    doc = json.loads(Path(args.config).read_text("utf-8")) if args.config else {}
    overrides = {
        "dataset_path": args.dataset, "output_dir": args.out_dir, "linkage": args.linkage,
        "theta": args.theta, "constraint_mode": args.constraint_mode,
        "calibration_path": args.calibration, "pairs_path": args.pairs, "truth_path": args.truth,
        "baselines": tuple(args.baseline) if args.baseline else None,
        "baseline_theta": args.baseline_theta, "nmi_normalization": args.normalization,
        "parallelism": args.parallelism, "seed": args.seed,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    for flag in ("allow_untagged_calibration", "allow_same_dataset", "track", "dump_matrices"):
        if getattr(args, flag):
            doc[flag] = True
    if args.matcher is not None or "matcher" not in doc:
        args.matcher = args.matcher or "descriptor"
        doc["matcher"] = _matcher_config(args)
    if args.track:
        doc["tracking"] = _tracking_config(args)
    config = PipelineConfig.from_dict(doc)
    report = run_pipeline(config)
    sys.stdout.write(render_table(report.metrics_document()))
    return 0


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "metrics.json"
    metrics = json.loads(path.read_text("utf-8"))
    sys.stdout.write(render_table(metrics))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egofaces", description="Cluster face-sets into identities.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset manifest")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("simulate", help="generate a synthetic labelled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out")
    p.add_argument("--calibration-out", help="also write a disjoint calibration split")
    p.add_argument("--split", default=None)
    p.add_argument("--identities", type=int, default=20)
    p.add_argument("--sets-per-identity", type=int, default=5)
    p.add_argument("--examples-per-set", default="5,15", help="LO,HI")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--intra-sigma", type=float, default=1.0)
    p.add_argument("--inter-margin", type=float, default=3.0)
    p.add_argument("--cooccurrence-rate", type=float, default=0.0)
    p.add_argument("--confusable-pairs", type=int, default=0)
    p.add_argument("--confusable-distance", type=float, default=0.5)
    p.add_argument("--sigma-ratio", type=float, default=1.0)
    p.add_argument("--mode", choices=("descriptor", "patch"), default="descriptor")
    p.add_argument("--synth-patch-size", type=int, default=32)
    p.add_argument("--contiguous", action="store_true")
    p.add_argument("--with-detections", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("track", help="build face-sets from per-frame detections")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_tracking(p)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("dissim", help="write the face-set dissimilarity matrix")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--constraints-out")
    p.add_argument("--constraint-mode", choices=CONSTRAINT_MODES, default="off")
    _add_matcher(p)
    p.set_defaults(fn=cmd_dissim)

    p = sub.add_parser("calibrate", help="estimate the cut-off threshold on a training set")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pairs", help="TSV of set-id pairs to use")
    p.add_argument("--allow-untagged", action="store_true")
    _add_matcher(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("cluster", help="cluster face-sets at a fixed threshold")
    p.add_argument("manifest")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--matrix", help="precomputed matrix dump, rows in manifest order")
    p.add_argument("--linkage", choices=LINKAGES, default="average")
    p.add_argument("--constraint-mode", choices=CONSTRAINT_MODES, default="weight")
    _add_matcher(p)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("evaluate", help="score an assignment against ground truth")
    p.add_argument("assignment")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--truth", help="CSV of set_id,identity")
    src.add_argument("--manifest", help="take identities from a labelled manifest")
    p.add_argument("--normalization", choices=NMI_NORMALIZATIONS, default="arithmetic")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("--config", help="JSON config; flags override it")
    p.add_argument("--dataset")
    p.add_argument("--out-dir")
    p.add_argument("--theta", type=_theta, help="number or 'calibrate'")
    p.add_argument("--calibration")
    p.add_argument("--pairs")
    p.add_argument("--truth")
    p.add_argument("--linkage", choices=LINKAGES)
    p.add_argument("--constraint-mode", choices=CONSTRAINT_MODES)
    p.add_argument("--baseline", action="append", choices=BASELINES)
    p.add_argument("--baseline-theta", type=float)
    p.add_argument("--normalization", choices=NMI_NORMALIZATIONS)
    p.add_argument("--allow-untagged-calibration", action="store_true")
    p.add_argument("--allow-same-dataset", action="store_true")
    p.add_argument("--track", action="store_true")
    p.add_argument("--dump-matrices", action="store_true")
    p.add_argument("--seed", type=int)
    _add_matcher(p)
    _add_tracking(p)
    p.set_defaults(fn=cmd_run, matcher=None, parallelism=None)

    p = sub.add_parser("report", help="print the metrics table of a finished run")
    p.add_argument("path", help="output directory or metrics.json")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationFailed as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        print(f"error: {len(exc.violations)} validation violation(s)", file=sys.stderr)
        return 1
    except (EgoFacesError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
