"""Command-line entry points.

Subcommands: fit, eval, quality, synth-model, validate, serve. Exit codes:
0 ok, 1 usage error, 2 data error, 3 numerical failure. All outputs are
deterministic; reports carry no timestamps unless --stamp is given.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataio, metrics, morphable
from .errors import (HeadfitError, ParseError, SchemaMismatch,
                     ChecksumMismatch, SingularSystem, TooFewAnnotators,
                     MissingAttribute)
from .fitter import FitConfig, fit
from .metrics import BenchmarkSample, benchmark_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (ParseError, SchemaMismatch, ChecksumMismatch,
                TooFewAnnotators, MissingAttribute, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; our contract is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="headfit",
                     description="Head-model fitting and evaluation tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a pin file")
    p_fit.add_argument("--model", required=True)
    p_fit.add_argument("--pins", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--config", default=None)

    p_eval = sub.add_parser("eval", help="evaluate predictions against references")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--n", type=int, default=5)
    p_eval.add_argument("--subgroups", default="pose")
    p_eval.add_argument("--stamp", default=None)

    p_q = sub.add_parser("quality", help="annotator agreement score over a label dir")
    p_q.add_argument("--labels", required=True)
    p_q.add_argument("--bboxes", required=True)
    p_q.add_argument("--out", default=None)

    p_s = sub.add_parser("synth-model", help="generate a synthetic model container")
    p_s.add_argument("--seed", type=int, required=True)
    p_s.add_argument("--k", type=int, default=500)
    p_s.add_argument("--s", type=int, default=10)
    p_s.add_argument("--e", type=int, default=5)
    p_s.add_argument("--out", required=True)

    p_v = sub.add_parser("validate", help="validate an annotation file")
    p_v.add_argument("--annotation", required=True)
    p_v.add_argument("--model", default=None)

    p_srv = sub.add_parser("serve", help="run the annotation session service")
    p_srv.add_argument("--model", action="append", required=True,
                       help="model container path (repeatable)")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8321)
    return parser


def _cmd_fit(args) -> int:
    model = dataio.load_head_model(args.model)
    pin_file = dataio.load_pin_file(args.pins)
    config = FitConfig(image_diag=float(np.hypot(*pin_file.image_size)))
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        config = FitConfig(**{**raw, "image_diag": config.image_diag})
    result = fit(model, pin_file.pins, config=config)

    ann = annotation_from_fit(model, result, pin_file.image_size)
    dataio.save_annotation(args.out, ann)
    summary_path = Path(args.out).with_suffix(".fit.json")
    summary = {
        "rms_pin_error_px": result.rms_pin_error,
        "iterations": result.iterations,
        "converged": result.converged,
        "final_cost": result.final_cost,
        "per_pin_residuals_px": result.per_pin_residuals,
        "params": {
            "beta": result.params.shape.beta.tolist(),
            "psi": result.params.shape.psi.tolist(),
            "theta_jaw": np.asarray(result.params.shape.theta_jaw).tolist(),
            "rot6": np.asarray(result.params.pose.rot6).tolist(),
            "scale": result.params.pose.scale,
            "translation": np.asarray(result.params.pose.translation).tolist(),
        },
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"fit ok rms_px={result.rms_pin_error:.6g} iters={result.iterations} "
          f"converged={str(result.converged).lower()}")
    return EXIT_OK


def annotation_from_fit(model, result, image_size) -> dataio.Annotation:
    return dataio.annotation_from_params(model, result.params.shape,
                                         result.params.pose, image_size)


def _sample_from_annotations(stem, gt: dataio.Annotation, pred: dataio.Annotation):
    needed = ("head", "face", "keypoint7", "landmark68")
    for name in needed:
        if name not in gt.subsets:
            raise SchemaMismatch(f"{stem}: reference annotation lacks subset {name!r}")
    return BenchmarkSample(
        sample_id=stem,
        gt_vertices=gt.vertices,
        pred_vertices=pred.vertices,
        gt_matrices=gt.matrices,
        pred_matrices=pred.matrices,
        image_size=gt.image_size,
        bbox=gt.bbox,
        attributes=asdict(gt.attributes),
        subsets=gt.subsets,
    )


def _cmd_eval(args) -> int:
    gt_dir = Path(args.gt)
    pred_dir = Path(args.pred)
    gt_files = {p.stem: p for p in sorted(gt_dir.glob("*.json"))}
    pred_files = {p.stem: p for p in sorted(pred_dir.glob("*.json"))}
    missing_pred = sorted(set(gt_files) - set(pred_files))
    missing_gt = sorted(set(pred_files) - set(gt_files))
    if missing_pred or missing_gt:
        if missing_pred:
            print(f"eval error: no prediction for: {', '.join(missing_pred)}",
                  file=sys.stderr)
        if missing_gt:
            print(f"eval error: no reference for: {', '.join(missing_gt)}",
                  file=sys.stderr)
        return EXIT_DATA
    if not gt_files:
        print("eval error: no samples found", file=sys.stderr)
        return EXIT_DATA

    keys = tuple(k for k in args.subgroups.split(",") if k)
    for key in keys:
        if key not in metrics.SUBGROUP_KEYS:
            print(f"eval error: unknown subgroup key {key!r} "
                  f"(valid: {', '.join(metrics.SUBGROUP_KEYS)})", file=sys.stderr)
            return EXIT_USAGE

    samples = []
    failed = {}
    for stem in sorted(gt_files):
        gt = dataio.load_annotation(gt_files[stem])
        try:
            pred = dataio.load_annotation(pred_files[stem])
            samples.append(_sample_from_annotations(stem, gt, pred))
        except (ParseError, SchemaMismatch) as exc:
            failed[stem] = str(exc)
    report = benchmark_report(samples, subgroup_keys=keys, n=args.n)
    report = metrics.MetricReport(
        per_sample=report.per_sample, overall=report.overall,
        subgroups=report.subgroups, n_neighbors=report.n_neighbors,
        units=report.units, failed=failed)
    dataio.save_metric_report(args.out, report, stamp=args.stamp)
    print(f"eval ok samples={len(samples)} warnings={len(failed)} out={args.out}")
    return EXIT_OK


def _cmd_quality(args) -> int:
    labels_dir = Path(args.labels)
    by_image: dict = {}
    for path in sorted(labels_dir.glob("*.json")):
        image_id, labels = dataio.load_label_set(path)
        by_image.setdefault(image_id, []).append(labels)
    if not by_image:
        print("quality error: no label sets found", file=sys.stderr)
        return EXIT_DATA
    bboxes = dataio.load_bboxes(args.bboxes)
    image_ids = sorted(by_image)
    for image_id in image_ids:
        if image_id not in bboxes:
            raise SchemaMismatch(f"no bbox for image {image_id!r}")
    sets = [by_image[i] for i in image_ids]
    boxes = [bboxes[i] for i in image_ids]
    score = metrics.quality_score(sets, boxes)
    per_image = metrics.quality_scores(sets, boxes)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"schema_version": dataio.SCHEMA_VERSION,
                       "kind": "quality_report",
                       "quality_score": score,
                       "per_image": {i: float(v) for i, v in
                                     zip(image_ids, per_image)}},
                      fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(f"quality ok images={len(image_ids)} score={score:.6g}")
    return EXIT_OK


def _cmd_synth_model(args) -> int:
    model = morphable.synth_model(args.seed, k=args.k, s=args.s, e=args.e)
    dataio.save_head_model(args.out, model)
    print(f"synth-model ok k={args.k} s={args.s} e={args.e} out={args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    ann = dataio.load_annotation(args.annotation)
    model = dataio.load_head_model(args.model) if args.model else None
    violations = dataio.validate_annotation(ann, model)
    print(f"validate ok violations={len(violations)}")
    for v in violations:
        print(f"  {v['code']} {v['field']}: {v['message']}")
    return EXIT_OK if not violations else EXIT_DATA


def _cmd_serve(args) -> int:
    from .service import AnnotationService, run_server

    models = {}
    for path in args.model:
        models[Path(path).stem] = dataio.load_head_model(path)
    service = AnnotationService(models)
    print(f"serving on {args.host}:{args.port} models={','.join(sorted(models))}",
          flush=True)
    run_server(service, host=args.host, port=args.port)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "fit": _cmd_fit,
        "eval": _cmd_eval,
        "quality": _cmd_quality,
        "synth-model": _cmd_synth_model,
        "validate": _cmd_validate,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except _DATA_ERRORS as exc:
        print(f"{args.command} error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SingularSystem as exc:
        print(f"{args.command} numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HeadfitError as exc:
        print(f"{args.command} error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
