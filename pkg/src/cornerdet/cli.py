"""Command-line front-end: detect / synth / eval.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from cornerdet.evaluation import (
    build_report,
    load_ground_truth,
    records_to_dets,
    render_tables,
    report_to_dict,
)
from cornerdet.geometry import InvariantError
from cornerdet.pipeline import PipelineConfig, run_corpus
from cornerdet.postprocess import read_detections, write_detections
from cornerdet.synth import RenderBudgetError, SynthConfig, write_corpus
from cornerdet.tensorio import TensorFormatError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4


def proposals_sibling(out_path) -> Path:
    """Path of the proposal dump written alongside a detection dump."""
    out_path = Path(out_path)
    return out_path.with_name(out_path.stem + ".proposals" + (out_path.suffix or ".json"))


def _synth_config_from_json(path) -> SynthConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(SynthConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")
    for key in ("image_size", "num_boxes", "aspect_range", "area_range"):
        if key in doc:
            doc[key] = tuple(doc[key])
    return SynthConfig(**doc)


def cmd_detect(args) -> int:
    config = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    run = run_corpus(args.corpus, config, workers=args.workers)
    write_detections(args.out, run.detection_records)
    write_detections(proposals_sibling(args.out), run.proposal_records)
    total = 0.0
    for image_id, elapsed in run.timings:
        print(f"image {image_id}: {elapsed * 1000.0:.1f} ms")
        total += elapsed
    n = max(1, len(run.timings))
    print(
        f"detected {len(run.detection_records)} boxes over {len(run.timings)} images "
        f"in {total:.2f} s ({total / n * 1000.0:.1f} ms/image)"
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _synth_config_from_json(args.config) if args.config else SynthConfig()
    manifest = write_corpus(args.out, config, args.count, args.seed)
    print(
        f"wrote {manifest['count']} scenes ({config.arrangement} arrangement, "
        f"{config.num_classes} classes) to {args.out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    dets = records_to_dets(read_detections(args.dets))
    gts = load_ground_truth(args.gt)
    if args.proposals:
        proposals = records_to_dets(read_detections(args.proposals))
    else:
        sibling = proposals_sibling(args.dets)
        if sibling.exists():
            proposals = records_to_dets(read_detections(sibling))
        else:
            print("no proposal dump found; recall metrics use the detections")
            proposals = dets

    report = build_report(dets, proposals, gts)
    doc = report_to_dict(report)
    report_path = Path(args.report)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    table = render_tables(report)
    table_path = report_path.with_suffix(report_path.suffix + ".txt")
    table_path.write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cornerdet",
        description="corner-pair detection pipeline, synthetic corpora, and metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_detect = sub.add_parser("detect", help="run detection over a tensor corpus")
    p_detect.add_argument("--corpus", required=True, help="corpus directory")
    p_detect.add_argument("--config", default=None, help="pipeline config JSON")
    p_detect.add_argument("--out", required=True, help="detection dump path")
    p_detect.add_argument("--workers", type=int, default=1, help="worker pool size")
    p_detect.set_defaults(func=cmd_detect)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--config", default=None, help="scene config JSON")
    p_synth.add_argument("--out", required=True, help="output corpus directory")
    p_synth.add_argument("--count", type=int, required=True, help="number of scenes")
    p_synth.add_argument("--seed", type=int, required=True, help="corpus seed")
    p_synth.set_defaults(func=cmd_synth)

    p_eval = sub.add_parser("eval", help="score a detection dump against ground truth")
    p_eval.add_argument("--dets", required=True, help="detection dump JSON")
    p_eval.add_argument("--gt", required=True, help="ground-truth JSON")
    p_eval.add_argument("--report", required=True, help="report JSON output path")
    p_eval.add_argument("--proposals", default=None, help="proposal dump JSON (optional)")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"error: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (
        TensorFormatError,
        RenderBudgetError,
        ValueError,
        KeyError,
        OSError,
        json.JSONDecodeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
