"""Command-line entry point: ``thermoguard run | eval | decode | split``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import OrderedDict
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import parse_config
from .errors import ConfigError, ThermoguardError
from .evaluation import SplitSpec, evaluate, split_dataset
from .jsonio import detections_record, dumps, read_detections, read_labels
from .netfile import load_model
from .pipeline import EXIT_CONFIG, list_frames, run_pipeline, scale_detections
from .thermal import frame_to_tensor, read_frame
from .yolo import DecodeConfig

log = logging.getLogger("thermoguard")


def _setup_logging():
    level = os.environ.get("THERMOGUARD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.out:
        cfg = replace(cfg, output_dir=Path(args.out).resolve())
    report = run_pipeline(cfg, list_frames(args.frames), jobs=args.jobs)
    t = report.totals
    print(f"{t['frames']} frames, {t['persons']} persons, {t['violations']} violations, "
          f"{t['fever_flags']} fever flags, {t['failed_frames']} failed -> {cfg.output_dir}")
    return report.exit_code


def _summary_dict(summary):
    return OrderedDict(average_precision=summary.average_precision,
                      miss_rate=summary.miss_rate,
                      true_positives=summary.true_positives,
                      false_positives=summary.false_positives,
                      false_negatives=summary.false_negatives,
                      pr_curve=[[r, p] for r, p in summary.pr_curve])


def cmd_eval(args) -> int:
    labels = read_labels(args.labels)
    if not labels:
        raise ConfigError(f"no labels in {args.labels}")
    dets = read_detections(args.detections)
    unknown = sorted(set(dets) - {l.frame_id for l in labels})
    if unknown:
        log.warning("%d detection frames have no labels and are ignored", len(unknown))
    pairs = [(dets.get(l.frame_id, []), l.boxes) for l in labels]
    summary, per_frame = evaluate(pairs, args.iou, args.score_threshold)
    report = OrderedDict(iou=args.iou, score_threshold=args.score_threshold,
                         pooled=_summary_dict(summary))
    groups = OrderedDict()
    for label, pair in zip(labels, pairs):
        if label.dataset is not None:
            groups.setdefault(label.dataset, []).append(pair)
    if groups:
        report["datasets"] = OrderedDict(
            (name, _summary_dict(evaluate(g, args.iou, args.score_threshold)[0]))
            for name, g in sorted(groups.items()))
    report["frames"] = [OrderedDict(frame=l.frame_id, tp=r.true_positives,
                                    fp=r.false_positives, fn=r.false_negatives)
                        for l, r in zip(labels, per_frame)]
    text = dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_decode(args) -> int:
    model = load_model(args.weights, args.netspec)
    frame = read_frame(args.frame)
    size = model.input_size
    cfg = DecodeConfig(args.conf, args.nms_iou, size)
    dets = model.detect(frame_to_tensor(frame, size), cfg)
    dets = scale_detections(dets, size, frame.width, frame.height)
    sys.stdout.write(dumps(detections_record(frame.id, dets)) + "\n")
    return 0


def cmd_split(args) -> int:
    ids = [line.strip() for line in Path(args.ids).read_text().splitlines() if line.strip()]
    train, val, test = split_dataset(ids, SplitSpec(seed=args.seed))
    sys.stdout.write(dumps(OrderedDict(seed=args.seed, train=train, val=val, test=test),
                           indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermoguard",
        description="People detection, social-distancing and fever screening on thermal frames.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a directory of frames")
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--frames", required=True, help="directory of .pgm/.ppm/.raw16 frames")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--detections", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="run the detector on one frame")
    p.add_argument("--weights", required=True)
    p.add_argument("--netspec", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--conf", type=float, default=0.5)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("split", help="deterministic 70/20/10 split of frame ids")
    p.add_argument("--ids", required=True, help="text file, one id per line")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ThermoguardError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
