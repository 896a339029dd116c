"""Command-line surface.

Subcommands: extract, prep, rank, train, detect, classify, scenario,
evaluate, report. Exit codes: 0 success, 1 usage error, 2 data error,
3 model error. A flat config file (--config) supplies defaults; explicit
flags always win. FLOWCAM_OUT sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig, build_config, read_config_file
from .errors import DataError, FlowcamError, ModelError
from .persist import ALL_MODEL_KINDS
from .pipeline import (
    render_report_text,
    stage_classify,
    stage_detect,
    stage_evaluate,
    stage_extract,
    stage_prep,
    stage_rank,
    stage_scenario,
    stage_train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the CLI contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit_(EXIT_USAGE, f"{self.prog}: error: {message}")


class SystemExit_(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code


def _parse_label_map(raw: str | None) -> dict | None:
    if not raw:
        return None
    mapping = {}
    for pair in raw.split(","):
        key, sep, value = pair.partition("=")
        if not sep:
            raise SystemExit_(EXIT_USAGE, f"bad label-map entry {pair!r}, expected OLD=NEW")
        mapping[key.strip()] = value.strip()
    return mapping


def build_parser() -> _Parser:
    parser = _Parser(prog="flowcam",
                     description="Flow-based IoT camera identification and "
                                 "zero-day camera detection.")
    # --config/--out-dir are accepted both before and after the subcommand;
    # the subcommand copies use distinct dests because a subparser's defaults
    # overwrite values the main parser already placed in the namespace
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--out-dir", help="output directory (default $FLOWCAM_OUT or .)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)
    common.add_argument("--out-dir", dest="sub_out_dir", help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common],
                       help="meter pcap files into a flow-feature CSV")
    p.add_argument("pcaps", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--label")
    p.add_argument("--idle-timeout", type=float, dest="idle_timeout_s")
    p.add_argument("--activity-timeout", type=float, dest="activity_timeout_s")
    p.add_argument("--flow-cap", type=float, dest="flow_cap_s")

    p = sub.add_parser("prep", parents=[common], help="prune, scale, and select features")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prune", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--scale", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--select-top", type=int, dest="top_k")
    p.add_argument("--ranking")
    p.add_argument("--label-map")

    p = sub.add_parser("rank", parents=[common], help="Extra-Trees feature importance ranking")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, dest="rank_trees")
    p.add_argument("--seed", type=int)
    p.add_argument("--label-map")

    p = sub.add_parser("train", parents=[common], help="train and persist a model")
    p.add_argument("--model", required=True, choices=ALL_MODEL_KINDS)
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ranking")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--features", help="comma-separated explicit feature list")
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--prune", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--label-map")

    p = sub.add_parser("detect", parents=[common], help="inlier/outlier decisions from a one-class model")
    p.add_argument("--model", required=True, help="model artifact path")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("classify", parents=[common], help="label predictions from a supervised model")
    p.add_argument("--model", required=True, help="model artifact path")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("scenario", parents=[common], help="run a zero-day detection protocol")
    p.add_argument("--kind", choices=["all-zero-day", "all-but-one", "only-one"],
                   dest="scenario_kind")
    p.add_argument("--others", nargs="*", default=[])
    p.add_argument("--camera", action="append", default=[],
                   metavar="NAME=CSV", help="repeatable camera dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seeds")
    p.add_argument("--detectors")
    p.add_argument("--ranking")
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--prune", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("evaluate", parents=[common], help="metrics from a predictions CSV")
    p.add_argument("--in", dest="predictions", required=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--positive", help="positive label for TPR/FPR and curves")

    p = sub.add_parser("report", parents=[common], help="render a stored report JSON as text")
    p.add_argument("--in", dest="report_json", required=True)
    p.add_argument("--out", help="write the text here instead of stdout")
    return parser


_CONFIG_FLAGS = ("label", "idle_timeout_s", "activity_timeout_s", "flow_cap_s",
                 "prune", "scale", "top_k", "seed", "seeds", "scenario_kind",
                 "detectors", "rank_trees")


def _config_from_args(args) -> PipelineConfig:
    config_path = getattr(args, "sub_config", None) or args.config
    file_values = read_config_file(config_path) if config_path else {}
    overrides = {}
    for key in _CONFIG_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "command", None) == "train" and getattr(args, "model", None):
        overrides["model"] = args.model
    out_dir = getattr(args, "sub_out_dir", None) or args.out_dir
    if out_dir is not None:
        overrides["out_dir"] = out_dir
    return build_config(file_values, overrides)


def _out_dir(args, config: PipelineConfig) -> Path:
    explicit = getattr(args, "out", None)
    return Path(explicit) if explicit else config.resolve_out_dir()


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _config_from_args(args)
        if args.command == "extract":
            info = stage_extract(args.pcaps, args.out, config)
            print(f"wrote {info['flows']} flows from {info['packets_read']} packets "
                  f"({info['packets_skipped']} skipped, {info['packets_malformed']} malformed)")
        elif args.command == "prep":
            info = stage_prep(args.inputs, args.out, config, ranking_path=args.ranking,
                              label_map=_parse_label_map(args.label_map))
            print(f"wrote {info['rows']} rows x {len(info['columns'])} features "
                  f"(pruned {len(info['pruned'])}, dropped {info['dropped_rows']} rows)")
        elif args.command == "rank":
            info = stage_rank(args.inputs, args.out, config,
                              label_map=_parse_label_map(args.label_map))
            print(f"ranked {info['features_ranked']} features; top: {', '.join(info['top'])}")
        elif args.command == "train":
            features = args.features.split(",") if args.features else None
            info = stage_train(args.inputs, args.out, config, ranking_path=args.ranking,
                               features=features,
                               label_map=_parse_label_map(args.label_map))
            print(f"trained {info['model']} on {info['rows']} rows "
                  f"in {info['timings']['train_seconds']:.2f}s -> {args.out}")
        elif args.command == "detect":
            info = stage_detect(args.model, args.inputs, _out_dir(args, config), config)
            print(f"{info['rows']} rows: {info['inliers']} inliers, "
                  f"{info['outliers']} outliers")
        elif args.command == "classify":
            info = stage_classify(args.model, args.inputs, _out_dir(args, config), config)
            line = f"{info['rows']} rows classified"
            if "accuracy" in info:
                line += f", accuracy {info['accuracy']:.4f}"
            print(line)
        elif args.command == "scenario":
            cameras = {}
            for entry in args.camera:
                name, sep, path = entry.partition("=")
                if not sep:
                    raise SystemExit_(EXIT_USAGE, f"bad --camera {entry!r}, expected NAME=CSV")
                cameras[name] = path
            reports = stage_scenario(args.others, cameras, _out_dir(args, config),
                                     config, ranking_path=args.ranking)
            print(f"wrote {len(reports)} scenario report(s) to {_out_dir(args, config)}")
        elif args.command == "evaluate":
            info = stage_evaluate(args.predictions, _out_dir(args, config), config,
                                  positive_label=args.positive)
            print(f"accuracy {info['accuracy']:.4f} macro-f1 {info['macro_f1']:.4f}")
        elif args.command == "report":
            payload = json.loads(Path(args.report_json).read_text())
            text = render_report_text(payload)
            if args.out:
                Path(args.out).write_text(text)
            else:
                print(text, end="")
        return EXIT_OK
    except SystemExit_ as exc:
        if str(exc):
            print(str(exc), file=sys.stderr)
        return exc.code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except FlowcamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
