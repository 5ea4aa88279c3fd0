"""Command-line entry point: ``speed preprocess | summarize | synth``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NO_OUTPUT = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="speed", description="Scalable EEG preprocessing.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pre = sub.add_parser("preprocess", help="process a directory of EDF recordings")
    pre.add_argument("--input", required=True, type=Path)
    pre.add_argument("--output", required=True, type=Path)
    pre.add_argument("--mode", choices=("pretrain", "downstream"), default=None)
    pre.add_argument("--line-freq", type=float, choices=(50.0, 60.0), default=None)
    pre.add_argument("--montage", default=None)
    pre.add_argument("--window-secs", type=float, default=None)
    pre.add_argument("--with-ica", action="store_true", default=None)
    pre.add_argument("--with-ransac", action="store_true", default=None)
    pre.add_argument("--ic-labels", type=Path, default=None)
    pre.add_argument("--jobs", type=int, default=None)
    pre.add_argument("--seed", type=int, default=None)
    pre.add_argument("--config", type=Path, default=None, help="JSON config; flags override it")

    summ = sub.add_parser("summarize", help="aggregate a run log")
    summ.add_argument("--log", required=True, type=Path)
    summ.add_argument("--plots", type=Path, default=None)

    syn = sub.add_parser("synth", help="write a synthetic EDF recording")
    syn.add_argument("--scenario", required=True)
    syn.add_argument("--out", required=True, type=Path)
    syn.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args):
    from .pipeline import PipelineConfig

    data = json.loads(args.config.read_text()) if args.config else {}
    flags = {
        "mode": args.mode,
        "line_freq": args.line_freq,
        "montage": args.montage,
        "window_secs": args.window_secs,
        "with_ica": args.with_ica,
        "with_ransac": args.with_ransac,
        "ic_labels": str(args.ic_labels) if args.ic_labels else None,
        "jobs": args.jobs,
        "seed": args.seed,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    data["input"] = str(args.input)
    data["output"] = str(args.output)
    return PipelineConfig.from_dict(data)


def _preprocess(args) -> int:
    from .pipeline import run_pipeline

    try:
        cfg = _config_from_args(args)
    except (ValueError, TypeError) as exc:
        print(f"speed: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not args.input.is_dir():
        print(f"speed: input directory not found: {args.input}", file=sys.stderr)
        return EXIT_IO
    try:
        result = run_pipeline(cfg)
    except OSError as exc:
        print(f"speed: {exc}", file=sys.stderr)
        return EXIT_IO
    print(
        f"{result.n_recordings} recordings, {result.kept} kept, {result.dropped} dropped "
        f"-> {result.output}"
    )
    return EXIT_OK if result.kept else EXIT_NO_OUTPUT


def _summarize(args) -> int:
    from .errors import MalformedLog
    from .logs import summarize_log

    try:
        report = summarize_log(args.log, args.plots)
    except OSError as exc:
        print(f"speed: {exc}", file=sys.stderr)
        return EXIT_IO
    except MalformedLog as exc:
        print(f"speed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(report, indent=1, sort_keys=True))
    return EXIT_OK


def _synth(args) -> int:
    from .synth import SCENARIOS, gen_scenario, get_scenario, write_edf

    if args.scenario not in SCENARIOS:
        print(f"speed: unknown scenario {args.scenario!r}; choose from {sorted(SCENARIOS)}",
              file=sys.stderr)
        return EXIT_USAGE
    rec, _ = gen_scenario(get_scenario(args.scenario, seed=args.seed))
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_edf(rec, args.out)
    except OSError as exc:
        print(f"speed: {exc}", file=sys.stderr)
        return EXIT_IO
    print(args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"preprocess": _preprocess, "summarize": _summarize, "synth": _synth}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
