"""Command-line entry point: subcommands over a single JSON config file.

Exit codes: 0 success, 1 failure (with a machine-readable JSON error record
on stderr), 2 drift alert. The pseudonymization secret is read from the
LOANSCREEN_SECRET environment variable or a key file named in the config --
there is deliberately no command-line flag for it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, pipeline

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_DRIFT_ALERT = 2

_STAGES = ("simulate", "anonymize", "select", "train", "evaluate", "drift", "pipeline")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loanscreen",
        description="Config-driven loan-screening pipeline: simulate, anonymize, "
        "select features, train, evaluate, and monitor drift.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init-config", help="write a default config file (or print it with no --config)")
    init.add_argument("--config", help="where to write the default config JSON")
    init.add_argument("--seed", type=int, default=42, help="seed recorded in the generated config")
    init.add_argument("--out", default=".", help="output directory recorded in the generated config")

    for name in _STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="path to the pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the config output directory")
    return parser


def _error_record(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)

    try:
        if args.command == "init-config":
            cfg = pipeline.default_config(seed=args.seed, out_dir=args.out)
            doc = pipeline.config_to_dict(cfg)
            text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
            if args.config:
                Path(args.config).parent.mkdir(parents=True, exist_ok=True)
                Path(args.config).write_text(text, encoding="utf-8")
                print(f"wrote default config to {args.config}")
            else:
                print(text, end="")
            return EXIT_OK

        cfg = pipeline.load_config(args.config, seed_override=args.seed, out_override=args.out)
        if args.command == "simulate":
            out = pipeline.cmd_simulate(cfg)
            print(json.dumps(out, sort_keys=True))
        elif args.command == "anonymize":
            out = pipeline.cmd_anonymize(cfg)
            print(json.dumps(out, sort_keys=True))
        elif args.command == "select":
            selection = pipeline.cmd_select(cfg)
            print(json.dumps({"selected": list(selection.selected)}, sort_keys=True))
        elif args.command == "train":
            artifacts = pipeline.cmd_train(cfg)
            print(json.dumps({"model": str(cfg.resolve("model")), "threshold": artifacts.threshold}, sort_keys=True))
        elif args.command == "evaluate":
            report = pipeline.cmd_evaluate(cfg)
            print(json.dumps({"evaluation": str(cfg.resolve("evaluation_validation")), "bss": report.skill.bss}))
        elif args.command == "drift":
            report = pipeline.cmd_drift(cfg)
            print(json.dumps({"drift_report": str(cfg.resolve("drift_report")), "alert": report.has_alert}))
            if report.has_alert:
                return EXIT_DRIFT_ALERT
        elif args.command == "pipeline":
            report = pipeline.cmd_pipeline(cfg)
            print(json.dumps({"out_dir": cfg.out_dir, "drift_alert": report.has_alert}, sort_keys=True))
            if report.has_alert:
                return EXIT_DRIFT_ALERT
        return EXIT_OK
    except Exception as exc:  # contract: nonzero exit with a machine-readable record
        print(_error_record(exc), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
