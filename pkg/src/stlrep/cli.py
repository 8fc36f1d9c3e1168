"""Command line entry point.

    stlrep synth --out DIR [--subjects 5 --classes 3 --samples 4 --size 32 --seed 7]
    stlrep gen-reps --config run.toml [--out DIR] [--seed N] [--jobs N]
    stlrep extract  --config run.toml
    stlrep evaluate --config run.toml [--jobs N]
    stlrep run      --config run.toml [--jobs N]
    stlrep report   (--config run.toml | REPORT_JSON)

Exit codes: 0 success, 1 invalid configuration or input data, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, parse_config
from .container import FormatError
from .data import DatasetError, synth_generate
from .evaluation import ExperimentReport

log = logging.getLogger("stlrep")


def _parser():
    p = argparse.ArgumentParser(prog="stlrep", description="Self-taught learning with diverse autoencoder "
                                "representations, evaluated leave-one-subject-out.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic labeled set plus unlabeled auxiliary images")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--subjects", type=int, default=5)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--samples", type=int, default=4, help="samples per (subject, class)")
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--unlabeled", type=int, default=200)
    s.add_argument("--unlabeled-ids", default="kyoto", help="comma-separated auxiliary dataset ids")

    for name, text in (("gen-reps", "train and save the representation pool"),
                       ("extract", "encode the target set with every saved representation"),
                       ("evaluate", "run leave-one-subject-out evaluation on saved features"),
                       ("run", "all stages in one process"),
                       ("report", "render a saved report")):
        c = sub.add_parser(name, help=text)
        c.add_argument("--config", type=Path, required=name != "report")
        c.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        c.add_argument("--seed", type=int, help="master seed (overrides master_seed)")
        c.add_argument("--jobs", type=int, default=1)
        if name == "report":
            c.add_argument("report", nargs="?", type=Path, help="report.json (default: from --config)")
    return p


def _config(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg.values["master_seed"] = args.seed
    if args.out is not None:
        cfg.values["output_dir"] = str(args.out.resolve())
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    cfg.jobs = args.jobs
    return cfg


def _dispatch(args):
    if args.command == "synth":
        ids = tuple(i.strip() for i in args.unlabeled_ids.split(",") if i.strip())
        manifest, aux = synth_generate(args.out, args.subjects, args.classes, args.samples, (args.size, args.size),
                                       args.seed, args.unlabeled, ids)
        print(f"labeled manifest: {manifest}")
        for d, path in aux.items():
            print(f"unlabeled {d}: {path}")
        return
    if args.command == "report":
        if args.report is not None:
            print(ExperimentReport.load(args.report).render_text(), end="")
        elif args.config is not None:
            print(pipeline.report_text(_config(args)), end="")
        else:
            raise ConfigError("report needs --config or a report.json path")
        return
    cfg = _config(args)
    if args.command == "gen-reps":
        pool = pipeline.gen_reps(cfg)
        print(f"trained {len(pool)} representations into {cfg.output_dir / 'reps'}")
    elif args.command == "extract":
        feats = pipeline.extract(cfg)
        print(f"wrote {len(feats)} feature matrices into {cfg.output_dir / 'features'}")
    else:
        fn = pipeline.evaluate if args.command == "evaluate" else pipeline.run_experiment
        report = fn(cfg)
        print(report.render_text(), end="")
        print(f"\nreport written to {cfg.output_dir / 'reports'}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (pipeline.ArtifactError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
