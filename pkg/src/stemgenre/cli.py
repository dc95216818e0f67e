"""Command-line front end for the file-based pipeline.

Each subcommand runs one stage against a work directory::

    stemgenre prepare --config run.json --workdir work/
    stemgenre featurize --workdir work/
    stemgenre train-base --which both
    stemgenre train-meta --ensemble stack_logreg
    stemgenre evaluate --ensemble stack_logreg
    stemgenre report

Errors print one line ``error code=<CODE> message=<text>`` on stderr and
exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .errors import ConfigError, StemGenreError
from .synth import write_mini_corpus


def _base_parser():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--workdir", help=f"work directory (default: ${pipeline.WORKDIR_ENV})")
    p.add_argument("--corpus", help="corpus root laid out as <root>/<genre>/<name>.wav")
    p.add_argument("--seed", type=int)
    p.add_argument("--stems-dir", help="directory of <segment_id>.accompaniment.wav / .vocals.wav")
    p.add_argument("--separator", choices=("median", "external"))
    p.add_argument("--ensemble", choices=pipeline.MODEL_SELECTIONS)
    p.add_argument("--paper-style-split", "--paper-style", dest="paper_style_split", action="store_true",
                   default=None, help="split segments independently instead of by parent clip")
    p.add_argument("--out", help="output directory for reports")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _base_parser()
    parser = argparse.ArgumentParser(prog="stemgenre", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="scan, split and separate the corpus")
    sub.add_parser("featurize", parents=[common], help="MFCC features for both stems")
    tb = sub.add_parser("train-base", parents=[common], help="train the base networks")
    tb.add_argument("--which", choices=("vocal", "accomp", "both"), default="both")
    sub.add_parser("train-meta", parents=[common], help="stacking meta-model (--ensemble stack_*)")
    sub.add_parser("evaluate", parents=[common], help="test-set metrics for one model selection")
    sub.add_parser("report", parents=[common], help="comparison table across evaluated models")
    sub.add_parser("run", parents=[common], help="all stages in order")
    mc = sub.add_parser("mini-corpus", help="write the synthetic three-genre corpus")
    mc.add_argument("root")
    mc.add_argument("--clips", type=int, default=20)
    mc.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args) -> pipeline.RunConfig:
    d = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file {args.config} does not exist")
        with open(args.config) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{args.config} must hold a JSON object")
    overrides = {"workdir": args.workdir, "corpus": args.corpus, "seed": args.seed,
                 "stems_dir": args.stems_dir, "separator": args.separator,
                 "paper_style_split": args.paper_style_split}
    if args.stems_dir and not args.separator:
        overrides["separator"] = "external"
    if args.ensemble and args.command == "train-meta":
        overrides["ensemble"] = args.ensemble
    d.update({k: v for k, v in overrides.items() if v is not None})
    d.setdefault("workdir", os.environ.get(pipeline.WORKDIR_ENV, ""))
    cfg = pipeline.RunConfig.from_dict(d)
    if not cfg.workdir:
        raise ConfigError(f"no work directory: pass --workdir, set it in the config, or set {pipeline.WORKDIR_ENV}")
    if cfg.stems_dir and cfg.separator == "external" and not os.path.isdir(cfg.stems_dir):
        raise ConfigError(f"stems directory {cfg.stems_dir} does not exist")
    return cfg


def dispatch(args):
    if args.command == "mini-corpus":
        write_mini_corpus(args.root, args.clips, seed=args.seed)
        return
    cfg = resolve_config(args)
    wd = pipeline.WorkDir(cfg.workdir)
    with wd.lock():
        if args.command == "prepare":
            pipeline.cmd_prepare(cfg)
        elif args.command == "featurize":
            pipeline.cmd_featurize(cfg)
        elif args.command == "train-base":
            pipeline.cmd_train_base(cfg, args.which)
        elif args.command == "train-meta":
            kind = args.ensemble or cfg.ensemble
            if kind not in pipeline.STACKING:
                raise ConfigError(f"train-meta needs a stacking ensemble, got {kind!r}")
            pipeline.cmd_train_meta(cfg, pipeline.STACKING[kind])
        elif args.command == "evaluate":
            pipeline.cmd_evaluate(cfg, args.ensemble or cfg.ensemble, args.out)
        elif args.command == "report":
            rows = pipeline.cmd_report(cfg, args.out)
            for r in rows:
                print(f"{r['section']:<20} {r['model']:<28} acc={r['accuracy']:.4f} f1={r['f1']:.4f}")
        elif args.command == "run":
            ensembles = (args.ensemble,) if args.ensemble else pipeline.ENSEMBLES
            pipeline.run_all(cfg, [e for e in ensembles if e not in pipeline.BASE_MODELS])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except StemGenreError as exc:
        msg = " ".join(str(exc).split())
        print(f"error code={exc.code} message={msg}", file=sys.stderr)
        return 1
    except OSError as exc:
        msg = " ".join(str(exc).split())
        print(f"error code=IO_ERROR message={msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
