"""Command-line interface.

Exit codes: 0 success, 1 unexpected error, 2 usage error, 3 config error,
4 data error, 5 numerical divergence, 6 missing upstream artifact.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__, pipeline
from .checkpoint import CheckpointError
from .config import OUT_DIR_ENV, load_config
from .metrics import MetricError
from .signals import AllocationError, DegenerateRangeError, IngestionError
from .wdcgan import ConfigError, DivergenceError

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2
EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_DEPENDENCY = 3, 4, 5, 6

log = logging.getLogger("shmgan")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML pipeline config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="global seed; per-stage seeds derive from it")
    p.add_argument("--out", type=Path, help=f"run directory (else ${OUT_DIR_ENV}, else config output_dir)")
    p.add_argument("--seg-len", type=int, help="segment length, must be a multiple of 16")
    p.add_argument("--strict-determinism", action="store_true",
                   help="pin BLAS/OpenMP pools to one thread so reductions run in a fixed order")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shmgan", description="1-D WDCGAN-GP data generation and DCNN damage detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="segment raw signals (or synthesize surrogates) into pools")
    _common(p)
    p.add_argument("--undamaged", type=Path, help="raw undamaged signal (.csv or .f64)")
    p.add_argument("--damaged", type=Path, help="raw damaged signal (.csv or .f64)")

    for name, helptext in (("train-gan", "train the WDCGAN-GP on the damaged pool"),
                           ("generate", "draw fake damaged segments from the trained generator"),
                           ("eval", "FID, creativity and diversity reports")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--case", help="case name from the config (default: first case)")
        if name == "generate":
            p.add_argument("--n", type=int, help="number of segments (default eval.n_generate)")

    for name, helptext in (("train-dcnn", "train the damage classifier for one scenario"),
                           ("test-dcnn", "score the scenario test set")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--case")
        p.add_argument("--scenario", type=int, choices=(1, 2), default=1)

    p = sub.add_parser("pipeline", help="run every stage for every case and scenario")
    _common(p)
    p.add_argument("--no-resume", action="store_true", help="rerun stages even if the manifest says they are done")

    p = sub.add_parser("plots", help="export CSV + SVG figure analogues from a finished run")
    _common(p)
    return parser


def _config(args):
    overrides = {"seed": args.seed, "seg_len": args.seg_len}
    if getattr(args, "undamaged", None) or getattr(args, "damaged", None):
        if not (args.undamaged and args.damaged):
            raise ConfigError("--undamaged and --damaged must be given together")
        overrides["data"] = {"source": "files", "undamaged": str(args.undamaged.resolve()),
                             "damaged": str(args.damaged.resolve())}
        if args.config is not None:
            raw = yaml.safe_load(args.config.read_text()) or {}
            data = dict(raw.get("data") or {})
            data.update(overrides["data"])
            overrides["data"] = data
    return load_config(args.config, overrides)


def output_dir(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(cfg.output_dir)


@contextlib.contextmanager
def _determinism(strict: bool):
    if not strict:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def dispatch(args) -> None:
    cfg = _config(args)
    run = pipeline.Run.open(cfg, output_dir(args, cfg))
    cmd = args.command
    if cmd == "pipeline":
        pipeline.run_pipeline(cfg, run.root, resume=not args.no_resume)
        for row in pipeline.read_summary(run.root):
            print(f"{row['case']}\tscenario {row['scenario']}\tCA {float(row['classification_accuracy']):.4f}"
                  f"\tMAE {float(row['mean_absolute_error']):.4f}")
        return
    case = cfg.case(getattr(args, "case", None)).name
    stages = {
        "ingest": ("ingest", pipeline.ingest),
        "train-gan": (f"{case}/train-gan", lambda r, s: pipeline.train_gan_stage(r, s, case)),
        "generate": (f"{case}/generate", lambda r, s: pipeline.generate_stage(r, s, case, getattr(args, "n", None))),
        "eval": (f"{case}/eval", lambda r, s: pipeline.eval_stage(r, s, case)),
        "plots": ("plots", pipeline.plots_stage),
    }
    if cmd in ("train-dcnn", "test-dcnn"):
        k = args.scenario
        stage_fn = pipeline.train_dcnn_stage if cmd == "train-dcnn" else pipeline.test_dcnn_stage
        stages[cmd] = (f"{case}/scenario{k}/{cmd}", lambda r, s: stage_fn(r, s, case, k))
    if cmd == "plots" and not (run.root / "summary.csv").exists():
        pipeline.run_stage(run, "summary", pipeline.summary_stage)
    name, fn = stages[cmd]
    pipeline.run_stage(run, name, fn)
    if cmd == "test-dcnn":
        m = json.loads((run.scenario_dir(case, args.scenario) / "test_metrics.json").read_text())
        print(f"CA {m['classification_accuracy']:.4f}\tMAE {m['mean_absolute_error']:.4f}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        with _determinism(args.strict_determinism):
            dispatch(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        where = f" (state dumped to {e.checkpoint_path})" if e.checkpoint_path else ""
        print(f"divergence: {e}{where}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except pipeline.DependencyError as e:
        print(f"dependency error: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (IngestionError, AllocationError, DegenerateRangeError, CheckpointError, MetricError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return 130
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
