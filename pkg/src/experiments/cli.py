"""
Command-line driver.

    fsum-protocols sample --n 1000 --servers 8 --eps 0.2 --dist random
    fsum-protocols fk --n 1000 --servers 8 --k 3 --eps 0.1 --trials 50 --csv fk.csv
    fsum-protocols congest --graph grid --graph-size 5 --rounds 3 --d 8 --eps 0.3
    fsum-protocols sweep --protocol fk --field s --values 4,8,16 --k 3

Flags override values from --config; --set KEY=VALUE reaches any config key.
The exit code is 1 if validation failed or any trial recorded an error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from config.settings import ExperimentConfig, Protocol, validate_config
from congest.propagation import write_comm_report, write_embeddings
from experiments.runner import ExperimentRunner, run_experiment, run_sweep
from utils.errors import ConfigValidationError
from utils.seeds import derive_seed

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(relativeCreated)d - %(levelname)s - %(message)s'

# flag -> (config key, help)
FLAGS: Dict[str, tuple] = {
    "--n": ("n", "vector length (row dimension for hoc)"),
    "--servers": ("s", "number of servers"),
    "--d": ("d", "dataset columns"),
    "--k": ("k", "moment order, tuple order or rank"),
    "--fn": ("fn", "function descriptor, pow:K or huber:TAU"),
    "--g": ("g", "tuple function: product, sum, min or max"),
    "--p": ("p", "sketch norm order"),
    "--eps": ("eps", "accuracy"),
    "--delta": ("delta", "failure probability"),
    "--rows": ("rows", "rows per dataset or node"),
    "--overlap": ("overlap", "share of rows duplicated between neighbors"),
    "--noise": ("noise", "noise level of regression / LRA instances"),
    "--scale": ("scale", "largest entry of uniform vectors"),
    "--generator": ("generator", "random-uniform, random-gaussian or file"),
    "--input": ("input", "input file"),
    "--manifest": ("manifest", "node dataset manifest"),
    "--graph": ("graph", "path, grid, star, diamond or file"),
    "--graph-size": ("graph_size", "nodes of path/star, side of grid"),
    "--rounds": ("rounds", "propagation rounds"),
    "--t": ("t", "sketch merge budget"),
    "--delta-budget": ("delta_budget", "per-merge delta, or auto for 1/(10s) (2s)^-rounds over s nodes"),
    "--sample-const": ("sample_const", "hidden constant of the per-server sample count N"),
    "--sketch-const": ("sketch_const", "sampling constant C"),
    "--sign-const": ("sign_const", "sign-matrix width constant"),
    "--backend": ("backend", "full-random or nisan-prg"),
}

# --dist value -> generator
DISTRIBUTIONS: Dict[str, str] = {"random": "random-uniform", "file": "file"}

SUBCOMMAND_FLAGS: Dict[str, List[str]] = {
    "sample": ["--n", "--servers", "--eps", "--generator", "--input", "--scale"],
    "fsum": ["--n", "--servers", "--eps", "--fn", "--generator", "--input", "--scale", "--backend",
             "--sample-const"],
    "fk": ["--n", "--servers", "--eps", "--k", "--generator", "--input", "--scale", "--backend",
           "--sample-const"],
    "hoc": ["--n", "--servers", "--rows", "--eps", "--k", "--fn", "--g", "--generator", "--scale",
            "--sample-const"],
    "embed": ["--rows", "--d", "--p", "--eps", "--delta", "--servers", "--overlap", "--generator",
              "--input", "--sketch-const"],
    "regress": ["--rows", "--d", "--p", "--eps", "--delta", "--servers", "--overlap", "--noise",
                "--generator", "--input", "--sketch-const"],
    "lra": ["--rows", "--d", "--k", "--eps", "--delta", "--noise", "--generator", "--input",
            "--sketch-const", "--sign-const"],
    "congest": ["--graph", "--graph-size", "--rounds", "--t", "--rows", "--d", "--p", "--eps",
                "--overlap", "--generator", "--input", "--manifest", "--sketch-const", "--delta-budget"],
    "sweep": list(FLAGS),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsum-protocols", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", dest="seeds", help="seed or comma-separated seeds (decimal or 0x hex)")
    parser.add_argument("--trials", help="trials per seed")
    parser.add_argument("--jobs", help="trials run concurrently")
    parser.add_argument("--csv", help="write the result table as CSV")
    parser.add_argument("--json", help="write rows and summary as JSON")
    parser.add_argument("--diagnostics", action="store_true", help="record per-copy protocol diagnostics")
    parser.add_argument("--truth", action="store_true", help="compute ground truth for file inputs")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in SUBCOMMAND_FLAGS.items():
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        for flag in flags:
            key, text = FLAGS[flag]
            cmd.add_argument(flag, dest=key, help=text)
        if name == "sample":
            cmd.add_argument("--dist", choices=sorted(DISTRIBUTIONS), help="random (uniform) or file")
        if name == "congest":
            cmd.add_argument("--comm-csv", help="write the per-node communication report of the first trial")
            cmd.add_argument("--embeddings-dir", help="write per-node embeddings of the first trial")
        if name == "sweep":
            cmd.add_argument("--protocol", required=True, choices=[p.value for p in Protocol])
            cmd.add_argument("--field", dest="sweep_field", help="config field to sweep (default s)")
            cmd.add_argument("--values", dest="sweep_values", required=True, help="comma-separated values")
    return parser


def _setup_logging(args):
    level = {0: args.log_level.upper(), 1: "INFO"}.get(args.verbose, "DEBUG")
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format=LOG_FORMAT)


def _overrides(args) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigValidationError([f"--set expects KEY=VALUE, got {item!r}"])
        out[key.strip()] = value.strip()
    keys = {key for key, _ in FLAGS.values()} | {"seeds", "trials", "jobs", "csv", "json",
                                                   "sweep_field", "sweep_values"}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    if getattr(args, "dist", None):
        out["generator"] = DISTRIBUTIONS[args.dist]
    if args.diagnostics:
        out["diagnostics"] = "true"
    if args.truth:
        out["truth"] = "true"
    out["protocol"] = args.protocol if args.command == "sweep" else args.command
    return out


def _congest_artifacts(cfg: ExperimentConfig, args):
    if not (getattr(args, "comm_csv", None) or getattr(args, "embeddings_dir", None)):
        return
    runner = ExperimentRunner(cfg)
    _, result = runner.propagate(derive_seed(cfg.seeds[0], "trial", 0))
    if args.comm_csv:
        write_comm_report(result, args.comm_csv)
    if args.embeddings_dir:
        write_embeddings(result, args.embeddings_dir)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args)

    try:
        raw = Path(args.config).read_text() if args.config else ""
        cfg = validate_config(raw, _overrides(args))
    except ConfigValidationError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    table = run_sweep(cfg) if args.command == "sweep" else run_experiment(cfg)
    if cfg.csv:
        table.to_csv(cfg.csv)
    if cfg.json:
        table.to_json(cfg.json)
    if args.command == "congest":
        _congest_artifacts(cfg, args)

    summary = table.summary()
    print(json.dumps(summary, sort_keys=True, default=str))
    return 1 if summary["errors"] else 0


if __name__ == "__main__":
    sys.exit(main())
