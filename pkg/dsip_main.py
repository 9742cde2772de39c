#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
This program solves distributionally robust (and CVaR) learning problems
over a network of agents, each holding a private share of the samples.
Agents only talk to their neighbors; the robust constraints are enforced
by cutting surfaces found with a certified global maximization oracle.

Subcommands:
    run <config>       run the distributed experiment of a YAML config
    baseline <config>  ERM fit and centralized reference only
    eval               worst-case cost (and CVaR) of a stored decision
    selftest           tiny-instance checks against brute force

Output goes to --out-dir (default: $DSIP_OUT_DIR, else "runs").
"""


import argparse
import os
import sys

import yaml
from tqdm import tqdm

from dsip import colors
from dsip.config import load_config
from dsip.context import default_out_dir
from dsip.errors import ConfigError, DsipError
from dsip.experiment import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    baseline,
    evaluate,
    run_experiment,
    selftest,
)

EXIT_SELFTEST_FAILED = 1


def add_data_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed",
        type=int,
        help="Override the seed of the config."
    )
    parser.add_argument(
        "--out-dir",
        help="Output directory (default: $DSIP_OUT_DIR or 'runs')."
    )


def add_quiet(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--quiet",
        action="store_true",
        help="No progress bars nor summary printout."
    )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Distributed cutting-surface ADMM for robust learning."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run a distributed experiment.")
    run.add_argument("config", help="YAML experiment config.")
    add_data_options(run)
    run.add_argument(
        "--max-rounds",
        type=int,
        help="Override the round cap of the config."
    )
    add_quiet(run)
    run.add_argument(
        "--timing",
        action="store_true",
        help="Record wall-clock time per round (traces lose determinism)."
    )
    run.add_argument(
        "--seeds",
        type=int,
        default=1,
        help="Run this many consecutive seeds, one subfolder each."
    )

    base = commands.add_parser("baseline",
                               help="ERM and centralized reference.")
    base.add_argument("config", help="YAML experiment config.")
    add_data_options(base)
    add_quiet(base)

    # eval reads everything it needs from its two files.
    ev = commands.add_parser("eval", help="Evaluate a stored decision.")
    ev.add_argument("--x", required=True,
                    help="YAML/JSON file with the decision vector.")
    ev.add_argument("--instance", required=True,
                    help="Instance file written by a run.")
    ev.add_argument("--beta", type=float,
                    help="Also report the worst-case CVaR at this level.")
    ev.add_argument("--tol", type=float, default=1e-4,
                    help="Oracle tolerance.")

    test = commands.add_parser("selftest",
                               help="Tiny-instance checks.")
    add_quiet(test)
    return parser


def run_command(args: argparse.Namespace) -> int:
    config = load_config(args.config).with_overrides(
        seed=args.seed, max_rounds=args.max_rounds,
        timing=args.timing or None)
    if args.seeds <= 1:
        return run_experiment(config, args.out_dir, args.quiet).exit_code

    base_dir = args.out_dir or default_out_dir()
    worst = EXIT_OK
    for offset in tqdm(range(args.seeds), desc="Seeds",
                       disable=args.quiet):
        seeded = config.with_overrides(seed=config.seed + offset)
        out_dir = os.path.join(base_dir, f"seed-{seeded.seed}")
        code = run_experiment(seeded, out_dir, quiet=True).exit_code
        if code != EXIT_OK:
            tqdm.write(colors.caution(
                f"Seed {seeded.seed} finished with exit code {code}"))
        worst = max(worst, code)
    return worst


def dsip_main() -> int:
    """
    Parse the command line, dispatch to the subcommand and map failures
    to exit codes.
    """
    args = make_parser().parse_args()

    try:
        if args.command == "run":
            return run_command(args)
        if args.command == "baseline":
            config = load_config(args.config).with_overrides(seed=args.seed)
            baseline(config, args.out_dir, args.quiet)
            return EXIT_OK
        if args.command == "eval":
            result = evaluate(args.x, args.instance, args.beta, args.tol)
            print(yaml.safe_dump(result, sort_keys=False), end="")
            return EXIT_OK
        return EXIT_OK if selftest(args.quiet) else EXIT_SELFTEST_FAILED
    except ConfigError as e:
        print(colors.failure(f"Config error: {e}"))
        return EXIT_CONFIG
    except (OSError, yaml.YAMLError) as e:
        print(colors.failure(f"Error: {e}"))
        return EXIT_CONFIG
    except DsipError as e:
        print(colors.failure(f"Solver failure: {e}"))
        return EXIT_SOLVER

# Program entry point
if __name__ == "__main__":
    sys.exit(dsip_main())
