#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Compare two run directories (trace.csv and summary.yaml).

Identical seeds and configs must give byte-identical traces unless timing
was enabled; this script shows where two runs part ways. With --tool the
two directories are opened in an external viewer instead.

Usage:
    python dsip_diff.py <run_dir_a> <run_dir_b> [--tool meld]

Example:
    python dsip_diff.py runs/seed-0 runs/seed-0-again
"""

import argparse
import csv
import difflib
import os
import subprocess
import sys

from dsip import colors

COMPARED_FILES = ("trace.csv", "summary.yaml")


def read_lines(filename: str) -> list[str]:
    """Lines of a file, or an empty list if it does not exist."""
    if not os.path.exists(filename):
        return []
    with open(filename, "r", encoding="utf-8") as f:
        return f.readlines()


def first_divergent_round(trace_a: str, trace_b: str) -> int | None:
    """
    First round whose trace rows differ, ignoring wall_ms.
    Returns None if the common rounds agree.
    """
    with open(trace_a, "r", encoding="utf-8", newline="") as fa, \
            open(trace_b, "r", encoding="utf-8", newline="") as fb:
        rows_a = list(csv.DictReader(fa))
        rows_b = list(csv.DictReader(fb))
    for row_a, row_b in zip(rows_a, rows_b):
        row_a.pop("wall_ms", None)
        row_b.pop("wall_ms", None)
        if row_a != row_b:
            return int(row_a["round"])
    if len(rows_a) != len(rows_b):
        return min(len(rows_a), len(rows_b)) + 1
    return None


def diff_file(dir_a: str, dir_b: str, name: str) -> bool:
    """Print a unified diff of one file; return True if they are equal."""
    file_a = os.path.join(dir_a, name)
    file_b = os.path.join(dir_b, name)
    lines = list(difflib.unified_diff(read_lines(file_a),
                                      read_lines(file_b),
                                      fromfile=file_a, tofile=file_b))
    if not lines:
        print(f"{name}: {colors.value('identical')}")
        return True
    print(f"{name}: {colors.caution('differs')}")
    for line in lines:
        if line.startswith("+") and not line.startswith("+++"):
            print(colors.value(line), end="")
        elif line.startswith("-") and not line.startswith("---"):
            print(colors.failure(line), end="")
        else:
            print(line, end="")
    return False


def main() -> None:
    """Main entry point for dsip_diff."""
    parser = argparse.ArgumentParser(
        description="Compare two run directories."
    )
    parser.add_argument(
        "run_a",
        help="First run directory."
    )
    parser.add_argument(
        "run_b",
        help="Second run directory."
    )
    parser.add_argument(
        "--tool",
        help="External diff viewer to open both directories (e.g. meld)."
    )
    args = parser.parse_args()

    for folder in (args.run_a, args.run_b):
        if not os.path.isdir(folder):
            print(f"Error: run directory not found: {folder}")
            sys.exit(2)

    if args.tool:
        print(f"Launching {args.tool} to compare:")
        print(f"  A: {args.run_a}")
        print(f"  B: {args.run_b}")
        try:
            subprocess.run([args.tool, args.run_a, args.run_b], check=True)
        except FileNotFoundError:
            print(f"Error: '{args.tool}' command not found.")
            sys.exit(2)
        except subprocess.CalledProcessError as e:
            print(f"Error running {args.tool}: {e}")
            sys.exit(2)
        return

    trace_a = os.path.join(args.run_a, "trace.csv")
    trace_b = os.path.join(args.run_b, "trace.csv")
    if os.path.exists(trace_a) and os.path.exists(trace_b):
        divergent = first_divergent_round(trace_a, trace_b)
        if divergent is None:
            print("Traces agree on every round (wall_ms ignored).")
        else:
            print(colors.caution(f"Traces diverge at round {divergent}."))

    equal = all([diff_file(args.run_a, args.run_b, name)
                 for name in COMPARED_FILES])
    sys.exit(0 if equal else 1)


if __name__ == "__main__":
    main()
