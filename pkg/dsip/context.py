"""
Run context: everything a run leaves on disk.
"""
import csv
import os
from typing import IO, Sequence

import numpy as np
import yaml

from dsip.admm import RoundRecord
from dsip.data import save_instance
from dsip.dro import DROInstance

OUT_DIR_ENV = "DSIP_OUT_DIR"
DEFAULT_OUT_DIR = "runs"

TRACE_COLUMNS = (
    "round",
    "consensus_residual",
    "max_violation",
    "objective",
    "cuts_added_total",
    "per_agent_cut_counts",
    "wall_ms",
)


def default_out_dir() -> str:
    return os.environ.get(OUT_DIR_ENV, DEFAULT_OUT_DIR)


def plain(value: object) -> object:
    """numpy scalars and arrays as plain Python data for YAML."""
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    return value


class RunContext:
    """
    Owns the output directory of a run. The trace is written one row per
    round as rounds finish, so a failed run keeps its partial trace.
    """

    def __init__(self, out_dir: str | None = None):
        self.out_dir = out_dir or default_out_dir()
        self.summary_file = os.path.join(self.out_dir, "summary.yaml")
        self.trace_file = os.path.join(self.out_dir, "trace.csv")
        self.data: dict = {}
        self._trace: IO[str] | None = None
        self._writer = None
        self._cuts_total = 0

    def __enter__(self) -> "RunContext":
        self.open_trace()
        return self

    def __exit__(self, *_exc: object) -> None:
        self.close_trace()

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    def open_trace(self) -> None:
        os.makedirs(self.out_dir, exist_ok=True)
        self._trace = open(self.trace_file, "w", encoding="utf-8",
                           newline="")
        self._writer = csv.writer(self._trace, lineterminator="\n")
        self._writer.writerow(TRACE_COLUMNS)
        self._cuts_total = 0

    def write_round(self, record: RoundRecord) -> None:
        """Append one trace row; cuts_added_total is cumulative."""
        if self._writer is None:
            self.open_trace()
        self._cuts_total += record.cuts_added
        self._writer.writerow([
            record.round,
            repr(float(record.consensus_residual)),
            repr(float(record.max_violation)),
            repr(float(record.objective)),
            self._cuts_total,
            ";".join(str(c) for c in record.per_agent_cut_counts),
            repr(float(record.wall_ms)),
        ])
        self._trace.flush()

    def close_trace(self) -> None:
        if self._trace is not None:
            self._trace.close()
            self._trace = None
            self._writer = None

    def update(self, **fields: object) -> None:
        """Merge fields into the summary and rewrite summary.yaml."""
        self.data.update({k: plain(v) for k, v in fields.items()})
        self.save_yaml("summary.yaml", self.data)

    def save_yaml(self, name: str, data: dict) -> str:
        """
        Write `data` into the output directory. An existing file is only
        replaced by a complete dump.
        """
        filename = self.path(name)
        os.makedirs(os.path.dirname(filename), exist_ok=True)
        partial = filename + ".partial"
        try:
            with open(partial, "w", encoding="utf-8") as f:
                yaml.safe_dump(plain(data), f, sort_keys=False)
        except yaml.YAMLError:
            os.remove(partial)
            raise
        os.replace(partial, filename)
        return filename

    def write_instance(self, instance: DROInstance) -> str:
        filename = self.path("instance.yaml")
        save_instance(instance, filename)
        return filename

    def write_plots(self, records: Sequence[RoundRecord],
                    reference: float | None = None) -> None:
        """
        Two-column (round, value) files for the consensus, violation and
        objective panels; the reference objective gets its own file.
        """
        folder = self.path("plots")
        os.makedirs(folder, exist_ok=True)
        panels = {
            "consensus.dat": [r.consensus_residual for r in records],
            "violation.dat": [r.max_violation for r in records],
            "objective.dat": [r.objective for r in records],
        }
        rounds = [r.round for r in records]
        if reference is not None and records:
            panels["reference.dat"] = [reference] * len(records)
        for name, values in panels.items():
            with open(os.path.join(folder, name), "w",
                      encoding="utf-8") as f:
                f.write("# round value\n")
                for k, v in zip(rounds, values):
                    f.write(f"{k} {float(v)!r}\n")
