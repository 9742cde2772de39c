"""
Experiment configuration: YAML (or JSON) files checked against a strict
schema. Errors name the offending field and its line.
"""
import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NoReturn

import semver
import yaml

from dsip.admm import AdmmConfig, TerminationConfig, WarmupConfig
from dsip.dro import BoundMethod
from dsip.errors import ConfigError, DsipError
from dsip.generic import build_generic_sip
from dsip.losses import BUILTIN_LOSSES
from dsip.oracle import DEFAULT_NODE_LIMIT, OracleConfig
from dsip.sip import Box, Graph, validate_graph
from dsip.subproblem import SolverConfig

SCHEMA_VERSION = "1.0.0"

_MISSING = object()
Path = tuple[str | int, ...]


class Mode(Enum):
    """Enumeration for what the experiment solves."""
    DRO = "dro"
    CVAR = "cvar"
    GENERIC = "generic"


@dataclass(frozen=True)
class GraphSpec:
    kind: str = "ring"
    n: int = 6
    extra_edges: tuple[tuple[int, int], ...] = ()
    edges: tuple[tuple[int, int], ...] = ()

    def build(self) -> Graph:
        if self.kind == "ring":
            return Graph.ring(self.n, self.extra_edges)
        if self.kind == "complete":
            return Graph.complete(self.n)
        return Graph.from_edge_list(self.n, self.edges)


@dataclass(frozen=True)
class DataSpec:
    source: str = "generated"
    per_agent: int | tuple[int, ...] = 10
    w_true: tuple[float, ...] = (1.0, 2.0, 3.0, 1.0, 0.0)
    noise_width: float = 1.0
    loss: str = "quadratic"
    decision_box: Box | None = None
    support_inflation: float = 0.25
    path: str | None = None


@dataclass(frozen=True)
class ReferenceSpec:
    enabled: bool = True
    eps: float | None = None


@dataclass(frozen=True)
class EvaluationSpec:
    tol: float = 1e-4
    test_samples: int = 1000


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A validated experiment."""
    mode: Mode = Mode.DRO
    seed: int = 0
    graph: GraphSpec = field(default_factory=GraphSpec)
    data: DataSpec = field(default_factory=DataSpec)
    theta: float = 0.01
    beta: float = 0.95
    bounds: BoundMethod = BoundMethod.ANALYTIC
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)
    generic: dict | None = None
    schema_version: str = SCHEMA_VERSION
    source: str = "<defaults>"

    def with_overrides(self, seed: int | None = None,
                       max_rounds: int | None = None,
                       timing: bool | None = None) -> "ExperimentConfig":
        """Apply command line overrides."""
        admm = self.admm
        if max_rounds is not None:
            admm = dataclasses.replace(
                admm, termination=dataclasses.replace(
                    admm.termination, max_rounds=max_rounds))
        if timing is not None:
            admm = dataclasses.replace(admm, timing=timing)
        return dataclasses.replace(
            self, seed=self.seed if seed is None else seed, admm=admm)

    def summary(self) -> dict:
        """The parameters that identify a run, for the summary file."""
        return {
            "schema_version": self.schema_version,
            "mode": self.mode.value,
            "seed": self.seed,
            "theta": self.theta,
            "beta": self.beta if self.mode is Mode.CVAR else None,
            "eps": (list(self.admm.eps) if isinstance(self.admm.eps, tuple)
                    else self.admm.eps),
            "rho": self.admm.rho,
            "cut_every": self.admm.cut_every,
        }


def _line_map(node: yaml.Node, path: Path = (),
              lines: dict[Path, int] | None = None) -> dict[Path, int]:
    """1-based line of every key and sequence item in a composed tree."""
    if lines is None:
        lines = {(): node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            child = path + (key_node.value,)
            lines[child] = key_node.start_mark.line + 1
            _line_map(value_node, child, lines)
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            child = path + (index,)
            lines[child] = item.start_mark.line + 1
            _line_map(item, child, lines)
    return lines


class _Reader:
    """Typed access to the raw config tree with located errors."""

    def __init__(self, lines: dict[Path, int]):
        self.lines = lines

    def fail(self, path: Path, message: str) -> NoReturn:
        located = path
        while located and located not in self.lines:
            located = located[:-1]
        raise ConfigError(message, ".".join(str(p) for p in path),
                          self.lines.get(located))

    def mapping(self, value: Any, path: Path,
                allowed: set[str]) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, "must be a mapping")
        for key in value:
            if key not in allowed:
                self.fail(path + (key,), f"unknown key '{key}'")
        return value

    def get(self, data: dict, key: str, default: Any) -> Any:
        return data.get(key, default) if data else default

    def number(self, data: dict, key: str, path: Path,
               default: Any = _MISSING, positive: bool = False,
               minimum: float | None = None,
               maximum: float | None = None) -> float:
        value = self.get(data, key, default)
        where = path + (key,)
        if value is _MISSING:
            self.fail(where, "is required")
        value = self._to_float(value, where)
        if positive and value <= 0:
            self.fail(where, f"must be positive, got {value}")
        if minimum is not None and value < minimum:
            self.fail(where, f"must be at least {minimum}, got {value}")
        if maximum is not None and value > maximum:
            self.fail(where, f"must be at most {maximum}, got {value}")
        return value

    def _to_float(self, value: Any, where: Path) -> float:
        # Plain YAML reads 1e-6 (no dot) as a string.
        if isinstance(value, bool):
            self.fail(where, "must be a number")
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                self.fail(where, f"must be a number, got '{value}'")
        if not isinstance(value, (int, float)):
            self.fail(where, "must be a number")
        if not math.isfinite(value):
            self.fail(where, "must be finite")
        return float(value)

    def integer(self, data: dict, key: str, path: Path,
                default: Any = _MISSING, minimum: int | None = None) -> int:
        value = self.get(data, key, default)
        where = path + (key,)
        if value is _MISSING:
            self.fail(where, "is required")
        return self.to_int(value, where, minimum)

    def to_int(self, value: Any, where: Path,
               minimum: int | None = None) -> int:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(where, "must be an integer")
        if minimum is not None and value < minimum:
            self.fail(where, f"must be at least {minimum}, got {value}")
        return value

    def boolean(self, data: dict, key: str, path: Path,
                default: bool) -> bool:
        value = self.get(data, key, default)
        if not isinstance(value, bool):
            self.fail(path + (key,), "must be true or false")
        return value

    def choice(self, data: dict, key: str, path: Path, choices: list[str],
               default: str) -> str:
        value = self.get(data, key, default)
        if value not in choices:
            self.fail(path + (key,),
                      f"must be one of {', '.join(choices)}, got '{value}'")
        return value

    def vector(self, value: Any, path: Path) -> tuple[float, ...]:
        if not isinstance(value, list) or not value:
            self.fail(path, "must be a nonempty list of numbers")
        return tuple(self._to_float(v, path + (i,))
                     for i, v in enumerate(value))

    def pairs(self, value: Any, path: Path) -> tuple[tuple[int, int], ...]:
        if value is None:
            return ()
        if not isinstance(value, list):
            self.fail(path, "must be a list of [i, j] pairs")
        result = []
        for index, pair in enumerate(value):
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool)
                               for v in pair)):
                self.fail(path + (index,), "must be a pair of agent numbers")
            result.append((pair[0], pair[1]))
        return tuple(result)

    def box(self, value: Any, path: Path) -> Box | None:
        if value is None:
            return None
        data = self.mapping(value, path, {"lower", "upper"})
        lower = self.vector(data.get("lower"), path + ("lower",))
        upper = self.vector(data.get("upper"), path + ("upper",))
        try:
            return Box(lower, upper)
        except DsipError as e:
            self.fail(path, str(e))

    def schema_version(self, data: dict) -> str:
        raw = str(data.get("schema_version", SCHEMA_VERSION))
        try:
            version = semver.Version.parse(raw)
        except ValueError:
            self.fail(("schema_version",), f"'{raw}' is not a version")
        supported = semver.Version.parse(SCHEMA_VERSION)
        if version.major != supported.major or version > supported:
            self.fail(("schema_version",),
                      f"version {raw} is not supported (reader is "
                      f"{SCHEMA_VERSION})")
        return raw

    def graph(self, value: Any) -> GraphSpec:
        path = ("graph",)
        data = self.mapping(value, path, {"kind", "n", "extra_edges",
                                          "edges"})
        spec = GraphSpec(
            kind=self.choice(data, "kind", path,
                             ["ring", "complete", "edges"], "ring"),
            n=self.integer(data, "n", path, 6, minimum=1),
            extra_edges=self.pairs(data.get("extra_edges"),
                                   path + ("extra_edges",)),
            edges=self.pairs(data.get("edges"), path + ("edges",)),
        )
        try:
            validate_graph(spec.build())
        except DsipError as e:
            self.fail(path, str(e))
        return spec

    def data(self, value: Any, n: int) -> DataSpec:
        path = ("data",)
        data = self.mapping(value, path, {
            "source", "per_agent", "w_true", "noise_width", "loss",
            "decision_box", "support_inflation", "path"})
        source = self.choice(data, "source", path, ["generated", "file"],
                             "generated")
        if source == "file":
            filename = data.get("path")
            if not isinstance(filename, str):
                self.fail(path + ("path",), "is required for file data")
            return DataSpec(source=source, path=filename)
        per_agent: int | tuple[int, ...]
        raw = data.get("per_agent", 10)
        if isinstance(raw, list):
            per_agent = tuple(
                self.to_int(v, path + ("per_agent", i), minimum=1)
                for i, v in enumerate(raw))
            if len(per_agent) != n:
                self.fail(path + ("per_agent",),
                          f"needs one count per agent ({n})")
        else:
            per_agent = self.integer(data, "per_agent", path, 10, minimum=1)
        w_true = self.vector(data.get("w_true", list(DataSpec.w_true)),
                             path + ("w_true",))
        decision_box = self.box(data.get("decision_box"),
                                path + ("decision_box",))
        if decision_box is not None and decision_box.dim != len(w_true):
            self.fail(path + ("decision_box",),
                      f"must have dim {len(w_true)} like w_true")
        return DataSpec(
            source=source,
            per_agent=per_agent,
            w_true=w_true,
            noise_width=self.number(data, "noise_width", path, 1.0,
                                    minimum=0.0),
            loss=self.choice(data, "loss", path, sorted(BUILTIN_LOSSES),
                             "quadratic"),
            decision_box=decision_box,
            support_inflation=self.number(data, "support_inflation", path,
                                          0.25, minimum=0.0),
        )

    def eps(self, value: Any, n: int) -> float | tuple[float, ...]:
        path = ("eps",)
        if isinstance(value, list):
            eps = self.vector(value, path)
            if len(eps) != n:
                self.fail(path, f"needs one tolerance per agent ({n})")
            if min(eps) <= 0:
                self.fail(path, "must be positive")
            return eps
        return self.number({"eps": value}, "eps", (), positive=True)

    def admm(self, data: dict, n: int) -> AdmmConfig:
        solver = self.mapping(data.get("solver"), ("solver",),
                              {"feas_tol", "opt_tol", "max_iter"})
        oracle = self.mapping(data.get("oracle"), ("oracle",),
                              {"node_limit", "max_cuts_per_round"})
        term = self.mapping(data.get("termination"), ("termination",),
                            {"consensus_tol", "stability_rounds",
                             "max_rounds"})
        warmup = None
        if data.get("warmup") is not None:
            raw = self.mapping(data["warmup"], ("warmup",),
                               {"eps", "rounds"})
            warmup = WarmupConfig(
                self.number(raw, "eps", ("warmup",), positive=True),
                self.integer(raw, "rounds", ("warmup",), minimum=0))
        return AdmmConfig(
            rho=self.number(data, "rho", (), 0.05, positive=True),
            eps=self.eps(data.get("eps", 0.01), n),
            solver=SolverConfig(
                self.number(solver, "feas_tol", ("solver",), 1e-6,
                            positive=True),
                self.number(solver, "opt_tol", ("solver",), 1e-6,
                            positive=True),
                self.integer(solver, "max_iter", ("solver",), 50_000,
                             minimum=1)),
            oracle=OracleConfig(
                self.integer(oracle, "node_limit", ("oracle",),
                             DEFAULT_NODE_LIMIT, minimum=1),
                self.integer(oracle, "max_cuts_per_round", ("oracle",), 1,
                             minimum=1)),
            termination=TerminationConfig(
                self.number(term, "consensus_tol", ("termination",), 1e-3,
                            positive=True),
                self.integer(term, "stability_rounds", ("termination",), 50,
                             minimum=1),
                self.integer(term, "max_rounds", ("termination",), 1000,
                             minimum=1)),
            cut_every=self.integer(data, "cut_every", (), 1, minimum=1),
            warmup=warmup,
            timing=self.boolean(data, "timing", (), False),
        )

    def experiment(self, data: dict, source: str) -> ExperimentConfig:
        data = self.mapping(data, (), {
            "schema_version", "mode", "seed", "graph", "data", "theta",
            "beta", "eps", "rho", "bounds", "solver", "oracle",
            "termination", "cut_every", "warmup", "timing", "reference",
            "evaluation", "generic"})
        version = self.schema_version(data)
        mode = Mode(self.choice(data, "mode", (),
                                [m.value for m in Mode], "dro"))
        graph = self.graph(data.get("graph"))
        reference = self.mapping(data.get("reference"), ("reference",),
                                 {"enabled", "eps"})
        evaluation = self.mapping(data.get("evaluation"), ("evaluation",),
                                  {"tol", "test_samples"})
        generic = None
        if mode is Mode.GENERIC:
            generic = data.get("generic")
            if not isinstance(generic, dict):
                self.fail(("generic",), "is required in generic mode")
            try:
                build_generic_sip(generic, graph.build())
            except (DsipError, KeyError, TypeError, ValueError) as e:
                self.fail(("generic",), f"invalid generic program: {e}")
        return ExperimentConfig(
            mode=mode,
            seed=self.integer(data, "seed", (), 0, minimum=0),
            graph=graph,
            data=self.data(data.get("data"), graph.n),
            theta=self.number(data, "theta", (), 0.01, positive=True),
            beta=self.number(data, "beta", (), 0.95, positive=True,
                             maximum=1.0),
            bounds=BoundMethod(self.choice(
                data, "bounds", (), [b.value for b in BoundMethod],
                "analytic")),
            admm=self.admm(data, graph.n),
            reference=ReferenceSpec(
                self.boolean(reference, "enabled", ("reference",), True),
                (self.number(reference, "eps", ("reference",),
                             positive=True)
                 if "eps" in reference else None)),
            evaluation=EvaluationSpec(
                self.number(evaluation, "tol", ("evaluation",), 1e-4,
                            positive=True),
                self.integer(evaluation, "test_samples", ("evaluation",),
                             1000, minimum=0)),
            generic=generic,
            schema_version=version,
            source=source,
        )


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Validate a YAML/JSON document into an ExperimentConfig."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"{source}: not valid YAML ({e})",
                          line=mark.line + 1 if mark else None) from e
    if root is None:
        data, lines = {}, {}
    else:
        lines = _line_map(root)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping", line=1)
    return _Reader(lines).experiment(data, source)


def load_config(filename: str) -> ExperimentConfig:
    """Load and validate a config file."""
    try:
        with open(filename, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read {filename}: {e}") from e
    return parse_config(text, filename)
