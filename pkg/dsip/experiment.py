"""
Experiment harness: wires configs, data, the distributed solver and the
references together, and reports to the console and the run directory.
"""
import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np
import yaml
from tqdm import tqdm

from dsip import colors
from dsip.admm import (
    AdmmConfig,
    RunStatus,
    RunTrace,
    TerminationConfig,
    run_to_convergence,
)
from dsip.config import ExperimentConfig, Mode
from dsip.context import RunContext
from dsip.data import (
    generate_regression_data,
    holdout_samples,
    load_instance,
    tiny_instance,
)
from dsip.dro import (
    BoundMethod,
    DROInstance,
    cvar_value,
    reformulate_cvar,
    reformulate_dro,
    sample_average,
    worst_case_cost,
)
from dsip.errors import ConfigError, DsipError
from dsip.generic import build_generic_sip
from dsip.losses import loss_by_name
from dsip.oracle import approx_global_max
from dsip.reference import (
    brute_force_sip,
    centralized_cutting_surface,
    sample_average_solution,
)
from dsip.sip import Box, GenericSIP
from dsip.subproblem import FiniteConvexProgram, SolveStatus, solve

EXIT_OK = 0
EXIT_MAX_ROUNDS = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

# Holdout samples come from their own stream, offset from the run seed.
HOLDOUT_SEED_OFFSET = 1_000_003


@dataclass(eq=False)
class ExperimentResult:
    trace: RunTrace | None
    summary: dict
    exit_code: int


def build_instance(config: ExperimentConfig) -> DROInstance:
    """The dataset of a DRO or CVaR experiment."""
    spec = config.data
    graph = config.graph.build()
    try:
        if spec.source == "file":
            instance = load_instance(spec.path)
            return dataclasses.replace(instance, theta=config.theta,
                                       graph=graph)
        return generate_regression_data(
            n=graph.n, per_agent=spec.per_agent, seed=config.seed,
            w_true=spec.w_true, noise_width=spec.noise_width,
            theta=config.theta, loss=spec.loss,
            decision_box=spec.decision_box, graph=graph,
            inflation=spec.support_inflation)
    except (OSError, KeyError, TypeError, DsipError) as e:
        raise ConfigError(f"cannot build the dataset: {e}",
                          field="data") from e


def build_sip(config: ExperimentConfig,
              instance: DROInstance | None) -> GenericSIP:
    if config.mode is Mode.DRO:
        return reformulate_dro(instance, method=config.bounds)
    if config.mode is Mode.CVAR:
        return reformulate_cvar(instance, config.beta, method=config.bounds)
    return build_generic_sip(config.generic, config.graph.build())


def decision_part(config: ExperimentConfig, y: np.ndarray) -> np.ndarray:
    """x out of the global variable: (x, s), (x, t, s) or y itself."""
    if config.mode is Mode.DRO:
        return y[:-1]
    if config.mode is Mode.CVAR:
        return y[:-2]
    return y


def _reference(config: ExperimentConfig, sip: GenericSIP) -> dict:
    eps = config.reference.eps or float(
        np.max(config.admm.final_eps(sip.n)))
    ref = centralized_cutting_surface(sip, eps, config.admm.solver,
                                      config.admm.oracle)
    return {
        "value": ref.value,
        "y": ref.y,
        "cuts": len(ref.cuts),
        "iterations": ref.iterations,
        "certified_violation": ref.certified_violation,
    }


def _dro_report(config: ExperimentConfig, instance: DROInstance,
                x: np.ndarray) -> dict:
    """Worst-case cost, ERM comparison and holdout losses at x."""
    tol = config.evaluation.tol
    erm = sample_average_solution(instance)
    report = {
        "worst_case_cost": worst_case_cost(x, instance, tol),
        "sample_average": sample_average(x, instance),
        "erm": {
            "x": erm.x,
            "sample_average": erm.value,
            "worst_case_cost": worst_case_cost(erm.x, instance, tol),
        },
    }
    if config.mode is Mode.CVAR:
        report["cvar_value"] = cvar_value(x, instance, config.beta, tol)
    count = config.evaluation.test_samples
    if count and config.data.source == "generated":
        holdout = holdout_samples(count, config.seed + HOLDOUT_SEED_OFFSET,
                                  config.data.w_true,
                                  config.data.noise_width)
        report["out_of_sample"] = {
            "samples": count,
            "loss": float(np.mean(instance.loss.value(x, holdout))),
            "erm_loss": float(np.mean(instance.loss.value(erm.x, holdout))),
        }
    return report


def run_experiment(config: ExperimentConfig, out_dir: str | None = None,
                   quiet: bool = False) -> ExperimentResult:
    """
    Run the configured experiment end to end. Writes trace.csv,
    summary.yaml, instance.yaml and plots/ under the run directory.
    """
    ctx = RunContext(out_dir)
    ctx.data = {"config": config.summary(), "source": config.source}
    instance = None
    if config.mode is not Mode.GENERIC:
        instance = build_instance(config)
        ctx.write_instance(instance)
        if config.bounds is BoundMethod.SAMPLED:
            print(colors.caution(
                "Warning: sampled loss bounds are heuristic, the "
                "guarantees of the run are degraded."))
    sip = build_sip(config, instance)
    if not quiet:
        print(f"Running {config.mode.value} on {sip.n} agents, "
              f"{len(sip.graph.edges)} edges, output in {ctx.out_dir}")
    try:
        with ctx:
            trace = run_to_convergence(sip, config.admm,
                                       on_round=ctx.write_round,
                                       progress=not quiet)
    except DsipError as e:
        ctx.update(status="solver_failure", error=str(e))
        print(colors.failure(f"Solver failure: {e}"))
        return ExperimentResult(None, ctx.data, EXIT_SOLVER)

    y = trace.consensus_y
    x = decision_part(config, y)
    final = trace.final
    summary: dict = {
        "status": trace.status.value,
        "rounds": trace.rounds,
        "stabilized_round": trace.stabilized_round,
        "eps_effective": trace.eps_effective,
        "final": {
            "consensus_residual": final.consensus_residual,
            "max_violation": final.max_violation,
            "objective": final.objective,
            "p_imbalance": max(r.p_imbalance for r in trace.records),
        },
        "consensus_y": y,
        "consensus_x": x,
        "agents": [
            {"agent": s.index + 1, "x": decision_part(config, s.y),
             "cuts": len(s.cuts)}
            for s in trace.final_states
        ],
        "warnings": trace.warnings,
    }
    reference_value = None
    try:
        if config.reference.enabled:
            reference_sip = (build_sip(config, instance.merged())
                             if instance is not None else sip)
            summary["reference"] = _reference(config, reference_sip)
            reference_value = summary["reference"]["value"]
            if config.mode is Mode.DRO:
                summary["reference"]["dro_value"] = (
                    reference_value / instance.L)
        if instance is not None:
            summary.update(_dro_report(config, instance, x))
    except DsipError as e:
        summary["status"] = "solver_failure"
        summary["reference_error"] = str(e)
        print(colors.failure(f"Reference failure: {e}"))
        ctx.update(**summary)
        return ExperimentResult(trace, ctx.data, EXIT_SOLVER)
    ctx.write_plots(trace.records, reference_value)
    ctx.update(**summary)
    if not quiet:
        print_summary(trace, x, summary)
    code = EXIT_OK if trace.status is RunStatus.CONVERGED else (
        EXIT_MAX_ROUNDS)
    return ExperimentResult(trace, ctx.data, code)


def _fmt(x: np.ndarray) -> str:
    return np.array2string(np.asarray(x), precision=4)


def print_summary(trace: RunTrace, x: np.ndarray, summary: dict) -> None:
    for warning in trace.warnings:
        print(colors.caution(f"Warning: {warning}"))
    if trace.status is RunStatus.CONVERGED:
        print(f"Converged after {trace.rounds} rounds "
              f"(cuts stable since round {trace.stabilized_round})")
    else:
        print(colors.caution(f"Stopped at max_rounds ({trace.rounds})"))
    final = trace.final
    print(f"  consensus x:      {colors.value(_fmt(x))}")
    print(f"  consensus resid.: "
          f"{colors.value(f'{final.consensus_residual:.3e}')}")
    print(f"  max violation:    {colors.value(f'{final.max_violation:.3e}')}"
          f" (eps {trace.eps_effective:g})")
    print(f"  objective:        {colors.value(f'{final.objective:.6f}')}")
    for agent in summary["agents"]:
        print(f"  {colors.agent(agent['agent'] - 1)}: x = "
              f"{_fmt(agent['x'])}, {agent['cuts']} cuts")
    if "reference" in summary:
        value = summary["reference"]["value"]
        print(f"  reference value:  {colors.value(f'{value:.6f}')}")
    else:
        print(colors.skipped("  reference:        skipped"))
    if "worst_case_cost" in summary:
        print(f"  worst-case cost:  "
              f"{colors.value(format(summary['worst_case_cost'], '.6f'))}")
    if "cvar_value" in summary:
        print(f"  worst-case CVaR:  "
              f"{colors.value(format(summary['cvar_value'], '.6f'))}")


def baseline(config: ExperimentConfig, out_dir: str | None = None,
             quiet: bool = False) -> dict:
    """ERM fit and centralized cutting surface, saved to baseline.yaml."""
    ctx = RunContext(out_dir)
    result: dict = {"config": config.summary()}
    instance = None
    if config.mode is not Mode.GENERIC:
        instance = build_instance(config)
        erm = sample_average_solution(instance)
        result["erm"] = {"x": erm.x, "sample_average": erm.value,
                         "status": erm.report.status.value}
        sip = build_sip(config, instance.merged())
    else:
        sip = build_sip(config, None)
    result["reference"] = _reference(config, sip)
    if instance is not None:
        x = decision_part(config, np.asarray(result["reference"]["y"]))
        result["reference"]["x"] = x
        result["reference"]["worst_case_cost"] = worst_case_cost(
            x, instance, config.evaluation.tol)
    filename = ctx.save_yaml("baseline.yaml", result)
    if not quiet:
        if "erm" in result:
            print(f"ERM x:        "
                  f"{colors.value(_fmt(result['erm']['x']))}")
        print(f"Reference:    "
              f"{colors.value(format(result['reference']['value'], '.6f'))}"
              f" with {result['reference']['cuts']} cuts")
        print(f"Saved {filename}")
    return result


def _read_vector(filename: str) -> np.ndarray:
    """A decision vector from a YAML/JSON file: a list or {'x': list}."""
    with open(filename, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if isinstance(data, dict):
        for key in ("x", "consensus_x"):
            if key in data:
                data = data[key]
                break
    if not isinstance(data, list):
        raise ConfigError(f"{filename} must hold a list of numbers",
                          field="x")
    return np.asarray(data, dtype=float)


def evaluate(x_file: str, instance_file: str, beta: float | None = None,
             tol: float = 1e-4) -> dict:
    """Worst-case cost (and CVaR when beta is given) of a stored x."""
    x = _read_vector(x_file)
    instance = load_instance(instance_file)
    result = {"x": x.tolist(),
              "worst_case_cost": worst_case_cost(x, instance, tol),
              "sample_average": sample_average(x, instance)}
    if beta is not None:
        result["cvar_value"] = cvar_value(x, instance, beta, tol)
    return result


def _check_oracle() -> tuple[bool, str]:
    box = Box([-1.0, -1.0], [1.0, 1.0])
    result = approx_global_max(
        lambda xi: 1.0 - (xi[0] - 0.3) ** 2 - (xi[1] + 0.4) ** 2,
        box, 2.0 * np.sqrt(1.3 ** 2 + 1.4 ** 2), 1e-3)
    return result.value >= 1.0 - 1e-3, f"max {result.value:.6f}"


def _check_worst_case() -> tuple[bool, str]:
    instance = DROInstance(
        np.array([[0.5], [1.0]]), np.array([0, 0]), 0.1,
        loss_by_name("quadratic"), Box([0.0], [5.0]), Box([0.0], [2.0]))
    value = worst_case_cost(np.array([0.5]), instance, 1e-6)
    return abs(value - 0.325) <= 1e-3, f"{value:.6f} vs 0.325"


def _check_subproblem() -> tuple[bool, str]:
    prog = FiniteConvexProgram.from_handles(
        lambda y: float(y.sum()), lambda y: np.ones(2),
        Box.cube(2, 0.0, 1.0),
        [(lambda y: 1.0 - y[0] - y[1], lambda y: -np.ones(2))])
    report = solve(prog, np.array([1.0, 1.0]))
    ok = (report.status is SolveStatus.OPTIMAL
          and abs(report.objective_value - 1.0) <= 1e-5)
    return ok, f"{report.objective_value:.6f} ({report.status.value})"


def _tiny_admm_config() -> AdmmConfig:
    return AdmmConfig(rho=1.0, eps=0.01, termination=TerminationConfig(
        consensus_tol=1e-3, stability_rounds=10, max_rounds=3000))


def _check_tiny_distributed() -> tuple[bool, str]:
    instance = tiny_instance(seed=1)
    sip = reformulate_dro(instance)
    trace = run_to_convergence(sip, _tiny_admm_config())
    brute = brute_force_sip(reformulate_dro(instance.merged()))
    gap = abs(trace.final.objective - brute.value)
    slack = instance.L * (brute.grid_error + 0.01) + 1e-3
    ok = trace.status is RunStatus.CONVERGED and gap <= slack
    return ok, f"gap {gap:.2e} (slack {slack:.2e})"


def _check_tiny_centralized() -> tuple[bool, str]:
    instance = tiny_instance(seed=2)
    merged = reformulate_dro(instance.merged())
    central = centralized_cutting_surface(merged, 0.01)
    brute = brute_force_sip(merged)
    gap = abs(central.value - brute.value)
    slack = instance.L * (brute.grid_error + 0.01) + 1e-3
    return gap <= slack, f"gap {gap:.2e} (slack {slack:.2e})"


def _check_cvar_reduction() -> tuple[bool, str]:
    instance = tiny_instance(seed=3)
    x = np.array([1.0])
    expected = worst_case_cost(x, instance, 1e-6)
    value = cvar_value(x, instance, 1.0, 1e-6)
    return abs(value - expected) <= 1e-4, f"{value:.6f} vs {expected:.6f}"


SELFTEST_CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "oracle certifies a 2-D maximum": _check_oracle,
    "worst-case cost of the 1-D example": _check_worst_case,
    "subproblem solves a small LP": _check_subproblem,
    "CVaR at level 1 equals worst-case cost": _check_cvar_reduction,
    "centralized matches brute force": _check_tiny_centralized,
    "distributed matches brute force": _check_tiny_distributed,
}


def selftest(quiet: bool = False) -> bool:
    """Run the tiny-instance oracle suite, printing PASS/FAIL per check."""
    passed = True
    for name, check in tqdm(SELFTEST_CHECKS.items(), desc="Self test",
                            disable=quiet):
        try:
            ok, detail = check()
        except DsipError as e:
            ok, detail = False, str(e)
        passed = passed and ok
        tqdm.write(f"{name:<42} {colors.verdict(ok)}  {detail}")
    return passed
