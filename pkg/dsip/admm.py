"""
Distributed cutting-surface ADMM.

Every agent keeps a dual aggregate p, its copy y of the global variable,
its local variable z and its own cut set. In each synchronous round the
agents read their neighbors' y from the previous round, update p, solve
their cut-constrained proximal subproblem and then look for a new cut.
"""
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from tqdm import tqdm

from dsip.errors import (
    AgentFailure,
    BudgetExhausted,
    DimensionMismatch,
    DsipError,
)
from dsip.oracle import CutOracleResult, OracleConfig, approx_global_max
from dsip.sip import (
    AgentProblem,
    Box,
    CutSet,
    GenericSIP,
    max_cut_violation,
    validate_graph,
)
from dsip.subproblem import (
    FiniteConvexProgram,
    SolverConfig,
    SolveReport,
    SolveStatus,
    solve,
)


class RunStatus(Enum):
    """Enumeration for how a run ended."""
    CONVERGED = "converged"
    MAX_ROUNDS = "max_rounds"


@dataclass(frozen=True)
class TerminationConfig:
    """When the omniscient simulator stops the network."""
    consensus_tol: float = 1e-3
    stability_rounds: int = 50
    max_rounds: int = 1000


@dataclass(frozen=True)
class WarmupConfig:
    """A coarse cut tolerance used during the first rounds."""
    eps: float
    rounds: int


@dataclass(frozen=True)
class AdmmConfig:
    """
    All knobs of a run. `eps` is either one tolerance for every agent or
    one per agent; the guarantee of the run is the largest of them.
    """
    rho: float = 0.05
    eps: float | tuple[float, ...] = 0.01
    solver: SolverConfig = field(default_factory=SolverConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    termination: TerminationConfig = field(
        default_factory=TerminationConfig)
    cut_every: int = 1
    warmup: WarmupConfig | None = None
    timing: bool = False

    def __post_init__(self) -> None:
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if np.any(np.asarray(self.eps, dtype=float) <= 0):
            raise ValueError("eps must be positive")
        if self.cut_every < 1:
            raise ValueError("cut_every must be at least 1")

    def final_eps(self, n: int) -> np.ndarray:
        eps = np.asarray(self.eps, dtype=float)
        if eps.ndim and eps.shape != (n,):
            raise DimensionMismatch(f"Expected {n} per-agent tolerances")
        return np.broadcast_to(eps, (n,)).copy()

    def eps_for_round(self, n: int, round_index: int) -> np.ndarray:
        if self.warmup is not None and round_index <= self.warmup.rounds:
            return np.maximum(self.final_eps(n), self.warmup.eps)
        return self.final_eps(n)

    def keeps_cuts(self, round_index: int) -> bool:
        return (round_index - 1) % self.cut_every == 0


@dataclass(frozen=True, eq=False)
class AgentState:
    """One agent's state: p, y, z and its append-only cut set."""
    index: int
    p: np.ndarray
    y: np.ndarray
    z: np.ndarray
    cuts: CutSet


@dataclass(frozen=True)
class RoundRecord:
    """
    Network-wide quantities after one round. `max_violation` is the
    oracle bound of every round; `cut_round` tells whether the cuts found
    were kept.
    """
    round: int
    consensus_residual: float
    max_violation: float
    objective: float
    cuts_added: int
    per_agent_cut_counts: tuple[int, ...]
    statuses: tuple[SolveStatus, ...]
    cut_round: bool
    p_imbalance: float
    primal_movement: float
    eps: float
    wall_ms: float = 0.0
    cuts_withheld: int = 0


@dataclass(frozen=True, eq=False)
class CutStep:
    """Outcome of the cut search of one agent."""
    cuts: CutSet
    added: bool
    oracle: CutOracleResult
    count: int = 0
    exhausted: bool = False


@dataclass(eq=False)
class RunTrace:
    """Round records of a run plus its terminal state."""
    records: list[RoundRecord]
    status: RunStatus
    stabilized_round: int
    final_states: list[AgentState]
    eps_effective: float
    warnings: list[str] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.records)

    @property
    def consensus_y(self) -> np.ndarray:
        """Network average of the y copies."""
        return np.mean([s.y for s in self.final_states], axis=0)

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]


def initial_states(sip: GenericSIP) -> list[AgentState]:
    """p = 0, y and z at the projections of the origin, no cuts."""
    y0 = sip.global_box.project(np.zeros(sip.global_box.dim))
    return [
        AgentState(i, np.zeros(sip.global_box.dim), y0.copy(),
                   agent.local_box.project(np.zeros(agent.local_box.dim)),
                   CutSet(sip.uncertainty_box))
        for i, agent in enumerate(sip.agents)
    ]


def p_update(state: AgentState, neighbor_ys: Sequence[np.ndarray],
             rho: float) -> np.ndarray:
    """p + rho * sum_j (y - y_j); pure."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    total = np.zeros_like(state.y)
    for y_j in neighbor_ys:
        y_j = np.asarray(y_j, dtype=float)
        if y_j.shape != state.y.shape:
            raise DimensionMismatch(
                f"Neighbor y has shape {y_j.shape}, own y {state.y.shape}")
        total += state.y - y_j
    return state.p + rho * total


def cut_constrained_program(
    agent: AgentProblem, global_box: Box, points: np.ndarray,
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
) -> FiniteConvexProgram:
    """
    Program over global_box x agent.local_box whose constraints are the
    pieces of the agent's constraint at every cut point.
    """
    d = global_box.dim
    box = global_box.product(agent.local_box)
    if not len(points):
        return FiniteConvexProgram(objective, gradient, box, split=d)

    def constraints(x: np.ndarray) -> np.ndarray:
        return agent.constraint.pieces(x[:d], x[d:], points).ravel()

    def constraints_vjp(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        gy, gz = agent.constraint.pieces_vjp(
            x[:d], x[d:], points, weights.reshape(len(points), -1))
        return np.concatenate([gy, gz])

    return FiniteConvexProgram(objective, gradient, box, constraints,
                               constraints_vjp, split=d)


def primal_update(state: AgentState, neighbor_ys: Sequence[np.ndarray],
                  p_new: np.ndarray, rho: float, sip: GenericSIP,
                  solver_cfg: SolverConfig = SolverConfig()
                  ) -> tuple[np.ndarray, np.ndarray, SolveReport]:
    """
    Minimize phi(z) + h(y) + y.p + rho * sum_j ||y - (y_i + y_j)/2||^2
    over the boxes, subject to the agent's cut constraints.
    """
    agent = sip.agents[state.index]
    d = sip.global_box.dim
    centers = np.array([0.5 * (state.y + np.asarray(y_j, dtype=float))
                        for y_j in neighbor_ys]).reshape(-1, d)
    count = len(centers)
    center_sum = centers.sum(axis=0)
    center_sq = float(np.sum(centers * centers))

    def objective(x: np.ndarray) -> float:
        y, z = x[:d], x[d:]
        prox = count * float(y @ y) - 2.0 * float(y @ center_sum) + center_sq
        return agent.phi(z) + agent.h(y) + float(y @ p_new) + rho * prox

    def gradient(x: np.ndarray) -> np.ndarray:
        y, z = x[:d], x[d:]
        gy = (agent.h.subgradient(y) + p_new
              + 2.0 * rho * (count * y - center_sum))
        return np.concatenate([gy, agent.phi.subgradient(z)])

    prog = cut_constrained_program(agent, sip.global_box,
                                   state.cuts.as_array(), objective, gradient)
    report = solve(prog, np.concatenate([state.y, state.z]), solver_cfg)
    report.raise_for_status()
    return report.y.copy(), report.z.copy(), report


def cut_step(state: AgentState, y_new: np.ndarray, z_new: np.ndarray,
             sip: GenericSIP, eps: float,
             oracle_cfg: OracleConfig = OracleConfig(),
             round_index: int = 0) -> CutStep:
    """
    Search for the most violated uncertainty point at tolerance eps/2 and
    add it to the cut set when its constraint value exceeds eps/2. With
    max_cuts_per_round > 1, further certified candidates above eps/2 are
    added too.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    constraint = sip.agents[state.index].constraint
    bound = None
    if constraint.upper_bound is not None:
        def bound(box: Box) -> float:
            return constraint.upper_bound(y_new, z_new, box)
    exhausted = False
    try:
        result = approx_global_max(
            lambda xis: constraint.values(y_new, z_new, xis),
            sip.uncertainty_box, constraint.lipschitz(y_new, z_new),
            0.5 * eps, upper_bound=bound, node_limit=oracle_cfg.node_limit,
            keep=oracle_cfg.max_cuts_per_round, vectorized=True)
    except BudgetExhausted as e:
        result = e.result
        exhausted = True
    cuts = state.cuts
    count = 0
    if result.value > 0.5 * eps:
        for point, value in result.candidates[:oracle_cfg.max_cuts_per_round]:
            if value > 0.5 * eps:
                cuts = cuts.with_cut(point, round_index, value)
                count += 1
    return CutStep(cuts, count > 0, result, count, exhausted)


def run_round(states: Sequence[AgentState], sip: GenericSIP,
              config: AdmmConfig, round_index: int
              ) -> tuple[list[AgentState], RoundRecord, list[str]]:
    """
    One synchronous round. All agents read the y values of the previous
    round, so the agent order does not matter. Errors of individual
    agents are collected and raised together as AgentFailure.

    The oracle runs in every round so that the recorded violation is
    always certified. Cuts are only kept in the rounds selected by
    `cut_every`; in the other rounds the cuts the oracle would have added
    are counted in `cuts_withheld`.
    """
    started = time.perf_counter()
    ys = [s.y for s in states]
    eps = config.eps_for_round(sip.n, round_index)
    cutting = config.keeps_cuts(round_index)
    new_states: list[AgentState] = []
    statuses: list[SolveStatus] = []
    violations: list[float] = []
    warnings: list[str] = []
    failures: dict[int, Exception] = {}
    added = 0
    withheld = 0
    for state in states:
        i = state.index
        try:
            neighbor_ys = [ys[j] for j in sip.graph.neighbors(i)]
            p = p_update(state, neighbor_ys, config.rho)
            y, z, report = primal_update(state, neighbor_ys, p, config.rho,
                                         sip, config.solver)
            if report.status is SolveStatus.MAX_ITER:
                slack = max(0.0, max_cut_violation(i, y, z, state.cuts, sip))
                warnings.append(
                    f"round {round_index}: agent {i + 1} subproblem hit "
                    f"max_iter (cut violation {slack:.2e})")
            step = cut_step(state, y, z, sip, float(eps[i]),
                            config.oracle, round_index)
            violations.append(step.oracle.upper_bound)
            if step.exhausted:
                warnings.append(
                    f"round {round_index}: agent {i + 1} oracle node "
                    f"limit hit, gap {step.oracle.certified_gap:.2e}")
            if cutting:
                new_state = AgentState(i, p, y, z, step.cuts)
                added += step.count
            else:
                new_state = AgentState(i, p, y, z, state.cuts)
                withheld += step.count
        except DsipError as e:
            failures[i] = e
            continue
        new_states.append(new_state)
        statuses.append(report.status)
    if failures:
        raise AgentFailure(round_index, failures)

    new_ys = np.array([s.y for s in new_states])
    mean_y = new_ys.mean(axis=0)
    movement = max(
        float(np.linalg.norm(np.concatenate([new.y - old.y, new.z - old.z])))
        for new, old in zip(new_states, states)
    )
    record = RoundRecord(
        round=round_index,
        consensus_residual=float(
            np.max(np.linalg.norm(new_ys - mean_y, axis=1))),
        max_violation=float(max(violations)),
        objective=sip.objective([s.y for s in new_states],
                                [s.z for s in new_states]),
        cuts_added=added,
        per_agent_cut_counts=tuple(len(s.cuts) for s in new_states),
        statuses=tuple(statuses),
        cut_round=cutting,
        p_imbalance=float(np.max(np.abs(
            np.sum([s.p for s in new_states], axis=0)))),
        primal_movement=movement,
        eps=float(np.max(eps)),
        wall_ms=(1000.0 * (time.perf_counter() - started)
                 if config.timing else 0.0),
        cuts_withheld=withheld,
    )
    return new_states, record, warnings


def run_to_convergence(sip: GenericSIP, config: AdmmConfig,
                       on_round: Callable[[RoundRecord], None] | None = None,
                       progress: bool = False) -> RunTrace:
    """
    Run rounds until the network is in consensus, no agent has found a cut
    for `stability_rounds` rounds, and no agent moves more than
    `consensus_tol`; the stopping round must run the cut search with the
    final tolerance. Otherwise stop at `max_rounds` and flag it.
    """
    validate_graph(sip.graph)
    term = config.termination
    states = initial_states(sip)
    records: list[RoundRecord] = []
    warnings: list[str] = []
    quiet_rounds = 0
    last_cut_round = 0
    status = RunStatus.MAX_ROUNDS
    bar = tqdm(range(1, term.max_rounds + 1), desc="ADMM rounds",
               disable=not progress)
    for k in bar:
        states, record, round_warnings = run_round(states, sip, config, k)
        records.append(record)
        warnings.extend(round_warnings)
        if on_round is not None:
            on_round(record)
        bar.set_postfix(consensus=f"{record.consensus_residual:.1e}",
                        violation=f"{record.max_violation:.1e}",
                        cuts=sum(record.per_agent_cut_counts))
        final_eps = config.warmup is None or k > config.warmup.rounds
        if record.cuts_added:
            last_cut_round = k
        if record.cuts_added or record.cuts_withheld:
            quiet_rounds = 0
        elif final_eps:
            quiet_rounds += 1
        if (record.cut_round and final_eps
                and record.consensus_residual <= term.consensus_tol
                and record.primal_movement <= term.consensus_tol
                and quiet_rounds >= term.stability_rounds):
            status = RunStatus.CONVERGED
            break
    bar.close()
    return RunTrace(records, status, last_cut_round + 1, states,
                    float(np.max(config.final_eps(sip.n))), warnings)
