"""
Centralized baselines used to check the distributed solver: the plain
cutting-surface method, a brute-force solver over a discretized
uncertainty set, and the sample-average (ERM) fit.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from dsip.admm import AgentState, cut_constrained_program, cut_step
from dsip.dro import DROInstance
from dsip.errors import Infeasible, TooLarge
from dsip.oracle import OracleConfig
from dsip.sip import (
    AgentProblem,
    Box,
    ConvexFunction,
    CutSet,
    GenericSIP,
    Graph,
    SemiInfiniteConstraint,
)
from dsip.subproblem import (
    FiniteConvexProgram,
    SolverConfig,
    SolveReport,
    SolveStatus,
    solve,
)

DEFAULT_XI_RESOLUTION = 401
DEFAULT_DECISION_RESOLUTION = 201
MAX_GLOBAL_DIM = 4
MAX_LOCAL_DIM = 4
MAX_XI_DIM = 2
# The grid method enumerates decisions only up to this many dimensions.
MAX_GRID_DECISION_DIM = 2


@dataclass(frozen=True, eq=False)
class CentralizedResult:
    y: np.ndarray
    z: np.ndarray
    value: float
    cuts: CutSet
    iterations: int
    certified_violation: float
    statuses: tuple[SolveStatus, ...]


@dataclass(frozen=True, eq=False)
class BruteForceResult:
    """Optimal value of the discretized program and its grid error bound."""
    value: float
    grid_error: float
    y: np.ndarray
    z: np.ndarray
    method: str


@dataclass(frozen=True, eq=False)
class ErmResult:
    x: np.ndarray
    value: float
    report: SolveReport


def merge_agents(sip: GenericSIP) -> GenericSIP:
    """
    Single-agent form of a GenericSIP: the local variables are stacked,
    the objectives summed and the constraint pieces concatenated.
    """
    if sip.n == 1:
        return sip
    agents = sip.agents
    dims = [a.local_box.dim for a in agents]
    offsets = np.cumsum([0] + dims)
    blocks = [slice(int(a), int(b)) for a, b in zip(offsets, offsets[1:])]
    local_box = Box(np.concatenate([a.local_box.lower for a in agents]),
                    np.concatenate([a.local_box.upper for a in agents]))

    phi = ConvexFunction(
        lambda z: sum(a.phi(z[b]) for a, b in zip(agents, blocks)),
        lambda z: np.concatenate(
            [a.phi.subgradient(z[b]) for a, b in zip(agents, blocks)]))
    h = ConvexFunction(
        lambda y: sum(a.h(y) for a in agents),
        lambda y: np.sum([a.h.subgradient(y) for a in agents], axis=0))

    def pieces(y: np.ndarray, z: np.ndarray,
               xis: np.ndarray) -> np.ndarray:
        return np.hstack([a.constraint.pieces(y, z[b], xis)
                          for a, b in zip(agents, blocks)])

    def pieces_vjp(y: np.ndarray, z: np.ndarray, xis: np.ndarray,
                   weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gy = np.zeros_like(y)
        gz = np.zeros_like(z)
        start = 0
        for a, b in zip(agents, blocks):
            width = a.constraint.pieces(y, z[b], xis[:1]).shape[1]
            part_y, part_z = a.constraint.pieces_vjp(
                y, z[b], xis, weights[:, start:start + width])
            gy += part_y
            gz[b] += part_z
            start += width
        return gy, gz

    def lipschitz(y: np.ndarray, z: np.ndarray) -> float:
        return max(a.constraint.lipschitz(y, z[b])
                   for a, b in zip(agents, blocks))

    upper_bound = None
    if all(a.constraint.upper_bound is not None for a in agents):
        def upper_bound(y: np.ndarray, z: np.ndarray, box: Box) -> float:
            return max(a.constraint.upper_bound(y, z[b], box)
                       for a, b in zip(agents, blocks))

    merged = AgentProblem(
        phi, h,
        SemiInfiniteConstraint(pieces, pieces_vjp, lipschitz, upper_bound),
        local_box)
    return GenericSIP(Graph(1, frozenset()), sip.global_box,
                      sip.uncertainty_box, (merged,))


def _plain_program(agent: AgentProblem, global_box: Box,
                   points: np.ndarray) -> FiniteConvexProgram:
    d = global_box.dim

    def objective(x: np.ndarray) -> float:
        return agent.phi(x[d:]) + agent.h(x[:d])

    def gradient(x: np.ndarray) -> np.ndarray:
        return np.concatenate([agent.h.subgradient(x[:d]),
                               agent.phi.subgradient(x[d:])])

    return cut_constrained_program(agent, global_box, points, objective,
                                   gradient)


def centralized_cutting_surface(
    sip: GenericSIP, eps: float,
    solver_cfg: SolverConfig = SolverConfig(),
    oracle_cfg: OracleConfig = OracleConfig(),
    max_iterations: int = 1000,
) -> CentralizedResult:
    """
    Start without cuts, solve the cut-constrained program, search for an
    eps/2-optimal worst-case point and add it while its value exceeds
    eps/2. Multi-agent programs are merged into one agent first.
    """
    sip = merge_agents(sip)
    agent = sip.agents[0]
    d = sip.global_box.dim
    state = AgentState(
        0, np.zeros(d), sip.global_box.project(np.zeros(d)),
        agent.local_box.project(np.zeros(agent.local_box.dim)),
        CutSet(sip.uncertainty_box))
    statuses = []
    for iteration in range(1, max_iterations + 1):
        prog = _plain_program(agent, sip.global_box, state.cuts.as_array())
        report = solve(prog, np.concatenate([state.y, state.z]), solver_cfg)
        report.raise_for_status()
        statuses.append(report.status)
        y, z = report.y.copy(), report.z.copy()
        step = cut_step(state, y, z, sip, eps, oracle_cfg, iteration)
        state = AgentState(0, state.p, y, z, step.cuts)
        if not step.added:
            break
    return CentralizedResult(
        state.y, state.z, sip.agent_objective(0, state.y, state.z),
        state.cuts, iteration, step.oracle.upper_bound, tuple(statuses))


def grid_points(box: Box, resolution: int) -> np.ndarray:
    """Regular grid of the box with `resolution` points per axis."""
    axes = [np.linspace(lo, hi, resolution if hi > lo else 1)
            for lo, hi in zip(box.lower, box.upper)]
    return np.array(list(itertools.product(*axes)), dtype=float)


def _half_cell(box: Box, resolution: int) -> float:
    return 0.5 * float(np.linalg.norm(box.widths / max(resolution - 1, 1)))


def brute_force_sip(
    sip: GenericSIP,
    xi_grid_resolution: int = DEFAULT_XI_RESOLUTION,
    decision_grid_resolution: int = DEFAULT_DECISION_RESOLUTION,
    method: str = "auto",
    solver_cfg: SolverConfig = SolverConfig(),
) -> BruteForceResult:
    """
    Replace the uncertainty box by a grid, then either enumerate a grid of
    decisions ("grid") or solve with every grid point as a cut
    ("solver"). The discretized program relaxes the original one; the
    reported grid error bounds how much the constraint can be violated
    between grid points.
    """
    sip = merge_agents(sip)
    agent = sip.agents[0]
    d, k = sip.global_box.dim, agent.local_box.dim
    if (d > MAX_GLOBAL_DIM or k > MAX_LOCAL_DIM
            or sip.uncertainty_box.dim > MAX_XI_DIM):
        raise TooLarge(
            f"Brute force handles dim(y) <= {MAX_GLOBAL_DIM}, dim(z) <= "
            f"{MAX_LOCAL_DIM} and dim(xi) <= {MAX_XI_DIM}; got {d}, {k} and "
            f"{sip.uncertainty_box.dim}")
    if method == "auto":
        method = "grid" if d + k <= MAX_GRID_DECISION_DIM else "solver"
    xis = grid_points(sip.uncertainty_box, xi_grid_resolution)
    xi_cell = _half_cell(sip.uncertainty_box, xi_grid_resolution)
    if method == "grid":
        box = sip.global_box.product(agent.local_box)
        if d + k > MAX_GRID_DECISION_DIM:
            raise TooLarge(f"Grid method handles up to "
                           f"{MAX_GRID_DECISION_DIM} decision dimensions")
        best_value, best = np.inf, None
        least_violation = np.inf
        for x in grid_points(box, decision_grid_resolution):
            y, z = x[:d], x[d:]
            violation = float(np.max(agent.constraint.values(y, z, xis)))
            if violation > 0.0:
                least_violation = min(least_violation, violation)
                continue
            value = sip.agent_objective(0, y, z)
            if value < best_value:
                best_value, best = value, x
        if best is None:
            raise Infeasible(least_violation, source=(
                f"decision grid of {decision_grid_resolution} points per "
                "axis"))
        y, z = best[:d], best[d:]
        slope = float(np.linalg.norm(np.concatenate(
            [agent.h.subgradient(y), agent.phi.subgradient(z)])))
        error = (agent.constraint.lipschitz(y, z) * xi_cell
                 + slope * _half_cell(box, decision_grid_resolution))
        return BruteForceResult(float(best_value), error, y, z, method)
    if method != "solver":
        raise ValueError(f"Unknown brute-force method '{method}'")
    prog = _plain_program(agent, sip.global_box, xis)
    start = np.concatenate([sip.global_box.project(np.zeros(d)),
                            agent.local_box.project(np.zeros(k))])
    report = solve(prog, start, solver_cfg)
    report.raise_for_status()
    y, z = report.y, report.z
    error = agent.constraint.lipschitz(y, z) * xi_cell
    return BruteForceResult(report.objective_value, error, y.copy(),
                            z.copy(), method)


def sample_average_solution(instance: DROInstance, tol: float = 1e-8,
                            solver_cfg: SolverConfig | None = None
                            ) -> ErmResult:
    """Minimize the mean loss over the samples on the decision box."""
    loss = instance.loss
    samples = instance.samples
    box = instance.decision_box
    if solver_cfg is None:
        solver_cfg = SolverConfig(feas_tol=tol, opt_tol=tol)

    def objective(x: np.ndarray) -> float:
        return float(np.mean(loss.value(x, samples)))

    def gradient(x: np.ndarray) -> np.ndarray:
        return loss.grad_x(x, samples).mean(axis=0)

    prog = FiniteConvexProgram(objective, gradient, box)
    report = solve(prog, box.project(np.zeros(box.dim)), solver_cfg)
    return ErmResult(report.point.copy(), report.objective_value, report)
