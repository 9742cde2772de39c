"""Tests for the distributed cutting-surface ADMM."""
from typing import Callable

import numpy as np
import pytest

from dsip.admm import (
    AdmmConfig,
    AgentState,
    RunStatus,
    TerminationConfig,
    WarmupConfig,
    cut_step,
    initial_states,
    p_update,
    primal_update,
    run_round,
    run_to_convergence,
)
from dsip.dro import DROInstance, reformulate_dro
from dsip.errors import AgentFailure, DimensionMismatch, Disconnected
from dsip.oracle import OracleConfig, approx_global_max
from dsip.sip import (
    AgentProblem,
    Box,
    ConvexFunction,
    CutSet,
    GenericSIP,
    Graph,
    SemiInfiniteConstraint,
    make_rng,
)


def _state(y: float, p: float = 0.0) -> AgentState:
    return AgentState(0, np.array([p]), np.array([y]), np.array([0.0]),
                      CutSet(Box([0.0], [2.0])))


def _free_sip(h: ConvexFunction, n: int = 1) -> GenericSIP:
    """Agents with no binding constraint: g = -1 everywhere."""
    constraint = SemiInfiniteConstraint.from_pointwise(
        lambda y, z, xi: -1.0, lambda y, z, xi: (np.zeros(1), np.zeros(1)),
        0.0)
    agent = AgentProblem(ConvexFunction.zero(1), h, constraint,
                         Box([0.0], [1.0]))
    graph = Graph.ring(n) if n > 1 else Graph(1, frozenset())
    return GenericSIP(graph, Box([0.0], [2.0]), Box([0.0], [2.0]),
                      (agent,) * n)


def test_p_update_examples() -> None:
    assert p_update(_state(1.0), [np.array([0.0])], 0.5).tolist() == [0.5]
    assert p_update(_state(1.0, p=0.2), [np.array([1.0])],
                    3.0).tolist() == [0.2]
    assert p_update(_state(2.0), [np.array([1.0]), np.array([0.0])],
                    1.0).tolist() == [3.0]


def test_p_update_checks_arguments() -> None:
    with pytest.raises(ValueError):
        p_update(_state(1.0), [np.array([0.0])], 0.0)
    with pytest.raises(DimensionMismatch):
        p_update(_state(1.0), [np.array([0.0, 1.0])], 1.0)


def test_p_updates_sum_to_zero_on_a_graph() -> None:
    graph = Graph.ring(5, [[1, 3]])
    rng = make_rng(0)
    ys = rng.normal(size=(5, 2))
    total = np.zeros(2)
    for i in range(5):
        state = AgentState(i, np.zeros(2), ys[i], np.zeros(1),
                           CutSet(Box.cube(1, 0.0, 1.0)))
        total += p_update(state, [ys[j] for j in graph.neighbors(i)], 0.7)
    assert np.max(np.abs(total)) < 1e-12


def test_primal_update_one_dimensional_example() -> None:
    sip = _free_sip(ConvexFunction.linear([1.0]))
    y, z, report = primal_update(_state(2.0), [np.array([0.0])],
                                 np.zeros(1), 1.0, sip)
    # argmin y + (y - 1)^2 on [0, 2]
    assert y[0] == pytest.approx(0.5, abs=1e-5)
    assert z[0] == pytest.approx(0.0, abs=1e-9)
    assert report.max_constraint_violation == 0.0


def test_primal_update_is_unique_with_two_neighbors() -> None:
    sip = _free_sip(ConvexFunction.zero(1))
    neighbors = [np.array([0.0]), np.array([2.0])]
    first, _, _ = primal_update(_state(1.0), neighbors, np.zeros(1), 1.0,
                                sip)
    second, _, _ = primal_update(_state(1.0), neighbors, np.zeros(1), 1.0,
                                 sip)
    # Midpoints 0.5 and 1.5 balance at 1.
    assert first[0] == pytest.approx(1.0, abs=1e-6)
    assert first[0] == second[0]


def test_cut_step_adds_the_violating_point(
        scaling_sip: GenericSIP) -> None:
    state = initial_states(scaling_sip)[0]
    step = cut_step(state, np.array([1.0]), np.array([0.0]), scaling_sip,
                    0.01, round_index=1)
    # xi * 1 - 1 is largest at xi = 2.
    assert step.added
    assert step.count == 1
    assert step.cuts.points[0][0] == pytest.approx(2.0, abs=0.01)
    assert step.oracle.value == pytest.approx(1.0, abs=0.01)
    assert len(state.cuts) == 0


def test_cut_step_keeps_cuts_when_feasible(scaling_sip: GenericSIP) -> None:
    state = initial_states(scaling_sip)[0]
    step = cut_step(state, np.array([0.5]), np.array([0.0]), scaling_sip,
                    0.01, round_index=1)
    assert not step.added
    assert step.cuts is state.cuts
    assert step.oracle.upper_bound <= 0.005 + 1e-12


def test_cut_step_adds_several_cuts() -> None:
    constraint = SemiInfiniteConstraint(
        lambda y, z, xis: np.abs(xis - 1.0) - 0.1,
        lambda y, z, xis, w: (np.zeros(1), np.zeros(1)),
        lambda y, z: 1.0)
    agent = AgentProblem(ConvexFunction.zero(1), ConvexFunction.zero(1),
                         constraint, Box([0.0], [1.0]))
    sip = GenericSIP(Graph(1, frozenset()), Box([0.0], [1.0]),
                     Box([0.0], [2.0]), (agent,))
    state = initial_states(sip)[0]
    step = cut_step(state, np.zeros(1), np.zeros(1), sip, 0.01,
                    OracleConfig(max_cuts_per_round=2), round_index=1)
    assert step.count == 2
    assert len(step.cuts) == 2


def test_initial_states_project_the_origin() -> None:
    sip = GenericSIP(Graph.ring(2), Box([1.0], [2.0]), Box([0.0], [1.0]),
                     (_free_sip(ConvexFunction.zero(1)).agents[0],) * 2)
    states = initial_states(sip)
    assert [s.y.tolist() for s in states] == [[1.0], [1.0]]
    assert [s.index for s in states] == [0, 1]
    assert all(len(s.cuts) == 0 for s in states)


def test_round_keeps_dual_sum_at_zero(
        make_scaling_sip: Callable[[int], GenericSIP]) -> None:
    sip = make_scaling_sip(4)
    config = AdmmConfig(rho=0.5, eps=0.01)
    states = initial_states(sip)
    for k in range(1, 6):
        states, record, _ = run_round(states, sip, config, k)
        assert record.p_imbalance < 1e-9
        assert record.round == k
        assert record.cut_round
    assert all(len(s.cuts) >= 1 for s in states)


def test_round_records_agent_failures(scaling_sip: GenericSIP) -> None:
    broken = SemiInfiniteConstraint.from_pointwise(
        lambda y, z, xi: float("nan"),
        lambda y, z, xi: (np.zeros(1), np.zeros(1)), 1.0)
    agent = AgentProblem(ConvexFunction.zero(1),
                         ConvexFunction.linear([-1.0]), broken,
                         Box([0.0], [1.0]))
    sip = GenericSIP(Graph.ring(2), scaling_sip.global_box,
                     scaling_sip.uncertainty_box,
                     (scaling_sip.agents[0], agent))
    with pytest.raises(AgentFailure) as info:
        run_round(initial_states(sip), sip, AdmmConfig(rho=1.0), 1)
    assert list(info.value.failures) == [1]


def test_cut_every_withholds_cuts(scaling_sip: GenericSIP) -> None:
    config = AdmmConfig(rho=1.0, cut_every=3)
    assert [config.keeps_cuts(k) for k in range(1, 8)] == [
        True, False, False, True, False, False, True]
    states = initial_states(scaling_sip)
    states, record, _ = run_round(states, scaling_sip, config, 2)
    assert not record.cut_round
    assert record.cuts_added == 0
    assert record.cuts_withheld == 1
    assert all(len(s.cuts) == 0 for s in states)


def test_rounds_without_cuts_still_certify_the_violation(
        tiny: DROInstance) -> None:
    sip = reformulate_dro(tiny)
    config = AdmmConfig(rho=1.0, cut_every=3)
    states = initial_states(sip)
    for k in (1, 2):
        states, record, _ = run_round(states, sip, config, k)
        worst = max(
            approx_global_max(
                lambda xis, s=s: sip.agents[s.index].constraint.values(
                    s.y, s.z, xis),
                sip.uncertainty_box,
                sip.agents[s.index].constraint.lipschitz(s.y, s.z),
                1e-4, vectorized=True).value
            for s in states)
        assert record.max_violation >= worst - 1e-4


def test_warmup_tolerance_schedule() -> None:
    config = AdmmConfig(eps=(0.01, 0.02), warmup=WarmupConfig(0.1, 3))
    assert config.eps_for_round(2, 3).tolist() == [0.1, 0.1]
    assert config.eps_for_round(2, 4).tolist() == [0.01, 0.02]
    assert config.final_eps(2).tolist() == [0.01, 0.02]
    with pytest.raises(DimensionMismatch):
        config.final_eps(3)


def test_config_is_validated() -> None:
    with pytest.raises(ValueError):
        AdmmConfig(rho=0.0)
    with pytest.raises(ValueError):
        AdmmConfig(eps=0.0)
    with pytest.raises(ValueError):
        AdmmConfig(cut_every=0)


def test_single_agent_finds_the_robust_optimum(
        scaling_sip: GenericSIP) -> None:
    config = AdmmConfig(rho=1.0, eps=0.01, termination=TerminationConfig(
        stability_rounds=5, max_rounds=500))
    trace = run_to_convergence(scaling_sip, config)
    assert trace.status is RunStatus.CONVERGED
    # max over xi of xi * y - 1 <= eps allows y up to (1 + eps) / 2.
    assert trace.consensus_y[0] == pytest.approx(0.5, abs=0.01)
    assert trace.final.max_violation <= 0.01
    assert trace.stabilized_round <= trace.rounds


def test_network_reaches_consensus(
        make_scaling_sip: Callable[[int], GenericSIP]) -> None:
    sip = make_scaling_sip(3)
    config = AdmmConfig(rho=1.0, eps=0.01, termination=TerminationConfig(
        consensus_tol=1e-3, stability_rounds=10, max_rounds=2000))
    seen = []
    trace = run_to_convergence(sip, config, on_round=seen.append)
    assert trace.status is RunStatus.CONVERGED
    assert len(seen) == trace.rounds
    assert trace.final.consensus_residual <= 1e-3
    assert trace.final.max_violation <= 0.01
    assert trace.consensus_y[0] == pytest.approx(0.5, abs=0.02)
    counts = [r.per_agent_cut_counts for r in trace.records]
    for before, after in zip(counts, counts[1:]):
        assert all(a >= b for a, b in zip(after, before))


def test_max_rounds_is_flagged(
        make_scaling_sip: Callable[[int], GenericSIP]) -> None:
    config = AdmmConfig(rho=1.0, termination=TerminationConfig(
        max_rounds=3))
    trace = run_to_convergence(make_scaling_sip(3), config)
    assert trace.status is RunStatus.MAX_ROUNDS
    assert trace.rounds == 3


def test_disconnected_network_is_rejected(
        scaling_sip: GenericSIP) -> None:
    sip = GenericSIP(Graph(2, frozenset()), scaling_sip.global_box,
                     scaling_sip.uncertainty_box, scaling_sip.agents * 2)
    with pytest.raises(Disconnected):
        run_to_convergence(sip, AdmmConfig())


def test_traces_are_deterministic(
        make_scaling_sip: Callable[[int], GenericSIP]) -> None:
    config = AdmmConfig(rho=1.0, termination=TerminationConfig(
        max_rounds=20))
    first = run_to_convergence(make_scaling_sip(3), config)
    second = run_to_convergence(make_scaling_sip(3), config)
    assert first.records == second.records
    assert all(r.wall_ms == 0.0 for r in first.records)
