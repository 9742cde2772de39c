"""Tests for the Wasserstein DRO and CVaR front-end."""
import numpy as np
import pytest
from scipy.optimize import linprog

from dsip.data import make_rng, tiny_instance
from dsip.dro import (
    BoundMethod,
    DROInstance,
    LossBounds,
    bound_loss,
    compact_bounds,
    cvar_domains,
    cvar_value,
    reformulate_cvar,
    reformulate_dro,
    sample_average,
    worst_case_cost,
)
from dsip.errors import (
    DimensionMismatch,
    InvalidBeta,
    InvalidPartition,
    InvalidRadius,
    OutsideBox,
    UnsupportedLoss,
)
from dsip.losses import Loss, loss_by_name
from dsip.reference import (
    centralized_cutting_surface,
    grid_points,
    sample_average_solution,
)
from dsip.sip import Box, Graph


def _transport_lp(instance: DROInstance, x: np.ndarray,
                  resolution: int = 201) -> float:
    """Worst-case expectation over distributions on a grid of Xi."""
    grid = grid_points(instance.uncertainty_box, resolution)
    values = instance.loss.value(x, grid)
    L, K = instance.L, len(grid)
    cost = np.linalg.norm(instance.samples[:, None, :] - grid[None],
                          axis=2)
    # Variables pi[l, j]: mass moved from sample l to grid point j.
    a_eq = np.kron(np.eye(L), np.ones(K))
    found = linprog(-np.tile(values, L) / L,
                    A_ub=[cost.ravel() / L], b_ub=[instance.theta],
                    A_eq=a_eq, b_eq=np.ones(L), bounds=(0.0, None))
    return -found.fun


def test_compact_bounds_example() -> None:
    b_s, interval = compact_bounds(LossBounds(0.0, 1.0), 0.5, 2)
    assert b_s.lower.tolist() == [0.0]
    assert b_s.upper.tolist() == [2.0]
    assert interval.lower.tolist() == [0.0]
    assert interval.upper.tolist() == [2.0]


def test_compact_bounds_need_positive_radius() -> None:
    with pytest.raises(InvalidRadius):
        compact_bounds(LossBounds(0.0, 1.0), 0.0, 2)


def test_cvar_domains() -> None:
    t_box, s_box, v_box = cvar_domains(LossBounds(1.0, 3.0), 0.5, 4)
    assert (t_box.lower[0], t_box.upper[0]) == (1.0, 3.0)
    assert s_box.upper[0] == 4.0
    assert v_box.upper[0] == 8.0


def test_instance_validation(two_point_instance: DROInstance) -> None:
    data = dict(samples=two_point_instance.samples,
                owners=np.array([0, 0]), theta=0.1,
                loss=two_point_instance.loss,
                decision_box=two_point_instance.decision_box,
                uncertainty_box=two_point_instance.uncertainty_box)
    with pytest.raises(InvalidRadius):
        DROInstance(**{**data, "theta": 0.0})
    with pytest.raises(InvalidPartition):
        DROInstance(**{**data, "owners": np.array([0, 0, 1])})
    with pytest.raises(InvalidPartition):
        DROInstance(**{**data, "graph": Graph.ring(2)})
    with pytest.raises(OutsideBox):
        DROInstance(**{**data, "samples": np.array([[0.5], [3.0]])})
    with pytest.raises(DimensionMismatch):
        DROInstance(**{**data, "samples": np.array([[0.5, 1.0]] * 2)})


def test_instance_dict_round_trip(tiny: DROInstance) -> None:
    again = DROInstance.from_dict(tiny.to_dict())
    assert np.array_equal(again.samples, tiny.samples)
    assert np.array_equal(again.owners, tiny.owners)
    assert again.graph == tiny.graph
    assert again.theta == tiny.theta


def test_custom_loss_cannot_be_saved(tiny: DROInstance) -> None:
    custom = Loss.custom("c", tiny.loss.value_fn, tiny.loss.grad_fn)
    instance = DROInstance(tiny.samples, tiny.owners, tiny.theta, custom,
                           tiny.decision_box, tiny.uncertainty_box)
    with pytest.raises(UnsupportedLoss):
        instance.to_dict()
    with pytest.raises(UnsupportedLoss):
        bound_loss(instance)


def test_bound_methods(tiny: DROInstance) -> None:
    analytic = bound_loss(tiny)
    interval = bound_loss(tiny, BoundMethod.INTERVAL)
    sampled = bound_loss(tiny, BoundMethod.SAMPLED)
    again = bound_loss(tiny, BoundMethod.SAMPLED, make_rng(0))
    assert (sampled.f_lo, sampled.f_hi) == (again.f_lo, again.f_hi)
    assert (analytic.f_lo, analytic.f_hi) == (interval.f_lo, interval.f_hi)
    assert sampled.heuristic and not analytic.heuristic
    assert analytic.f_lo == 0.0
    rng = make_rng(0)
    for x in tiny.decision_box.sample(rng, 20):
        values = tiny.loss.value(x, tiny.uncertainty_box.sample(rng, 50))
        assert values.max() <= analytic.f_hi


def test_reformulated_objective_reassembles(tiny: DROInstance) -> None:
    sip = reformulate_dro(tiny)
    assert sip.n == 2
    assert sip.global_box.dim == 2
    assert [box.dim for box in sip.local_boxes] == [2, 1]
    y = np.array([1.0, 3.0])
    total_h = sum(agent.h(y) for agent in sip.agents)
    assert total_h == pytest.approx(tiny.L * tiny.theta * 3.0)
    zs = [np.array([0.2, 0.3]), np.array([0.4])]
    assert sum(a.phi(z) for a, z in zip(sip.agents, zs)) == pytest.approx(
        0.9)


def test_constraint_at_own_sample_forces_v_above_loss(
        tiny: DROInstance) -> None:
    sip = reformulate_dro(tiny)
    x = np.array([2.0])
    y = np.array([2.0, 5.0])
    for i, agent in enumerate(sip.agents):
        owned = tiny.owned_samples(i)
        z = np.zeros(len(owned))
        for k, sample in enumerate(owned):
            g = agent.constraint.value(y, z, sample)
            assert g >= tiny.loss.value(x, sample[None])[0] - z[k] - 1e-12


def test_single_sample_reduction() -> None:
    instance = DROInstance(np.array([[1.0]]), np.array([0]), 0.2,
                           loss_by_name("absolute"), Box([0.0], [2.0]),
                           Box([0.0], [2.0]))
    sip = reformulate_dro(instance)
    agent = sip.agents[0]
    y, z = np.array([0.5, 1.0]), np.array([0.7])
    assert sip.agent_objective(0, y, z) == pytest.approx(0.7 + 0.2)
    # |xi - 0.5| - 0.7 - |xi - 1| is largest for xi >= 1.
    assert agent.constraint.value(y, z, np.array([2.0])) == pytest.approx(
        -0.2)


def test_worst_case_cost_of_two_point_example(
        two_point_instance: DROInstance) -> None:
    x = np.array([0.5])
    value = worst_case_cost(x, two_point_instance, 1e-6)
    assert value == pytest.approx(0.325, abs=1e-3)
    assert value == pytest.approx(_transport_lp(two_point_instance, x),
                                  abs=1e-3)


@pytest.mark.parametrize("x", [0.0, 1.3, 2.5])
def test_worst_case_cost_matches_transport_lp(tiny: DROInstance,
                                              x: float) -> None:
    point = np.array([x])
    value = worst_case_cost(point, tiny, 1e-6)
    # The grid LP sees fewer destinations, so it can only be lower.
    lp = _transport_lp(tiny, point, 401)
    assert value >= lp - 1e-6
    assert value == pytest.approx(lp, abs=1e-2)


def test_worst_case_cost_grows_with_radius(tiny: DROInstance) -> None:
    x = np.array([1.0])
    values = [worst_case_cost(x, tiny.with_theta(theta), 1e-6)
              for theta in (1e-4, 1e-3, 1e-2, 1e-1)]
    for before, after in zip(values, values[1:]):
        assert after >= before - 1e-6


def test_tiny_radius_gives_sample_average(tiny: DROInstance) -> None:
    x = np.array([1.2])
    instance = tiny.with_theta(1e-9)
    assert worst_case_cost(x, instance, 1e-8) == pytest.approx(
        sample_average(x, instance), abs=1e-6)


def test_large_radius_reaches_the_support_maximum() -> None:
    instance = DROInstance(np.array([[0.5], [1.0]]), np.array([0, 0]),
                           100.0, loss_by_name("absolute"),
                           Box([0.0], [5.0]), Box([0.0], [2.0]))
    value = worst_case_cost(np.array([0.0]), instance, 1e-6)
    assert value == pytest.approx(2.0, abs=1e-4)


def test_x_outside_decision_box(tiny: DROInstance) -> None:
    with pytest.raises(OutsideBox):
        worst_case_cost(np.array([7.0]), tiny)


def test_cvar_at_level_one_is_the_worst_case_cost(
        tiny: DROInstance) -> None:
    x = np.array([0.8])
    tol = 1e-5
    assert cvar_value(x, tiny, 1.0, tol) == pytest.approx(
        worst_case_cost(x, tiny, tol), abs=2 * tol)


@pytest.mark.parametrize("beta", [0.2, 0.5, 0.9])
def test_cvar_dominates_the_worst_case_cost(tiny: DROInstance,
                                            beta: float) -> None:
    x = np.array([1.7])
    assert cvar_value(x, tiny, beta, 1e-5) >= (
        worst_case_cost(x, tiny, 1e-5) - 1e-6)


def test_cvar_with_tiny_radius_is_empirical_cvar() -> None:
    samples = np.array([[0.1], [0.4], [1.1], [1.9]])
    instance = DROInstance(samples, np.array([0, 0, 1, 1]), 1e-9,
                           loss_by_name("quadratic"), Box([0.0], [5.0]),
                           Box([0.0], [2.0]))
    x = np.array([0.5])
    losses = np.sort(instance.loss.value(x, samples))
    # Level 0.5 of four equally likely losses: mean of the top two.
    expected = float(losses[-2:].mean())
    assert cvar_value(x, instance, 0.5, 1e-8) == pytest.approx(
        expected, abs=1e-6)


def test_cvar_of_a_constant_loss() -> None:
    constant = Loss.custom(
        "constant", lambda x, xis: np.full(len(xis), 3.0),
        lambda x, xis: np.zeros((len(xis), x.size)))
    instance = DROInstance(np.array([[0.5], [1.0]]), np.array([0, 0]), 0.1,
                           constant, Box([0.0], [5.0]), Box([0.0], [2.0]))
    x = np.array([1.0])
    assert worst_case_cost(x, instance) == pytest.approx(3.0)
    assert cvar_value(x, instance, 0.3) == pytest.approx(3.0)


def test_cvar_level_is_validated(tiny: DROInstance) -> None:
    with pytest.raises(InvalidBeta):
        cvar_value(np.array([1.0]), tiny, 0.0)
    with pytest.raises(InvalidBeta):
        reformulate_cvar(tiny, 1.5)


def test_cvar_reformulation_objective(tiny: DROInstance) -> None:
    beta = 0.5
    sip = reformulate_cvar(tiny, beta)
    assert sip.global_box.dim == 3
    y = np.array([1.0, 2.0, 3.0])
    total_h = sum(agent.h(y) for agent in sip.agents)
    assert total_h == pytest.approx(
        tiny.L * (2.0 + tiny.theta * 3.0 / beta))
    z = np.array([0.4, 0.6])
    assert sip.agents[0].phi(z) == pytest.approx(1.0 / beta)


def test_cvar_constraint_uses_the_positive_part(tiny: DROInstance) -> None:
    sip = reformulate_cvar(tiny, 0.5)
    agent = sip.agents[1]
    sample = tiny.owned_samples(1)[0]
    y = np.array([1.0, 0.0, 0.0])
    z = np.array([0.0])
    f = tiny.loss.value(np.array([1.0]), sample[None])[0]
    assert agent.constraint.value(y, z, sample) == pytest.approx(f)
    y_high_t = np.array([1.0, bound_loss(tiny).f_hi, 0.0])
    assert agent.constraint.value(y_high_t, z, sample) == pytest.approx(0.0)


def test_reference_value_matches_worst_case_cost(tiny: DROInstance) -> None:
    eps = 0.01
    sip = reformulate_dro(tiny.merged())
    ref = centralized_cutting_surface(sip, eps)
    x = ref.y[:-1]
    gap = worst_case_cost(x, tiny, 1e-5) - ref.value / tiny.L
    assert -1e-3 <= gap <= eps + 1e-3


def test_optimum_stays_in_the_compact_domains(tiny: DROInstance) -> None:
    eps = 0.01
    b_s, interval = compact_bounds(bound_loss(tiny), tiny.theta, tiny.L)
    sip = reformulate_dro(tiny.merged(), domain_inflation=10.0)
    ref = centralized_cutting_surface(sip, eps)
    s, v = ref.y[-1], ref.z
    assert s <= b_s.upper[0] + 1e-3
    assert np.all(v >= interval.lower[0] - eps - 1e-3)
    assert np.all(v <= interval.upper[0] + 1e-3)


@pytest.mark.parametrize("seed", range(3))
def test_cvar_reformulation_at_level_one_matches_dro(seed: int) -> None:
    merged = tiny_instance(seed=seed).merged()
    dro = centralized_cutting_surface(reformulate_dro(merged), 1e-5)
    cvar = centralized_cutting_surface(reformulate_cvar(merged, 1.0), 1e-5)
    assert cvar.value == pytest.approx(dro.value, abs=1e-4)


def test_cvar_dominates_at_random_decisions(tiny: DROInstance) -> None:
    rng = make_rng(11)
    for x in tiny.decision_box.sample(rng, 20):
        assert cvar_value(x, tiny, 0.9, 1e-5) >= (
            worst_case_cost(x, tiny, 1e-5) - 1e-6)


def test_vanishing_radius_recovers_the_sample_average_fit(
        tiny: DROInstance) -> None:
    merged = tiny.with_theta(1e-9).merged()
    ref = centralized_cutting_surface(reformulate_dro(merged), 1e-3)
    erm = sample_average_solution(tiny)
    assert np.linalg.norm(ref.y[:-1] - erm.x) <= 1e-2
