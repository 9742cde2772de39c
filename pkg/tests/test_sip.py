"""Tests for boxes, graphs, cut sets and cut violations."""
import numpy as np
import pytest

from dsip.errors import (
    DimensionMismatch,
    Disconnected,
    InvalidBox,
    MalformedEdge,
    OutsideBox,
)
from dsip.sip import (
    NO_CONSTRAINT,
    AgentProblem,
    Box,
    ConvexFunction,
    CutSet,
    GenericSIP,
    Graph,
    SemiInfiniteConstraint,
    max_cut_violation,
    make_rng,
    midpoint_convexity_violations,
    validate_graph,
)


def test_box_rejects_inverted_bounds() -> None:
    with pytest.raises(InvalidBox):
        Box([0.0, 1.0], [1.0, 0.5])


def test_box_rejects_mismatched_bounds() -> None:
    with pytest.raises(DimensionMismatch):
        Box([0.0, 0.0], [1.0])


def test_box_geometry(unit_square: Box) -> None:
    assert unit_square.dim == 2
    assert unit_square.center.tolist() == [0.5, 0.5]
    assert unit_square.radius == pytest.approx(np.sqrt(2.0) / 2.0)
    assert unit_square.diameter == pytest.approx(np.sqrt(2.0))
    assert len(unit_square.vertices()) == 4


def test_box_is_read_only(unit_square: Box) -> None:
    with pytest.raises(ValueError):
        unit_square.lower[0] = 3.0


def test_box_split_longest_takes_first_axis_on_ties(unit_square: Box) -> None:
    left, right = unit_square.split_longest()
    assert left.upper.tolist() == [0.5, 1.0]
    assert right.lower.tolist() == [0.5, 0.0]


def test_box_split_longest_picks_widest_axis() -> None:
    left, right = Box([0.0, 0.0], [1.0, 4.0]).split_longest()
    assert left.upper.tolist() == [1.0, 2.0]
    assert right.lower.tolist() == [0.0, 2.0]


def test_box_project_and_distance(unit_square: Box) -> None:
    assert unit_square.project(np.array([2.0, -1.0])).tolist() == [1.0, 0.0]
    distances = unit_square.distance_to(np.array([[0.5, 0.5], [4.0, 5.0]]))
    assert distances.tolist() == pytest.approx([0.0, 5.0])


def test_require_inside_never_clamps(unit_square: Box) -> None:
    with pytest.raises(OutsideBox):
        unit_square.require_inside(np.array([1.5, 0.5]))
    point = unit_square.require_inside(np.array([1.0 + 1e-12, 0.5]))
    assert point[0] == 1.0 + 1e-12


def test_box_product_and_inflation() -> None:
    box = Box([0.0], [2.0]).product(Box([-1.0], [1.0]))
    assert box.lower.tolist() == [0.0, -1.0]
    wider = box.inflated(2.0)
    assert wider.lower.tolist() == [-1.0, -2.0]
    assert wider.upper.tolist() == [3.0, 2.0]


def test_box_dict_round_trip(unit_square: Box) -> None:
    again = Box.from_dict(unit_square.to_dict())
    assert np.array_equal(again.lower, unit_square.lower)
    assert np.array_equal(again.upper, unit_square.upper)


def test_ring_with_chords_matches_experiment_network() -> None:
    graph = Graph.ring(6, [[1, 4], [2, 3]])
    validate_graph(graph)
    # (2, 3) is already a ring edge.
    assert len(graph.edges) == 7
    assert graph.neighbors(0) == [1, 3, 5]
    assert graph.degree(2) == 2


def test_from_edge_list_is_one_based() -> None:
    graph = Graph.from_edge_list(3, [[1, 2], [2, 3]])
    assert graph.edges == frozenset({(0, 1), (1, 2)})
    assert graph.to_dict()["edges"] == [[1, 2], [2, 3]]


def test_duplicate_edge_is_malformed() -> None:
    with pytest.raises(MalformedEdge):
        Graph.from_edge_list(3, [[1, 2], [2, 1]])


def test_self_loop_is_malformed() -> None:
    with pytest.raises(MalformedEdge):
        validate_graph(Graph.from_edge_list(3, [[1, 1], [1, 2], [2, 3]]))


def test_out_of_range_edge_is_malformed() -> None:
    with pytest.raises(MalformedEdge):
        validate_graph(Graph.from_edge_list(2, [[1, 3]]))


def test_disconnected_graph_lists_components() -> None:
    graph = Graph.from_edge_list(4, [[1, 2], [3, 4]])
    with pytest.raises(Disconnected) as info:
        validate_graph(graph)
    assert info.value.components == [{0, 1}, {2, 3}]
    assert "{1,2}" in str(info.value)


def test_single_agent_graph_is_valid() -> None:
    validate_graph(Graph(1, frozenset()))


def test_cut_set_is_append_only() -> None:
    cuts = CutSet(Box([0.0], [2.0]))
    grown = cuts.with_cut(np.array([0.5]), 1, 0.2)
    assert len(cuts) == 0
    assert len(grown) == 1
    assert grown.extends(cuts)
    assert not cuts.extends(grown)
    assert grown.meta[0].round == 1
    assert cuts.as_array().shape == (0, 1)


def test_cut_outside_box_is_rejected() -> None:
    with pytest.raises(OutsideBox):
        CutSet(Box([0.0], [2.0])).with_cut(np.array([3.0]), 1, 0.0)


def _shifted_sip() -> GenericSIP:
    constraint = SemiInfiniteConstraint.from_pointwise(
        lambda y, z, xi: float(xi[0] - 1.0),
        lambda y, z, xi: (np.zeros(1), np.zeros(1)),
        1.0)
    agent = AgentProblem(ConvexFunction.zero(1), ConvexFunction.zero(1),
                         constraint, Box([0.0], [1.0]))
    return GenericSIP(Graph(1, frozenset()), Box([0.0], [1.0]),
                      Box([0.0], [2.0]), (agent,))


def test_max_cut_violation_over_cut_points() -> None:
    sip = _shifted_sip()
    cuts = (CutSet(sip.uncertainty_box)
            .with_cut(np.array([0.5]), 1, 0.0)
            .with_cut(np.array([2.0]), 2, 0.0))
    value = max_cut_violation(0, np.array([0.0]), np.array([0.0]), cuts,
                              sip)
    assert value == pytest.approx(1.0)


def test_max_cut_violation_without_cuts() -> None:
    sip = _shifted_sip()
    value = max_cut_violation(0, np.array([0.0]), np.array([0.0]),
                              CutSet(sip.uncertainty_box), sip)
    assert value == NO_CONSTRAINT


def test_max_cut_violation_checks_dimensions() -> None:
    sip = _shifted_sip()
    with pytest.raises(DimensionMismatch):
        max_cut_violation(0, np.array([0.0, 0.0]), np.array([0.0]),
                          CutSet(sip.uncertainty_box), sip)


def test_generic_sip_needs_one_problem_per_agent() -> None:
    sip = _shifted_sip()
    with pytest.raises(DimensionMismatch):
        GenericSIP(Graph.ring(2), sip.global_box, sip.uncertainty_box,
                   sip.agents)


def test_midpoint_convexity_check(unit_square: Box) -> None:
    convex = ConvexFunction.squared_distance([0.2, 0.4])
    assert midpoint_convexity_violations(convex, unit_square) == 0
    concave = lambda x: -float(x @ x)  # noqa: E731
    assert midpoint_convexity_violations(concave, unit_square) > 0


def test_midpoint_convexity_check_uses_the_given_stream(
        unit_square: Box) -> None:
    wavy = lambda x: float(np.sin(7.0 * x[0]) + x[1])  # noqa: E731
    first = midpoint_convexity_violations(wavy, unit_square,
                                          rng=make_rng(9))
    second = midpoint_convexity_violations(wavy, unit_square,
                                           rng=make_rng(9))
    assert first == second > 0
