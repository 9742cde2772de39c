"""Shared fixtures for the dsip tests."""
from typing import Callable

import numpy as np
import pytest

from dsip.data import tiny_instance
from dsip.dro import DROInstance
from dsip.losses import loss_by_name
from dsip.sip import (
    AgentProblem,
    Box,
    ConvexFunction,
    GenericSIP,
    Graph,
    SemiInfiniteConstraint,
)


def robust_scaling_agent(local_dim: int = 1) -> AgentProblem:
    """g(y, z, xi) = xi * y - 1 over xi in [0, 2], h(y) = -y."""

    def pieces(y: np.ndarray, z: np.ndarray,
               xis: np.ndarray) -> np.ndarray:
        return (xis[:, 0] * y[0] - 1.0)[:, None]

    def pieces_vjp(y: np.ndarray, z: np.ndarray, xis: np.ndarray,
                   weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([float(xis[:, 0] @ weights[:, 0])]),
                np.zeros(local_dim))

    constraint = SemiInfiniteConstraint(
        pieces, pieces_vjp, lambda y, _z: abs(float(y[0])))
    return AgentProblem(ConvexFunction.zero(local_dim),
                        ConvexFunction.linear([-1.0]), constraint,
                        Box.cube(local_dim, 0.0, 1.0))


def robust_scaling_sip(n: int = 1) -> GenericSIP:
    """
    n agents that all minimize -y subject to xi * y <= 1 for xi in [0, 2]
    over y in [0, 5]; the optimum is y = 0.5.
    """
    agents = tuple(robust_scaling_agent() for _ in range(n))
    graph = Graph.ring(n) if n > 1 else Graph(1, frozenset())
    return GenericSIP(graph, Box([0.0], [5.0]), Box([0.0], [2.0]), agents)


@pytest.fixture
def unit_square() -> Box:
    return Box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def scaling_sip() -> GenericSIP:
    return robust_scaling_sip(1)


@pytest.fixture
def make_scaling_sip() -> Callable[[int], GenericSIP]:
    return robust_scaling_sip


@pytest.fixture
def two_point_instance() -> DROInstance:
    """Samples 0.5 and 1.0 on [0, 2], theta 0.1, intercept-only fit."""
    return DROInstance(np.array([[0.5], [1.0]]), np.array([0, 0]), 0.1,
                       loss_by_name("quadratic"), Box([0.0], [5.0]),
                       Box([0.0], [2.0]))


@pytest.fixture
def tiny() -> DROInstance:
    return tiny_instance(seed=0)
