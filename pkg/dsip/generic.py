"""
Declarative robust-linear SIPs, for running the distributed solver without
the DRO wrapping. Agent i has

    g_i(y, z, xi) = (A_i xi + a_i) . y + c_i . z - b_i
    h_i(y)        = w_i ||y - center_i||^2 + l_i . y
    phi_i(z)      = q_i . z
"""
from dataclasses import dataclass

import numpy as np

from dsip.errors import DimensionMismatch
from dsip.sip import (
    AgentProblem,
    Box,
    ConvexFunction,
    GenericSIP,
    Graph,
    SemiInfiniteConstraint,
)


@dataclass(frozen=True, eq=False)
class RobustLinearAgent:
    """Data of one agent; matrix A has shape (dim y, dim xi)."""
    A: np.ndarray
    a: np.ndarray
    c: np.ndarray
    b: float
    q: np.ndarray
    w: float
    center: np.ndarray
    linear: np.ndarray
    local_box: Box

    @classmethod
    def from_dict(cls, data: dict, d: int, m: int) -> "RobustLinearAgent":
        local_box = Box.from_dict(data["local_box"])
        k = local_box.dim
        agent = cls(
            A=np.asarray(data.get("A", np.zeros((d, m))),
                         dtype=float).reshape(d, m),
            a=np.asarray(data.get("a", np.zeros(d)), dtype=float),
            c=np.asarray(data.get("c", np.zeros(k)), dtype=float),
            b=float(data.get("b", 0.0)),
            q=np.asarray(data.get("q", np.zeros(k)), dtype=float),
            w=float(data.get("w", 0.0)),
            center=np.asarray(data.get("center", np.zeros(d)), dtype=float),
            linear=np.asarray(data.get("l", np.zeros(d)), dtype=float),
            local_box=local_box,
        )
        for name, vec, size in (("a", agent.a, d), ("c", agent.c, k),
                                ("q", agent.q, k), ("center", agent.center, d),
                                ("l", agent.linear, d)):
            if vec.shape != (size,):
                raise DimensionMismatch(
                    f"'{name}' has {vec.size} entries, expected {size}")
        if agent.w < 0:
            raise ValueError("'w' must be nonnegative")
        return agent

    def constraint(self) -> SemiInfiniteConstraint:
        A, a, c, b = self.A, self.a, self.c, self.b

        def pieces(y: np.ndarray, z: np.ndarray,
                   xis: np.ndarray) -> np.ndarray:
            return (xis @ (A.T @ y) + a @ y + c @ z - b)[:, None]

        def pieces_vjp(y: np.ndarray, z: np.ndarray, xis: np.ndarray,
                       weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            w = weights[:, 0]
            total = float(w.sum())
            return A @ (xis.T @ w) + a * total, c * total

        def lipschitz(y: np.ndarray, _z: np.ndarray) -> float:
            return float(np.linalg.norm(A.T @ y))

        def upper_bound(y: np.ndarray, z: np.ndarray, box: Box) -> float:
            slope = A.T @ y
            return float(slope @ box.center
                         + np.abs(slope) @ (0.5 * box.widths)
                         + a @ y + c @ z - b)

        return SemiInfiniteConstraint(pieces, pieces_vjp, lipschitz,
                                      upper_bound)

    def problem(self) -> AgentProblem:
        w, center, linear = self.w, self.center, self.linear
        h = ConvexFunction(
            lambda y: w * float((y - center) @ (y - center)) + linear @ y,
            lambda y: 2.0 * w * (y - center) + linear)
        return AgentProblem(ConvexFunction.linear(self.q), h,
                            self.constraint(), self.local_box)


def build_generic_sip(data: dict, graph: Graph) -> GenericSIP:
    """
    GenericSIP from {'global_box', 'uncertainty_box', 'agents': [...]},
    one agent entry per graph node.
    """
    global_box = Box.from_dict(data["global_box"])
    uncertainty_box = Box.from_dict(data["uncertainty_box"])
    entries = data["agents"]
    if len(entries) != graph.n:
        raise DimensionMismatch(
            f"{len(entries)} generic agents for a graph of {graph.n}")
    agents = tuple(
        RobustLinearAgent.from_dict(
            entry, global_box.dim, uncertainty_box.dim).problem()
        for entry in entries)
    return GenericSIP(graph, global_box, uncertainty_box, agents)
