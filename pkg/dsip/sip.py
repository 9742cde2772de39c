"""
Core types for generic semi-infinite programs over an agent network:
boxes, communication graphs, per-agent problem data and cut sets.
"""
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import networkx as nx
import numpy as np

from dsip.errors import (
    DimensionMismatch,
    Disconnected,
    InvalidBox,
    MalformedEdge,
    OutsideBox,
)

# Value of a maximum over an empty cut set: only the boxes constrain.
NO_CONSTRAINT = float("-inf")

# Slack allowed when checking that solver output lies in its box.
BOX_TOL = 1e-9


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 stream; identical across platforms."""
    return np.random.Generator(np.random.PCG64(seed))


def as_vector(values: Iterable[float] | float, name: str = "vector"
              ) -> np.ndarray:
    """Return `values` as a one-dimensional float array."""
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box [lower, upper]; every compact set is one of these."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = as_vector(self.lower, "lower").copy()
        upper = as_vector(self.upper, "upper").copy()
        if lower.size == 0:
            raise InvalidBox("A box needs at least one dimension")
        if lower.shape != upper.shape:
            raise DimensionMismatch(
                f"Box bounds differ in size: {lower.size} vs {upper.size}"
            )
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidBox("Box bounds must be finite")
        if np.any(lower > upper):
            bad = int(np.argmax(lower > upper))
            raise InvalidBox(
                f"Box has lower > upper in coordinate {bad}: "
                f"{lower[bad]} > {upper[bad]}"
            )
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, dim: int, lower: float, upper: float) -> "Box":
        """The box [lower, upper]^dim."""
        return cls(np.full(dim, lower), np.full(dim, upper))

    @classmethod
    def from_dict(cls, data: dict) -> "Box":
        """Build a box from {'lower': [...], 'upper': [...]}."""
        return cls(data["lower"], data["upper"])

    def to_dict(self) -> dict:
        """Plain lists, for YAML output."""
        return {
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
        }

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> float:
        """Euclidean distance from the center to any vertex."""
        return 0.5 * float(np.linalg.norm(self.widths))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, point: np.ndarray, tol: float = 0.0) -> bool:
        """True if `point` lies in the box up to `tol` per coordinate."""
        point = np.asarray(point, dtype=float)
        if point.shape != self.lower.shape:
            raise DimensionMismatch(
                f"Point of size {point.size} against box of dim {self.dim}"
            )
        return bool(np.all(point >= self.lower - tol)
                    and np.all(point <= self.upper + tol))

    def require_inside(self, point: np.ndarray, what: str = "point",
                       tol: float = BOX_TOL) -> np.ndarray:
        """
        Return `point` as an array if it lies in the box, raise OutsideBox
        otherwise. Points are never clamped silently.
        """
        point = as_vector(point, what)
        if not self.contains(point, tol):
            raise OutsideBox(f"{what} {point.tolist()} is outside {self}")
        return point

    def project(self, point: np.ndarray) -> np.ndarray:
        """Euclidean projection onto the box."""
        return np.clip(point, self.lower, self.upper)

    def distance_to(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each row of `points` to the box."""
        points = np.atleast_2d(points)
        return np.linalg.norm(points - self.project(points), axis=-1)

    def split_longest(self) -> tuple["Box", "Box"]:
        """Halve the box across its longest axis (first one on ties)."""
        axis = int(np.argmax(self.widths))
        mid = 0.5 * (self.lower[axis] + self.upper[axis])
        left_upper = self.upper.copy()
        left_upper[axis] = mid
        right_lower = self.lower.copy()
        right_lower[axis] = mid
        return Box(self.lower, left_upper), Box(right_lower, self.upper)

    def product(self, other: "Box") -> "Box":
        """Cartesian product self x other."""
        return Box(np.concatenate([self.lower, other.lower]),
                   np.concatenate([self.upper, other.upper]))

    def inflated(self, factor: float) -> "Box":
        """Box with the same center and widths scaled by `factor`."""
        half = 0.5 * factor * self.widths
        return Box(self.center - half, self.center + half)

    def vertices(self) -> np.ndarray:
        """All 2^dim vertices, one per row."""
        corners = itertools.product(*zip(self.lower, self.upper))
        return np.array(list(corners), dtype=float)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """`count` uniform points in the box, one per row."""
        return self.lower + rng.random((count, self.dim)) * self.widths

    def __repr__(self) -> str:
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


@dataclass(frozen=True)
class Graph:
    """Undirected communication graph on agents 0..n-1."""
    n: int
    edges: frozenset[tuple[int, int]]

    @classmethod
    def from_edge_list(cls, n: int, edges: Iterable[Sequence[int]],
                       one_based: bool = True) -> "Graph":
        """
        Build a graph from index pairs. Config files number agents from 1,
        hence the default.
        """
        offset = 1 if one_based else 0
        normalized: set[tuple[int, int]] = set()
        for edge in edges:
            if len(edge) != 2:
                raise MalformedEdge(f"Edge {list(edge)} is not a pair")
            i, j = int(edge[0]) - offset, int(edge[1]) - offset
            pair = (min(i, j), max(i, j))
            if pair in normalized:
                raise MalformedEdge(f"Duplicate edge {list(edge)}")
            normalized.add(pair)
        return cls(n, frozenset(normalized))

    @classmethod
    def ring(cls, n: int, extra_edges: Iterable[Sequence[int]] = (),
             one_based: bool = True) -> "Graph":
        """Cycle 1-2-...-n-1 plus extra edges; repeated edges are merged."""
        offset = 1 if one_based else 0
        edges = {
            (min(u, v), max(u, v))
            for u, v in nx.cycle_graph(n).edges() if u != v
        }
        for edge in extra_edges:
            i, j = int(edge[0]) - offset, int(edge[1]) - offset
            edges.add((min(i, j), max(i, j)))
        return cls(n, frozenset(edges))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(n, frozenset(
            (min(u, v), max(u, v)) for u, v in nx.complete_graph(n).edges()
        ))

    @classmethod
    def from_dict(cls, data: dict) -> "Graph":
        return cls.from_edge_list(data["n"], data.get("edges", []))

    def to_dict(self) -> dict:
        return {"n": self.n,
                "edges": [[i + 1, j + 1] for i, j in sorted(self.edges)]}

    def neighbors(self, i: int) -> list[int]:
        """Sorted neighbors of agent i."""
        return sorted(
            j if k == i else k for k, j in self.edges if i in (k, j)
        )

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph


def validate_graph(graph: Graph) -> None:
    """
    Check that the graph is well formed and connected.
    Raises MalformedEdge or Disconnected; returns None when the graph is ok.
    """
    if graph.n < 1:
        raise ValueError("A graph needs at least one agent")
    for i, j in sorted(graph.edges):
        if i == j:
            raise MalformedEdge(f"Self-loop on agent {i + 1}")
        if not (0 <= i < graph.n and 0 <= j < graph.n):
            raise MalformedEdge(
                f"Edge ({i + 1}, {j + 1}) references an agent outside "
                f"1..{graph.n}"
            )
    components = list(nx.connected_components(graph.to_networkx()))
    if len(components) > 1:
        raise Disconnected(sorted(components, key=min))


@dataclass(frozen=True)
class ConvexFunction:
    """A convex function handle together with a subgradient oracle."""
    value: Callable[[np.ndarray], float]
    subgradient: Callable[[np.ndarray], np.ndarray]

    def __call__(self, point: np.ndarray) -> float:
        return float(self.value(point))

    @classmethod
    def zero(cls, dim: int) -> "ConvexFunction":
        return cls(lambda _: 0.0, lambda _: np.zeros(dim))

    @classmethod
    def linear(cls, weights: Iterable[float]) -> "ConvexFunction":
        """x -> weights . x"""
        w = as_vector(weights, "weights")
        return cls(lambda x: float(w @ x), lambda _: w.copy())

    @classmethod
    def squared_distance(cls, center: Iterable[float],
                         weight: float = 1.0) -> "ConvexFunction":
        """x -> weight * ||x - center||^2"""
        c = as_vector(center, "center")
        return cls(lambda x: weight * float((x - c) @ (x - c)),
                   lambda x: 2.0 * weight * (x - c))


PiecesFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
PiecesVjpFn = Callable[
    [np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    tuple[np.ndarray, np.ndarray],
]
LipschitzFn = Callable[[np.ndarray, np.ndarray], float]
BoundFn = Callable[[np.ndarray, np.ndarray, Box], float]


@dataclass(frozen=True)
class SemiInfiniteConstraint:
    """
    Semi-infinite constraint g(y, z, xi) <= 0 for all xi, where g is the
    pointwise maximum of finitely many pieces, each convex in (y, z).

    `pieces(y, z, xis)` maps a (K, m) stack of uncertainty points to a
    (K, P) array of piece values. `pieces_vjp(y, z, xis, w)` returns the
    (y, z) subgradients of all pieces contracted with weights w of shape
    (K, P). `lipschitz(y, z)` is a Lipschitz constant of xi -> g(y, z, xi)
    on the uncertainty box. `upper_bound(y, z, box)`, when present, bounds
    g(y, z, .) from above on any sub-box.
    """
    pieces: PiecesFn
    pieces_vjp: PiecesVjpFn
    lipschitz: LipschitzFn
    upper_bound: BoundFn | None = None

    def values(self, y: np.ndarray, z: np.ndarray,
               xis: np.ndarray) -> np.ndarray:
        """g at each row of `xis`."""
        return np.max(self.pieces(y, z, np.atleast_2d(xis)), axis=1)

    def value(self, y: np.ndarray, z: np.ndarray, xi: np.ndarray) -> float:
        return float(self.values(y, z, np.atleast_2d(xi))[0])

    @classmethod
    def from_pointwise(
        cls,
        value: Callable[[np.ndarray, np.ndarray, np.ndarray], float],
        subgradient: Callable[
            [np.ndarray, np.ndarray, np.ndarray],
            tuple[np.ndarray, np.ndarray],
        ],
        lipschitz: float | LipschitzFn,
        upper_bound: BoundFn | None = None,
    ) -> "SemiInfiniteConstraint":
        """Wrap scalar callables into a single-piece constraint."""

        def pieces(y: np.ndarray, z: np.ndarray,
                   xis: np.ndarray) -> np.ndarray:
            return np.array([[value(y, z, xi)] for xi in xis],
                            dtype=float).reshape(len(xis), 1)

        def pieces_vjp(y: np.ndarray, z: np.ndarray, xis: np.ndarray,
                       weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            gy = np.zeros_like(y, dtype=float)
            gz = np.zeros_like(z, dtype=float)
            for xi, w in zip(xis, weights[:, 0]):
                if w != 0.0:
                    sy, sz = subgradient(y, z, xi)
                    gy += w * np.asarray(sy, dtype=float)
                    gz += w * np.asarray(sz, dtype=float)
            return gy, gz

        if callable(lipschitz):
            lipschitz_fn = lipschitz
        else:
            constant = float(lipschitz)
            lipschitz_fn = lambda _y, _z: constant  # noqa: E731
        return cls(pieces, pieces_vjp, lipschitz_fn, upper_bound)


@dataclass(frozen=True)
class AgentProblem:
    """What agent i knows: phi_i, h_i, g_i and its local box Z_i."""
    phi: ConvexFunction
    h: ConvexFunction
    constraint: SemiInfiniteConstraint
    local_box: Box


@dataclass(frozen=True)
class GenericSIP:
    """
    min sum_i phi_i(z_i) + h_i(y)  over y in Y, z_i in Z_i,
    subject to g_i(y, z_i, xi) <= 0 for all xi in Xi and all agents i.
    """
    graph: Graph
    global_box: Box
    uncertainty_box: Box
    agents: tuple[AgentProblem, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        if len(self.agents) != self.graph.n:
            raise DimensionMismatch(
                f"{len(self.agents)} agent problems for a graph of "
                f"{self.graph.n} agents"
            )

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def local_boxes(self) -> list[Box]:
        return [agent.local_box for agent in self.agents]

    def agent_objective(self, i: int, y: np.ndarray, z: np.ndarray) -> float:
        """phi_i(z) + h_i(y)"""
        agent = self.agents[i]
        return agent.phi(z) + agent.h(y)

    def objective(self, ys: Sequence[np.ndarray],
                  zs: Sequence[np.ndarray]) -> float:
        """sum_i phi_i(z_i) + h_i(y_i)"""
        return float(sum(self.agent_objective(i, y, z)
                         for i, (y, z) in enumerate(zip(ys, zs))))


@dataclass(frozen=True)
class CutMeta:
    """When a cut was added and the constraint value that triggered it."""
    round: int
    value: float


@dataclass(frozen=True, eq=False)
class CutSet:
    """Append-only set of cut points inside the uncertainty box."""
    box: Box
    points: tuple[np.ndarray, ...] = ()
    meta: tuple[CutMeta, ...] = ()

    def __len__(self) -> int:
        return len(self.points)

    def with_cut(self, point: np.ndarray, round_index: int,
                 value: float) -> "CutSet":
        """A new cut set with `point` appended."""
        point = self.box.require_inside(point, "cut point")
        point = point.copy()
        point.flags.writeable = False
        return CutSet(self.box, self.points + (point,),
                      self.meta + (CutMeta(round_index, float(value)),))

    def as_array(self) -> np.ndarray:
        """Cut points stacked as a (K, m) array."""
        if not self.points:
            return np.empty((0, self.box.dim))
        return np.vstack(self.points)

    def extends(self, other: "CutSet") -> bool:
        """True if `other` is a prefix of this set (other is a subset)."""
        if len(other) > len(self):
            return False
        return all(np.array_equal(a, b)
                   for a, b in zip(self.points, other.points))


def max_cut_violation(agent: int, y: np.ndarray, z: np.ndarray,
                      cuts: CutSet, sip: GenericSIP) -> float:
    """
    max over the cut points of g_i(y, z, xi); NO_CONSTRAINT (-inf) when the
    cut set is empty.
    """
    problem = sip.agents[agent]
    y = as_vector(y, "y")
    z = as_vector(z, "z")
    if y.size != sip.global_box.dim:
        raise DimensionMismatch(
            f"y has size {y.size}, expected {sip.global_box.dim}")
    if z.size != problem.local_box.dim:
        raise DimensionMismatch(
            f"z has size {z.size}, expected {problem.local_box.dim}")
    if cuts.box.dim != sip.uncertainty_box.dim:
        raise DimensionMismatch("Cut points do not match the uncertainty box")
    sip.global_box.require_inside(y, "y")
    problem.local_box.require_inside(z, "z")
    if not cuts:
        return NO_CONSTRAINT
    return float(np.max(problem.constraint.values(y, z, cuts.as_array())))


def midpoint_convexity_violations(fn: Callable[[np.ndarray], float],
                                  box: Box, samples: int = 200,
                                  tol: float = 1e-9,
                                  rng: np.random.Generator | None = None
                                  ) -> int:
    """
    Count random pairs (a, b) in the box with
    fn((a+b)/2) > (fn(a)+fn(b))/2 + tol. A debugging aid for the convexity
    contract of user handles, not a proof.
    """
    if rng is None:
        rng = make_rng(0)
    first = box.sample(rng, samples)
    second = box.sample(rng, samples)
    failures = 0
    for a, b in zip(first, second):
        mid = fn(0.5 * (a + b))
        if mid > 0.5 * (fn(a) + fn(b)) + tol:
            failures += 1
    return failures
