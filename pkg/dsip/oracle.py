"""
Certified approximate global maximization over a box by Lipschitz
branch-and-bound. This is how agents find the cut point that most
violates their semi-infinite constraint.
"""
import heapq
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

from dsip.errors import BudgetExhausted, NonFiniteValue
from dsip.sip import Box, make_rng

# Inflation applied to sampled Lipschitz ratios. Heuristic, no guarantee.
LIPSCHITZ_SAFETY = 2.0

DEFAULT_NODE_LIMIT = 1_000_000

ScalarFn = Callable[[np.ndarray], float | np.ndarray]
BoxBound = Callable[[Box], float]


@dataclass(frozen=True)
class OracleConfig:
    """Branch-and-bound budget and multi-cut setting."""
    node_limit: int = DEFAULT_NODE_LIMIT
    max_cuts_per_round: int = 1


@dataclass(frozen=True, eq=False)
class CutOracleResult:
    """
    Best point found, its value and a certified bound on how far the true
    maximum can be above it. `candidates` holds the best evaluated points
    as (point, value) pairs in decreasing value order.
    """
    maximizer: np.ndarray
    value: float
    certified_gap: float
    nodes_expanded: int
    candidates: tuple[tuple[np.ndarray, float], ...] = field(default=())

    @property
    def upper_bound(self) -> float:
        return self.value + self.certified_gap


def _evaluator(g: ScalarFn, vectorized: bool
               ) -> Callable[[np.ndarray], np.ndarray]:
    def evaluate(points: np.ndarray) -> np.ndarray:
        if vectorized:
            values = np.asarray(g(points), dtype=float).reshape(len(points))
        else:
            values = np.array([float(g(p)) for p in points])
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(
                f"Function returned {values.tolist()} at {points.tolist()}")
        return values
    return evaluate


class _Candidates:
    """Keeps the `keep` best evaluated points."""

    def __init__(self, keep: int):
        self.keep = keep
        self.heap: list[tuple[float, int, np.ndarray]] = []
        self.counter = itertools.count()

    def offer(self, point: np.ndarray, value: float) -> None:
        entry = (value, -next(self.counter), point)
        if len(self.heap) < self.keep:
            heapq.heappush(self.heap, entry)
        elif value > self.heap[0][0]:
            heapq.heapreplace(self.heap, entry)

    def best_first(self) -> tuple[tuple[np.ndarray, float], ...]:
        ordered = sorted(self.heap, key=lambda e: (-e[0], -e[1]))
        return tuple((point, value) for value, _, point in ordered)


def approx_global_max(g: ScalarFn, xi_box: Box, lipschitz: float,
                      tol: float, *, upper_bound: BoxBound | None = None,
                      node_limit: int = DEFAULT_NODE_LIMIT, keep: int = 1,
                      vectorized: bool = False) -> CutOracleResult:
    """
    Maximize g over xi_box up to `tol` with a certificate.

    Nodes are explored best-first by their upper bound
    g(center) + lipschitz * radius, tightened by `upper_bound(box)` when
    given. The longest axis is split at its midpoint. Nodes whose bound is
    within `tol` of the incumbent are pruned, and the search stops when the
    global bound is within `tol` of the incumbent.

    Args:
        g: The function; with `vectorized` it maps (K, m) points to (K,)
        xi_box: The search box
        lipschitz: A Lipschitz constant of g on xi_box
        tol: Requested certified gap
        upper_bound: Optional certified bound of g over a sub-box
        node_limit: Maximum number of evaluated nodes
        keep: Number of best points to report as candidates

    Returns:
        The result; raises BudgetExhausted (carrying the best-so-far
        result with its honest gap) when the node limit is hit first
    """
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    if not np.isfinite(lipschitz) or lipschitz < 0:
        raise ValueError(f"Invalid Lipschitz constant {lipschitz}")
    evaluate = _evaluator(g, vectorized)
    candidates = _Candidates(max(1, keep))
    order = itertools.count()

    def node_bound(box: Box, center_value: float) -> float:
        bound = center_value + lipschitz * box.radius
        if upper_bound is not None:
            bound = min(bound, float(upper_bound(box)))
        return max(bound, center_value)

    root_value = float(evaluate(xi_box.center[None, :])[0])
    best_point, best_value = xi_box.center, root_value
    candidates.offer(best_point, best_value)
    nodes = 1
    # Largest bound among discarded nodes, so the final gap stays honest.
    pruned_bound = -np.inf
    heap = [(-node_bound(xi_box, root_value), next(order), xi_box)]

    def result() -> CutOracleResult:
        open_bound = -heap[0][0] if heap else -np.inf
        gap = max(open_bound, pruned_bound, best_value) - best_value
        return CutOracleResult(best_point.copy(), best_value, float(gap),
                               nodes, candidates.best_first())

    while heap:
        if max(-heap[0][0], pruned_bound) - best_value <= tol:
            break
        if nodes >= node_limit:
            raise BudgetExhausted(result())
        _, _, box = heapq.heappop(heap)
        children = box.split_longest()
        centers = np.vstack([child.center for child in children])
        values = evaluate(centers)
        nodes += len(children)
        for center, value in zip(centers, values):
            value = float(value)
            candidates.offer(center, value)
            if value > best_value:
                best_point, best_value = center, value
        for child, value in zip(children, values):
            bound = node_bound(child, float(value))
            if bound <= best_value + tol:
                pruned_bound = max(pruned_bound, bound)
            else:
                heapq.heappush(heap, (-bound, next(order), child))
    return result()


def estimate_lipschitz(g: ScalarFn, xi_box: Box, samples: int = 1000,
                       vectorized: bool = False,
                       rng: np.random.Generator | None = None) -> float:
    """
    Heuristic Lipschitz constant: the largest slope between random pairs of
    points, times LIPSCHITZ_SAFETY. There is no guarantee that the result
    is a valid constant; pass an analytic one when it is known.
    """
    if samples < 2:
        raise ValueError("At least two samples are needed")
    if rng is None:
        rng = make_rng(0)
    points = xi_box.sample(rng, samples)
    values = _evaluator(g, vectorized)(points)
    distances = pdist(points)
    rises = pdist(values[:, None])
    mask = distances > 0
    if not np.any(mask):
        return 0.0
    return LIPSCHITZ_SAFETY * float(np.max(rises[mask] / distances[mask]))
