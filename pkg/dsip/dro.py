"""
Wasserstein distributionally robust front-end.

Turns a data-driven DRO problem (samples split among agents, a radius
theta, a loss f) into a GenericSIP that the distributed solver handles,
and evaluates worst-case expected loss and worst-case CVaR at a decision.
"""
import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist

from dsip.errors import (
    BudgetExhausted,
    DimensionMismatch,
    InvalidBeta,
    InvalidPartition,
    InvalidRadius,
    UnsupportedLoss,
)
from dsip.losses import Loss, LossKind, loss_by_name
from dsip.oracle import approx_global_max, estimate_lipschitz
from dsip.sip import (
    AgentProblem,
    Box,
    ConvexFunction,
    GenericSIP,
    Graph,
    SemiInfiniteConstraint,
    make_rng,
)

# Sampled bounds are widened by this fraction of their width on each side.
SAMPLED_INFLATION = 0.1
SAMPLED_DECISIONS = 200
SAMPLED_POINTS = 100
# Grid used when the bounded scalar search looks unreliable.
FALLBACK_GRID = 512
HEURISTIC_LIPSCHITZ_SAMPLES = 256


class BoundMethod(Enum):
    """Enumeration for how loss bounds are obtained."""
    ANALYTIC = "analytic"
    INTERVAL = "interval"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class LossBounds:
    """f_lo <= f(x, xi) <= f_hi on the decision box times the sample box."""
    f_lo: float
    f_hi: float
    method: BoundMethod = BoundMethod.ANALYTIC
    heuristic: bool = False

    def __post_init__(self) -> None:
        if self.f_lo > self.f_hi:
            raise ValueError(f"f_lo {self.f_lo} > f_hi {self.f_hi}")

    @property
    def width(self) -> float:
        return self.f_hi - self.f_lo


@dataclass(frozen=True, eq=False)
class DROInstance:
    """
    Samples with their owner agents (0-based), the Wasserstein radius, the
    loss, the decision box X and the compact support box Xi. The graph
    defaults to a ring over the owners.
    """
    samples: np.ndarray
    owners: np.ndarray
    theta: float
    loss: Loss
    decision_box: Box
    uncertainty_box: Box
    graph: Graph | None = None

    def __post_init__(self) -> None:
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        owners = np.asarray(self.owners, dtype=int).ravel()
        if self.theta <= 0:
            raise InvalidRadius(f"theta must be positive, got {self.theta}")
        if samples.shape[1] != self.uncertainty_box.dim:
            raise DimensionMismatch(
                f"Samples have dim {samples.shape[1]}, support box has dim "
                f"{self.uncertainty_box.dim}")
        if owners.size != len(samples):
            raise InvalidPartition(
                f"{owners.size} owners for {len(samples)} samples")
        for k, sample in enumerate(samples):
            self.uncertainty_box.require_inside(sample, f"sample {k + 1}")
        graph = self.graph
        n = graph.n if graph is not None else int(owners.max()) + 1
        if owners.min() < 0 or owners.max() >= n:
            raise InvalidPartition(f"Owners must lie in 1..{n}")
        empty = sorted(set(range(n)) - set(owners.tolist()))
        if empty:
            raise InvalidPartition(
                "Agents without samples: "
                + ", ".join(str(i + 1) for i in empty))
        if graph is None:
            graph = Graph.ring(n)
        samples.flags.writeable = False
        owners.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "owners", owners)
        object.__setattr__(self, "graph", graph)

    @property
    def L(self) -> int:
        return len(self.samples)

    @property
    def n_agents(self) -> int:
        return self.graph.n

    def owned(self, i: int) -> np.ndarray:
        """Indices of the samples of agent i."""
        return np.flatnonzero(self.owners == i)

    def owned_samples(self, i: int) -> np.ndarray:
        return self.samples[self.owned(i)]

    def merged(self) -> "DROInstance":
        """The same data owned by a single agent."""
        return dataclasses.replace(
            self, owners=np.zeros(self.L, dtype=int),
            graph=Graph(1, frozenset()))

    def with_theta(self, theta: float) -> "DROInstance":
        return dataclasses.replace(self, theta=theta)

    def to_dict(self) -> dict:
        """Plain data for the instance file; owners are 1-based."""
        if self.loss.kind is LossKind.CUSTOM:
            raise UnsupportedLoss(
                f"Custom loss {self.loss.name} cannot be serialized")
        return {
            "theta": float(self.theta),
            "loss": self.loss.name,
            "decision_box": self.decision_box.to_dict(),
            "uncertainty_box": self.uncertainty_box.to_dict(),
            "graph": self.graph.to_dict(),
            "samples": [
                {"owner": int(owner) + 1,
                 "xi": [float(v) for v in sample]}
                for owner, sample in zip(self.owners, self.samples)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DROInstance":
        samples = data["samples"]
        return cls(
            samples=np.array([s["xi"] for s in samples], dtype=float),
            owners=np.array([int(s["owner"]) - 1 for s in samples]),
            theta=float(data["theta"]),
            loss=loss_by_name(data["loss"]),
            decision_box=Box.from_dict(data["decision_box"]),
            uncertainty_box=Box.from_dict(data["uncertainty_box"]),
            graph=Graph.from_dict(data["graph"]) if "graph" in data else None,
        )


def bound_loss(instance: DROInstance,
               method: BoundMethod = BoundMethod.ANALYTIC,
               rng: np.random.Generator | None = None) -> LossBounds:
    """
    Bounds of the loss over X times Xi. ANALYTIC covers the built-in
    losses exactly; INTERVAL uses the loss' own interval bound; SAMPLED
    takes random extremes widened by SAMPLED_INFLATION and is only a
    heuristic.
    """
    loss = instance.loss
    if method is BoundMethod.ANALYTIC:
        if loss.kind is LossKind.CUSTOM:
            raise UnsupportedLoss(
                f"No analytic bounds for custom loss {loss.name}")
        lo, hi = loss.interval(instance.decision_box,
                               instance.uncertainty_box)
        return LossBounds(lo, hi, method)
    if method is BoundMethod.INTERVAL:
        lo, hi = loss.interval(instance.decision_box,
                               instance.uncertainty_box)
        return LossBounds(lo, hi, method)
    if rng is None:
        rng = make_rng(0)
    xs = np.vstack([instance.decision_box.vertices()[:SAMPLED_DECISIONS],
                    instance.decision_box.sample(rng, SAMPLED_DECISIONS)])
    xis = np.vstack([instance.samples,
                     instance.uncertainty_box.sample(rng, SAMPLED_POINTS)])
    values = np.concatenate([loss.value(x, xis) for x in xs])
    lo, hi = float(values.min()), float(values.max())
    margin = SAMPLED_INFLATION * (hi - lo)
    return LossBounds(lo - margin, hi + margin, method, heuristic=True)


def compact_bounds(bounds: LossBounds, theta: float,
                   L: int) -> tuple[Box, Box]:
    """
    The compact ranges of s and of every v_l:
    B_s = [0, (f_hi - f_lo)/theta], I = [f_lo, f_lo + L (f_hi - f_lo)].
    """
    if theta <= 0:
        raise InvalidRadius(f"theta must be positive, got {theta}")
    if L < 1:
        raise ValueError(f"Need at least one sample, got L={L}")
    return (Box([0.0], [bounds.width / theta]),
            Box([bounds.f_lo], [bounds.f_lo + L * bounds.width]))


def loss_lipschitz(loss: Loss, x: np.ndarray, box: Box) -> float:
    """Analytic Lipschitz constant of f(x, .) on the box, else estimated."""
    lip = loss.lipschitz_xi(x, box)
    if lip is None:
        lip = estimate_lipschitz(
            lambda xis: loss.value(x, xis), box,
            HEURISTIC_LIPSCHITZ_SAMPLES, vectorized=True, rng=make_rng(0))
    return lip


def _loss_upper(loss: Loss, x: np.ndarray,
                box: Box) -> float | None:
    found = loss.range_over(x, box)
    return None if found is None else found[1]


def _dro_constraint(instance: DROInstance,
                    owned: np.ndarray) -> SemiInfiniteConstraint:
    """
    g(y, z, xi) = max_l f(x, xi) - z_l - s ||xi - sample_l|| with
    y = (x, s), one piece per owned sample.
    """
    loss = instance.loss
    support = instance.uncertainty_box

    def pieces(y: np.ndarray, z: np.ndarray,
               xis: np.ndarray) -> np.ndarray:
        x, s = y[:-1], y[-1]
        f = loss.value(x, xis)
        return f[:, None] - z[None, :] - s * cdist(xis, owned)

    def pieces_vjp(y: np.ndarray, z: np.ndarray, xis: np.ndarray,
                   weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = y[:-1]
        gx = loss.grad_x(x, xis).T @ weights.sum(axis=1)
        gs = -float(np.sum(weights * cdist(xis, owned)))
        return np.append(gx, gs), -weights.sum(axis=0)

    def lipschitz(y: np.ndarray, _z: np.ndarray) -> float:
        return loss_lipschitz(loss, y[:-1], support) + max(y[-1], 0.0)

    def upper_bound(y: np.ndarray, z: np.ndarray, box: Box) -> float:
        x, s = y[:-1], y[-1]
        f_hi = _loss_upper(loss, x, box)
        return float(np.max(f_hi - z - s * box.distance_to(owned)))

    has_range = loss.range_fn is not None
    return SemiInfiniteConstraint(pieces, pieces_vjp, lipschitz,
                                  upper_bound if has_range else None)


def _inflate_domains(b_s: Box, interval: Box,
                     factor: float) -> tuple[Box, Box]:
    if factor == 1.0:
        return b_s, interval
    return (Box([0.0], b_s.upper * factor), interval.inflated(factor))


def reformulate_dro(instance: DROInstance, bounds: LossBounds | None = None,
                    domain_inflation: float = 1.0,
                    method: BoundMethod = BoundMethod.ANALYTIC
                    ) -> GenericSIP:
    """
    GenericSIP with global y = (x, s) in X x B_s and local z_i = the v
    entries of agent i's samples in I^{|samples_i|}; phi_i(z) = sum(z),
    h_i(y) = |samples_i| theta s. `domain_inflation` widens B_s and I, to
    check that the optimum does not need the wider domains.
    """
    if bounds is None:
        bounds = bound_loss(instance, method)
    b_s, interval = _inflate_domains(
        *compact_bounds(bounds, instance.theta, instance.L),
        domain_inflation)
    global_box = instance.decision_box.product(b_s)
    d = instance.decision_box.dim
    agents = []
    for i in range(instance.n_agents):
        owned = instance.owned_samples(i)
        k = len(owned)
        local_box = Box(np.full(k, interval.lower[0]),
                        np.full(k, interval.upper[0]))
        h_weights = np.zeros(d + 1)
        h_weights[-1] = k * instance.theta
        agents.append(AgentProblem(
            ConvexFunction.linear(np.ones(k)),
            ConvexFunction.linear(h_weights),
            _dro_constraint(instance, owned),
            local_box,
        ))
    return GenericSIP(instance.graph, global_box, instance.uncertainty_box,
                      tuple(agents))


def cvar_domains(bounds: LossBounds, theta: float,
                 L: int) -> tuple[Box, Box, Box]:
    """
    Compact ranges of t, s and every v_l in the CVaR program:
    T = [f_lo, f_hi], B_s = [0, (f_hi - f_lo)/theta] and
    v_l in [0, L (f_hi - f_lo)].
    """
    if theta <= 0:
        raise InvalidRadius(f"theta must be positive, got {theta}")
    return (Box([bounds.f_lo], [bounds.f_hi]),
            Box([0.0], [bounds.width / theta]),
            Box([0.0], [L * bounds.width]))


def _cvar_constraint(instance: DROInstance,
                     owned: np.ndarray) -> SemiInfiniteConstraint:
    """
    With y = (x, t, s), two pieces per owned sample:
    f(x, xi) - t - z_l - s ||xi - sample_l||  and  -z_l - s ||xi - sample_l||.
    """
    loss = instance.loss
    support = instance.uncertainty_box
    k = len(owned)

    def pieces(y: np.ndarray, z: np.ndarray,
               xis: np.ndarray) -> np.ndarray:
        x, t, s = y[:-2], y[-2], y[-1]
        f = loss.value(x, xis)
        base = -z[None, :] - s * cdist(xis, owned)
        return np.hstack([f[:, None] - t + base, base])

    def pieces_vjp(y: np.ndarray, z: np.ndarray, xis: np.ndarray,
                   weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = y[:-2]
        active, floor = weights[:, :k], weights[:, k:]
        both = active + floor
        gx = loss.grad_x(x, xis).T @ active.sum(axis=1)
        gt = -float(active.sum())
        gs = -float(np.sum(both * cdist(xis, owned)))
        return np.concatenate([gx, [gt, gs]]), -both.sum(axis=0)

    def lipschitz(y: np.ndarray, _z: np.ndarray) -> float:
        return loss_lipschitz(loss, y[:-2], support) + max(y[-1], 0.0)

    def upper_bound(y: np.ndarray, z: np.ndarray, box: Box) -> float:
        x, t, s = y[:-2], y[-2], y[-1]
        f_hi = _loss_upper(loss, x, box)
        top = np.maximum(f_hi - t - z, -z)
        return float(np.max(top - s * box.distance_to(owned)))

    has_range = loss.range_fn is not None
    return SemiInfiniteConstraint(pieces, pieces_vjp, lipschitz,
                                  upper_bound if has_range else None)


def reformulate_cvar(instance: DROInstance, beta: float,
                     bounds: LossBounds | None = None,
                     method: BoundMethod = BoundMethod.ANALYTIC
                     ) -> GenericSIP:
    """
    GenericSIP of worst-case CVaR minimization with y = (x, t, s),
    phi_i(z) = sum(z)/beta and h_i(y) = |samples_i| (theta s/beta + t).
    """
    if not 0.0 < beta <= 1.0:
        raise InvalidBeta(f"beta must lie in (0, 1], got {beta}")
    if bounds is None:
        bounds = bound_loss(instance, method)
    t_box, s_box, v_box = cvar_domains(bounds, instance.theta, instance.L)
    global_box = instance.decision_box.product(t_box).product(s_box)
    d = instance.decision_box.dim
    agents = []
    for i in range(instance.n_agents):
        owned = instance.owned_samples(i)
        k = len(owned)
        h_weights = np.zeros(d + 2)
        h_weights[-2] = k
        h_weights[-1] = k * instance.theta / beta
        agents.append(AgentProblem(
            ConvexFunction.linear(np.full(k, 1.0 / beta)),
            ConvexFunction.linear(h_weights),
            _cvar_constraint(instance, owned),
            Box(np.full(k, v_box.lower[0]), np.full(k, v_box.upper[0])),
        ))
    return GenericSIP(instance.graph, global_box, instance.uncertainty_box,
                      tuple(agents))


class _SampleMaxima:
    """
    M_l(s) = max over Xi of f(x, xi) - s ||xi - sample_l|| for every
    sample, cached per s. For s at or above the Lipschitz constant of
    f(x, .) the maximum sits at the sample itself.
    """

    def __init__(self, x: np.ndarray, instance: DROInstance, tol: float):
        self.x = x
        self.instance = instance
        self.tol = tol
        self.loss = instance.loss
        self.support = instance.uncertainty_box
        self.lipschitz = loss_lipschitz(self.loss, x, self.support)
        self.at_samples = self.loss.value(x, instance.samples)
        self.cache: dict[float, np.ndarray] = {}

    def __call__(self, s: float) -> np.ndarray:
        s = float(s)
        if s not in self.cache:
            self.cache[s] = self._compute(s)
        return self.cache[s]

    def _compute(self, s: float) -> np.ndarray:
        if s >= self.lipschitz:
            return self.at_samples.copy()
        x, loss = self.x, self.loss
        maxima = np.empty(self.instance.L)
        for k, sample in enumerate(self.instance.samples):
            def g(xis: np.ndarray, sample: np.ndarray = sample
                  ) -> np.ndarray:
                return loss.value(x, xis) - s * np.linalg.norm(
                    xis - sample, axis=1)

            def bound(box: Box, sample: np.ndarray = sample) -> float:
                f_hi = _loss_upper(loss, x, box)
                if f_hi is None:
                    return np.inf
                return f_hi - s * float(box.distance_to(sample)[0])

            try:
                found = approx_global_max(
                    g, self.support, self.lipschitz + s, self.tol,
                    upper_bound=bound, vectorized=True)
            except BudgetExhausted as e:
                found = e.result
            maxima[k] = max(found.value, self.at_samples[k])
        return maxima


def _minimize_in_s(objective: Callable[[float], float], s_hi: float,
                   tol: float) -> float:
    """
    Minimize a convex function of s on [0, s_hi] with a bounded scalar
    search, falling back to a grid when the search does worse than the
    endpoints.
    """
    ends = min(objective(0.0), objective(s_hi))
    if s_hi <= 0:
        return ends
    found = minimize_scalar(objective, bounds=(0.0, s_hi), method="bounded",
                            options={"xatol": tol})
    best = min(ends, float(found.fun))
    if float(found.fun) > ends:
        grid = np.linspace(0.0, s_hi, FALLBACK_GRID)
        best = min(best, min(objective(s) for s in grid))
    return best


def _s_limit(maxima: _SampleMaxima, bounds: LossBounds | None,
             theta: float) -> float:
    s_hi = maxima.lipschitz
    if bounds is not None and not bounds.heuristic:
        s_hi = min(s_hi, bounds.width / theta)
    return max(s_hi, 0.0)


def worst_case_cost(x: np.ndarray, instance: DROInstance, tol: float = 1e-4,
                    bounds: LossBounds | None = None) -> float:
    """
    Worst-case expected loss at x over the Wasserstein ball:
    min over s >= 0 of theta s + mean_l M_l(s).
    """
    x = instance.decision_box.require_inside(x, "x")
    maxima = _SampleMaxima(x, instance, tol)
    return _minimize_in_s(
        lambda s: instance.theta * s + float(np.mean(maxima(s))),
        _s_limit(maxima, bounds, instance.theta), tol)


def _cvar_given_maxima(values: np.ndarray, beta: float) -> float:
    """min over t of t + mean((values - t)_+)/beta, exact at a breakpoint."""
    t = values[:, None]
    excess = np.maximum(values[None, :] - t, 0.0).mean(axis=1)
    return float(np.min(values + excess / beta))


def cvar_value(x: np.ndarray, instance: DROInstance, beta: float,
               tol: float = 1e-4, bounds: LossBounds | None = None) -> float:
    """
    Worst-case CVaR at level beta:
    min over s >= 0 and t of t + (theta s + mean_l (M_l(s) - t)_+)/beta.
    """
    if not 0.0 < beta <= 1.0:
        raise InvalidBeta(f"beta must lie in (0, 1], got {beta}")
    x = instance.decision_box.require_inside(x, "x")
    maxima = _SampleMaxima(x, instance, tol)
    return _minimize_in_s(
        lambda s: (instance.theta * s / beta
                   + _cvar_given_maxima(maxima(s), beta)),
        _s_limit(maxima, bounds, instance.theta), tol)


def sample_average(x: np.ndarray, instance: DROInstance) -> float:
    """Empirical mean loss at x."""
    return float(np.mean(instance.loss.value(x, instance.samples)))
