"""
Solver for finitely constrained convex programs over a box:

    minimize F(x)  subject to  c(x) <= 0,  x in box

using an augmented Lagrangian outer loop on the constraints and a projected
gradient inner loop on the box. Only function values, (sub)gradients and
box projections are needed.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from dsip.errors import DimensionMismatch, Infeasible, NonFiniteValue
from dsip.sip import Box

MU_INITIAL = 10.0
MU_MAX = 1e10
MU_GROWTH = 10.0
# Penalty grows unless the violation shrinks at least this much per outer
# iteration.
VIOLATION_DECREASE = 0.25
ARMIJO = 1e-4
STEP_MIN = 1e-12
STEP_MAX = 1e12

Vector = np.ndarray


class SolveStatus(Enum):
    """Enumeration for subproblem outcomes."""
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and budget for one solve."""
    feas_tol: float = 1e-6
    opt_tol: float = 1e-6
    max_iter: int = 50_000

    def __post_init__(self) -> None:
        if self.feas_tol <= 0 or self.opt_tol <= 0:
            raise ValueError("Solver tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True, eq=False)
class FiniteConvexProgram:
    """
    A convex objective with gradient, a box, and a vector of convex
    constraints c(x) <= 0 given by their values and a vector-Jacobian
    product vjp(x, w) = sum_j w_j * subgradient(c_j)(x).
    The first `split` coordinates of x are the global block y, the rest
    are the local block z.
    """
    objective: Callable[[Vector], float]
    gradient: Callable[[Vector], Vector]
    box: Box
    constraints: Callable[[Vector], Vector] | None = None
    constraints_vjp: Callable[[Vector, Vector], Vector] | None = None
    split: int = 0

    @classmethod
    def from_handles(
        cls,
        objective: Callable[[Vector], float],
        gradient: Callable[[Vector], Vector],
        box: Box,
        constraints: Sequence[
            tuple[Callable[[Vector], float], Callable[[Vector], Vector]]
        ] = (),
        split: int = 0,
    ) -> "FiniteConvexProgram":
        """Build a program from scalar (value, subgradient) pairs."""
        handles = list(constraints)
        if not handles:
            return cls(objective, gradient, box, split=split)

        def values(x: Vector) -> Vector:
            return np.array([value(x) for value, _ in handles], dtype=float)

        def vjp(x: Vector, weights: Vector) -> Vector:
            total = np.zeros_like(x)
            for w, (_, subgradient) in zip(weights, handles):
                if w != 0.0:
                    total += w * np.asarray(subgradient(x), dtype=float)
            return total

        return cls(objective, gradient, box, values, vjp, split)

    def constraint_values(self, x: Vector) -> Vector:
        if self.constraints is None:
            return np.empty(0)
        values = np.asarray(self.constraints(x), dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("Constraint returned a non-finite value")
        return values


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Outcome of a solve; `point` is the best iterate found."""
    point: Vector
    objective_value: float
    max_constraint_violation: float
    kkt_residual: float
    iterations: int
    status: SolveStatus
    multipliers: Vector
    split: int = 0

    @property
    def y(self) -> Vector:
        return self.point[:self.split]

    @property
    def z(self) -> Vector:
        return self.point[self.split:]

    def raise_for_status(self) -> None:
        """Raise Infeasible if the program was found infeasible."""
        if self.status is SolveStatus.INFEASIBLE:
            raise Infeasible(self.max_constraint_violation, self)


class _Merit:
    """Powell-Hestenes-Rockafellar augmented Lagrangian of a program."""

    def __init__(self, prog: FiniteConvexProgram, lam: Vector, mu: float):
        self.prog = prog
        self.lam = lam
        self.mu = mu

    def __call__(self, x: Vector) -> tuple[float, Vector, float]:
        """Merit value, merit gradient, and the sup-norm of grad F."""
        value = float(self.prog.objective(x))
        grad = np.asarray(self.prog.gradient(x), dtype=float)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise NonFiniteValue("Objective returned a non-finite value")
        scale = float(np.max(np.abs(grad), initial=0.0))
        if self.lam.size:
            c = self.prog.constraint_values(x)
            shifted = np.maximum(0.0, self.lam + self.mu * c)
            value += float(shifted @ shifted - self.lam @ self.lam) / (
                2.0 * self.mu)
            if np.any(shifted > 0):
                grad = grad + self.prog.constraints_vjp(x, shifted)
        return value, grad, scale


def _stationarity(box: Box, x: Vector, grad: Vector) -> float:
    return float(np.max(np.abs(x - box.project(x - grad))))


def _minimize_on_box(merit: _Merit, box: Box, x: Vector, omega: float,
                     budget: int) -> tuple[Vector, int, bool]:
    """
    Projected gradient with Barzilai-Borwein steps and Armijo backtracking.
    When backtracking fails (at kinks) it takes a normalized diminishing
    step instead. Returns the best point, iterations used and whether the
    stationarity target was met.
    """
    value, grad, scale = merit(x)
    best_x, best_value = x, value
    step = 1.0 / max(1.0, float(np.max(np.abs(grad))))
    last_move = 0.1 * max(box.diameter, 1e-8)
    for t in range(budget):
        if _stationarity(box, x, grad) <= omega * max(1.0, scale):
            return x, t, True
        alpha = step
        accepted = False
        while alpha >= STEP_MIN:
            x_new = box.project(x - alpha * grad)
            value_new, grad_new, scale_new = merit(x_new)
            if value_new <= value + ARMIJO * float(grad @ (x_new - x)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            norm = float(np.linalg.norm(grad))
            direction = grad / norm if norm > 0 else grad
            x_new = box.project(
                x - last_move / np.sqrt(t + 1.0) * direction)
            value_new, grad_new, scale_new = merit(x_new)
        s = x_new - x
        moved = float(np.linalg.norm(s))
        if accepted and moved > 0:
            last_move = moved
        curvature = float(s @ (grad_new - grad))
        if curvature > 0:
            step = float(np.clip(s @ s / curvature, STEP_MIN, STEP_MAX))
        else:
            step = min(STEP_MAX, 2.0 * alpha if accepted else step)
        x, value, grad, scale = x_new, value_new, grad_new, scale_new
        if value < best_value:
            best_x, best_value = x, value
    done = _stationarity(box, x, grad) <= omega * max(1.0, scale)
    return (x if done else best_x), budget, done


def _kkt_residual(prog: FiniteConvexProgram, x: Vector, lam: Vector,
                  c: Vector) -> float:
    """
    Projected stationarity of the Lagrangian, relative to the objective
    gradient scale, together with complementarity.
    """
    grad = np.asarray(prog.gradient(x), dtype=float)
    scale = max(1.0, float(np.max(np.abs(grad), initial=0.0)))
    if lam.size and np.any(lam > 0):
        grad = grad + prog.constraints_vjp(x, lam)
    residual = _stationarity(prog.box, x, grad) / scale
    if lam.size:
        residual = max(residual,
                       float(np.max(np.abs(np.minimum(lam, -c)))))
    return residual


def solve(prog: FiniteConvexProgram, warm_start: Vector,
          config: SolverConfig = SolverConfig()) -> SolveReport:
    """
    Solve the program from `warm_start`, which must lie in the box.

    The multipliers follow lam <- max(0, lam + mu c) after each inner
    solve, and the penalty mu grows tenfold whenever the violation fails
    to shrink fast enough. The program is declared infeasible when mu
    passes MU_MAX with a converged inner solve that is still violated.
    """
    x = np.asarray(warm_start, dtype=float)
    if x.size != prog.box.dim:
        raise DimensionMismatch(
            f"Warm start has size {x.size}, box has dim {prog.box.dim}")
    x = prog.box.project(prog.box.require_inside(x, "warm start"))
    count = prog.constraint_values(x).size
    lam = np.zeros(count)
    mu = MU_INITIAL
    iterations = 0
    outer = 0
    previous_violation = np.inf
    best: tuple[tuple[float, float], Vector, Vector] | None = None

    def report(point: Vector, multipliers: Vector,
               status: SolveStatus) -> SolveReport:
        c = prog.constraint_values(point)
        violation = max(0.0, float(np.max(c, initial=0.0)))
        return SolveReport(
            point.copy(), float(prog.objective(point)), violation,
            _kkt_residual(prog, point, multipliers, c), iterations, status,
            multipliers.copy(), prog.split)

    while iterations < config.max_iter:
        if count:
            omega = max(config.opt_tol, 0.1 ** (outer + 2))
        else:
            omega = config.opt_tol
        merit = _Merit(prog, lam, mu)
        x, used, converged = _minimize_on_box(
            merit, prog.box, x, omega, config.max_iter - iterations)
        iterations += max(1, used)
        outer += 1
        c = prog.constraint_values(x)
        violation = max(0.0, float(np.max(c, initial=0.0)))
        lam_next = np.maximum(0.0, lam + mu * c)
        feasible = violation <= config.feas_tol
        key = (0.0 if feasible else violation, float(prog.objective(x)))
        if best is None or key < best[0]:
            best = (key, x.copy(), lam_next.copy())
        if feasible and _kkt_residual(prog, x, lam_next, c) <= (
                config.opt_tol):
            return report(x, lam_next, SolveStatus.OPTIMAL)
        if not count and converged:
            break
        lam = lam_next
        if not feasible and violation > VIOLATION_DECREASE * (
                previous_violation):
            mu *= MU_GROWTH
        previous_violation = violation
        if mu > MU_MAX and not feasible and converged:
            return report(best[1], best[2], SolveStatus.INFEASIBLE)
    return report(best[1], best[2], SolveStatus.MAX_ITER)
