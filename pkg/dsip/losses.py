"""
Built-in regression losses f(x, xi) for the DRO front-end.

A sample xi = (u, v) holds the inputs u (first m-1 entries) and the output
v (last entry). The decision x = (w, b) has one weight per input plus an
intercept, so x and xi have the same dimension.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from dsip.errors import DimensionMismatch, NonFiniteValue, UnsupportedLoss
from dsip.sip import Box

ValueFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
RangeFn = Callable[[np.ndarray, Box], tuple[float, float]]
IntervalFn = Callable[[Box, Box], tuple[float, float]]


class LossKind(Enum):
    """Enumeration for the loss families."""
    QUADRATIC = "quadratic"
    ABSOLUTE = "absolute"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Loss:
    """
    A loss handle, vectorized over stacks of uncertainty points.

    value(x, xis) returns shape (K,), grad_x(x, xis) shape (K, d).
    The optional members give analytic information used for certified
    bounds: a Lipschitz constant in xi over a box at fixed x, the range
    of f(x, .) over a box, and the range of f over a product of boxes.
    """
    name: str
    kind: LossKind
    value_fn: ValueFn
    grad_fn: ValueFn
    lipschitz_fn: Callable[[np.ndarray, Box], float] | None = None
    range_fn: RangeFn | None = None
    interval_fn: IntervalFn | None = None

    def value(self, x: np.ndarray, xis: np.ndarray) -> np.ndarray:
        values = np.asarray(self.value_fn(x, np.atleast_2d(xis)),
                            dtype=float)
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(f"Loss {self.name} returned {values}")
        return values

    def grad_x(self, x: np.ndarray, xis: np.ndarray) -> np.ndarray:
        return np.asarray(self.grad_fn(x, np.atleast_2d(xis)), dtype=float)

    def lipschitz_xi(self, x: np.ndarray, box: Box) -> float | None:
        """Lipschitz constant of xi -> f(x, xi) on `box`, if known."""
        if self.lipschitz_fn is None:
            return None
        return float(self.lipschitz_fn(x, box))

    def range_over(self, x: np.ndarray, box: Box
                   ) -> tuple[float, float] | None:
        """(min, max) of f(x, .) over `box`, if known."""
        if self.range_fn is None:
            return None
        return self.range_fn(x, box)

    def interval(self, x_box: Box, xi_box: Box) -> tuple[float, float]:
        """(min, max) of f over x_box times xi_box."""
        if self.interval_fn is None:
            raise UnsupportedLoss(
                f"Loss {self.name} has no interval bound")
        return self.interval_fn(x_box, xi_box)

    @classmethod
    def custom(cls, name: str, value: ValueFn, grad_x: ValueFn,
               lipschitz_xi: Callable[[np.ndarray, Box], float] | None = None,
               range_over: RangeFn | None = None,
               interval: IntervalFn | None = None) -> "Loss":
        """A user-supplied loss; its convexity in x is the caller's job."""
        return cls(name, LossKind.CUSTOM, value, grad_x, lipschitz_xi,
                   range_over, interval)


def _check_dims(x: np.ndarray, xis: np.ndarray) -> None:
    if xis.shape[-1] != x.size:
        raise DimensionMismatch(
            f"Regression loss needs dim(xi) == dim(x), got "
            f"{xis.shape[-1]} and {x.size}"
        )


def residual(x: np.ndarray, xis: np.ndarray) -> np.ndarray:
    """r = v - w.u - b for every row of `xis`."""
    _check_dims(x, xis)
    return xis[:, -1] - xis[:, :-1] @ x[:-1] - x[-1]


def _residual_coefficients(x: np.ndarray) -> np.ndarray:
    """Gradient of the residual with respect to xi."""
    return np.concatenate([-x[:-1], [1.0]])


def residual_range(x: np.ndarray, box: Box) -> tuple[float, float]:
    """Exact range of the (affine) residual over a box of xi."""
    coeffs = _residual_coefficients(x)
    mid = float(coeffs @ box.center) - x[-1]
    spread = float(np.abs(coeffs) @ (0.5 * box.widths))
    return mid - spread, mid + spread


def residual_interval(x_box: Box, xi_box: Box) -> tuple[float, float]:
    """
    Exact range of the residual over x_box times xi_box. Each product
    w_j u_j involves its own pair of variables, so summing the corner
    ranges of the products is exact.
    """
    if x_box.dim != xi_box.dim:
        raise DimensionMismatch("Decision and sample boxes differ in size")
    lo = xi_box.lower[-1] - x_box.upper[-1]
    hi = xi_box.upper[-1] - x_box.lower[-1]
    for j in range(x_box.dim - 1):
        corners = np.outer([x_box.lower[j], x_box.upper[j]],
                           [xi_box.lower[j], xi_box.upper[j]])
        lo -= corners.max()
        hi -= corners.min()
    return float(lo), float(hi)


def _square_range(lo: float, hi: float) -> tuple[float, float]:
    low = 0.0 if lo <= 0.0 <= hi else min(lo * lo, hi * hi)
    return low, max(lo * lo, hi * hi)


def _abs_range(lo: float, hi: float) -> tuple[float, float]:
    low = 0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi))
    return low, max(abs(lo), abs(hi))


def quadratic_loss() -> Loss:
    """f(x, xi) = (v - w.u - b)^2"""

    def value(x: np.ndarray, xis: np.ndarray) -> np.ndarray:
        return residual(x, xis) ** 2

    def grad(x: np.ndarray, xis: np.ndarray) -> np.ndarray:
        r = residual(x, xis)
        design = np.hstack([xis[:, :-1], np.ones((len(xis), 1))])
        return -2.0 * r[:, None] * design

    def lipschitz(x: np.ndarray, box: Box) -> float:
        lo, hi = residual_range(x, box)
        norm = float(np.linalg.norm(_residual_coefficients(x)))
        return 2.0 * max(abs(lo), abs(hi)) * norm

    return Loss(
        "quadratic", LossKind.QUADRATIC, value, grad, lipschitz,
        lambda x, box: _square_range(*residual_range(x, box)),
        lambda x_box, xi_box: _square_range(
            *residual_interval(x_box, xi_box)),
    )


def absolute_loss() -> Loss:
    """f(x, xi) = |v - w.u - b|, with subgradient 0 at the kink."""

    def value(x: np.ndarray, xis: np.ndarray) -> np.ndarray:
        return np.abs(residual(x, xis))

    def grad(x: np.ndarray, xis: np.ndarray) -> np.ndarray:
        sign = np.sign(residual(x, xis))
        design = np.hstack([xis[:, :-1], np.ones((len(xis), 1))])
        return -sign[:, None] * design

    return Loss(
        "absolute", LossKind.ABSOLUTE, value, grad,
        lambda x, _box: float(np.linalg.norm(_residual_coefficients(x))),
        lambda x, box: _abs_range(*residual_range(x, box)),
        lambda x_box, xi_box: _abs_range(*residual_interval(x_box, xi_box)),
    )


BUILTIN_LOSSES: dict[str, Callable[[], Loss]] = {
    "quadratic": quadratic_loss,
    "absolute": absolute_loss,
}


def loss_by_name(name: str) -> Loss:
    """Look up a built-in loss."""
    try:
        return BUILTIN_LOSSES[name]()
    except KeyError:
        raise UnsupportedLoss(
            f"Unknown loss '{name}', expected one of "
            f"{', '.join(sorted(BUILTIN_LOSSES))}"
        ) from None
