"""
Regression datasets for the DRO experiments, and instance files.
"""
import os
from typing import Sequence

import numpy as np
import yaml

from dsip.dro import DROInstance
from dsip.errors import InvalidPartition
from dsip.losses import loss_by_name
from dsip.sip import Box, Graph, make_rng

DEFAULT_W_TRUE = (1.0, 2.0, 3.0, 1.0, 0.0)
DEFAULT_DECISION_RANGE = (0.0, 5.0)
SUPPORT_INFLATION = 0.25
# Padding for a coordinate on which all samples agree.
FLAT_PADDING = 0.25


def box_muller(rng: np.random.Generator, count: int) -> np.ndarray:
    """`count` standard normals from pairs of uniforms."""
    pairs = (count + 1) // 2
    u1 = rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(1.0 - u1))
    angle = 2.0 * np.pi * u2
    return np.concatenate([radius * np.cos(angle),
                           radius * np.sin(angle)])[:count]


def regression_samples(rng: np.random.Generator, count: int,
                       w_true: Sequence[float],
                       noise_width: float) -> np.ndarray:
    """
    Rows (u, v) with u ~ N(0, I) and v = w.u + b + noise, where
    w_true = (w, b) and the noise is uniform on [-noise_width, noise_width].
    """
    w = np.asarray(w_true, dtype=float)
    inputs = box_muller(rng, count * (w.size - 1)).reshape(count, w.size - 1)
    noise = noise_width * (2.0 * rng.random(count) - 1.0)
    outputs = inputs @ w[:-1] + w[-1] + noise
    return np.hstack([inputs, outputs[:, None]])


def support_box(samples: np.ndarray,
                inflation: float = SUPPORT_INFLATION) -> Box:
    """Bounding box of the samples widened by `inflation` per side."""
    lo = samples.min(axis=0)
    hi = samples.max(axis=0)
    pad = inflation * (hi - lo)
    pad[pad == 0] = FLAT_PADDING
    return Box(lo - pad, hi + pad)


def contiguous_owners(per_agent: int | Sequence[int], n: int) -> np.ndarray:
    """Agent 0 owns the first block of samples, agent 1 the next, ..."""
    counts = ([per_agent] * n if isinstance(per_agent, int)
              else list(per_agent))
    if len(counts) != n or min(counts) < 1:
        raise InvalidPartition(
            f"Need {n} positive per-agent sample counts, got {counts}")
    return np.repeat(np.arange(n), counts)


def generate_regression_data(n: int = 6, per_agent: int | Sequence[int] = 10,
                             seed: int = 0,
                             w_true: Sequence[float] = DEFAULT_W_TRUE,
                             noise_width: float = 1.0, theta: float = 0.01,
                             loss: str = "quadratic",
                             decision_box: Box | None = None,
                             graph: Graph | None = None,
                             inflation: float = SUPPORT_INFLATION
                             ) -> DROInstance:
    """A linear regression DRO instance with samples split among agents."""
    owners = contiguous_owners(per_agent, n)
    samples = regression_samples(make_rng(seed), owners.size, w_true,
                                 noise_width)
    if decision_box is None:
        decision_box = Box.cube(len(w_true), *DEFAULT_DECISION_RANGE)
    return DROInstance(samples, owners, theta, loss_by_name(loss),
                       decision_box, support_box(samples, inflation),
                       graph if graph is not None else Graph.ring(n))


def holdout_samples(count: int, seed: int, w_true: Sequence[float],
                    noise_width: float) -> np.ndarray:
    """Fresh samples for out-of-sample evaluation, from their own stream."""
    return regression_samples(make_rng(seed), count, w_true, noise_width)


def save_instance(instance: DROInstance, filename: str) -> None:
    """Write the instance as YAML."""
    folder = os.path.dirname(filename)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(filename, "w", encoding="utf-8") as f:
        yaml.safe_dump(instance.to_dict(), f, sort_keys=False)


def load_instance(filename: str) -> DROInstance:
    with open(filename, "r", encoding="utf-8") as f:
        return DROInstance.from_dict(yaml.safe_load(f))


def tiny_instance(seed: int = 0, theta: float = 0.1,
                  per_agent: Sequence[int] = (2, 1),
                  loss: str = "quadratic") -> DROInstance:
    """
    One-dimensional samples (outputs only) fitted by an intercept in
    [0, 5]: small enough for the brute-force references.
    """
    return generate_regression_data(
        n=len(per_agent), per_agent=per_agent, seed=seed, w_true=(1.5,),
        noise_width=1.0, theta=theta, loss=loss,
        decision_box=Box.cube(1, 0.0, 5.0))
