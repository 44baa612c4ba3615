"""Phase-space grid, map family, disturbance model, and RNG streams.

The controlled system is q_{n+1} = f(q_n) + xi_n + u_n on a region
Q = [lower, upper]: f is the deterministic map, xi_n a bounded random
disturbance, u_n the control.  This module defines the uniform grid over Q,
the two map kinds (slope-mu tent map and constant map), and the disturbance
model in both of its roles: the finite worst-case support used by the safety
solver and the continuous uniform sampler used in simulation.

Map images are never clamped to Q; downstream code treats out-of-region
images through plain distances to grid points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InvalidConfigError",
    "Grid",
    "MapSpec",
    "DisturbanceModel",
    "RngStream",
    "map_eval",
    "disturbance_support",
    "sample_disturbance",
]


class InvalidConfigError(ValueError):
    """A structurally invalid configuration or input value."""


class Grid:
    """Uniform closed grid over Q = [lower, upper] with ``count`` points.

    Both endpoints are grid points; ``spacing`` is (upper - lower)/(count - 1).
    The point array is immutable so the grid can be shared freely.
    """

    def __init__(self, lower: float, upper: float, count: int):
        lower = float(lower)
        upper = float(upper)
        count = int(count)
        if not (math.isfinite(lower) and math.isfinite(upper)):
            raise InvalidConfigError("grid bounds must be finite")
        if not upper > lower:
            raise InvalidConfigError(f"grid needs upper > lower, got [{lower}, {upper}]")
        if count < 2:
            raise InvalidConfigError(f"grid needs at least 2 points, got {count}")
        self.lower = lower
        self.upper = upper
        self.count = count
        self.spacing = (upper - lower) / (count - 1)
        points = np.linspace(lower, upper, count)
        points.setflags(write=False)
        self.points = points

    def nearest_index(self, x: float) -> int:
        """Index of the grid point closest to ``x``; exact ties go to the lower index."""
        if not math.isfinite(x):
            raise InvalidConfigError(f"nearest_index needs a finite value, got {x}")
        q = self.points
        i = int(math.floor((x - self.lower) / self.spacing + 0.5))
        i = min(max(i, 0), self.count - 1)
        # The arithmetic guess can be off by one grid cell after rounding, so
        # settle locally: move down on ties, up only on strict improvement.
        while i > 0 and abs(q[i - 1] - x) <= abs(q[i] - x):
            i -= 1
        while i < self.count - 1 and abs(q[i + 1] - x) < abs(q[i] - x):
            i += 1
        return i

    def __repr__(self) -> str:
        return f"Grid(lower={self.lower}, upper={self.upper}, count={self.count})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and self.lower == other.lower
            and self.upper == other.upper
            and self.count == other.count
        )

    def __hash__(self):
        return hash((self.lower, self.upper, self.count))


@dataclass(frozen=True)
class MapSpec:
    """One-dimensional map on a grid's region: tent(mu) or constant(c).

    The tent map evaluates to exactly mu*x for x <= 1/2 and mu*(1 - x)
    otherwise.  The constant map sends every point to c and exists for
    analytically solvable test cases.
    """

    kind: str
    parameter: float
    domain: Grid

    def __post_init__(self):
        if self.kind not in ("tent", "constant"):
            raise InvalidConfigError(f"unknown map kind {self.kind!r}")
        if not math.isfinite(self.parameter):
            raise InvalidConfigError(f"map parameter must be finite, got {self.parameter}")

    @classmethod
    def tent(cls, mu: float, domain: Grid) -> "MapSpec":
        return cls("tent", float(mu), domain)

    @classmethod
    def constant(cls, c: float, domain: Grid) -> "MapSpec":
        return cls("constant", float(c), domain)

    def __call__(self, x: float) -> float:
        if self.kind == "tent":
            return self.parameter * x if x <= 0.5 else self.parameter * (1.0 - x)
        return self.parameter

    def values_on(self, x: np.ndarray) -> np.ndarray:
        """Vectorized evaluation, bit-identical to scalar calls."""
        x = np.asarray(x, dtype=float)
        if self.kind == "tent":
            return np.where(x <= 0.5, self.parameter * x, self.parameter * (1.0 - x))
        return np.full(x.shape, self.parameter)


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded disturbance |xi| <= bound with an M-point worst-case support.

    The worst-case discretization is M evenly spaced values on
    [-bound, +bound].  M must be odd so that -bound, 0, +bound are all on the
    support (the adversary's maximum is typically attained at the endpoints);
    M = 1 is allowed only for the noiseless model.  Simulation draws are
    continuous uniform on [-bound, +bound].
    """

    bound: float
    support_count: int

    def __post_init__(self):
        if not (math.isfinite(self.bound) and self.bound >= 0.0):
            raise InvalidConfigError(f"disturbance bound must be finite and >= 0, got {self.bound}")
        if self.support_count < 1 or self.support_count % 2 == 0:
            raise InvalidConfigError(
                f"support count must be a positive odd integer, got {self.support_count}"
            )
        if self.support_count == 1 and self.bound > 0.0:
            raise InvalidConfigError(
                "a single-point support cannot cover a nonzero bound; need the "
                "endpoints and zero on the support"
            )

    def support(self) -> np.ndarray:
        # Built from the nonnegative half and mirrored, so the support always
        # contains exact 0 and exact +/-bound and negates onto itself bitwise.
        half = (self.support_count - 1) // 2
        if half == 0:
            return np.zeros(1)
        positive = np.linspace(0.0, self.bound, half + 1)
        return np.concatenate([-positive[:0:-1], positive])

    def sample(self, stream: "RngStream", size: int | None = None):
        return stream.generator.uniform(-self.bound, self.bound, size)


class RngStream:
    """One deterministic substream of a master seed.

    Draws are a pure function of (master_seed, stream_index, draw position):
    reconstructing a stream replays its sequence exactly, and distinct stream
    indices are statistically independent.  Ensemble code assigns one stream
    per orbit so results do not depend on execution order.
    """

    def __init__(self, master_seed: int, stream_index: int = 0):
        master_seed = int(master_seed)
        stream_index = int(stream_index)
        if master_seed < 0 or stream_index < 0:
            raise InvalidConfigError("seed and stream index must be nonnegative integers")
        self.master_seed = master_seed
        self.stream_index = stream_index
        self.generator = np.random.default_rng([master_seed, stream_index])

    def sibling(self, stream_index: int) -> "RngStream":
        """A fresh stream under the same master seed."""
        return RngStream(self.master_seed, stream_index)

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_index={self.stream_index})"


def map_eval(m: MapSpec, x: float) -> float:
    """Evaluate the map at a finite point; images may leave the region."""
    if not math.isfinite(x):
        raise InvalidConfigError(f"map input must be finite, got {x}")
    return float(m(float(x)))


def disturbance_support(d: DisturbanceModel) -> np.ndarray:
    """The M evenly spaced worst-case disturbance values on [-bound, +bound]."""
    return d.support()


def sample_disturbance(d: DisturbanceModel, r: RngStream) -> float:
    """Draw one continuous uniform disturbance; advances the stream."""
    return float(d.sample(r))
