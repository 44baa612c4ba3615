"""Safety-function solver and safe-set extraction.

The safety function U assigns to each grid point the smallest control budget
that keeps an orbit inside the region forever, against the worst disturbance
on the model's finite support.  It is the fixed point of the update

    U'[i] = max_s  min_j  max( |f(q[i]) + xi[s] - q[j]|,  U[j] )

started from U_0 = 0: the controller answers the adversary's disturbance by
steering to the grid point that minimizes the larger of the step's control
cost and the budget needed from there on.

Math notes
----------
* Monotonicity: the update is monotone in U and U_1 >= U_0 = 0, so the
  iterates are pointwise nondecreasing.
* Finite termination: max and min return one of their operands unchanged, so
  every iterate entry is either 0 or one of the finitely many distances
  |f(q[i]) + xi[s] - q[j]|; a nondecreasing sequence over a finite set must
  become exactly stationary.  Convergence is therefore tested as exact array
  equality, and one more sweep applied to a converged U is a no-op.
* Path equality: max and min only select among identical float values, so the
  streaming reference pass and the compiled envelope-scan pass return
  bit-identical arrays regardless of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import DisturbanceModel, Grid, InvalidConfigError, MapSpec

__all__ = [
    "ConvergenceError",
    "NoSafeSetError",
    "SafetyFunction",
    "SafeSet",
    "PieceStats",
    "membership_tolerance",
    "bellman_update",
    "compute_safety_function",
    "min_control_bound",
    "extract_safe_set",
    "piece_stats",
]

# Rows of (i, s) pairs processed per block in the reference update; bounds
# peak memory at roughly chunk * M * N floats without changing any result.
_REFERENCE_CHUNK = 32


class ConvergenceError(RuntimeError):
    """The fixed-point iteration did not stabilize within the sweep budget."""

    def __init__(self, iterations: int, residual: float, last_values: np.ndarray):
        super().__init__(
            f"no fixed point after {iterations} sweeps; last sup-norm change {residual:.3e}"
        )
        self.iterations = iterations
        self.residual = residual
        self.last_values = last_values


class NoSafeSetError(ValueError):
    """Threshold lies below the minimum of the safety function."""


def membership_tolerance(u0: float) -> float:
    """Slack for safe-set membership tests at threshold u0.

    The minimum of U sits on flat plateaus whose entries can disagree in the
    last bits after long max/min chains, so membership uses a tolerance a few
    orders above machine epsilon instead of exact comparison.
    """
    return 1e-9 + 1e-9 * abs(u0)


class SafetyFunction:
    """Converged per-grid-point control budgets plus solve provenance."""

    def __init__(self, grid: Grid, values: np.ndarray, iterations: int,
                 map_spec: MapSpec, disturbance: DisturbanceModel):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.count,):
            raise InvalidConfigError(
                f"value array of shape {values.shape} does not match grid count {grid.count}"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise InvalidConfigError("safety values must be finite and nonnegative")
        values = values.copy()
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.iterations = int(iterations)
        self.map_spec = map_spec
        self.disturbance = disturbance

    def __repr__(self) -> str:
        return (
            f"SafetyFunction(n={self.grid.count}, iterations={self.iterations}, "
            f"min={self.values.min():.6g})"
        )


class SafeSet:
    """Grid points whose safety value does not exceed a threshold.

    ``pieces`` lists the maximal contiguous index runs [left, right] of the
    membership mask, sorted and disjoint by construction.
    """

    def __init__(self, grid: Grid, threshold: float, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (grid.count,):
            raise InvalidConfigError(
                f"mask of shape {mask.shape} does not match grid count {grid.count}"
            )
        mask = mask.copy()
        mask.setflags(write=False)
        self.grid = grid
        self.threshold = float(threshold)
        self.mask = mask
        edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.view(np.int8), [0]))))
        self.pieces = list(zip(edges[0::2].tolist(), (edges[1::2] - 1).tolist()))
        self.indices = np.flatnonzero(mask)

    @property
    def is_empty(self) -> bool:
        return not self.pieces

    def intervals(self) -> list[tuple[float, float]]:
        """Piece endpoints in phase-space units."""
        q = self.grid.points
        return [(float(q[a]), float(q[b])) for a, b in self.pieces]

    def contains(self, x: float) -> bool:
        """Whether x falls inside any piece interval (closed endpoints)."""
        q = self.grid.points
        for a, b in self.pieces:
            if q[a] <= x <= q[b]:
                return True
        return False

    def __repr__(self) -> str:
        return f"SafeSet(threshold={self.threshold:.6g}, pieces={len(self.pieces)})"


@dataclass(frozen=True)
class PieceStats:
    """Structure summary of a safe set's pieces.

    Gaps are center-to-center distances of adjacent pieces; they are None
    when fewer than two pieces exist.
    """

    count: int
    widths: tuple[float, ...]
    mean_gap: float | None
    min_gap: float | None
    max_gap: float | None


def _support_and_images(grid: Grid, map_spec: MapSpec, disturbance: DisturbanceModel):
    images = map_spec.values_on(grid.points)
    return images, disturbance.support()


def _bellman_reference(values, grid, images, support):
    """Streaming update: direct min over j for each (i, s) pair, blockwise."""
    n = grid.count
    q = grid.points
    m = support.shape[0]
    out = np.empty(n)
    targets = images[:, None] + support[None, :]
    for start in range(0, n, _REFERENCE_CHUNK):
        stop = min(start + _REFERENCE_CHUNK, n)
        block = targets[start:stop].reshape(-1, 1)
        cost = np.maximum(np.abs(block - q[None, :]), values[None, :])
        out[start:stop] = cost.min(axis=1).reshape(stop - start, m).max(axis=1)
    return out


def _bellman_fast(values, grid, images, support):
    out = np.empty(grid.count)
    _kernels.bellman_sweep(
        grid.points, values, images, support, grid.lower, grid.spacing, out
    )
    return out


def bellman_update(values: np.ndarray, grid: Grid, map_spec: MapSpec,
                   disturbance: DisturbanceModel, method: str = "auto") -> np.ndarray:
    """One worst-case update sweep over the whole grid.

    ``method`` selects the evaluation path: "reference" streams over (i, s)
    pairs with a direct min over j, "fast" answers each inner min as an
    envelope scan around the target, "auto" uses the fast path.  Both paths
    return bit-identical arrays.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.count,):
        raise InvalidConfigError(
            f"value array of shape {values.shape} does not match grid count {grid.count}"
        )
    if not np.all(np.isfinite(values)) or np.any(values < 0.0):
        raise InvalidConfigError("value array must be finite and nonnegative")
    if method not in ("auto", "fast", "reference"):
        raise InvalidConfigError(f"unknown method {method!r}")
    images, support = _support_and_images(grid, map_spec, disturbance)
    if method == "reference":
        return _bellman_reference(values, grid, images, support)
    return _bellman_fast(values, grid, images, support)


def compute_safety_function(grid: Grid, map_spec: MapSpec, disturbance: DisturbanceModel,
                            max_iters: int = 10_000, method: str = "auto") -> SafetyFunction:
    """Iterate the update from U = 0 to its exact fixed point.

    Stops when a sweep changes no value; the recorded iteration count
    includes that final confirming sweep.  Raises ConvergenceError (carrying
    the last iterate and residual) if the budget runs out first.
    """
    if max_iters < 1:
        raise InvalidConfigError(f"max_iters must be >= 1, got {max_iters}")
    if method not in ("auto", "fast", "reference"):
        raise InvalidConfigError(f"unknown method {method!r}")
    images, support = _support_and_images(grid, map_spec, disturbance)
    step = _bellman_reference if method == "reference" else _bellman_fast
    values = np.zeros(grid.count)
    residual = np.inf
    for sweep in range(1, max_iters + 1):
        updated = step(values, grid, images, support)
        if np.any(updated < values):
            raise RuntimeError("update lost monotonicity; solver invariant broken")
        if np.array_equal(updated, values):
            return SafetyFunction(grid, values, sweep, map_spec, disturbance)
        residual = float(np.max(np.abs(updated - values)))
        values = updated
    raise ConvergenceError(max_iters, residual, values)


def min_control_bound(sf: SafetyFunction) -> float:
    """The smallest value of the safety function: the cheapest sustainable budget."""
    return float(sf.values.min())


def extract_safe_set(sf: SafetyFunction, threshold: float | None = None) -> SafeSet:
    """Grid points with safety value <= threshold (default: the minimum of U)."""
    u0 = min_control_bound(sf) if threshold is None else float(threshold)
    tol = membership_tolerance(u0)
    if u0 < min_control_bound(sf) - tol:
        raise NoSafeSetError(
            f"threshold {u0:.17g} lies below the safety-function minimum "
            f"{min_control_bound(sf):.17g}; no grid point qualifies"
        )
    return SafeSet(sf.grid, u0, sf.values <= u0 + tol)


def piece_stats(ss: SafeSet, grid: Grid | None = None) -> PieceStats:
    """Count, widths, and center-to-center gap statistics of the pieces."""
    q = (grid or ss.grid).points
    widths = tuple(float(q[b] - q[a]) for a, b in ss.pieces)
    if len(ss.pieces) < 2:
        return PieceStats(len(ss.pieces), widths, None, None, None)
    centers = np.array([(q[a] + q[b]) / 2.0 for a, b in ss.pieces])
    gaps = np.diff(centers)
    return PieceStats(
        count=len(ss.pieces),
        widths=widths,
        mean_gap=float(gaps.mean()),
        min_gap=float(gaps.min()),
        max_gap=float(gaps.max()),
    )
