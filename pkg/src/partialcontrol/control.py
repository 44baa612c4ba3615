"""Orbit simulation: uncontrolled escape, snap-to-safe-set control, and
descent control toward the safe set.

Both controllers act after the noisy image q* = f(q_n) + xi_n is known and
place the next state on a grid point.  The snap controller's budget is only
guaranteed while the orbit stays inside the safe set; the descent controller
is global on Q and drives any start into the safe set by minimizing
max(|u|, U(next state)) over all grid points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import DisturbanceModel, InvalidConfigError, MapSpec, RngStream, sample_disturbance
from .safety import SafeSet, SafetyFunction, extract_safe_set

__all__ = [
    "NoControl",
    "PartialControl",
    "DescentControl",
    "OrbitRecord",
    "uncontrolled_escape_time",
    "partial_control_step",
    "descent_control_step",
    "simulate_orbit",
]


@dataclass(frozen=True)
class NoControl:
    """Free-running orbit; u_n = 0 at every step."""


@dataclass(frozen=True)
class PartialControl:
    """Snap each noisy image to the nearest safe grid point."""

    safe_set: SafeSet

    def __post_init__(self):
        if self.safe_set.is_empty:
            raise InvalidConfigError("partial control needs a nonempty safe set")


@dataclass(frozen=True)
class DescentControl:
    """Steer each noisy image toward lower safety values."""

    safety: SafetyFunction
    # Entry bookkeeping always measures against the cheapest safe set,
    # whatever threshold the caller may use elsewhere.
    reference_set: SafeSet = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "reference_set", extract_safe_set(self.safety))


ControllerKind = NoControl | PartialControl | DescentControl


@dataclass
class OrbitRecord:
    """Per-step trace of one simulated orbit.

    Arrays share one index n = 0 .. len-1: state q[n], disturbance xi[n],
    control u[n], successor q_next[n], the safety value at the successor
    (NaN when the controller carries no safety function), and safe-set
    membership of the successor (always False without a reference set).
    ``entered_at`` is the first n with q_n inside the safe set, counting the
    initial state as n = 0; ``escaped_at`` is the first n whose image left
    the region (uncontrolled runs only).
    """

    n: np.ndarray
    q: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    q_next: np.ndarray
    safety_next: np.ndarray
    in_safe: np.ndarray
    escaped_at: int | None
    entered_at: int | None

    def __len__(self) -> int:
        return len(self.n)

    def rows(self):
        """Step tuples in file order: (n, q, xi, u, q_next, U_next, in_safe)."""
        for k in range(len(self.n)):
            yield (
                int(self.n[k]),
                float(self.q[k]),
                float(self.xi[k]),
                float(self.u[k]),
                float(self.q_next[k]),
                float(self.safety_next[k]),
                bool(self.in_safe[k]),
            )


def uncontrolled_escape_time(m: MapSpec, d: DisturbanceModel, q0: float,
                             r: RngStream, max_steps: int) -> int | None:
    """First step n >= 1 whose noisy image leaves the region, else None.

    Escape at n means the n-th application of the map produced a point
    outside [lower, upper]; an orbit surviving max_steps applications has no
    escape time.
    """
    grid = m.domain
    _require_in_region(q0, grid, "initial condition")
    x = float(q0)
    for n in range(1, max_steps + 1):
        x = m(x) + sample_disturbance(d, r)
        if x < grid.lower or x > grid.upper:
            return n
    return None


def _partial_choice(ss: SafeSet, target: float) -> int:
    """Position (within the safe-point list) nearest to target, ties downward."""
    safe_points = ss.grid.points[ss.indices]
    pos = int(np.searchsorted(safe_points, target))
    best = None
    for cand in (pos - 1, pos):
        if 0 <= cand < len(safe_points):
            key = (abs(float(safe_points[cand]) - target), cand)
            if best is None or key < best:
                best = key
    return int(best[1])


def _partial_step(m, d, ss, q_n, r):
    xi = sample_disturbance(d, r)
    target = m(float(q_n)) + xi
    pick = _partial_choice(ss, target)
    chosen = float(ss.grid.points[ss.indices[pick]])
    return chosen, chosen - target, xi


def _descent_step(m, d, sf, q_n, r):
    xi = sample_disturbance(d, r)
    target = m(float(q_n)) + xi
    grid = sf.grid
    j = _kernels.envelope_argmin(grid.points, sf.values, grid.lower, grid.spacing, target)
    return float(grid.points[j]), float(grid.points[j]) - target, xi, int(j)


def partial_control_step(m: MapSpec, d: DisturbanceModel, ss: SafeSet,
                         q_n: float, r: RngStream) -> tuple[float, float]:
    """Draw xi, then snap the noisy image onto the nearest safe grid point.

    Exact distance ties resolve to the lower grid index.  Returns
    (q_{n+1}, u_n) with u_n = q_{n+1} - (f(q_n) + xi_n).
    """
    if ss.is_empty:
        raise InvalidConfigError("partial control needs a nonempty safe set")
    chosen, u, _ = _partial_step(m, d, ss, q_n, r)
    return chosen, u


def descent_control_step(m: MapSpec, d: DisturbanceModel, sf: SafetyFunction,
                         q_n: float, r: RngStream) -> tuple[float, float]:
    """Draw xi, then move to the grid point minimizing max(|u|, U(point)).

    The minimum ranges over every grid point; ties resolve to the smaller
    |u|, then to the lower index.  Returns (q_{n+1}, u_n).
    """
    chosen, u, _, _ = _descent_step(m, d, sf, q_n, r)
    return chosen, u


def _require_in_region(q0, grid, label):
    if not (grid.lower <= q0 <= grid.upper):
        raise InvalidConfigError(
            f"{label} {q0} lies outside the region [{grid.lower}, {grid.upper}]"
        )


def simulate_orbit(kind: ControllerKind, m: MapSpec, d: DisturbanceModel,
                   q0: float, steps: int, r: RngStream) -> OrbitRecord:
    """Apply one step rule for ``steps`` iterations (or until escape).

    Controlled runs never terminate early; uncontrolled runs stop at the
    first image outside the region, with that final step still recorded.
    """
    if steps < 0:
        raise InvalidConfigError(f"steps must be >= 0, got {steps}")
    grid = m.domain
    if isinstance(kind, NoControl):
        reference_set, safety = None, None
    elif isinstance(kind, PartialControl):
        reference_set, safety = kind.safe_set, None
        _require_in_region(q0, grid, "initial condition")
    elif isinstance(kind, DescentControl):
        reference_set, safety = kind.reference_set, kind.safety
        _require_in_region(q0, grid, "initial condition")
    else:
        raise InvalidConfigError(f"unknown controller kind {kind!r}")

    n_col, q_col, xi_col, u_col = [], [], [], []
    next_col, sval_col, safe_col = [], [], []
    escaped_at = None
    entered_at = None
    x = float(q0)
    if reference_set is not None and reference_set.contains(x):
        entered_at = 0
    for n in range(steps):
        if isinstance(kind, NoControl):
            xi = sample_disturbance(d, r)
            q_next = m(x) + xi
            u = 0.0
            sval = float("nan")
        elif isinstance(kind, PartialControl):
            q_next, u, xi = _partial_step(m, d, kind.safe_set, x, r)
            sval = float("nan")
        else:
            q_next, u, xi, j = _descent_step(m, d, safety, x, r)
            sval = float(safety.values[j])
        n_col.append(n)
        q_col.append(x)
        xi_col.append(xi)
        u_col.append(u)
        next_col.append(q_next)
        sval_col.append(sval)
        in_safe = reference_set is not None and reference_set.contains(q_next)
        safe_col.append(in_safe)
        if in_safe and entered_at is None:
            entered_at = n + 1
        x = q_next
        if isinstance(kind, NoControl) and not (grid.lower <= x <= grid.upper):
            escaped_at = n + 1
            break
    return OrbitRecord(
        n=np.array(n_col, dtype=int),
        q=np.array(q_col),
        xi=np.array(xi_col),
        u=np.array(u_col),
        q_next=np.array(next_col),
        safety_next=np.array(sval_col),
        in_safe=np.array(safe_col, dtype=bool),
        escaped_at=escaped_at,
        entered_at=entered_at,
    )
