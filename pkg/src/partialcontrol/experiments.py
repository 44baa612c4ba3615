"""Ensemble statistics for the descent controller and parameter sweeps.

Every orbit gets its own RNG substream keyed by (seed, orbit index), so
ensemble results are independent of execution order and safe to parallelize.
Sweeps consume no randomness at all: repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import DisturbanceModel, Grid, InvalidConfigError, MapSpec, RngStream
from .safety import (
    ConvergenceError,
    SafetyFunction,
    compute_safety_function,
    extract_safe_set,
    min_control_bound,
    piece_stats,
)

__all__ = [
    "ControlFailureError",
    "ConvergenceStats",
    "SweepRow",
    "convergence_stats",
    "average_control_map",
    "sweep_xi",
    "sweep_mu",
    "support_refinement",
    "DEFAULT_XI_VALUES",
    "DEFAULT_MU_VALUES",
]

# Noise is pre-drawn in blocks and fed to the compiled walk.  Block draws from
# a Generator are bit-identical to the same number of scalar draws, so block
# size only affects speed, never results.
_NOISE_BLOCK = 16

_KERNEL_KIND = {"tent": _kernels.MAP_TENT, "constant": _kernels.MAP_CONSTANT}

DEFAULT_XI_VALUES = np.geomspace(0.005, 0.25, 50)
DEFAULT_MU_VALUES = np.linspace(2.0, 15.0, 131)


class ControlFailureError(RuntimeError):
    """An orbit failed to enter the safe set within the step budget."""

    def __init__(self, q0: float, stream_index: int, max_steps: int):
        super().__init__(
            f"orbit from q0={q0:.17g} (stream {stream_index}) did not reach "
            f"the safe set within {max_steps} steps"
        )
        self.q0 = q0
        self.stream_index = stream_index
        self.max_steps = max_steps


@dataclass
class ConvergenceStats:
    """Per-initial-condition averages of the descent controller's entry cost.

    mean_iterations[i] averages steps-to-entry over the runs of IC i;
    mean_control[i] averages each run's (sum of |u|) / steps.  ICs starting
    inside the safe set are 0 in both and consume no random draws.
    """

    q0s: np.ndarray
    mean_iterations: np.ndarray
    mean_control: np.ndarray
    runs_per_ic: int
    max_iterations: int

    def rows(self):
        """Per-IC tuples in file order: (q0, mean_iters, mean_control, runs)."""
        for k in range(len(self.q0s)):
            yield (
                float(self.q0s[k]),
                float(self.mean_iterations[k]),
                float(self.mean_control[k]),
                self.runs_per_ic,
            )


@dataclass(frozen=True)
class SweepRow:
    """Safe-set summary at one parameter value.

    A row that failed to converge carries the error message and None in every
    numeric field; ratio is u0 over the row's noise bound.
    """

    parameter: float
    u0: float | None
    ratio: float | None
    iterations: int | None
    piece_count: int | None
    mean_gap: float | None
    pieces: tuple[tuple[float, float], ...] | None
    error: str | None = None


def _entry_walk(grid: Grid, values, safe_mask, kind_code, parameter,
                d: DisturbanceModel, q0: float, stream: RngStream,
                max_steps: int) -> tuple[int, float]:
    """Steps and summed |u| until entry, drawing noise in blocks as needed."""
    x = float(q0)
    consumed = 0
    control_total = 0.0
    while True:
        block = d.sample(stream, min(_NOISE_BLOCK, max_steps - consumed))
        steps, control, x = _kernels.descent_entry_walk(
            grid.points, values, safe_mask, grid.lower, grid.spacing,
            kind_code, parameter, x, block, False,
        )
        control_total += control
        if steps >= 1:
            return consumed + steps, control_total
        consumed += len(block)
        if consumed >= max_steps:
            raise ControlFailureError(q0, stream.stream_index, max_steps)


def convergence_stats(sf: SafetyFunction, ic_count: int, runs_per_ic: int,
                      max_steps: int = 100, seed: int = 0) -> ConvergenceStats:
    """Run the descent controller from an even IC grid, many runs per IC.

    Orbit (i, j) uses substream i * runs_per_ic + j of ``seed``, so any
    single orbit can be replayed in isolation.  An orbit that fails to enter
    the safe set within max_steps raises ControlFailureError: with a valid
    safety function that indicates a broken controller, not bad luck.
    """
    if ic_count < 1:
        raise InvalidConfigError(f"ic_count must be >= 1, got {ic_count}")
    if runs_per_ic < 1:
        raise InvalidConfigError(f"runs_per_ic must be >= 1, got {runs_per_ic}")
    if max_steps < 1:
        raise InvalidConfigError(f"max_steps must be >= 1, got {max_steps}")
    safe_set = extract_safe_set(sf)
    grid = sf.grid
    kind_code = _KERNEL_KIND[sf.map_spec.kind]
    parameter = sf.map_spec.parameter
    q0s = np.linspace(grid.lower, grid.upper, ic_count)
    mean_iterations = np.zeros(ic_count)
    mean_control = np.zeros(ic_count)
    max_iterations = 0
    for i, q0 in enumerate(q0s):
        if safe_set.contains(q0):
            continue
        steps_sum = 0
        control_sum = 0.0
        for j in range(runs_per_ic):
            stream = RngStream(seed, i * runs_per_ic + j)
            steps, control = _entry_walk(
                grid, sf.values, safe_set.mask, kind_code, parameter,
                sf.disturbance, float(q0), stream, max_steps,
            )
            steps_sum += steps
            control_sum += control / steps
            if steps > max_iterations:
                max_iterations = steps
        mean_iterations[i] = steps_sum / runs_per_ic
        mean_control[i] = control_sum / runs_per_ic
    return ConvergenceStats(q0s, mean_iterations, mean_control, runs_per_ic, max_iterations)


def average_control_map(stats: ConvergenceStats) -> list[tuple[float, float]]:
    """(q0, mean control per step before entry) pairs; 0 for safe starts."""
    return [
        (float(q0), float(c))
        for q0, c in zip(stats.q0s, stats.mean_control)
    ]


def _sweep_row(parameter: float, map_spec: MapSpec, xi0: float,
               grid: Grid, support_count: int) -> SweepRow:
    disturbance = DisturbanceModel(xi0, support_count)
    try:
        sf = compute_safety_function(grid, map_spec, disturbance)
    except ConvergenceError as err:
        return SweepRow(parameter, None, None, None, None, None, None, str(err))
    u0 = min_control_bound(sf)
    safe_set = extract_safe_set(sf)
    stats = piece_stats(safe_set)
    return SweepRow(
        parameter=parameter,
        u0=u0,
        ratio=u0 / xi0,
        iterations=sf.iterations,
        piece_count=stats.count,
        mean_gap=stats.mean_gap,
        pieces=tuple(safe_set.intervals()),
        error=None,
    )


def sweep_xi(mu: float, xi0_values=None, grid: Grid | None = None,
             support_count: int = 101, seed: int = 0) -> list[SweepRow]:
    """Safe-set summaries for a tent map over a range of noise bounds.

    Rows come back sorted by noise bound.  ``seed`` is accepted for interface
    symmetry with the ensemble runners and ignored: nothing here is random.
    A row whose fixed-point iteration fails is recorded with its error and
    the sweep continues.
    """
    if grid is None:
        grid = Grid(0.0, 1.0, 1000)
    values = DEFAULT_XI_VALUES if xi0_values is None else np.asarray(xi0_values, dtype=float)
    if values.ndim != 1 or len(values) == 0:
        raise InvalidConfigError("xi0_values must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
        raise InvalidConfigError("every noise bound in a sweep must be finite and > 0")
    map_spec = MapSpec.tent(mu, grid)
    return [
        _sweep_row(float(xi0), map_spec, float(xi0), grid, support_count)
        for xi0 in np.sort(values)
    ]


def sweep_mu(xi0: float, mu_values=None, grid: Grid | None = None,
             support_count: int = 101, seed: int = 0) -> list[SweepRow]:
    """Safe-set summaries over a range of tent slopes at a fixed noise bound.

    Same conventions as sweep_xi; slopes below 2 are allowed but leave the
    transient-chaos regime this tooling is validated on.
    """
    if grid is None:
        grid = Grid(0.0, 1.0, 1000)
    if not (np.isfinite(xi0) and xi0 > 0.0):
        raise InvalidConfigError(f"noise bound must be finite and > 0, got {xi0}")
    values = DEFAULT_MU_VALUES if mu_values is None else np.asarray(mu_values, dtype=float)
    if values.ndim != 1 or len(values) == 0:
        raise InvalidConfigError("mu_values must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(values)):
        raise InvalidConfigError("every slope in a sweep must be finite")
    return [
        _sweep_row(float(mu), MapSpec.tent(float(mu), grid), float(xi0), grid, support_count)
        for mu in np.sort(values)
    ]


def support_refinement(map_spec: MapSpec, xi0: float, grid: Grid,
                       support_counts=(51, 101, 201)) -> list[tuple[int, float]]:
    """u0 at increasing support resolutions, to show it has stabilized in M.

    Sweep outputs embed this report so the discretization error of the
    finite adversary support is visible next to the results themselves.
    """
    report = []
    for count in support_counts:
        sf = compute_safety_function(grid, map_spec, DisturbanceModel(xi0, int(count)))
        report.append((int(count), min_control_bound(sf)))
    return report
