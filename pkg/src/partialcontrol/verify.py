"""Built-in self checks behind the `verify` CLI subcommand.

The oracle here is a deliberately literal transcription of the fixed-point
recursion: plain Python loops over grid points, support points, and
candidate successors, iterated until two consecutive sweeps agree exactly.
Slow but obviously correct, it anchors the optimized solver on small
configurations where the full triple loop is affordable.
"""

from __future__ import annotations

import numpy as np

from .dynamics import DisturbanceModel, Grid, MapSpec
from .safety import bellman_update, compute_safety_function

__all__ = ["run_suites", "oracle_safety_function"]


def oracle_safety_function(grid: Grid, map_spec: MapSpec,
                           disturbance: DisturbanceModel,
                           max_sweeps: int = 1000):
    """Fixed point by the literal triple loop; returns (values, sweeps)."""
    q = [float(v) for v in grid.points]
    xs = [float(v) for v in disturbance.support()]
    images = [map_spec(x) for x in q]
    u = [0.0] * len(q)
    for sweep in range(1, max_sweeps + 1):
        new = []
        for i in range(len(q)):
            worst = -1.0
            for s in range(len(xs)):
                target = images[i] + xs[s]
                best = None
                for j in range(len(q)):
                    cost = max(abs(target - q[j]), u[j])
                    if best is None or cost < best:
                        best = cost
                if best > worst:
                    worst = best
            new.append(worst)
        if new == u:
            return np.array(u), sweep
        u = new
    raise AssertionError(f"oracle did not stabilize in {max_sweeps} sweeps")


def _medium_solve(count=500, support=51):
    grid = Grid(0.0, 1.0, count)
    map_spec = MapSpec.tent(3.0, grid)
    disturbance = DisturbanceModel(0.05, support)
    return grid, map_spec, disturbance


def _suite_oracle():
    rng = np.random.default_rng(1905)
    for _ in range(8):
        grid = Grid(0.0, 1.0, int(rng.integers(5, 26)))
        map_spec = MapSpec.tent(float(rng.uniform(2.0, 6.0)), grid)
        disturbance = DisturbanceModel(float(rng.uniform(0.01, 0.2)),
                                       int(rng.choice([3, 5])))
        sf = compute_safety_function(grid, map_spec, disturbance)
        expected, sweeps = oracle_safety_function(grid, map_spec, disturbance)
        diff = float(np.max(np.abs(sf.values - expected)))
        assert diff <= 1e-12, f"solver deviates from the oracle by {diff:.3e}"
        assert sf.iterations == sweeps, (
            f"sweep count {sf.iterations} != oracle count {sweeps}"
        )


def _suite_paths():
    grid, map_spec, disturbance = _medium_solve(count=400)
    fast = compute_safety_function(grid, map_spec, disturbance, method="fast")
    ref = compute_safety_function(grid, map_spec, disturbance, method="reference")
    assert np.array_equal(fast.values, ref.values), "fast and reference paths disagree"
    assert fast.iterations == ref.iterations, "paths converged at different sweeps"


def _suite_monotone():
    grid, map_spec, disturbance = _medium_solve()
    values = np.zeros(grid.count)
    for _ in range(10_000):
        updated = bellman_update(values, grid, map_spec, disturbance)
        assert np.all(updated >= values), "a sweep decreased some value"
        if np.array_equal(updated, values):
            return
        values = updated
    raise AssertionError("no exact fixed point within 10000 sweeps")


def _suite_symmetry():
    grid, map_spec, disturbance = _medium_solve()
    sf = compute_safety_function(grid, map_spec, disturbance)
    gap = float(np.max(np.abs(sf.values - sf.values[::-1])))
    assert gap <= 1e-12, f"tent symmetry broken by {gap:.3e}"


def _suite_fixed_point():
    grid, map_spec, disturbance = _medium_solve(count=300)
    sf = compute_safety_function(grid, map_spec, disturbance)
    updated = bellman_update(sf.values, grid, map_spec, disturbance)
    assert np.array_equal(updated, sf.values), "converged values moved under one more sweep"


_SUITES = [
    ("oracle-equivalence", _suite_oracle),
    ("fast-reference-equality", _suite_paths),
    ("monotone-convergence", _suite_monotone),
    ("tent-symmetry", _suite_symmetry),
    ("fixed-point-stability", _suite_fixed_point),
]


def run_suites():
    """(name, passed, detail) for each suite; detail is empty on pass."""
    results = []
    for name, check in _SUITES:
        try:
            check()
        except Exception as exc:
            results.append((name, False, str(exc)))
        else:
            results.append((name, True, ""))
    return results
