"""Compiled inner loops shared by the solver and the controllers.

Every kernel works on a sorted uniform grid q with per-point values U and
answers envelope queries min_j max(|q[j] - x|, U[j]) by scanning outward from
the grid point nearest to x.  A side stops as soon as its next distance alone
already exceeds the best cost found, which is safe because distance grows
monotonically away from the nearest point and cost >= distance.  The scans
evaluate the same float expressions as a full vectorized pass, and min/max
only select among those values, so results match the reference path bitwise.

Map kinds are encoded as integers: 0 = tent(parameter), 1 = constant(parameter).
"""

import warnings

import numba as nb
import numpy as np

# numba probes every threading layer at the first parallel launch and warns
# when the installed TBB is too old, even though another layer is used; the
# probe result cannot affect results, so keep that one warning quiet.
warnings.filterwarnings(
    "ignore", message=".*TBB_INTERFACE_VERSION.*", category=nb.NumbaWarning
)

MAP_TENT = 0
MAP_CONSTANT = 1


@nb.njit(cache=True)
def _map_eval(kind, parameter, x):
    if kind == MAP_TENT:
        return parameter * x if x <= 0.5 else parameter * (1.0 - x)
    return parameter


@nb.njit(cache=True)
def _nearest(q, lower, spacing, x):
    n = q.shape[0]
    i = int(np.floor((x - lower) / spacing + 0.5))
    if i < 0:
        i = 0
    elif i > n - 1:
        i = n - 1
    while i > 0 and abs(q[i - 1] - x) < abs(q[i] - x):
        i -= 1
    while i < n - 1 and abs(q[i + 1] - x) < abs(q[i] - x):
        i += 1
    return i


@nb.njit(cache=True)
def envelope_value(q, values, lower, spacing, x):
    """min over j of max(|q[j] - x|, values[j])."""
    n = q.shape[0]
    i0 = _nearest(q, lower, spacing, x)
    d = abs(q[i0] - x)
    best = d if d > values[i0] else values[i0]
    j = i0 - 1
    while j >= 0:
        d = abs(q[j] - x)
        if d >= best:
            break
        c = d if d > values[j] else values[j]
        if c < best:
            best = c
        j -= 1
    j = i0 + 1
    while j < n:
        d = abs(q[j] - x)
        if d >= best:
            break
        c = d if d > values[j] else values[j]
        if c < best:
            best = c
        j += 1
    return best


@nb.njit(cache=True)
def envelope_argmin(q, values, lower, spacing, x):
    """Index minimizing max(|q[j] - x|, values[j]).

    Ties resolve to the smaller distance |q[j] - x|, then to the lower index.
    The stop test is strict (distance > best cost) so equal-cost candidates
    are still visited and the tie rules apply over the full grid.
    """
    n = q.shape[0]
    i0 = _nearest(q, lower, spacing, x)
    best_d = abs(q[i0] - x)
    best_c = best_d if best_d > values[i0] else values[i0]
    best_j = i0
    j = i0 - 1
    while j >= 0:
        d = abs(q[j] - x)
        if d > best_c:
            break
        c = d if d > values[j] else values[j]
        if c < best_c or (c == best_c and (d < best_d or (d == best_d and j < best_j))):
            best_c = c
            best_d = d
            best_j = j
        j -= 1
    j = i0 + 1
    while j < n:
        d = abs(q[j] - x)
        if d > best_c:
            break
        c = d if d > values[j] else values[j]
        if c < best_c or (c == best_c and (d < best_d or (d == best_d and j < best_j))):
            best_c = c
            best_d = d
            best_j = j
        j += 1
    return best_j


@nb.njit(cache=True, parallel=True)
def bellman_sweep(q, values, images, support, lower, spacing, out):
    """One update sweep: out[i] = max over s of envelope_value at images[i] + support[s].

    Rows are independent, so the parallel schedule cannot change any value.
    """
    n = q.shape[0]
    m = support.shape[0]
    for i in nb.prange(n):
        worst = -1.0
        for s in range(m):
            v = envelope_value(q, values, lower, spacing, images[i] + support[s])
            if v > worst:
                worst = v
        out[i] = worst


@nb.njit(cache=True)
def descent_entry_walk(q, values, safe_mask, lower, spacing, map_kind, map_parameter,
                       q0, noise, already_safe):
    """Run descent steps until the state lands on a safe grid point.

    Consumes one noise value per step, in order.  Returns (steps, control_sum,
    final_state); steps is 0 for an initially safe state and -1 if the noise
    array is exhausted before entry.
    """
    x = q0
    if already_safe:
        return 0, 0.0, x
    total = 0.0
    for n in range(noise.shape[0]):
        target = _map_eval(map_kind, map_parameter, x) + noise[n]
        j = envelope_argmin(q, values, lower, spacing, target)
        total += abs(q[j] - target)
        x = q[j]
        if safe_mask[j]:
            return n + 1, total, x
    return -1, total, x


@nb.njit(cache=True)
def descent_sustain_walk(q, values, safe_mask, lower, spacing, map_kind, map_parameter,
                         x0, noise, control_cap):
    """Continue descent from x0 for len(noise) steps.

    Returns (cap_violations, safe_set_exits, max_abs_control) over the walk.
    """
    x = x0
    violations = 0
    exits = 0
    max_u = 0.0
    for n in range(noise.shape[0]):
        target = _map_eval(map_kind, map_parameter, x) + noise[n]
        j = envelope_argmin(q, values, lower, spacing, target)
        u = abs(q[j] - target)
        if u > control_cap:
            violations += 1
        if u > max_u:
            max_u = u
        if not safe_mask[j]:
            exits += 1
        x = q[j]
    return violations, exits, max_u
