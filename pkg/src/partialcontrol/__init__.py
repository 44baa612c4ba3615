"""Safety functions and safe-set control for noisy one-dimensional maps.

Workflow: describe the map, grid, and disturbance (dynamics), solve for the
safety function and extract safe sets (safety), simulate controlled or free
orbits (control), aggregate ensembles and parameter sweeps (experiments),
and persist results (io).  The `partialcontrol` CLI fronts all of it.
"""

from .control import (
    DescentControl,
    NoControl,
    OrbitRecord,
    PartialControl,
    descent_control_step,
    partial_control_step,
    simulate_orbit,
    uncontrolled_escape_time,
)
from .dynamics import (
    DisturbanceModel,
    Grid,
    InvalidConfigError,
    MapSpec,
    RngStream,
    disturbance_support,
    map_eval,
    sample_disturbance,
)
from .experiments import (
    DEFAULT_MU_VALUES,
    DEFAULT_XI_VALUES,
    ControlFailureError,
    ConvergenceStats,
    SweepRow,
    average_control_map,
    convergence_stats,
    support_refinement,
    sweep_mu,
    sweep_xi,
)
from .io import (
    FormatError,
    load_safety_function,
    store_safety_function,
    write_orbit_csv,
    write_stats_csv,
    write_sweep_csv,
)
from .safety import (
    ConvergenceError,
    NoSafeSetError,
    PieceStats,
    SafeSet,
    SafetyFunction,
    bellman_update,
    compute_safety_function,
    extract_safe_set,
    membership_tolerance,
    min_control_bound,
    piece_stats,
)

__version__ = "1.0.0"

__all__ = [
    "Grid",
    "MapSpec",
    "DisturbanceModel",
    "RngStream",
    "InvalidConfigError",
    "map_eval",
    "disturbance_support",
    "sample_disturbance",
    "SafetyFunction",
    "SafeSet",
    "PieceStats",
    "ConvergenceError",
    "NoSafeSetError",
    "bellman_update",
    "compute_safety_function",
    "min_control_bound",
    "extract_safe_set",
    "piece_stats",
    "membership_tolerance",
    "NoControl",
    "PartialControl",
    "DescentControl",
    "OrbitRecord",
    "uncontrolled_escape_time",
    "partial_control_step",
    "descent_control_step",
    "simulate_orbit",
    "ConvergenceStats",
    "SweepRow",
    "ControlFailureError",
    "convergence_stats",
    "average_control_map",
    "sweep_xi",
    "sweep_mu",
    "support_refinement",
    "DEFAULT_XI_VALUES",
    "DEFAULT_MU_VALUES",
    "FormatError",
    "store_safety_function",
    "load_safety_function",
    "write_orbit_csv",
    "write_stats_csv",
    "write_sweep_csv",
    "__version__",
]
