"""CSV persistence for safety functions and experiment results.

All reals are printed with 17 significant digits so a store/load round trip
reproduces every double bit-exactly.  Files carry a `#`-prefixed metadata
header including the fully resolved run configuration; any result file can
be regenerated bit-identically from that header alone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dynamics import DisturbanceModel, Grid, MapSpec
from .safety import SafetyFunction

__all__ = [
    "FORMAT_VERSION",
    "FormatError",
    "format_real",
    "render_safety_function",
    "store_safety_function",
    "load_safety_function",
    "render_orbit_csv",
    "write_orbit_csv",
    "render_stats_csv",
    "write_stats_csv",
    "render_sweep_csv",
    "write_sweep_csv",
]

FORMAT_VERSION = "1"

_SAFETY_HEADER = "i,q,U"
_ORBIT_HEADER = "n,q,xi,u,q_next,U_next,in_safe"
_STATS_HEADER = "q0,mean_iters,mean_control,runs"
_SWEEP_HEADER = "param,u0,ratio,k,n_pieces,mean_gap,pieces"

_REQUIRED_KEYS = (
    "format-version", "map-kind", "map-parameter", "q-lower", "q-upper",
    "grid-n", "xi0", "noise-m", "iterations", "tolerance", "min-u0",
)


class FormatError(ValueError):
    """A persisted file does not match the expected layout."""


def format_real(x: float) -> str:
    return "%.17g" % float(x)


def _meta_lines(pairs, config):
    lines = [f"# {key} = {value}" for key, value in pairs]
    if config is not None:
        lines.append(f"# config = {json.dumps(config, sort_keys=True)}")
    return lines


def _text(lines) -> str:
    return "\n".join(lines) + "\n"


def _write(path, text):
    # Fixed newline keeps output byte-identical across platforms.
    Path(path).write_text(text, newline="\n")


def render_safety_function(sf: SafetyFunction, config: dict | None = None) -> str:
    """Values plus enough metadata to rebuild the generating setup."""
    m, d = sf.map_spec, sf.disturbance
    pairs = [
        ("format-version", FORMAT_VERSION),
        ("map-kind", m.kind),
        ("map-parameter", format_real(m.parameter)),
        ("q-lower", format_real(sf.grid.lower)),
        ("q-upper", format_real(sf.grid.upper)),
        ("grid-n", sf.grid.count),
        ("xi0", format_real(d.bound)),
        ("noise-m", d.support_count),
        ("iterations", sf.iterations),
        # The iteration stops at exact array equality, so the stopping
        # tolerance is genuinely zero.
        ("tolerance", format_real(0.0)),
        ("min-u0", format_real(sf.values.min())),
    ]
    lines = _meta_lines(pairs, config)
    lines.append(_SAFETY_HEADER)
    q = sf.grid.points
    for i in range(sf.grid.count):
        lines.append(f"{i},{format_real(q[i])},{format_real(sf.values[i])}")
    return _text(lines)


def store_safety_function(sf: SafetyFunction, path, config: dict | None = None) -> None:
    _write(path, render_safety_function(sf, config))


def _fail(path, lineno, msg):
    raise FormatError(f"{path}:{lineno}: {msg}")


def load_safety_function(path) -> SafetyFunction:
    """Rebuild a stored safety function, verifying layout and consistency.

    Errors name the offending line.  The stored grid column must match the
    grid rebuilt from the metadata exactly; a truncated file fails at its
    first missing row.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    meta: dict[str, str] = {}
    meta_line: dict[str, int] = {}
    body_start = None
    for lineno, line in enumerate(lines, start=1):
        if line.startswith("#"):
            part = line[1:].strip()
            key, sep, value = part.partition(" = ")
            if not sep:
                _fail(path, lineno, f"malformed metadata line {line!r}")
            meta[key] = value
            meta_line[key] = lineno
        elif line.strip() == "":
            continue
        else:
            if line != _SAFETY_HEADER:
                _fail(path, lineno, f"expected header {_SAFETY_HEADER!r}, got {line!r}")
            body_start = lineno
            break
    if body_start is None:
        _fail(path, len(lines) + 1, "missing column header")
    for key in _REQUIRED_KEYS:
        if key not in meta:
            _fail(path, body_start, f"metadata key {key!r} missing")
    if meta["format-version"] != FORMAT_VERSION:
        _fail(path, meta_line["format-version"],
              f"unsupported format version {meta['format-version']!r}")

    def _real(key):
        try:
            return float(meta[key])
        except ValueError:
            _fail(path, meta_line[key], f"{key} is not a number: {meta[key]!r}")

    def _int(key):
        try:
            return int(meta[key])
        except ValueError:
            _fail(path, meta_line[key], f"{key} is not an integer: {meta[key]!r}")

    count = _int("grid-n")
    try:
        grid = Grid(_real("q-lower"), _real("q-upper"), count)
        map_spec = MapSpec(meta["map-kind"], _real("map-parameter"), grid)
        disturbance = DisturbanceModel(_real("xi0"), _int("noise-m"))
    except ValueError as err:
        _fail(path, body_start, f"inconsistent metadata: {err}")

    values = np.empty(count)
    row = 0
    for lineno in range(body_start + 1, len(lines) + 1):
        line = lines[lineno - 1]
        if line.startswith("#") or line.strip() == "":
            continue
        if row >= count:
            _fail(path, lineno, f"extra data row after the declared {count} rows")
        parts = line.split(",")
        if len(parts) != 3:
            _fail(path, lineno, f"expected 3 fields, got {len(parts)}")
        try:
            index, q_val, u_val = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            _fail(path, lineno, f"unparsable row {line!r}")
        if index != row:
            _fail(path, lineno, f"expected row index {row}, got {index}")
        if q_val != grid.points[row]:
            _fail(path, lineno,
                  f"grid point {format_real(q_val)} does not match the grid "
                  f"rebuilt from metadata ({format_real(grid.points[row])})")
        values[row] = u_val
        row += 1
    if row < count:
        _fail(path, len(lines) + 1, f"file truncated: row {row} of {count} missing")
    sf = SafetyFunction(grid, values, _int("iterations"), map_spec, disturbance)
    if float(values.min()) != _real("min-u0"):
        _fail(path, meta_line["min-u0"],
              f"min-u0 {meta['min-u0']} does not match the stored values "
              f"(min {format_real(values.min())})")
    return sf


def render_orbit_csv(record, config: dict | None = None) -> str:
    """One row per simulated step; entry/escape markers in the header."""
    pairs = [("format-version", FORMAT_VERSION)]
    if record.entered_at is not None:
        pairs.append(("entered-at", record.entered_at))
    if record.escaped_at is not None:
        pairs.append(("escaped-at", record.escaped_at))
    lines = _meta_lines(pairs, config)
    lines.append(_ORBIT_HEADER)
    for n, q, xi, u, q_next, u_next, in_safe in record.rows():
        lines.append(
            f"{n},{format_real(q)},{format_real(xi)},{format_real(u)},"
            f"{format_real(q_next)},{format_real(u_next)},{int(in_safe)}"
        )
    return _text(lines)


def write_orbit_csv(record, path, config: dict | None = None) -> None:
    _write(path, render_orbit_csv(record, config))


def render_stats_csv(stats, config: dict | None = None) -> str:
    pairs = [
        ("format-version", FORMAT_VERSION),
        ("runs-per-ic", stats.runs_per_ic),
        ("max-iterations", stats.max_iterations),
    ]
    lines = _meta_lines(pairs, config)
    lines.append(_STATS_HEADER)
    for q0, mean_iters, mean_control, runs in stats.rows():
        lines.append(
            f"{format_real(q0)},{format_real(mean_iters)},"
            f"{format_real(mean_control)},{runs}"
        )
    return _text(lines)


def write_stats_csv(stats, path, config: dict | None = None) -> None:
    _write(path, render_stats_csv(stats, config))


def _pieces_field(pieces) -> str:
    return ";".join(f"{format_real(lo)}:{format_real(hi)}" for lo, hi in pieces)


def render_sweep_csv(rows, config: dict | None = None, refinement=None) -> str:
    """Per-parameter safe-set summaries.

    ``refinement`` is an optional list of (support size, u0) pairs recorded
    in the header so readers can judge whether u0 has stabilized in the
    support resolution.  Rows that failed to converge appear as comment
    lines, keeping every data row fully numeric.
    """
    pairs = [("format-version", FORMAT_VERSION)]
    if refinement is not None:
        for count, u0 in refinement:
            pairs.append((f"u0-at-noise-m-{count}", format_real(u0)))
    lines = _meta_lines(pairs, config)
    for r in rows:
        if r.error is not None:
            lines.append(f"# non-convergence at param = {format_real(r.parameter)}: {r.error}")
    lines.append(_SWEEP_HEADER)
    for r in rows:
        if r.error is not None:
            continue
        gap = "" if r.mean_gap is None else format_real(r.mean_gap)
        lines.append(
            f"{format_real(r.parameter)},{format_real(r.u0)},{format_real(r.ratio)},"
            f"{r.iterations},{r.piece_count},{gap},{_pieces_field(r.pieces)}"
        )
    return _text(lines)


def write_sweep_csv(rows, path, config: dict | None = None, refinement=None) -> None:
    _write(path, render_sweep_csv(rows, config, refinement))
