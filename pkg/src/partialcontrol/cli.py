"""Command-line front end.

Configuration comes from flags layered over an optional JSON config file
(flags win).  Every run embeds its fully resolved configuration in the
output, so any result file can be regenerated from its own header.  Exit
codes: 0 success, 1 validation or format error, 2 numerical failure
(non-convergence or a controller that cannot reach the safe set).
Diagnostics go to stderr as single ``level=... code=... msg=...`` lines.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import verify as verify_mod
from .control import DescentControl, NoControl, PartialControl, simulate_orbit
from .dynamics import DisturbanceModel, Grid, InvalidConfigError, MapSpec, RngStream
from .experiments import ControlFailureError, convergence_stats, support_refinement, sweep_mu, sweep_xi
from .io import (
    FormatError,
    format_real,
    load_safety_function,
    render_orbit_csv,
    render_safety_function,
    render_stats_csv,
    render_sweep_csv,
)
from .safety import (
    ConvergenceError,
    NoSafeSetError,
    compute_safety_function,
    extract_safe_set,
    min_control_bound,
    piece_stats,
)

__all__ = ["main"]


def _diag(level: str, code: str, msg: str) -> None:
    print(f"level={level} code={code} msg={json.dumps(msg)}", file=sys.stderr)


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical
    # failure here, so usage problems are remapped to 1.
    def error(self, message):
        _diag("error", "usage", message)
        raise SystemExit(1)


class _Field(NamedTuple):
    name: str
    kind: str  # "real" | "int" | "str"
    default: object


_MODEL_FIELDS = [
    _Field("mu", "real", 3.0),
    _Field("constant", "real", None),
    _Field("q-lower", "real", 0.0),
    _Field("q-upper", "real", 1.0),
    _Field("grid-n", "int", 1000),
    _Field("xi0", "real", 0.05),
    _Field("noise-m", "int", 101),
    _Field("seed", "int", 0),
]

_MODEL_NAMES = {f.name for f in _MODEL_FIELDS if f.name != "seed"}


def _without(fields, *names):
    return [f for f in fields if f.name not in names]


_COMMAND_FIELDS = {
    "safety": _MODEL_FIELDS + [_Field("out", "str", None)],
    "safeset": _MODEL_FIELDS + [_Field("in", "str", None), _Field("u0", "real", None)],
    "orbit": _MODEL_FIELDS + [
        _Field("controller", "str", "descent"),
        _Field("ic", "real", None),
        _Field("steps", "int", 100),
        _Field("u0", "real", None),
        _Field("out", "str", None),
    ],
    "stats": _MODEL_FIELDS + [
        _Field("ic-count", "int", 1000),
        _Field("runs", "int", 1000),
        _Field("max-steps", "int", 100),
        _Field("out", "str", None),
    ],
    "sweep-xi": _without(_MODEL_FIELDS, "xi0", "constant") + [
        _Field("xi-min", "real", 0.005),
        _Field("xi-max", "real", 0.25),
        _Field("xi-count", "int", 50),
        _Field("out", "str", None),
    ],
    "sweep-mu": _without(_MODEL_FIELDS, "mu", "constant") + [
        _Field("mu-min", "real", 2.0),
        _Field("mu-max", "real", 15.0),
        _Field("mu-count", "int", 131),
        _Field("out", "str", None),
    ],
}


def _coerce(field: _Field, value):
    label = f"config key {field.name!r}"
    if field.kind == "real":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfigError(f"{label} must be a number, got {value!r}")
        return float(value)
    if field.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfigError(f"{label} must be an integer, got {value!r}")
        return int(value)
    if not isinstance(value, str):
        raise InvalidConfigError(f"{label} must be a string, got {value!r}")
    return value


def _resolve(command: str, args) -> tuple[dict, set]:
    """Layer defaults, config-file values, and flags; flags win.

    Returns the resolved mapping and the set of explicitly provided names.
    """
    fields = _COMMAND_FIELDS[command]
    allowed = {f.name for f in fields}
    file_cfg = {}
    if getattr(args, "config", None) is not None:
        raw = json.loads(Path(args.config).read_text())
        if not isinstance(raw, dict):
            raise InvalidConfigError("config file must contain a JSON object")
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise InvalidConfigError(
                f"unknown config keys for {command}: {', '.join(unknown)}"
            )
        file_cfg = raw
    cfg, explicit = {}, set()
    for f in fields:
        value = getattr(args, f.name.replace("-", "_"), None)
        if value is None and f.name in file_cfg:
            value = _coerce(f, file_cfg[f.name])
        if value is not None:
            explicit.add(f.name)
        else:
            value = f.default
        cfg[f.name] = value
    return cfg, explicit


def _build_model(cfg: dict, explicit: set) -> tuple[MapSpec, DisturbanceModel]:
    if cfg.get("constant") is not None:
        if "mu" in explicit:
            raise InvalidConfigError("give either mu or constant, not both")
        kind, parameter = "constant", cfg["constant"]
    else:
        kind, parameter = "tent", cfg["mu"]
    grid = Grid(cfg["q-lower"], cfg["q-upper"], cfg["grid-n"])
    return MapSpec(kind, parameter, grid), DisturbanceModel(cfg["xi0"], cfg["noise-m"])


def _embed(command: str, m: MapSpec, d: DisturbanceModel, seed: int, extra: dict) -> dict:
    config = {
        "command": command,
        "map-kind": m.kind,
        "map-parameter": m.parameter,
        "q-lower": m.domain.lower,
        "q-upper": m.domain.upper,
        "grid-n": m.domain.count,
        "xi0": d.bound,
        "noise-m": d.support_count,
        "seed": seed,
    }
    config.update(extra)
    return config


def _deliver(text: str, out: str | None, config: dict, summary) -> None:
    """CSV to stdout, or to a file with a short summary on stdout."""
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text, newline="\n")
    print(f"config = {json.dumps(config, sort_keys=True)}")
    for key, value in summary:
        print(f"{key} = {value}")
    print(f"wrote = {out}")


def _refinement_counts(support_count: int) -> list[int]:
    half = support_count // 2
    if half % 2 == 0:
        half += 1
    return sorted({max(3, half), support_count, 2 * support_count - 1})


def _cmd_safety(args) -> int:
    cfg, explicit = _resolve("safety", args)
    m, d = _build_model(cfg, explicit)
    sf = compute_safety_function(m.domain, m, d)
    config = _embed("safety", m, d, cfg["seed"], {})
    summary = [
        ("min-u0", format_real(min_control_bound(sf))),
        ("iterations", str(sf.iterations)),
    ]
    _deliver(render_safety_function(sf, config), cfg["out"], config, summary)
    return 0


def _cmd_safeset(args) -> int:
    cfg, explicit = _resolve("safeset", args)
    if cfg["in"] is not None:
        stray = sorted(explicit & _MODEL_NAMES)
        if stray:
            raise InvalidConfigError(
                f"the model comes from the input file; remove {', '.join(stray)}"
            )
        sf = load_safety_function(cfg["in"])
    else:
        m, d = _build_model(cfg, explicit)
        sf = compute_safety_function(m.domain, m, d)
    safe_set = extract_safe_set(sf, cfg["u0"])
    stats = piece_stats(safe_set)
    config = _embed("safeset", sf.map_spec, sf.disturbance, cfg["seed"],
                    {"u0": safe_set.threshold})
    print(f"config = {json.dumps(config, sort_keys=True)}")
    print(f"min-u0 = {format_real(min_control_bound(sf))}")
    print(f"u0 = {format_real(safe_set.threshold)}")
    print(f"n-pieces = {stats.count}")
    if stats.mean_gap is not None:
        print(f"mean-gap = {format_real(stats.mean_gap)}")
    for lo, hi in safe_set.intervals():
        print(f"piece = {format_real(lo)}:{format_real(hi)}")
    return 0


def _cmd_orbit(args) -> int:
    cfg, explicit = _resolve("orbit", args)
    m, d = _build_model(cfg, explicit)
    controller = cfg["controller"]
    if controller not in ("none", "partial", "descent"):
        raise InvalidConfigError(f"unknown controller {controller!r}")
    if cfg["u0"] is not None and controller != "partial":
        raise InvalidConfigError("u0 only applies to the partial controller")
    if cfg["ic"] is None:
        raise InvalidConfigError("orbit requires an initial condition (--ic)")
    if controller == "none":
        kind = NoControl()
        threshold = None
    else:
        sf = compute_safety_function(m.domain, m, d)
        if controller == "partial":
            safe_set = extract_safe_set(sf, cfg["u0"])
            kind = PartialControl(safe_set)
            threshold = safe_set.threshold
        else:
            kind = DescentControl(sf)
            threshold = None
    # A single orbit always uses substream 0 of the seed.
    stream = RngStream(cfg["seed"], 0)
    record = simulate_orbit(kind, m, d, cfg["ic"], cfg["steps"], stream)
    config = _embed("orbit", m, d, cfg["seed"], {
        "controller": controller,
        "ic": cfg["ic"],
        "steps": cfg["steps"],
        "u0": threshold,
    })
    summary = [("steps", str(len(record)))]
    if record.entered_at is not None:
        summary.append(("entered-at", str(record.entered_at)))
    if record.escaped_at is not None:
        summary.append(("escaped-at", str(record.escaped_at)))
    _deliver(render_orbit_csv(record, config), cfg["out"], config, summary)
    return 0


def _cmd_stats(args) -> int:
    cfg, explicit = _resolve("stats", args)
    m, d = _build_model(cfg, explicit)
    sf = compute_safety_function(m.domain, m, d)
    stats = convergence_stats(sf, cfg["ic-count"], cfg["runs"],
                              cfg["max-steps"], cfg["seed"])
    config = _embed("stats", m, d, cfg["seed"], {
        "ic-count": cfg["ic-count"],
        "runs": cfg["runs"],
        "max-steps": cfg["max-steps"],
    })
    summary = [("max-iterations", str(stats.max_iterations))]
    _deliver(render_stats_csv(stats, config), cfg["out"], config, summary)
    return 0


def _sweep_summary(rows):
    failures = sum(1 for r in rows if r.error is not None)
    return [("rows", str(len(rows))), ("failures", str(failures))]


def _cmd_sweep_xi(args) -> int:
    cfg, explicit = _resolve("sweep-xi", args)
    grid = Grid(cfg["q-lower"], cfg["q-upper"], cfg["grid-n"])
    if not (0.0 < cfg["xi-min"] <= cfg["xi-max"]):
        raise InvalidConfigError("need 0 < xi-min <= xi-max")
    if cfg["xi-count"] < 1:
        raise InvalidConfigError("xi-count must be >= 1")
    values = np.geomspace(cfg["xi-min"], cfg["xi-max"], cfg["xi-count"])
    rows = sweep_xi(cfg["mu"], values, grid, cfg["noise-m"], cfg["seed"])
    middle = float(values[len(values) // 2])
    refinement = support_refinement(
        MapSpec.tent(cfg["mu"], grid), middle, grid,
        _refinement_counts(cfg["noise-m"]),
    )
    config = {
        "command": "sweep-xi",
        "map-kind": "tent",
        "map-parameter": cfg["mu"],
        "q-lower": grid.lower,
        "q-upper": grid.upper,
        "grid-n": grid.count,
        "noise-m": cfg["noise-m"],
        "seed": cfg["seed"],
        "xi-min": cfg["xi-min"],
        "xi-max": cfg["xi-max"],
        "xi-count": cfg["xi-count"],
    }
    _deliver(render_sweep_csv(rows, config, refinement), cfg["out"], config,
             _sweep_summary(rows))
    return 0


def _cmd_sweep_mu(args) -> int:
    cfg, explicit = _resolve("sweep-mu", args)
    grid = Grid(cfg["q-lower"], cfg["q-upper"], cfg["grid-n"])
    if cfg["mu-min"] > cfg["mu-max"]:
        raise InvalidConfigError("need mu-min <= mu-max")
    if cfg["mu-count"] < 1:
        raise InvalidConfigError("mu-count must be >= 1")
    values = np.linspace(cfg["mu-min"], cfg["mu-max"], cfg["mu-count"])
    rows = sweep_mu(cfg["xi0"], values, grid, cfg["noise-m"], cfg["seed"])
    middle = float(values[len(values) // 2])
    refinement = support_refinement(
        MapSpec.tent(middle, grid), cfg["xi0"], grid,
        _refinement_counts(cfg["noise-m"]),
    )
    config = {
        "command": "sweep-mu",
        "q-lower": grid.lower,
        "q-upper": grid.upper,
        "grid-n": grid.count,
        "xi0": cfg["xi0"],
        "noise-m": cfg["noise-m"],
        "seed": cfg["seed"],
        "mu-min": cfg["mu-min"],
        "mu-max": cfg["mu-max"],
        "mu-count": cfg["mu-count"],
    }
    _deliver(render_sweep_csv(rows, config, refinement), cfg["out"], config,
             _sweep_summary(rows))
    return 0


def _cmd_verify(args) -> int:
    ok = True
    for name, passed, detail in verify_mod.run_suites():
        print(f"suite={name} status={'pass' if passed else 'fail'}")
        if not passed:
            ok = False
            _diag("error", "verify", f"{name}: {detail}")
    print(f"verify = {'pass' if ok else 'fail'}")
    return 0 if ok else 1


def _add_flags(parser, names):
    flags = {
        "mu": ("--mu", float, "tent-map slope"),
        "constant": ("--constant", float, "use a constant map with this value"),
        "q-lower": ("--q-lower", float, "lower edge of the region"),
        "q-upper": ("--q-upper", float, "upper edge of the region"),
        "grid-n": ("--grid-n", int, "number of grid points"),
        "xi0": ("--xi0", float, "disturbance bound"),
        "noise-m": ("--noise-m", int, "adversary support size (odd)"),
        "seed": ("--seed", int, "master seed; substreams are documented per command"),
        "out": ("--out", str, "write CSV here instead of stdout"),
        "in": ("--in", str, "load a stored safety function"),
        "u0": ("--u0", float, "safe-set threshold override"),
        "controller": ("--controller", str, "one of none, partial, descent"),
        "ic": ("--ic", float, "initial condition"),
        "steps": ("--steps", int, "number of steps to simulate"),
        "ic-count": ("--ic-count", int, "number of evenly spaced initial conditions"),
        "runs": ("--runs", int, "runs per initial condition"),
        "max-steps": ("--max-steps", int, "step budget per run"),
        "xi-min": ("--xi-min", float, "smallest disturbance bound"),
        "xi-max": ("--xi-max", float, "largest disturbance bound"),
        "xi-count": ("--xi-count", int, "number of log-spaced bounds"),
        "mu-min": ("--mu-min", float, "smallest slope"),
        "mu-max": ("--mu-max", float, "largest slope"),
        "mu-count": ("--mu-count", int, "number of evenly spaced slopes"),
    }
    for name in names:
        flag, typ, help_text = flags[name]
        parser.add_argument(flag, type=typ, default=None, help=help_text)


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(
        prog="partialcontrol",
        description="Safety functions and safe-set control for noisy 1-d maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("safety", _cmd_safety, "compute and persist a safety function"),
        ("safeset", _cmd_safeset, "report safe-set pieces at a threshold"),
        ("orbit", _cmd_orbit, "simulate one orbit under a controller"),
        ("stats", _cmd_stats, "descent-entry statistics over an IC grid"),
        ("sweep-xi", _cmd_sweep_xi, "safe-set summaries over disturbance bounds"),
        ("sweep-mu", _cmd_sweep_mu, "safe-set summaries over tent slopes"),
    ]
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file; flags override its values")
        _add_flags(p, [f.name for f in _COMMAND_FIELDS[name]])
        p.set_defaults(func=func)
    p = sub.add_parser("verify", help="run the built-in oracle and invariant suite")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except ControlFailureError as err:
        _diag("error", "control-failure", str(err))
        return 2
    except ConvergenceError as err:
        _diag("error", "non-convergence", str(err))
        return 2
    except FormatError as err:
        _diag("error", "format", str(err))
        return 1
    except NoSafeSetError as err:
        _diag("error", "no-safe-set", str(err))
        return 1
    except InvalidConfigError as err:
        _diag("error", "invalid-config", str(err))
        return 1
    except json.JSONDecodeError as err:
        _diag("error", "config-parse", str(err))
        return 1
    except OSError as err:
        _diag("error", "io", str(err))
        return 1
    except RuntimeError as err:
        _diag("error", "numerical", str(err))
        return 2


if __name__ == "__main__":
    sys.exit(main())
