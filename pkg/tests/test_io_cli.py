import json

import numpy as np
import pytest

from partialcontrol import (
    DescentControl,
    DisturbanceModel,
    FormatError,
    Grid,
    MapSpec,
    NoControl,
    RngStream,
    SweepRow,
    cli,
    compute_safety_function,
    convergence_stats,
    load_safety_function,
    simulate_orbit,
    store_safety_function,
    sweep_xi,
)
from partialcontrol.io import (
    format_real,
    render_orbit_csv,
    render_safety_function,
    render_stats_csv,
    render_sweep_csv,
)


@pytest.fixture(scope="module")
def tiny_sf():
    grid = Grid(0.0, 1.0, 21)
    return compute_safety_function(
        grid, MapSpec.tent(3.0, grid), DisturbanceModel(0.05, 5)
    )


class TestFormatReal:
    def test_round_trips_every_double(self):
        rng = np.random.default_rng(13)
        samples = [0.0, -0.0, 0.1, 1 / 3, 1e-300, 5e-324, -2.5]
        samples += [float(x) for x in rng.uniform(-10, 10, 50)]
        for x in samples:
            assert float(format_real(x)) == x


class TestSafetyFunctionFile:
    def test_round_trip_is_bitwise(self, tiny_sf, tmp_path):
        path = tmp_path / "sf.csv"
        store_safety_function(tiny_sf, path)
        loaded = load_safety_function(path)
        assert np.array_equal(loaded.values, tiny_sf.values)
        assert loaded.iterations == tiny_sf.iterations
        assert loaded.grid == tiny_sf.grid
        assert loaded.map_spec.kind == tiny_sf.map_spec.kind
        assert loaded.map_spec.parameter == tiny_sf.map_spec.parameter
        assert loaded.disturbance == tiny_sf.disturbance
        assert render_safety_function(loaded) == render_safety_function(tiny_sf)

    def test_round_trip_at_production_size(self, default_model, tmp_path):
        *_, sf = default_model
        path = tmp_path / "sf.csv"
        store_safety_function(sf, path)
        assert np.array_equal(load_safety_function(path).values, sf.values)

    def test_config_json_goes_into_the_header(self, tiny_sf, tmp_path):
        path = tmp_path / "sf.csv"
        store_safety_function(tiny_sf, path, config={"b": 2, "a": 1})
        line = next(
            l for l in path.read_text().splitlines() if l.startswith("# config = ")
        )
        assert json.loads(line[len("# config = "):]) == {"a": 1, "b": 2}
        load_safety_function(path)

    def test_comments_and_blank_lines_in_the_body_are_skipped(self, tiny_sf, tmp_path):
        lines = render_safety_function(tiny_sf).splitlines()
        lines.insert(15, "# annotation = kept out of the data")
        lines.insert(14, "")
        path = tmp_path / "sf.csv"
        path.write_text("\n".join(lines) + "\n")
        assert np.array_equal(load_safety_function(path).values, tiny_sf.values)


def _mutations():
    # (test id, line transform, required message fragments)
    def replace(idx, new):
        def apply(lines):
            lines[idx] = new
            return lines
        return apply

    def drop(idx):
        def apply(lines):
            del lines[idx]
            return lines
        return apply

    def tamper_q(lines):
        parts = lines[12].split(",")
        parts[1] = "0.5"
        lines[12] = ",".join(parts)
        return lines

    def append_row(lines):
        lines.append("21,1,0.05")
        return lines

    return [
        ("wrong header", replace(11, "q,U,i"), [":12:", "expected header"]),
        ("bad version", replace(0, "# format-version = 9"), [":1:", "version"]),
        ("missing key", drop(6), ["metadata key 'xi0' missing"]),
        ("min mismatch", replace(10, "# min-u0 = 0.5"), [":11:", "min-u0"]),
        ("tampered grid point", tamper_q, [":13:", "does not match the grid"]),
        ("extra row", append_row, [":34:", "extra data row"]),
        ("truncated", drop(-1), ["file truncated", "row 20 of 21"]),
        ("non-numeric value", replace(12, "0,0,abc"), ["unparsable row"]),
        ("field count", replace(12, "0,0"), ["expected 3 fields, got 2"]),
        ("index jump", replace(12, "5,0,0.05"), ["expected row index 0, got 5"]),
        ("metadata shape", replace(0, "# hello"), [":1:", "malformed metadata"]),
    ]


class TestSafetyFileErrors:
    @pytest.mark.parametrize(
        "mutate,fragments",
        [(m, frags) for _, m, frags in _mutations()],
        ids=[name for name, *_ in _mutations()],
    )
    def test_tampered_files_fail_with_location(self, tiny_sf, tmp_path, mutate, fragments):
        lines = render_safety_function(tiny_sf).splitlines()
        path = tmp_path / "sf.csv"
        path.write_text("\n".join(mutate(lines)) + "\n")
        with pytest.raises(FormatError) as info:
            load_safety_function(path)
        message = str(info.value)
        assert str(path) in message
        for fragment in fragments:
            assert fragment in message

    def test_empty_file(self, tmp_path):
        path = tmp_path / "sf.csv"
        path.write_text("")
        with pytest.raises(FormatError, match="missing column header"):
            load_safety_function(path)


class TestOrbitCsv:
    def test_entry_marker_and_rows(self, default_model):
        _, m, d, sf = default_model
        rec = simulate_orbit(DescentControl(sf), m, d, 0.16, 30, RngStream(2, 0))
        text = render_orbit_csv(rec)
        lines = text.splitlines()
        assert f"# entered-at = {rec.entered_at}" in lines
        assert not any(l.startswith("# escaped-at") for l in lines)
        header = lines.index("n,q,xi,u,q_next,U_next,in_safe")
        data = lines[header + 1:]
        assert len(data) == len(rec)
        first = data[0].split(",")
        assert int(first[0]) == 0
        assert float(first[1]) == float(rec.q[0])
        assert float(first[4]) == float(rec.q_next[0])
        assert first[6] in ("0", "1")

    def test_escape_marker(self, default_model):
        _, m, d, _ = default_model
        rec = simulate_orbit(NoControl(), m, d, 0.3, 100, RngStream(1, 0))
        assert rec.escaped_at is not None
        lines = render_orbit_csv(rec).splitlines()
        assert f"# escaped-at = {rec.escaped_at}" in lines
        assert not any(l.startswith("# entered-at") for l in lines)


class TestStatsCsv:
    def test_headers_and_rows(self, default_model):
        *_, sf = default_model
        stats = convergence_stats(sf, 7, 2, seed=3)
        lines = render_stats_csv(stats).splitlines()
        assert "# runs-per-ic = 2" in lines
        assert f"# max-iterations = {stats.max_iterations}" in lines
        header = lines.index("q0,mean_iters,mean_control,runs")
        data = lines[header + 1:]
        assert len(data) == 7
        assert all(row.endswith(",2") for row in data)
        assert [float(row.split(",")[0]) for row in data] == list(stats.q0s)


class TestSweepCsv:
    def test_refinement_report_in_header(self):
        grid = Grid(0.0, 1.0, 200)
        rows = sweep_xi(3.0, [0.05], grid=grid, support_count=11)
        text = render_sweep_csv(rows, refinement=[(5, 0.01), (11, 0.0125)])
        lines = text.splitlines()
        assert f"# u0-at-noise-m-5 = {format_real(0.01)}" in lines
        assert f"# u0-at-noise-m-11 = {format_real(0.0125)}" in lines

    def test_failed_rows_become_comments(self):
        good = SweepRow(0.05, 0.01, 0.2, 4, 1, None, ((0.1, 0.2),))
        bad = SweepRow(0.08, None, None, None, None, None, None, error="gave up")
        lines = render_sweep_csv([good, bad]).splitlines()
        assert "# non-convergence at param = 0.080000000000000002: gave up" in lines
        data = lines[lines.index("param,u0,ratio,k,n_pieces,mean_gap,pieces") + 1:]
        assert len(data) == 1
        # single piece: the gap column is empty, pieces are colon pairs
        assert data[0].endswith(",4,1,,0.10000000000000001:0.20000000000000001")

    def test_multi_piece_field_layout(self, xi_sweep_rows):
        row = xi_sweep_rows[0]
        lines = render_sweep_csv([row]).splitlines()
        fields = lines[-1].split(",")
        assert float(fields[0]) == row.parameter
        assert float(fields[1]) == row.u0
        assert int(fields[3]) == row.iterations
        assert int(fields[4]) == row.piece_count
        pieces = [tuple(map(float, p.split(":"))) for p in fields[6].split(";")]
        assert pieces == list(row.pieces)


def run_cli(capsys, *argv):
    rc = cli.main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def embedded_config(text):
    line = next(l for l in text.splitlines() if l.startswith("# config = "))
    return json.loads(line[len("# config = "):])


SMALL = ["--grid-n", "200", "--noise-m", "21"]


class TestCliSafety:
    def test_csv_to_stdout(self, capsys):
        rc, out, _ = run_cli(capsys, "safety", *SMALL)
        assert rc == 0
        assert out.startswith("# format-version = 1\n")
        assert "i,q,U" in out.splitlines()
        assert embedded_config(out)["command"] == "safety"

    def test_file_output_with_summary(self, capsys, tmp_path):
        out_file = tmp_path / "sf.csv"
        rc, out, _ = run_cli(capsys, "safety", *SMALL, "--out", str(out_file))
        assert rc == 0
        assert out_file.exists()
        lines = out.splitlines()
        assert any(l.startswith("config = ") for l in lines)
        assert any(l.startswith("min-u0 = ") for l in lines)
        assert any(l.startswith("iterations = ") for l in lines)
        assert lines[-1] == f"wrote = {out_file}"
        load_safety_function(out_file)

    def test_unwritable_output_path(self, capsys, tmp_path):
        rc, _, err = run_cli(
            capsys, "safety", *SMALL, "--out", str(tmp_path / "no_dir" / "sf.csv")
        )
        assert rc == 1
        assert "code=io" in err

    def test_usage_errors(self, capsys):
        rc, _, err = run_cli(capsys, "safety", "--grid-n", "many")
        assert rc == 1
        assert "code=usage" in err
        rc, _, err = run_cli(capsys, "safety", "--frobnicate", "1")
        assert rc == 1
        assert "code=usage" in err
        rc, _, err = run_cli(capsys)
        assert rc == 1

    def test_conflicting_map_choices(self, capsys):
        rc, _, err = run_cli(capsys, "safety", "--mu", "3", "--constant", "0.2")
        assert rc == 1
        assert "code=invalid-config" in err

    def test_invalid_model_rejected(self, capsys):
        rc, _, err = run_cli(capsys, "safety", "--noise-m", "4")
        assert rc == 1
        assert "code=invalid-config" in err


class TestCliSafeset:
    def test_report_lines(self, capsys):
        rc, out, _ = run_cli(capsys, "safeset")
        assert rc == 0
        lines = out.splitlines()
        values = dict(l.split(" = ", 1) for l in lines if not l.startswith("piece"))
        pieces = [l for l in lines if l.startswith("piece = ")]
        assert int(values["n-pieces"]) == len(pieces)
        assert float(values["u0"]) == float(values["min-u0"])
        assert "mean-gap" in values

    def test_threshold_override(self, capsys):
        rc, out, _ = run_cli(capsys, "safeset", "--u0", "0.03")
        assert rc == 0
        values = dict(
            l.split(" = ", 1) for l in out.splitlines() if not l.startswith("piece")
        )
        assert float(values["u0"]) == 0.03
        assert embedded_config_from_summary(out)["u0"] == 0.03

    def test_threshold_below_minimum(self, capsys):
        rc, _, err = run_cli(capsys, "safeset", "--u0", "0.001")
        assert rc == 1
        assert "code=no-safe-set" in err

    def test_loads_stored_function(self, capsys, tmp_path):
        out_file = tmp_path / "sf.csv"
        assert run_cli(capsys, "safety", *SMALL, "--out", str(out_file))[0] == 0
        rc, from_file, _ = run_cli(capsys, "safeset", "--in", str(out_file))
        assert rc == 0
        rc, direct, _ = run_cli(capsys, "safeset", *SMALL)
        assert rc == 0

        def data_lines(text):
            return [l for l in text.splitlines() if not l.startswith("config")]

        assert data_lines(from_file) == data_lines(direct)

    def test_model_flags_conflict_with_input_file(self, capsys, tmp_path):
        out_file = tmp_path / "sf.csv"
        assert run_cli(capsys, "safety", *SMALL, "--out", str(out_file))[0] == 0
        rc, _, err = run_cli(capsys, "safeset", "--in", str(out_file), "--mu", "4")
        assert rc == 1
        assert "code=invalid-config" in err
        assert "mu" in err

    def test_corrupt_input_file(self, capsys, tmp_path):
        bad = tmp_path / "sf.csv"
        bad.write_text("not a safety function\n")
        rc, _, err = run_cli(capsys, "safeset", "--in", str(bad))
        assert rc == 1
        assert "code=format" in err


def embedded_config_from_summary(out):
    line = next(l for l in out.splitlines() if l.startswith("config = "))
    return json.loads(line[len("config = "):])


class TestCliOrbit:
    def test_descent_orbit_to_stdout(self, capsys):
        rc, out, _ = run_cli(capsys, "orbit", "--ic", "0.3", "--steps", "40")
        assert rc == 0
        lines = out.splitlines()
        header = lines.index("n,q,xi,u,q_next,U_next,in_safe")
        assert len(lines[header + 1:]) == 40
        cfg = embedded_config(out)
        assert cfg["controller"] == "descent"
        assert cfg["u0"] is None

    def test_partial_orbit_stays_safe(self, capsys):
        rc, out, _ = run_cli(
            capsys, "orbit", "--controller", "partial", "--u0", "0.03",
            "--ic", "0.32", "--steps", "50",
        )
        assert rc == 0
        cfg = embedded_config(out)
        assert cfg["u0"] == 0.03
        lines = out.splitlines()
        data = lines[lines.index("n,q,xi,u,q_next,U_next,in_safe") + 1:]
        assert all(row.endswith(",1") for row in data)

    def test_free_orbit_reports_escape(self, capsys, tmp_path):
        out_file = tmp_path / "orbit.csv"
        rc, out, _ = run_cli(
            capsys, "orbit", "--controller", "none", "--ic", "0.3",
            "--seed", "1", "--out", str(out_file),
        )
        assert rc == 0
        assert any(l.startswith("escaped-at = ") for l in out.splitlines())
        assert any(
            l.startswith("# escaped-at = ")
            for l in out_file.read_text().splitlines()
        )

    def test_validation(self, capsys):
        rc, _, err = run_cli(capsys, "orbit")
        assert rc == 1 and "code=invalid-config" in err
        rc, _, err = run_cli(capsys, "orbit", "--ic", "0.3", "--controller", "pid")
        assert rc == 1 and "code=invalid-config" in err
        rc, _, err = run_cli(capsys, "orbit", "--ic", "0.3", "--u0", "0.03")
        assert rc == 1 and "u0" in err
        rc, _, err = run_cli(capsys, "orbit", "--ic", "1.5")
        assert rc == 1 and "code=invalid-config" in err


class TestCliStats:
    def test_small_ensemble(self, capsys, tmp_path):
        out_file = tmp_path / "stats.csv"
        rc, out, _ = run_cli(
            capsys, "stats", "--ic-count", "9", "--runs", "2", "--out", str(out_file)
        )
        assert rc == 0
        assert any(l.startswith("max-iterations = ") for l in out.splitlines())
        lines = out_file.read_text().splitlines()
        header = lines.index("q0,mean_iters,mean_control,runs")
        assert len(lines[header + 1:]) == 9

    def test_budget_too_small_is_a_hard_failure(self, capsys):
        rc, _, err = run_cli(
            capsys, "stats", "--ic-count", "11", "--runs", "1", "--max-steps", "1"
        )
        assert rc == 2
        assert "code=control-failure" in err

    def test_validation(self, capsys):
        rc, _, err = run_cli(capsys, "stats", "--ic-count", "0")
        assert rc == 1
        assert "code=invalid-config" in err


class TestCliSweeps:
    def test_xi_sweep_stdout(self, capsys):
        rc, out, _ = run_cli(
            capsys, "sweep-xi", *SMALL, "--xi-min", "0.03", "--xi-max", "0.1",
            "--xi-count", "3",
        )
        assert rc == 0
        lines = out.splitlines()
        for count in (11, 21, 41):
            assert any(l.startswith(f"# u0-at-noise-m-{count} = ") for l in lines)
        data = lines[lines.index("param,u0,ratio,k,n_pieces,mean_gap,pieces") + 1:]
        assert len(data) == 3
        params = [float(row.split(",")[0]) for row in data]
        assert params == sorted(params)

    def test_mu_sweep_stdout(self, capsys):
        rc, out, _ = run_cli(
            capsys, "sweep-mu", *SMALL, "--mu-min", "2", "--mu-max", "3",
            "--mu-count", "3",
        )
        assert rc == 0
        data = out.splitlines()
        rows = data[data.index("param,u0,ratio,k,n_pieces,mean_gap,pieces") + 1:]
        assert [float(r.split(",")[0]) for r in rows] == [2.0, 2.5, 3.0]

    def test_range_validation(self, capsys):
        rc, _, err = run_cli(capsys, "sweep-xi", "--xi-min", "0")
        assert rc == 1 and "code=invalid-config" in err
        rc, _, err = run_cli(capsys, "sweep-xi", "--xi-min", "0.2", "--xi-max", "0.1")
        assert rc == 1 and "code=invalid-config" in err
        rc, _, err = run_cli(capsys, "sweep-xi", "--xi-count", "0")
        assert rc == 1 and "code=invalid-config" in err
        rc, _, err = run_cli(capsys, "sweep-mu", "--mu-min", "4", "--mu-max", "2")
        assert rc == 1 and "code=invalid-config" in err


class TestCliConfigFile:
    def test_file_values_and_flag_override(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"grid-n": 150, "noise-m": 11}))
        rc, out, _ = run_cli(capsys, "safety", "--config", str(cfg))
        assert rc == 0
        assert embedded_config(out)["grid-n"] == 150
        rc, out, _ = run_cli(capsys, "safety", "--config", str(cfg), "--grid-n", "80")
        assert rc == 0
        assert embedded_config(out)["grid-n"] == 80
        assert embedded_config(out)["noise-m"] == 11

    def test_unknown_key(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        rc, _, err = run_cli(capsys, "safety", "--config", str(cfg))
        assert rc == 1
        assert "code=invalid-config" in err and "bogus" in err

    def test_malformed_json(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text("{not json")
        rc, _, err = run_cli(capsys, "safety", "--config", str(cfg))
        assert rc == 1
        assert "code=config-parse" in err

    def test_wrong_value_type(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"grid-n": "lots"}))
        rc, _, err = run_cli(capsys, "safety", "--config", str(cfg))
        assert rc == 1
        assert "code=invalid-config" in err

    def test_non_object_config(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text("[1, 2]")
        rc, _, err = run_cli(capsys, "safety", "--config", str(cfg))
        assert rc == 1
        assert "code=invalid-config" in err

    def test_missing_config_file(self, capsys, tmp_path):
        rc, _, err = run_cli(capsys, "safety", "--config", str(tmp_path / "none.json"))
        assert rc == 1
        assert "code=io" in err


CLI_MATRIX = [
    ["safety", "--grid-n", "120", "--noise-m", "11"],
    ["safeset", "--grid-n", "120", "--noise-m", "11"],
    ["orbit", "--grid-n", "120", "--noise-m", "11", "--ic", "0.3",
     "--steps", "25", "--seed", "3"],
    ["stats", "--grid-n", "400", "--noise-m", "21", "--ic-count", "7",
     "--runs", "2", "--seed", "2"],
    ["sweep-xi", "--grid-n", "120", "--noise-m", "11", "--xi-min", "0.04",
     "--xi-max", "0.08", "--xi-count", "2"],
    ["sweep-mu", "--grid-n", "120", "--noise-m", "11", "--mu-min", "2.5",
     "--mu-max", "3.5", "--mu-count", "2"],
]


class TestCliDeterminism:
    @pytest.mark.parametrize("argv", CLI_MATRIX, ids=[a[0] for a in CLI_MATRIX])
    def test_repeat_runs_are_byte_identical(self, capsys, argv):
        rc1, out1, _ = run_cli(capsys, *argv)
        rc2, out2, _ = run_cli(capsys, *argv)
        assert rc1 == rc2 == 0
        assert out1 == out2

    def test_file_outputs_are_byte_identical(self, capsys, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        argv = CLI_MATRIX[0][:]
        assert run_cli(capsys, *argv, "--out", str(a))[0] == 0
        assert run_cli(capsys, *argv, "--out", str(b))[0] == 0
        assert a.read_bytes() == b.read_bytes()


class TestCliRegeneration:
    def rebuild_model_argv(self, cfg):
        argv = []
        if cfg["map-kind"] == "tent":
            argv += ["--mu", repr(cfg["map-parameter"])]
        else:
            argv += ["--constant", repr(cfg["map-parameter"])]
        argv += [
            "--q-lower", repr(cfg["q-lower"]),
            "--q-upper", repr(cfg["q-upper"]),
            "--grid-n", str(cfg["grid-n"]),
            "--noise-m", str(cfg["noise-m"]),
            "--seed", str(cfg["seed"]),
        ]
        if "xi0" in cfg:
            argv += ["--xi0", repr(cfg["xi0"])]
        return argv

    def test_orbit_file_regenerates_from_its_own_header(self, capsys, tmp_path):
        first = tmp_path / "orbit1.csv"
        rc, _, _ = run_cli(
            capsys, "orbit", "--grid-n", "200", "--noise-m", "21",
            "--ic", "0.3", "--steps", "40", "--seed", "7", "--out", str(first),
        )
        assert rc == 0
        cfg = embedded_config(first.read_text())
        argv = ["orbit"] + self.rebuild_model_argv(cfg) + [
            "--controller", cfg["controller"],
            "--ic", repr(cfg["ic"]),
            "--steps", str(cfg["steps"]),
        ]
        if cfg["u0"] is not None:
            argv += ["--u0", repr(cfg["u0"])]
        second = tmp_path / "orbit2.csv"
        assert run_cli(capsys, *argv, "--out", str(second))[0] == 0
        assert first.read_bytes() == second.read_bytes()

    def test_sweep_file_regenerates_from_its_own_header(self, capsys, tmp_path):
        first = tmp_path / "sweep1.csv"
        rc, _, _ = run_cli(
            capsys, "sweep-xi", "--grid-n", "200", "--noise-m", "11",
            "--xi-min", "0.03", "--xi-max", "0.09", "--xi-count", "2",
            "--out", str(first),
        )
        assert rc == 0
        cfg = embedded_config(first.read_text())
        argv = ["sweep-xi"] + self.rebuild_model_argv(cfg) + [
            "--xi-min", repr(cfg["xi-min"]),
            "--xi-max", repr(cfg["xi-max"]),
            "--xi-count", str(cfg["xi-count"]),
        ]
        second = tmp_path / "sweep2.csv"
        assert run_cli(capsys, *argv, "--out", str(second))[0] == 0
        assert first.read_bytes() == second.read_bytes()


class TestCliVerify:
    def test_built_in_suite_passes(self, capsys):
        rc, out, _ = run_cli(capsys, "verify")
        assert rc == 0
        lines = out.splitlines()
        suites = [l for l in lines if l.startswith("suite=")]
        assert len(suites) >= 4
        assert all(l.endswith("status=pass") for l in suites)
        assert lines[-1] == "verify = pass"
