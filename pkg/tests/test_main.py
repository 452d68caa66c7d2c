import json
import numpy as np
import pytest
from src.main import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, StateSpaceRunner, build_parser, main
from src.run_config import parse_run_config
from src.report import SECTION_ORDER


def _run(command, config_path, out_dir, *extra):
    return main([command, str(config_path), "--out-dir", str(out_dir), *extra])


def _load_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _headers(report_text):
    return [line[3:-3] for line in report_text.splitlines() if line.startswith("== ")]


def _shipped(config_dir, name, **solver):
    data = json.loads((config_dir / f"{name}.json").read_text(encoding="utf-8"))
    data.setdefault("solver", {}).update(solver)
    return data


class TestRun:
    def test_rotation_conserves_radius(self, config_dir, tmp_path):
        assert _run("run", config_dir / "lti_rotation.json", tmp_path) == EXIT_OK
        rows = _load_csv(tmp_path / "lti_rotation.csv")
        radius = rows[:, 1] ** 2 + rows[:, 2] ** 2
        assert np.max(np.abs(radius - 1.0)) <= 1e-8
        np.testing.assert_allclose(rows[-1, 1:], [-1.0, 0.0], atol=1e-9)

    def test_csv_headers(self, config_dir, tmp_path):
        _run("run", config_dir / "lti_rotation.json", tmp_path)
        trajectory_header = (tmp_path / "lti_rotation.csv").read_text(encoding="utf-8").splitlines()[0]
        stm_header = (tmp_path / "lti_rotation_stm.csv").read_text(encoding="utf-8").splitlines()[0]
        assert trajectory_header == "t,x1,x2"
        assert stm_header == "t,phi11,phi12,phi21,phi22"

    def test_output_is_deterministic(self, config_dir, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        _run("run", config_dir / "lti_rotation.json", first)
        _run("run", config_dir / "lti_rotation.json", second)
        assert (first / "lti_rotation.csv").read_bytes() == (second / "lti_rotation.csv").read_bytes()

    def test_report_sections_for_linear_run(self, config_dir, tmp_path):
        _run("run", config_dir / "lti_rotation.json", tmp_path)
        report = (tmp_path / "lti_rotation_report.txt").read_text(encoding="utf-8")
        expected = [name for name in SECTION_ORDER if name != "Picard iterations"]
        assert _headers(report) == expected
        assert "method: matrix-exponential" in report
        assert "exit code: 0" in report

    def test_forced_decay(self, config_dir, tmp_path):
        assert _run("run", config_dir / "lti_decay_forced.json", tmp_path) == EXIT_OK
        rows = _load_csv(tmp_path / "lti_decay_forced.csv")
        np.testing.assert_allclose(rows[:, 1], 1.0 - np.exp(-rows[:, 0]), atol=1e-6)

    def test_impulse_jump_is_included_at_its_time(self, config_dir, tmp_path):
        assert _run("run", config_dir / "ltv_impulse.json", tmp_path) == EXIT_OK
        rows = _load_csv(tmp_path / "ltv_impulse.csv")
        index = int(np.argmin(np.abs(rows[:, 0] - 0.5)))
        assert np.all(rows[:index, 1:] == 0.0)
        assert rows[index, 2] == pytest.approx(1.0, abs=1e-12)
        report = (tmp_path / "ltv_impulse_report.txt").read_text(encoding="utf-8")
        assert "impulsive inputs are applied algebraically only" in report

    def test_auto_picks_commuting_route(self, config_dir, tmp_path):
        assert _run("run", config_dir / "ltv_sine_rotation.json", tmp_path) == EXIT_OK
        report = (tmp_path / "ltv_sine_rotation_report.txt").read_text(encoding="utf-8")
        assert "method: commuting" in report

    def test_auto_picks_series_for_noncommuting(self, config_dir, write_config, tmp_path):
        data = _shipped(config_dir, "ltv_noncommuting")
        data["horizon"]["steps"] = 400
        assert _run("run", write_config(data), tmp_path / "out") == EXIT_OK
        report = (tmp_path / "out" / "ltv_noncommuting_report.txt").read_text(encoding="utf-8")
        assert "method: peano-baker" in report
        assert "term sup-norm" in report

    def test_commuting_route_refused(self, config_dir, write_config, tmp_path):
        data = _shipped(config_dir, "ltv_noncommuting", method="commuting")
        data["horizon"]["steps"] = 200
        assert _run("run", write_config(data), tmp_path / "out") == EXIT_SOLVER

    def test_series_budget_exhausted(self, write_config, tmp_path):
        data = {
            "system": {"kind": "ltv", "matrix": [["0", "-5"], ["5", "0"]]},
            "horizon": {"T": 5.0, "steps": 100},
            "initial": [1.0, 0.0],
            "solver": {"method": "peano-baker", "max_terms": 5},
        }
        assert _run("run", write_config(data), tmp_path / "out") == EXIT_SOLVER
        report = (tmp_path / "out" / "report.txt").read_text(encoding="utf-8")
        assert "Did not converge" in report

    def test_finite_escape(self, config_dir, tmp_path):
        assert _run("run", config_dir / "nonlinear_square_escape.json", tmp_path) == EXIT_BLOWUP
        report = (tmp_path / "nonlinear_square_escape_report.txt").read_text(encoding="utf-8")
        assert "last finite time" in report
        assert "(oracle)" in report
        assert "Blowup" in report

    def test_finite_escape_through_oracle(self, config_dir, write_config, tmp_path):
        data = _shipped(config_dir, "nonlinear_square_escape", method="oracle", substeps=2)
        assert _run("run", write_config(data), tmp_path / "out") == EXIT_BLOWUP

    def test_sqrt_abs_is_flagged(self, config_dir, tmp_path):
        assert _run("run", config_dir / "nonlinear_sqrt_abs.json", tmp_path) == EXIT_OK
        report = (tmp_path / "nonlinear_sqrt_abs_report.txt").read_text(encoding="utf-8")
        assert "non-uniqueness flag: True" in report
        assert "t^2/4" in report
        assert _headers(report) == [name for name in SECTION_ORDER if name != "Series diagnostics"]

    def test_basis_solve_method(self, config_dir, write_config, tmp_path):
        data = _shipped(config_dir, "ltv_sine_rotation", method="basis-solve", substeps=2)
        assert _run("run", write_config(data), tmp_path / "out") == EXIT_OK
        report = (tmp_path / "out" / "ltv_sine_rotation_report.txt").read_text(encoding="utf-8")
        assert "method: basis-solve" in report

    def test_picard_iteration_budget(self, config_dir, write_config, tmp_path):
        data = _shipped(config_dir, "nonlinear_linear_field", max_iters=3)
        assert _run("run", write_config(data), tmp_path / "out") == EXIT_SOLVER

    def test_rtol_flag_reaches_report(self, config_dir, tmp_path):
        _run("run", config_dir / "nonlinear_linear_field.json", tmp_path, "--rtol", "1e-6")
        report = (tmp_path / "nonlinear_linear_field_report.txt").read_text(encoding="utf-8")
        assert "rtol: 1e-06" in report


class TestVerify:
    def test_constant_matrix(self, write_config, tmp_path):
        data = {
            "system": {"kind": "lti", "matrix": [["0", "1"], ["-2", "-0.5"]]},
            "horizon": {"T": 1.0, "steps": 2000},
            "initial": [1.0, 0.0],
            "solver": {"substeps": 2},
        }
        assert _run("verify", write_config(data), tmp_path / "out") == EXIT_OK
        report = (tmp_path / "out" / "report.txt").read_text(encoding="utf-8")
        for route in ("matrix-exponential", "commuting", "basis-solve"):
            assert route in report
        assert "FAIL" not in report

    def test_zero_matrix(self, write_config, tmp_path):
        data = {
            "system": {"kind": "lti", "matrix": [[0, 0], [0, 0]]},
            "horizon": {"T": 1.0, "steps": 100},
            "initial": [1.0, 2.0],
        }
        assert _run("verify", write_config(data), tmp_path / "out") == EXIT_OK

    def test_noncommuting_family_with_commuting_method(self, config_dir, write_config, tmp_path):
        data = _shipped(config_dir, "ltv_noncommuting", method="commuting", substeps=2)
        data["horizon"]["steps"] = 200
        assert _run("verify", write_config(data), tmp_path / "out") == EXIT_SOLVER

    def test_noncommuting_family_skips_shortcut(self, config_dir, write_config, tmp_path):
        data = _shipped(config_dir, "ltv_noncommuting", substeps=2)
        data["horizon"]["steps"] = 1000
        assert _run("verify", write_config(data), tmp_path / "out") == EXIT_OK
        report = (tmp_path / "out" / "ltv_noncommuting_report.txt").read_text(encoding="utf-8")
        assert "commuting: not applicable" in report

    def test_nonlinear_with_lipschitz(self, config_dir, tmp_path):
        assert _run("verify", config_dir / "nonlinear_linear_field.json", tmp_path) == EXIT_OK
        report = (tmp_path / "nonlinear_linear_field_report.txt").read_text(encoding="utf-8")
        assert "successive distances within envelope: True" in report


class TestCommandLine:
    def test_garbled_config(self, write_config, tmp_path):
        assert _run("run", write_config('{"system": [1, 2'), tmp_path) == EXIT_CONFIG

    def test_missing_config(self, tmp_path):
        assert _run("run", tmp_path / "absent.json", tmp_path) == EXIT_CONFIG

    def test_invalid_expression(self, write_config, tmp_path):
        data = {"system": {"kind": "ltv", "matrix": [["sin(t"]]}, "horizon": {"T": 1.0, "steps": 10}, "initial": [1.0]}
        assert _run("run", write_config(data), tmp_path) == EXIT_CONFIG

    def test_bad_environment(self, monkeypatch, config_dir, tmp_path):
        monkeypatch.setenv("STATESPACE_RTOL", "abc")
        assert _run("run", config_dir / "lti_decay_forced.json", tmp_path) == EXIT_CONFIG

    def test_environment_out_dir(self, monkeypatch, config_dir, tmp_path):
        monkeypatch.setenv("STATESPACE_OUT_DIR", str(tmp_path / "env"))
        assert main(["run", str(config_dir / "lti_decay_forced.json")]) == EXIT_OK
        assert (tmp_path / "env" / "lti_decay_forced.csv").exists()

    @pytest.mark.parametrize("flags", [["--rtol", "-1"], ["--rtol", "x"], ["--seed", "-3"], ["--log-format", "xml"]])
    def test_rejected_flags(self, flags):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run", "config.json", *flags])

    def test_json_logging(self, config_dir, tmp_path):
        assert _run("run", config_dir / "lti_decay_forced.json", tmp_path, "--log-format", "json") == EXIT_OK

    def test_long_expression_entry(self, write_config, tmp_path):
        entry = "-" + "-".join(["0.001"] * 1000)
        data = {"system": {"kind": "lti", "matrix": [[entry]]}, "horizon": {"T": 1.0, "steps": 50}, "initial": [1.0]}
        assert _run("run", write_config(data), tmp_path) == EXIT_OK
        rows = _load_csv(tmp_path / "trajectory.csv")
        assert rows[-1, 1] == pytest.approx(np.exp(-1.0), rel=1e-9)

    def test_binary_config(self, tmp_path):
        path = tmp_path / "binary.json"
        path.write_bytes(b"\xff\xfe\x00{")
        assert _run("run", path, tmp_path) == EXIT_CONFIG

    def test_deeply_nested_config(self, write_config, tmp_path):
        assert _run("run", write_config("[" * 200000), tmp_path) == EXIT_CONFIG


def test_resolve_method_for_constant_ltv():
    config = parse_run_config({
        "system": {"kind": "ltv", "matrix": [["-1", "0"], ["0", "2"]]},
        "horizon": {"T": 1.0, "steps": 10},
        "initial": [1.0, 1.0],
    })
    method, reason = StateSpaceRunner(config, 1e-10, ".", 0).resolve_method()
    assert method == "matrix-exponential"
    assert reason == "constant matrix"
