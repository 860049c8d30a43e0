"""Families, config validation, artifact reproducibility, exit codes."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from otgeo.grid import build_grid, integrate, write_field
from otgeo.transport import ReferenceMeasure
from otgeo.families import make_marginals
from otgeo.prox import solve_prox
from otgeo.elliptic import EllipticProblem, solve_elliptic
from otgeo.diagnostics import DiagnosticsReport
from otgeo.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    config_digest,
    emit_plots,
    load_config,
    main,
    run,
)


def write_config(tmp_path, **overrides):
    cfg = {
        "grid": {"dim": 1, "n_space": 32, "n_time": 16, "horizon": 1.0},
        "marginals": {"family": "uniform"},
        "reference": {"profile": "zero"},
        "solver": {"method": "prox", "eps": 0.1},
        "diagnostics": {"checks": ["energy", "duality"]},
        "output": {"directory": str(tmp_path / "out")},
    }
    for key, val in overrides.items():
        cfg[key] = val
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


class TestMakeMarginals:
    def test_uniform(self):
        g = build_grid(1, 32, 8, 1.0)
        m0, m1 = make_marginals("uniform", {}, g)
        assert np.max(np.abs(m0 - 1.0)) < 1e-12
        assert integrate(m1, g) == pytest.approx(1.0, abs=1e-12)

    def test_bump_pair_positive_unit_mass(self):
        g = build_grid(1, 64, 8, 1.0)
        m0, m1 = make_marginals("bump_pair", {"width": 0.08, "centers": (0.0, 0.5)}, g)
        for m in (m0, m1):
            assert np.min(m) > 0
            assert integrate(m, g) == pytest.approx(1.0, abs=1e-12)
        assert abs(g.axis_coords()[np.argmax(m1)] - 0.5) < g.h

    def test_bump_peak_parameter(self):
        g = build_grid(1, 64, 8, 1.0)
        m0, _ = make_marginals("bump_pair", {"peak": 4.0, "floor": 1e-3}, g)
        assert np.max(m0) == pytest.approx(4.0, rel=0.25)

    def test_step_family(self):
        g = build_grid(1, 64, 8, 1.0)
        m0, m1 = make_marginals("step", {"width": 0.25, "floor": 0.05}, g)
        assert np.min(m0) > 0
        assert integrate(m0, g) == pytest.approx(1.0, abs=1e-12)

    def test_point_like_zero_steps_rejected_by_both_solvers(self):
        g = build_grid(1, 32, 8, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0, m1 = make_marginals("point_like", {"smoothing_steps": 0}, g)
        assert np.min(m0) == 0.0
        with pytest.raises(ValueError, match="zero cell"):
            solve_prox(m0, m1, ref, 0.1, g)
        with pytest.raises(ValueError, match="strictly positive"):
            solve_elliptic(EllipticProblem(g, ref, 0.1, m0, m1))

    def test_point_like_smoothing_makes_it_solvable(self):
        g = build_grid(1, 32, 8, 1.0)
        m0, m1 = make_marginals("point_like", {"smoothing_steps": 3}, g)
        assert np.min(m0) > 0
        assert integrate(m0, g) == pytest.approx(1.0, abs=1e-12)

    def test_file_family_roundtrip(self, tmp_path):
        g = build_grid(1, 32, 8, 1.0)
        x = g.axis_coords()
        m = np.exp(np.cos(2 * np.pi * x))
        m /= integrate(m, g)
        f0, f1 = tmp_path / "m0.txt", tmp_path / "m1.txt"
        write_field(f0, m[None, :], g)
        write_field(f1, np.roll(m, 8)[None, :], g)
        m0, m1 = make_marginals("file", {"file0": str(f0), "file1": str(f1)}, g)
        assert integrate(m0, g) == pytest.approx(1.0, abs=1e-12)

    def test_unknown_family(self):
        g = build_grid(1, 32, 8, 1.0)
        with pytest.raises(ValueError, match="unknown marginal family"):
            make_marginals("nope", {}, g)

    def test_2d_bump_pair(self):
        g = build_grid(2, 12, 4, 1.0)
        m0, m1 = make_marginals("bump_pair", {"width": 0.2}, g)
        assert np.min(m0) > 0
        assert integrate(m0, g) == pytest.approx(1.0, abs=1e-12)


class TestConfigValidation:
    def test_valid_passes(self, tmp_path):
        path, _ = write_config(tmp_path)
        load_config(path)

    @pytest.mark.parametrize("patch,field", [
        ({"grid": {"dim": 3, "n_space": 32, "n_time": 16, "horizon": 1.0}}, "grid.dim"),
        ({"grid": {"n_space": 32, "n_time": 16, "horizon": 1.0}}, "grid.dim"),
        ({"marginals": {"family": "nope"}}, "marginals.family"),
        ({"solver": {"method": "prox"}}, "eps"),
        ({"solver": {"method": "quantum", "eps": 0.1}}, "solver.method"),
        ({"diagnostics": {"checks": ["nonsense"]}}, "check"),
    ])
    def test_invalid_configs_name_the_field(self, tmp_path, patch, field):
        path, _ = write_config(tmp_path, **patch)
        with pytest.raises(ConfigError, match=field.split(".")[-1]):
            load_config(path)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/config.json")

    def test_digest_is_canonical(self):
        a = {"b": 1, "a": [1, 2]}
        b = {"a": [1, 2], "b": 1}
        assert config_digest(a) == config_digest(b)


class TestRun:
    def test_uniform_run_exit_zero(self, tmp_path):
        path, cfg = write_config(tmp_path)
        code, artifacts = run(path)
        assert code == EXIT_OK
        out = Path(cfg["output"]["directory"])
        assert (out / "solve_report.json").exists()
        assert (out / "diagnostics.json").exists()
        assert (out / "diagnostics.csv").exists()
        payload = json.loads((out / "solve_report.json").read_text())
        assert payload["config_digest"] == config_digest(cfg)
        assert abs(payload["solvers"]["prox"]["objective"]) < 1e-8
        assert "wall_time" not in payload["solvers"]["prox"]

    def test_stationary_run_closed_form(self, tmp_path):
        path, cfg = write_config(
            tmp_path,
            grid={"dim": 1, "n_space": 64, "n_time": 32, "horizon": 1.0},
            marginals={"family": "bump_pair", "width": 0.3},
            reference={"profile": "cosine", "amplitude": 0.3},
            solver={"method": "prox", "eps": 0.1},
        )
        # stationary instance: overwrite marginals with the reference density
        cfg["marginals"] = {"family": "file"}
        g = build_grid(1, 64, 32, 1.0)
        ref = ReferenceMeasure.from_potential(
            0.3 * np.cos(2 * np.pi * g.axis_coords()), g)
        ms = ref.stationary_density(g)
        f = tmp_path / "stat.txt"
        write_field(f, ms[None, :], g)
        cfg["marginals"] = {"family": "file", "file0": str(f), "file1": str(f)}
        path.write_text(json.dumps(cfg))
        code, _ = run(path)
        assert code == EXIT_OK
        payload = json.loads((Path(cfg["output"]["directory"]) / "solve_report.json").read_text())
        assert payload["solvers"]["prox"]["objective"] == pytest.approx(
            -0.1 * ref.log_normalizer, abs=2e-6)

    def test_bitwise_reproducibility(self, tmp_path):
        path, cfg = write_config(tmp_path)
        _, arts1 = run(path, out_dir=tmp_path / "r1")
        _, arts2 = run(path, out_dir=tmp_path / "r2")
        assert len(arts1) == len(arts2) > 0
        for a, b in zip(sorted(arts1), sorted(arts2)):
            assert hashlib.sha256(Path(a).read_bytes()).digest() == \
                hashlib.sha256(Path(b).read_bytes()).digest()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code, artifacts = run(bad)
        assert code == EXIT_CONFIG
        assert artifacts == []

    def test_both_methods_cross_compare(self, tmp_path):
        path, cfg = write_config(
            tmp_path,
            grid={"dim": 1, "n_space": 32, "n_time": 16, "horizon": 1.0},
            marginals={"family": "bump_pair", "width": 0.2},
            solver={"method": "both", "eps": 0.1},
        )
        code, _ = run(path)
        assert code == EXIT_OK
        payload = json.loads((Path(cfg["output"]["directory"]) / "solve_report.json").read_text())
        assert "prox" in payload["solvers"] and "elliptic" in payload["solvers"]
        assert payload["solvers"]["cross_method_l1"] < 0.1

    def test_point_like_prox_gets_mandatory_smoothing(self, tmp_path):
        path, cfg = write_config(
            tmp_path,
            marginals={"family": "point_like", "smoothing_steps": 0},
            solver={"method": "prox", "eps": 0.1},
        )
        code, _ = run(path)
        assert code == EXIT_OK

    def test_required_diagnostic_failure_exit_code(self, tmp_path):
        from otgeo.cli import EXIT_DIAGNOSTIC
        path, cfg = write_config(
            tmp_path,
            diagnostics={"checks": [
                {"id": "duality", "required": True, "gap_factor": 1e-18}]},
        )
        code, artifacts = run(path)
        assert code == EXIT_DIAGNOSTIC
        assert artifacts  # artifacts are still written for inspection


class TestCliEntry:
    def test_check_subcommand(self, tmp_path, capsys):
        path, _ = write_config(tmp_path)
        assert main(["check", str(path)]) == EXIT_OK
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"grid": {}}))
        assert main(["check", str(bad)]) == EXIT_CONFIG

    def test_sweep_requires_eps_list(self, tmp_path):
        path, _ = write_config(tmp_path)
        assert main(["sweep", str(path)]) == EXIT_CONFIG

    def test_sweep_runs_with_eps_list(self, tmp_path):
        path, cfg = write_config(
            tmp_path,
            grid={"dim": 1, "n_space": 32, "n_time": 16, "horizon": 1.0},
            solver={"method": "prox", "eps_list": [0.2, 0.1]},
            diagnostics={"checks": []},
        )
        assert main(["sweep", str(path), "--out", str(tmp_path / "sw")]) == EXIT_OK
        diag = json.loads((tmp_path / "sw" / "diagnostics.json").read_text())
        assert any(e["check"] == "epsilon_sweep" for e in diag["entries"])


class TestWorkerPool:
    def test_env_var_caps_pool(self, monkeypatch):
        from otgeo.cli import _workers
        monkeypatch.delenv("OTGEO_THREADS", raising=False)
        assert _workers(4) == 1
        monkeypatch.setenv("OTGEO_THREADS", "3")
        assert _workers(4) == 3
        assert _workers(2) == 2
        monkeypatch.setenv("OTGEO_THREADS", "0")
        assert _workers(4) == 1


class TestEmitPlots:
    def test_empty_report_emits_nothing(self, tmp_path):
        assert emit_plots(DiagnosticsReport(), tmp_path) == []

    def test_energy_plot_emitted_and_stable(self, tmp_path):
        g = build_grid(1, 32, 16, 1.0)
        ref = ReferenceMeasure.from_potential(0.0, g)
        m0 = np.ones(32)
        m, w, u, rep = solve_prox(m0, m0, ref, 0.1, g)
        from otgeo.diagnostics import check_energy
        report = DiagnosticsReport()
        report.add(check_energy(m, u, ref, 0.1, g, objective=rep.objective))
        p1 = emit_plots(report, tmp_path, digest="abc")
        text1 = Path(p1[0]).read_text()
        p2 = emit_plots(report, tmp_path, digest="abc")
        assert Path(p2[0]).read_text() == text1
        assert "config_digest=abc" in text1
        assert text1.startswith("<svg")
