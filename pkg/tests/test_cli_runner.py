import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from amplab import cli_runner
from amplab.cli_runner import main, run
from amplab.config import ConfigError, load_config, parse_config
from amplab.io import format_value, sha256_file, write_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
[model]
lengths = 6.283185307179586
points = 16
modes = 0; 1
amplitudes = 1.0, 0.8
dispersion = 0.5

[solver]
horizon = 0.5
steps = 64
mass = 0, 1

[optimizer]
slices = 8
starts = 2

[experiment]
q = 2
lambda = 0.5
radius_count = 4
lambdas = 0.2, 0.8, 1.6
samples = 4

[run]
seed = 3
workers = 1
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


class TestConfig:
    def test_parse(self):
        cfg = parse_config(SMALL, "small.ini")
        assert cfg.model.mode_count == 2 and cfg.model.grid.points_per_axis == (16,)
        assert cfg.mass.regime == "diffusive" and cfg.dt == pytest.approx(0.5 / 64)
        assert cfg.tgrid.slices == 8 and cfg.seed == 3

    def test_override(self):
        cfg = parse_config(SMALL, "small.ini", ["experiment.q=3", "run.seed=9"])
        assert cfg.experiment["q"] == 3 and cfg.seed == 9

    @pytest.mark.parametrize("text,where", [
        (SMALL.replace("q = 2", "q = two"), "small.ini:"),
        (SMALL.replace("[run]", "[bogus]"), "bogus"),
        (SMALL.replace("q = 2", "qq = 2"), "qq"),
        (SMALL.replace("amplitudes = 1.0, 0.8", "amplitudes = 1.0, -0.8"), "amplitudes"),
    ])
    def test_errors_are_anchored(self, text, where):
        with pytest.raises(ConfigError, match=where):
            parse_config(text, "small.ini")

    def test_error_has_line_number(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(SMALL.replace("steps = 64", "steps = -1"), "small.ini")
        line = SMALL.splitlines().index("steps = 64") + 1
        assert f"small.ini:{line}:" in str(exc.value)

    def test_bad_override(self):
        with pytest.raises(ConfigError, match="--set"):
            parse_config(SMALL, "small.ini", ["experiment.q"])

    @pytest.mark.parametrize("name", ["m1.ini", "m2.ini"])
    def test_shipped_configs_load(self, name):
        load_config(CONFIGS / name)


class TestIO:
    def test_format(self):
        assert format_value(0.1) == "0.10000000000000001"
        assert format_value(float("inf")) == "inf" and format_value(float("nan")) == "nan"
        assert format_value(True) == "true" and format_value(np.int64(3)) == "3"

    def test_csv_requires_header(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv(tmp_path / "x.csv", [], [])
        with pytest.raises(ValueError):
            write_csv(tmp_path / "x.csv", ["a"], [[1, 2]])


class TestSubcommands:
    @pytest.mark.parametrize("sub,files", [
        ("simulate", {"field.csv", "simulate.json"}),
        ("mu", {"mu.json", "mu_slices.csv"}),
        ("critical", {"critical.json", "critical.csv", "spectrum.csv"}),
        ("slope", {"slope.csv", "slope.json"}),
        ("scan", {"scan.csv", "scan.json"}),
    ])
    def test_outputs_and_manifest(self, small, tmp_path, sub, files):
        out = tmp_path / "out"
        assert main([sub, "--config", str(small), "--out", str(out)]) == 0
        manifest = read_json(out / "manifest.json")
        assert {f["path"] for f in manifest["files"]} == files
        for entry in manifest["files"]:
            assert entry["sha256"] == sha256_file(out / entry["path"])
        assert manifest["subcommand"] == sub and manifest["exit_code"] == 0 and manifest["seed"] == 3

    def test_critical_inequality(self, small, tmp_path):
        out = tmp_path / "out"
        assert run("critical", small, out=str(out)) == 0
        rep = read_json(out / "critical.json")
        assert rep["lambda_q"] <= rep["lambda_bar_q"]

    def test_single_mode_equality(self, tmp_path):
        out = tmp_path / "out"
        assert run("critical", CONFIGS / "m1.ini", out=str(out)) == 0
        rep = read_json(out / "critical.json")
        assert rep["lambda_q"] == pytest.approx(0.5) and rep["lambda_bar_q"] == pytest.approx(0.5)

    def test_deterministic_across_workers(self, small, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("scan", small, out=str(a)) == 0
        assert run("scan", small, out=str(b), overrides=["run.workers=2"]) == 0
        for name in ("scan.csv", "scan.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_changes_draw(self, small, tmp_path):
        run("simulate", small, out=str(tmp_path / "a"))
        run("simulate", small, seed=4, out=str(tmp_path / "b"))
        assert read_json(tmp_path / "a" / "simulate.json")["s"] != read_json(tmp_path / "b" / "simulate.json")["s"]

    def test_env_output_dir(self, small, tmp_path, monkeypatch):
        monkeypatch.setenv(cli_runner.OUT_ENV, str(tmp_path / "env"))
        assert run("mu", small) == 0
        assert (tmp_path / "env" / "mu.json").exists()

    def test_cli_flag_beats_env(self, small, tmp_path, monkeypatch):
        monkeypatch.setenv(cli_runner.OUT_ENV, str(tmp_path / "env"))
        assert run("mu", small, out=str(tmp_path / "flag")) == 0
        assert (tmp_path / "flag" / "mu.json").exists() and not (tmp_path / "env").exists()


class TestExitCodes:
    def test_config_error_is_2(self, small, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text(SMALL.replace("starts = 2", "starts = 0"))
        out = tmp_path / "out"
        assert run("mu", bad, out=str(out)) == 2
        assert "bad.ini:" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_file_is_2(self, tmp_path):
        assert run("mu", tmp_path / "nope.ini") == 2

    def test_slope_needs_positive_lambda(self, small, tmp_path):
        assert run("slope", small, out=str(tmp_path), overrides=["experiment.lambda=0"]) == 2

    def test_inequality_violation_is_1(self, small, tmp_path, monkeypatch, capsys):
        real = cli_runner._mu

        def deflated(cfg, x=None):
            res = real(cfg, x)
            res.mu *= 0.5
            return res

        monkeypatch.setattr(cli_runner, "_mu", deflated)
        assert run("critical", small, out=str(tmp_path)) == 1
        assert "lambda_q" in capsys.readouterr().err

    def test_verify_failure_is_1(self, small, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(cli_runner, "verify_properties",
                            lambda cfg: [cli_runner.Check("broken", False, "forced")])
        assert run("verify", small, out=str(tmp_path)) == 1
        assert "broken" in capsys.readouterr().err
        assert read_json(tmp_path / "manifest.json")["exit_code"] == 1


class TestVerify:
    def test_m2_passes(self, tmp_path):
        out = tmp_path / "out"
        assert run("verify", CONFIGS / "m2.ini", out=str(out)) == 0
        report = read_json(out / "verify.json")
        assert report["passed"] and len(report["checks"]) == 16

    def test_module_entry_point(self, small, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "amplab", "critical", "--config", str(small),
                               "--out", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "critical.csv").exists()
