import hashlib
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pvmppt import config as cfgmod
from pvmppt.cli import main, parse_grid
from pvmppt.errors import ConfigError
from pvmppt.io import atomic_write_text, read_csv_array

STC_CONFIG = """\
seed = 42
output_dir = "run"

[buck]
l = 1e-3
c = 470e-6
r = 6.0
dt = 1e-5

[controller]
kind = "ampo"
gamma = 0.01
sample_period_s = 1e-3

[scenario]
preset = "stc"
duration = 0.1
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cfgmod.CONFIG_ENV_VAR, raising=False)
    (tmp_path / "stc.toml").write_text(STC_CONFIG)
    return tmp_path


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestConfig:
    def test_defaults(self):
        cfg = cfgmod.from_mapping({})
        assert cfg.controller.kind.value == "ampo" and cfg.scenario.name == "stc" and cfg.seed == 42

    @pytest.mark.parametrize(
        "data, key",
        [
            ({"colour": 1}, "colour"),
            ({"buck": {"esr": 0.1}}, "esr"),
            ({"controller": {"step": 0.1}}, "step"),
            ({"neural": {"layers": 3}}, "layers"),
            ({"panel": {"r_series": 0.1}}, "r_series"),
            ({"scenario": {"segments": [{"start": 0, "g": 1, "t": 300, "temp": 1}], "duration": 1}}, "temp"),
        ],
    )
    def test_unknown_keys_named(self, data, key):
        with pytest.raises(ConfigError, match=key):
            cfgmod.from_mapping(data)

    @pytest.mark.parametrize(
        "data",
        [
            {"buck": {"r": -1.0}},
            {"controller": {"gamma": "big"}},
            {"controller": {"kind": "mystery"}},
            {"neural": {"max_epochs": 2.5}},
            {"scenario": {"preset": "stc", "segments": []}},
            {"scenario": {"segments": [{"start": 0, "g": 1, "t": 300}]}},
            {"buck": {"dt": 3e-6}, "controller": {"sample_period_s": 1e-5}},
            {"seed": True},
        ],
    )
    def test_invalid_values(self, data):
        with pytest.raises(ConfigError):
            cfgmod.from_mapping(data)

    def test_inline_segments(self):
        cfg = cfgmod.from_mapping(
            {"scenario": {"duration": 0.2, "segments": [{"start": 0.0, "g": 400, "t": 300}, {"start": 0.1, "g": 800, "t": 300}]}}
        )
        assert [s.g for s in cfg.scenario.segments] == [400.0, 800.0]

    def test_panel_override_on_top_of_default(self):
        cfg = cfgmod.from_mapping({"panel": {"n_s": 72}})
        assert cfg.panel.n_s == 72.0 and cfg.panel.a == cfgmod.default_panel().a

    def test_override_precedence(self, workdir):
        overrides = ["controller.gamma=0.02", "output_dir='elsewhere'", "scenario.duration=0.8"]
        cfg = cfgmod.load(workdir / "stc.toml", overrides, preset="step_irradiance")
        assert cfg.controller.gamma == 0.02 and cfg.output_dir == Path("elsewhere")
        assert cfg.scenario.name == "step_irradiance" and cfg.scenario.duration == 0.8

    def test_preset_duration_too_short_for_step(self, workdir):
        with pytest.raises(ConfigError, match="before the end"):
            cfgmod.load(workdir / "stc.toml", preset="step_irradiance")

    def test_parse_value(self):
        assert cfgmod.parse_value("3") == 3 and cfgmod.parse_value("'x'") == "x" and cfgmod.parse_value("ampo") == "ampo"
        with pytest.raises(ConfigError):
            cfgmod.apply_override({}, "no-equals-sign")

    def test_env_var_default(self, workdir, monkeypatch):
        monkeypatch.setenv(cfgmod.CONFIG_ENV_VAR, str(workdir / "stc.toml"))
        assert cfgmod.load().output_dir == Path("run")

    def test_missing_and_malformed_files(self, workdir):
        with pytest.raises(ConfigError, match="not found"):
            cfgmod.load(workdir / "nope.toml")
        (workdir / "bad.toml").write_text("[buck\n")
        with pytest.raises(ConfigError):
            cfgmod.load(workdir / "bad.toml")


class TestAtomicWrite:
    def test_replaces_and_leaves_no_temp(self, tmp_path):
        target = tmp_path / "sub" / "a.csv"
        atomic_write_text(target, "one\n")
        atomic_write_text(target, "two\n")
        assert target.read_text() == "two\n" and os.listdir(target.parent) == ["a.csv"]

    def test_interrupted_write_keeps_old_file(self, tmp_path, monkeypatch):
        target = tmp_path / "a.csv"
        target.write_text("old\n")

        def boom(*_):
            raise KeyboardInterrupt

        monkeypatch.setattr(os, "replace", boom)
        with pytest.raises(KeyboardInterrupt):
            atomic_write_text(target, "new\n")
        assert target.read_text() == "old\n" and os.listdir(tmp_path) == ["a.csv"]


class TestSimulate:
    def test_stc_run(self, workdir):
        before = digest(workdir / "stc.toml")
        assert main(["simulate", "--config", "stc.toml"]) == 0
        header, data = read_csv_array(workdir / "run" / "trace.csv")
        assert data.shape[0] == 101 and header[0] == "t"
        assert "steady_state_power" in (workdir / "run" / "metrics.txt").read_text()
        assert digest(workdir / "stc.toml") == before

    def test_unknown_key_exit_2(self, workdir, capsys):
        (workdir / "bad.toml").write_text(STC_CONFIG.replace("gamma = 0.01", "gama = 0.01"))
        assert main(["simulate", "--config", "bad.toml"]) == 2
        assert "gama" in capsys.readouterr().err

    def test_ann_without_model(self, workdir, capsys):
        assert main(["simulate", "--config", "stc.toml", "--controller", "ampo_ann"]) == 2
        assert "--train-if-missing" in capsys.readouterr().err

    def test_ann_trains_if_missing(self, workdir):
        args = ["simulate", "--config", "stc.toml", "--controller", "ampo_ann", "--train-if-missing"]
        assert main(args) == 0
        assert (workdir / "models" / "v_mpp.json").exists() and (workdir / "run" / "trace.csv").exists()

    def test_zero_duration(self, workdir):
        assert main(["simulate", "--config", "stc.toml", "--duration", "0"]) == 0
        assert (workdir / "run" / "trace.csv").read_text().count("\n") == 1


class TestTrain:
    def test_reports_validation_error(self, workdir, capsys):
        assert main(["train", "--model-dir", "m1"]) == 0
        out = capsys.readouterr().out
        errors = [float(line.split("val_max_rel_err=")[1].rstrip("%")) for line in out.splitlines()]
        assert len(errors) == 2 and max(errors) < 1.0
        for name in ("v_mpp.json", "i_mpp.json", "train_report_v_mpp.csv", "dataset.csv"):
            assert (workdir / "m1" / name).exists()
        assert main(["train", "--model-dir", "m2"]) == 0
        for name in ("v_mpp.json", "i_mpp.json"):
            assert digest(workdir / "m1" / name) == digest(workdir / "m2" / name)

    def test_zero_epochs_exit_3(self, workdir, capsys):
        assert main(["train", "--set", "neural.max_epochs=0"]) == 3
        assert "NotTrained" in capsys.readouterr().err


class TestCompare:
    def test_three_controllers(self, workdir, capsys):
        args = ["compare", "--config", "stc.toml", "--duration", "0.3", "--train-if-missing"]
        assert main(args + ["--controllers", "cpoa,ampo,ampo_ann"]) == 0
        for kind in ("cpoa", "ampo", "ampo_ann"):
            assert (workdir / "run" / f"trace_{kind}.csv").exists()
        rows = {
            line.split(",")[0]: line.split(",")
            for line in (workdir / "run" / "comparison.csv").read_text().splitlines()[1:]
        }
        assert float(rows["ampo_ann"][1]) < float(rows["ampo"][1])
        assert "controller" in capsys.readouterr().out

    @pytest.mark.parametrize("controllers", ["", " , ", "ampo,bogus"])
    def test_bad_controller_list(self, workdir, controllers):
        assert main(["compare", "--config", "stc.toml", "--controllers", controllers]) == 2


class TestSweep:
    def test_temperature_sweep(self, workdir):
        assert main(["sweep", "--grid", "1000:1000:1,25:75:6"]) == 0
        _, locus = read_csv_array(workdir / "out" / "sweep" / "mpp_locus.csv")
        assert len(locus) == 6 and np.all(np.diff(locus[:, 5]) < 0)

    def test_irradiance_sweep(self, workdir):
        assert main(["sweep", "--grid", "200:1000:9,25:25:1"]) == 0
        _, locus = read_csv_array(workdir / "out" / "sweep" / "mpp_locus.csv")
        assert len(locus) == 9 and np.all(np.diff(locus[:, 5]) > 0)

    def test_single_point(self, workdir):
        assert main(["sweep", "--grid", "800:800:1,40:40:1", "--points", "50"]) == 0
        files = sorted(p.name for p in (workdir / "out" / "sweep").iterdir())
        assert files == ["curve_g800_t40C.csv", "mpp_locus.csv"]
        header, curve = read_csv_array(workdir / "out" / "sweep" / files[0])
        assert header == ["v", "i", "p"] and curve.shape == (50, 3)

    @pytest.mark.parametrize("grid", ["1000:1000:1", "a:b:c,1:2:3", "0:100:2,25:25:1", "1:2:0,3:4:1"])
    def test_bad_grid(self, grid):
        with pytest.raises(ConfigError):
            parse_grid(grid)


def test_module_entry_point(workdir):
    proc = subprocess.run(
        [sys.executable, "-m", "pvmppt", "sweep", "--grid", "1000:1000:1,25:25:1", "--points", "20"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0 and "P_mpp=111.0" in proc.stdout
