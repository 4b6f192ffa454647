"""
Tests for configuration loading and the run manifest
"""

import pytest
from PyQt5.QtCore import QSettings

from app.core.errors import ConfigError
from app.utils.config import (
    MANIFEST_NAME, OUTPUT_DIR_ENV, ExperimentConfig, load_config, read_ini, write_manifest,
)


def write_ini(path, body):
    path.write_text("[experiment]\n" + body)
    return str(path)


def test_defaults():
    config = load_config(environ={})
    assert config == ExperimentConfig()
    assert config.n0 == 128
    assert config.L_max == 10
    assert config.families == ("theta_bar", "rho", "eta")


def test_read_ini_types(tmp_path):
    path = write_ini(tmp_path / "run.ini",
                     "seed = 7\nwidths = 16, 32\nlr = 0.05\nkernel = rho\nprojection = stereographic\n")
    values = read_ini(path)

    assert values == {
        "seed": 7,
        "widths": (16, 32),
        "lr": 0.05,
        "kernel": "rho",
        "projection": "stereographic",
    }


def test_precedence(tmp_path):
    path = write_ini(tmp_path / "run.ini", "n = 5\nseed = 3\noutput_dir = from_file\n")
    environ = {OUTPUT_DIR_ENV: "from_env"}

    assert load_config(path, environ={}).output_dir == "from_file"
    config = load_config(path, {"seed": 9, "n": None}, environ=environ)
    assert config.n == 5
    assert config.seed == 9
    assert config.output_dir == "from_env"
    assert load_config(path, {"output_dir": "from_flag"}, environ=environ).output_dir == "from_flag"


def test_kernel_all_means_every_family(tmp_path):
    path = write_ini(tmp_path / "run.ini", "kernel = all\n")
    assert load_config(path, environ={}).families == ("theta_bar", "rho", "eta")
    assert load_config(overrides={"kernel": "eta"}, environ={}).families == ("eta",)


def test_unknown_key(tmp_path):
    path = write_ini(tmp_path / "run.ini", "depht = 3\n")
    with pytest.raises(ConfigError, match="depht"):
        read_ini(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.ini"), environ={})


@pytest.mark.parametrize("overrides", [
    {"n": 0},
    {"n0": 1},
    {"L_max": 1},
    {"seed": -1},
    {"kernel": "sigmoid"},
    {"projection": "polar"},
    {"lr": 0.0},
    {"taus": [1.0, -2.0]},
    {"tau": -0.5},
    {"steps": -1},
    {"low": 1.0, "high": 1.0},
    {"widths": "16, x"},
    {"n0": "many"},
])
def test_invalid_values(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides, environ={})


def test_manifest_round_trip(tmp_path):
    config = load_config(overrides={
        "seed": 11, "widths": [8, 16], "taus": [0.5, 2.0], "kernel": "rho",
        "output_dir": str(tmp_path / "out"),
    }, environ={})
    path = write_manifest(config, "sweep", extra={"note": "first"})

    assert path.endswith(MANIFEST_NAME)
    assert load_config(path, environ={}) == config

    settings = QSettings(path, QSettings.IniFormat)
    assert settings.value("run/command") == "sweep"
    assert settings.value("run/note") == "first"
    assert settings.value("versions/deepntk")


def test_manifest_is_replaced(tmp_path):
    base = {"output_dir": str(tmp_path)}
    write_manifest(load_config(overrides=dict(base, seed=1), environ={}), "kernel", extra={"old": "x"})
    path = write_manifest(load_config(overrides=dict(base, seed=2), environ={}), "sweep")

    settings = QSettings(path, QSettings.IniFormat)
    assert settings.value("run/seed") == "2"
    assert settings.value("run/old") is None


def test_manifest_with_default_kernel_round_trips(tmp_path):
    config = load_config(overrides={"output_dir": str(tmp_path)}, environ={})
    path = write_manifest(config, "criteria")
    assert load_config(path, environ={}).kernel is None


def test_training_steps_follow_tau(tmp_path):
    assert ExperimentConfig().training_steps == 20
    assert ExperimentConfig().training_time == pytest.approx(2.0)

    config = load_config(write_ini(tmp_path / "run.ini", "tau = 5\n"), environ={})
    assert config.tau == 5.0
    assert config.training_steps == 50
    assert config.training_time == pytest.approx(5.0)


def test_explicit_steps_override_tau():
    config = load_config(overrides={"tau": 5.0, "steps": 3, "lr": 0.2}, environ={})
    assert config.training_steps == 3
    assert config.training_time == pytest.approx(0.6)


def test_unset_steps_round_trip(tmp_path):
    config = load_config(overrides={"tau": 0.7, "output_dir": str(tmp_path)}, environ={})
    path = write_manifest(config, "verify")

    again = load_config(path, environ={})
    assert again.steps is None
    assert again == config
