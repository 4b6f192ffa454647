"""
Experiment configuration for DeepNTK

This module is responsible for:
1. The ExperimentConfig record and its validation
2. Reading an optional INI file (group [experiment]) through QSettings
3. Merging defaults, file, environment and command line values
4. Writing the manifest.ini that records a run's provenance

Precedence: defaults < config file < DEEPNTK_OUTPUT_DIR < command line.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

import matplotlib
import numpy as np
import scipy
import torch
from PyQt5.QtCore import PYQT_VERSION_STR, QSettings

from app import __version__
from app.core.errors import ConfigError, OutputError
from app.core.geometry import Projection

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "DEEPNTK_OUTPUT_DIR"
GROUP = "experiment"
MANIFEST_NAME = "manifest.ini"

KERNEL_FAMILIES = ("theta_bar", "rho", "eta")
MAX_SEED = 2 ** 64


@dataclass(frozen=True)
class ExperimentConfig:
    """
    All settings of an experiment

    Defaults follow the depth experiment: n0 = 128, depths 1..10, data drawn
    uniformly from [0, 1)^n0 and projected canonically.

    The verification trains for tau units of gradient flow time, that is
    round(tau / lr) steps unless steps is given explicitly.
    """

    seed: int = 0
    n0: int = 128
    n: int = 8
    L_max: int = 10
    kernel: Optional[str] = None
    projection: str = Projection.CANONICAL.value
    widths: Tuple[int, ...] = (256, 1024, 4096)
    depth: int = 3
    lr: float = 0.1
    steps: Optional[int] = None
    converge_steps: int = 1000
    tau: float = 2.0
    taus: Tuple[float, ...] = ()
    seeds: int = 32
    probes: int = 100
    low: float = 0.0
    high: float = 1.0
    output_dir: str = "output"

    @property
    def families(self) -> Tuple[str, ...]:
        """Kernel families to run; all of them when kernel is unset"""
        return (self.kernel,) if self.kernel else KERNEL_FAMILIES

    @property
    def training_steps(self) -> int:
        """Gradient steps of the f_tau comparison"""
        if self.steps is not None:
            return self.steps
        return int(round(self.tau / self.lr))

    @property
    def training_time(self) -> float:
        """Time t = steps * lr actually reached by gradient descent"""
        return self.training_steps * self.lr

    def validate(self) -> "ExperimentConfig":
        """
        Checks every field

        Returns:
            self, for chaining

        Raises:
            ConfigError: Naming the first invalid field
        """
        if not 0 <= self.seed < MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for name in ("n", "depth", "seeds", "probes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n0 < 2:
            raise ConfigError(f"n0 must be at least 2, got {self.n0}")
        if self.L_max < 2:
            raise ConfigError(f"L_max must be at least 2, got {self.L_max}")
        if self.kernel is not None and self.kernel not in KERNEL_FAMILIES:
            raise ConfigError(
                f"kernel must be one of {', '.join(KERNEL_FAMILIES)}, got {self.kernel!r}"
            )
        try:
            Projection(self.projection)
        except ValueError:
            raise ConfigError(f"unknown projection {self.projection!r}") from None
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be positive integers, got {self.widths}")
        if not self.lr > 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if (self.steps is not None and self.steps < 0) or self.converge_steps < 0:
            raise ConfigError("steps must be non-negative")
        if not self.tau >= 0.0 or any(not t >= 0.0 for t in self.taus):
            raise ConfigError("stopping times must be non-negative")
        if not self.low < self.high:
            raise ConfigError(f"low must be below high, got [{self.low}, {self.high})")
        if not self.output_dir:
            raise ConfigError("output_dir must not be empty")
        return self


def _as_list(value: Any) -> list:
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, str):
        return [part for part in (p.strip() for p in value.split(",")) if part]
    return [value]


def _coerce(name: str, value: Any) -> Any:
    """Converts a file or command line value to the type of the field"""
    try:
        if name == "widths":
            return tuple(int(v) for v in _as_list(value))
        if name == "taus":
            return tuple(float(v) for v in _as_list(value))
        if name == "kernel":
            text = str(value).strip()
            return None if text in ("", "all", "None") else text
        if name == "steps":
            text = str(value).strip()
            return None if text in ("", "None") else int(text)
        default = ExperimentConfig.__dataclass_fields__[name].default
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for {name}") from None


def read_ini(path: str) -> Dict[str, Any]:
    """
    Reads the [experiment] group of an INI file

    Args:
        path: Config file

    Returns:
        Field values found in the file, already typed

    Raises:
        ConfigError: If the file is missing, malformed or names unknown keys
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    settings = QSettings(path, QSettings.IniFormat)
    if settings.status() != QSettings.NoError:
        raise ConfigError(f"cannot parse config file {path}")

    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    settings.beginGroup(GROUP)
    for key in settings.childKeys():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in {path}")
        values[key] = _coerce(key, settings.value(key))
    settings.endGroup()
    logger.debug("Read %d settings from %s", len(values), path)
    return values


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Builds and validates the configuration of a run

    Args:
        path: Optional INI file
        overrides: Command line values; None entries are ignored
        environ: Environment (os.environ by default)

    Returns:
        Validated ExperimentConfig
    """
    environ = os.environ if environ is None else environ
    values: Dict[str, Any] = {}
    if path:
        values.update(read_ini(path))
    if environ.get(OUTPUT_DIR_ENV):
        values["output_dir"] = environ[OUTPUT_DIR_ENV]
    for name, value in (overrides or {}).items():
        if value is not None:
            values[name] = _coerce(name, value)
    return ExperimentConfig(**values).validate()


def versions() -> Dict[str, str]:
    """Versions of the package and of the numerical stack"""
    return {
        "deepntk": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "matplotlib": matplotlib.__version__,
        "pyqt5": PYQT_VERSION_STR,
    }


def write_manifest(config: ExperimentConfig, command: str, output_dir: Optional[str] = None,
                   extra: Optional[Mapping[str, Any]] = None) -> str:
    """
    Records config, command and versions in <output_dir>/manifest.ini

    Args:
        config: Configuration of the run
        command: Subcommand name
        output_dir: Target directory (config.output_dir by default)
        extra: Further values for the [run] group

    Returns:
        Path of the manifest

    Raises:
        OutputError: If the file cannot be written
    """
    output_dir = output_dir or config.output_dir
    path = os.path.join(output_dir, MANIFEST_NAME)
    try:
        os.makedirs(output_dir, exist_ok=True)
        if os.path.exists(path):
            os.remove(path)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e

    settings = QSettings(path, QSettings.IniFormat)
    settings.beginGroup(GROUP)
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        settings.setValue(f.name, "" if value is None else str(value))
    settings.endGroup()

    settings.beginGroup("run")
    settings.setValue("command", command)
    settings.setValue("seed", str(config.seed))
    for key, value in (extra or {}).items():
        settings.setValue(key, str(value))
    settings.endGroup()

    settings.beginGroup("versions")
    for key, value in versions().items():
        settings.setValue(key, value)
    settings.endGroup()

    settings.sync()
    if settings.status() != QSettings.NoError:
        raise OutputError(f"cannot write {path}")
    logger.debug("Wrote %s", path)
    return path
