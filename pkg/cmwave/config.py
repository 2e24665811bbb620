"""
Run configuration: TOML file -> validated RunConfig.

A config file has three tables:

    [design]   array, waveform length, angle grid, lags, weights
    [solver]   SolverConfig fields
    [output]   dir plus the emit flags

Values are layered as: command-line override > file > environment > default.
"""

from __future__ import annotations

import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .exceptions import ConfigError, DomainError
from .model import DesignSpec, band_pattern
from .solver import SolverConfig

logger = logging.getLogger(__name__)

DEFAULT_GRID_STEP = 0.1
DEFAULT_OUTPUT_DIR = "output"

ENV_THREADS = "CMWAVE_THREADS"
ENV_OUTPUT_DIR = "CMWAVE_OUTPUT_DIR"


class EmitFlags(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    trace: bool = True
    waveform: bool = True
    beampattern: bool = True
    correlation_report: bool = True
    lagrangian_audit: bool = False


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    design: DesignSpec
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    emit: EmitFlags = Field(default_factory=EmitFlags)

    @field_validator("output_dir")
    @classmethod
    def _not_a_file(cls, path: Path) -> Path:
        if path.exists() and not path.is_dir():
            raise ValueError(f"output_dir {path} exists and is not a directory")
        return path


DESIGN_KEYS = frozenset(
    {
        "M",
        "N",
        "num_antennas",
        "waveform_length",
        "beam_grid",
        "desired_pattern",
        "bands",
        "grid_step",
        "corr_angles",
        "lags",
        "max_lag",
        "weight_ac",
        "weight_cc",
        "alpha_max",
    }
)
SOLVER_KEYS = frozenset(SolverConfig.model_fields)
OUTPUT_KEYS = frozenset({"dir"} | set(EmitFlags.model_fields))
SECTIONS = {"design": DESIGN_KEYS, "solver": SOLVER_KEYS, "output": OUTPUT_KEYS}


def _check_keys(section: str, table: Mapping[str, Any]) -> None:
    valid = SECTIONS[section]
    for key in table:
        if key not in valid:
            raise ConfigError(
                f"unknown key '{key}' in [{section}]; valid keys: {', '.join(sorted(valid))}",
                key=f"{section}.{key}",
            )


def expand_design(table: Mapping[str, Any]) -> Dict[str, Any]:
    """Resolve the bands/grid_step and max_lag shorthands into DesignSpec fields."""
    design = dict(table)

    if "bands" in design:
        if "beam_grid" in design or "desired_pattern" in design:
            raise ConfigError("give either bands or beam_grid + desired_pattern, not both", key="design.bands")
        bands = [tuple(float(v) for v in band) for band in design.pop("bands")]
        if any(len(band) != 2 for band in bands):
            raise ConfigError("every band must be a [lo, hi] pair of degrees", key="design.bands")
        step = float(design.pop("grid_step", DEFAULT_GRID_STEP))
        try:
            grid, desired, centers = band_pattern(bands, step)
        except DomainError as exc:
            raise ConfigError(str(exc), key="design.bands") from exc
        design["beam_grid"] = grid
        design["desired_pattern"] = desired
        design.setdefault("corr_angles", centers)
    elif "grid_step" in design:
        raise ConfigError("grid_step is only used together with bands", key="design.grid_step")

    if "lags" in design and "max_lag" in design:
        raise ConfigError("give either lags or max_lag, not both", key="design.max_lag")
    if "max_lag" in design:
        top = design.pop("max_lag")
        if not isinstance(top, int) or top < 0:
            raise ConfigError(f"max_lag must be a nonnegative integer, got {top!r}", key="design.max_lag")
        design["lag_set"] = tuple(range(top + 1))
    elif "lags" in design:
        design["lag_set"] = tuple(design.pop("lags"))
    return design


def _env_defaults(environ: Mapping[str, str]) -> Dict[str, Dict[str, Any]]:
    defaults: Dict[str, Dict[str, Any]] = {"solver": {}, "output": {}}
    if environ.get(ENV_THREADS):
        try:
            defaults["solver"]["threads"] = int(environ[ENV_THREADS])
        except ValueError:
            raise ConfigError(f"{ENV_THREADS} must be an integer, got {environ[ENV_THREADS]!r}", key=ENV_THREADS)
    if environ.get(ENV_OUTPUT_DIR):
        defaults["output"]["dir"] = environ[ENV_OUTPUT_DIR]
    return defaults


def _validation_message(section: str, exc: ValidationError) -> ConfigError:
    first = exc.errors()[0]
    loc = ".".join(str(part) for part in first.get("loc", ()))
    key = f"{section}.{loc}" if loc else section
    return ConfigError(f"invalid value for {key}: {first.get('msg')}", key=key)


def build_run_config(
    data: Mapping[str, Any],
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Validate an already-parsed config mapping."""
    for section in data:
        if section not in SECTIONS:
            raise ConfigError(
                f"unknown table [{section}]; valid tables: {', '.join(SECTIONS)}", key=section
            )
    if "design" not in data:
        raise ConfigError("missing [design] table", key="design")

    environ = os.environ if environ is None else environ
    layered = _env_defaults(environ)
    for section in ("design", "solver", "output"):
        table = dict(data.get(section, {}))
        _check_keys(section, table)
        layered.setdefault(section, {}).update(table)
    for section, table in (overrides or {}).items():
        _check_keys(section, table)
        layered.setdefault(section, {}).update({k: v for k, v in table.items() if v is not None})

    design_fields = expand_design(layered["design"])
    try:
        design = DesignSpec(**design_fields)
    except ValidationError as exc:
        raise _validation_message("design", exc) from exc
    try:
        solver = SolverConfig(**layered["solver"])
    except ValidationError as exc:
        raise _validation_message("solver", exc) from exc

    output = dict(layered["output"])
    output_dir = output.pop("dir", DEFAULT_OUTPUT_DIR)
    try:
        emit = EmitFlags(**output)
        config = RunConfig(design=design, solver=solver, output_dir=Path(output_dir), emit=emit)
    except ValidationError as exc:
        raise _validation_message("output", exc) from exc

    logger.debug("config: M=%d N=%d lags=%s variant=%s", design.M, design.N, design.lag_set, solver.variant)
    return config


def parse_config(
    path: os.PathLike | str,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return build_run_config(data, overrides=overrides, environ=environ)
