#!/usr/bin/env python3
"""
Configuration: environment settings and the run-configuration file.

Environment (.env is honoured):
    MICROTRAP_LOG_LEVEL    logging level (INFO)
    MICROTRAP_CACHE_DIR    field cache directory (.microtrap_cache)
    MICROTRAP_RESULTS_DIR  default output directory (results)
    MICROTRAP_WORKERS      default process-pool size (1)
    DOCS_ENABLED           OpenAPI docs in the HTTP service (false)
"""
import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError

from microtrap.atomic_model import BeamGeometry
from microtrap.constants import RF_AMPLITUDE_V, RF_FREQUENCY_MHZ, mhz_to_angular
from microtrap.errors import ConfigError, SequenceError
from microtrap.field_solver import DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE
from microtrap.geometry import TrapGeometry, TrapSpec, build_trap, load_geometry
from microtrap.rf_dynamics import IonSpecies, RfDrive
from microtrap.sequence_engine import ExperimentFile, ExperimentModel

load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

M = TypeVar("M", bound=BaseModel)


def env_settings() -> Dict[str, Any]:
    """Current environment settings with defaults applied."""
    try:
        workers = int(os.getenv("MICROTRAP_WORKERS", "1"))
    except ValueError:
        raise ConfigError("MICROTRAP_WORKERS must be an integer")
    return {
        "log_level": os.getenv("MICROTRAP_LOG_LEVEL", "INFO").upper(),
        "cache_dir": os.getenv("MICROTRAP_CACHE_DIR", ".microtrap_cache"),
        "results_dir": os.getenv("MICROTRAP_RESULTS_DIR", "results"),
        "workers": max(1, workers),
        "docs_enabled": os.getenv("DOCS_ENABLED", "false").lower() == "true",
    }


def configure_logging(level: Optional[str] = None) -> None:
    """Root logging setup; safe to call more than once."""
    level = (level or env_settings()["log_level"]).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"Unknown log level {level!r}")
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


class GridSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    spacing_um: float = Field(25.0, gt=0.0)
    margin_factor: float = Field(2.0, ge=2.0)
    window_half_length_um: Optional[float] = Field(None, gt=0.0)
    tolerance: float = Field(DEFAULT_TOLERANCE, gt=0.0)
    max_iterations: int = Field(DEFAULT_MAX_ITERATIONS, ge=1)
    levels: int = Field(2, ge=1)
    field_model: Literal["solved", "analytic"] = "solved"
    workers: Optional[int] = Field(None, ge=1)


class DriveSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    rf_frequency_MHz: float = Field(RF_FREQUENCY_MHZ, gt=0.0)
    rf_amplitude_V: float = Field(RF_AMPLITUDE_V, ge=0.0)

    def to_drive(self) -> RfDrive:
        return RfDrive(mhz_to_angular(self.rf_frequency_MHz), self.rf_amplitude_V)


class IonSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mass_amu: float = Field(40.0, gt=0.0)
    charge: int = Field(1, ge=1)

    def to_ion(self) -> IonSpecies:
        return IonSpecies(self.mass_amu, self.charge)


class BeamSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    wavelength_nm: float = Field(..., gt=0.0)
    angle_deg: float = Field(45.0, ge=0.0, le=90.0)
    role: Literal["cooling", "pumping", "spectroscopy", "quench"] = "spectroscopy"

    def to_beam(self) -> BeamGeometry:
        return BeamGeometry(self.wavelength_nm, self.angle_deg, self.role)


def default_beams() -> List[BeamSettings]:
    return [
        BeamSettings(name="cooling397", wavelength_nm=397.0, angle_deg=45.0, role="cooling"),
        BeamSettings(name="repump866", wavelength_nm=866.0, angle_deg=45.0, role="pumping"),
        BeamSettings(name="qubit729", wavelength_nm=729.0, angle_deg=45.0, role="spectroscopy"),
        BeamSettings(name="quench854", wavelength_nm=854.0, angle_deg=45.0, role="quench"),
    ]


class TransportRequest(BaseModel):
    """Shuttling request for the waveform command."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    start_segment: int = Field(..., ge=0)
    end_segment: int = Field(..., ge=0)
    duration_us: float = Field(100.0, gt=0.0)
    samples: int = Field(100, ge=2)
    omega_ax_MHz: float = Field(1.2, ge=0.0)
    bound_V: float = Field(10.0, gt=0.0)
    slew_limit_V: Optional[float] = Field(1.0, gt=0.0)
    drift_tolerance: float = Field(0.10, gt=0.0)
    continuity: float = Field(1e-4, ge=0.0)


class RunConfig(BaseModel):
    """Run configuration file; relative paths resolve against the file's directory."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    trap: TrapSpec = Field(default_factory=TrapSpec)
    trap_file: Optional[str] = None
    grid: GridSettings = Field(default_factory=GridSettings)
    drive: DriveSettings = Field(default_factory=DriveSettings)
    ion: IonSettings = Field(default_factory=IonSettings)
    beams: List[BeamSettings] = Field(default_factory=default_beams)
    experiment: ExperimentModel = Field(default_factory=ExperimentModel)
    sequence_file: Optional[str] = None
    transport: Optional[TransportRequest] = None
    seed: int = 0
    output_dir: Optional[str] = None
    cache_dir: Optional[str] = None

    _base_dir: str = PrivateAttr(default=".")

    def resolve(self, path: Optional[str]) -> Optional[str]:
        if path is None or os.path.isabs(path):
            return path
        return os.path.normpath(os.path.join(self._base_dir, path))

    def geometry(self) -> TrapGeometry:
        if self.trap_file:
            return load_geometry(self.resolve(self.trap_file))
        return build_trap(self.trap)

    def beam(self, role: str) -> BeamGeometry:
        for b in self.beams:
            if b.role == role:
                return b.to_beam()
        raise ConfigError(f"No beam with role {role!r} configured")

    def output_path(self, override: Optional[str] = None) -> str:
        return override or self.resolve(self.output_dir) or env_settings()["results_dir"]

    def cache_path(self) -> str:
        return self.resolve(self.cache_dir) or env_settings()["cache_dir"]

    def workers(self) -> int:
        return self.grid.workers or env_settings()["workers"]


def describe_validation(e: ValidationError) -> str:
    """One line per invalid field: dotted location and message."""
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


def _read_json(path: str, error: Type[ConfigError]) -> Dict:
    if not os.path.exists(path):
        raise ConfigError(f"File not found: {path}")
    with open(path, "r") as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise error(f"{path}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})")
    if not isinstance(doc, dict):
        raise error(f"{path}: top level must be an object")
    return doc


def _validate(model: Type[M], doc: Dict, path: str, error: Type[ConfigError]) -> M:
    try:
        return model.model_validate(doc)
    except ValidationError as e:
        raise error(f"{path}: {describe_validation(e)}")


def load_run_config(path: str) -> RunConfig:
    """
    Parse and validate a run configuration.

    Raises:
        ConfigError: missing file, invalid JSON (line/column), invalid field
            (dotted path), or a referenced file that does not exist
    """
    config = _validate(RunConfig, _read_json(path, ConfigError), path, ConfigError)
    config._base_dir = os.path.dirname(os.path.abspath(path))
    for key in ("trap_file", "sequence_file"):
        ref = getattr(config, key)
        if ref is not None and not os.path.exists(config.resolve(ref)):
            raise ConfigError(f"{path}: {key} {ref!r} does not exist")
    return config


def load_experiment(path: str) -> ExperimentFile:
    """Parse an experiment file, raising SequenceError with line or field diagnostics."""
    return _validate(ExperimentFile, _read_json(path, SequenceError), path, SequenceError)


def config_hash(config: RunConfig, experiment: Optional[ExperimentFile] = None) -> str:
    """Stable 16-hex digest of the validated configuration (and experiment)."""
    payload = {"config": config.model_dump(mode="json")}
    if experiment is not None:
        payload["experiment"] = experiment.model_dump(mode="json")
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
