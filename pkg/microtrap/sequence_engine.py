#!/usr/bin/env python3
"""
Pulse-sequence engine: per-shot simulation of quantum jump spectroscopy.

A sequence is an ordered list of steps (Doppler cooling, optical pumping,
sideband cooling, waits, one spectroscopy pulse, quench, detection). Motional
states are propagated as phonon distributions; at the spectroscopy pulse each
shot draws its own axial/radial phonon numbers and laser frequency offset and
is shelved with the resulting excitation probability.

Spectrum lines (position: coupling, all scaled by Ω₀):
- carrier 0:                J₀(β)·g_ax(n, 0)·g_rad(m, 0)
- axial ±ω_ax, ±2ω_ax:      J₀(β)·g_ax(n, ±1|±2)·g_rad(m, 0)
- radial ±ω_rad:            J₀(β)·g_ax(n, 0)·g_rad(m, ±1)
- difference ±(ω_rad−ω_ax): J₀(β)·g_ax(n, ∓1)·g_rad(m, ±1)
- micromotion ±Ω:           J₁(β)·g_ax(n, 0)·g_rad(m, 0)
The per-shot excitation is min(1, Σ lines) with the two-level Rabi formula.

Seeding: one child SeedSequence per (scan point, probe), spawned from the
master seed in point-major order, so serial and process-pool runs agree.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.special import j0, j1

from microtrap.atomic_model import BeamGeometry, MotionalState, coupling, lamb_dicke, rabi_excitation
from microtrap.constants import (
    ATOMIC_MASS,
    DEFAULT_DOPPLER_EXCESS,
    GAMMA_EFF_SLOPE_KHZ_PER_UW,
    RF_FREQUENCY_MHZ,
    WAVELENGTHS_NM,
    khz_to_angular,
    mhz_to_angular,
)
from microtrap.cooling import (
    CoolingParams,
    angular_gamma,
    doppler_cool,
    gamma_eff,
    heat,
    sideband_cool,
)
from microtrap.detection import DetectionModel, detect_shots
from microtrap.errors import SequenceError
from microtrap.estimators import projection_noise
from microtrap.rf_dynamics import RfDrive, IonSpecies, beta_from_displacement

logger = logging.getLogger(__name__)

SCAN_UNITS = {
    "detuning": "kHz",
    "duration": "us",
    "wait": "us",
    "quench": "us",
    "voltage": "V",
}
DEFAULT_PROBE = "main"


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


class _Step(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DopplerCool(_Step):
    op: Literal["doppler_cool"] = "doppler_cool"
    duration_us: float = Field(2000.0, ge=1000.0)


class OpticalPump(_Step):
    op: Literal["optical_pump"] = "optical_pump"
    duration_us: float = Field(5.0, ge=0.0)


class SidebandCool(_Step):
    op: Literal["sideband_cool"] = "sideband_cool"
    duration_us: float = Field(..., ge=0.0)
    p854_uW: float = Field(..., ge=0.0)
    omega0_kHz: float = Field(..., ge=0.0)  # carrier Rabi frequency / 2π
    laser_heating: bool = False


class Wait(_Step):
    op: Literal["wait"] = "wait"
    duration_us: float = Field(..., ge=0.0)


class SpecPulse(_Step):
    op: Literal["spec_pulse"] = "spec_pulse"
    detuning_kHz: float = 0.0
    duration_us: float = Field(..., ge=0.0)
    omega0_kHz: float = Field(..., ge=0.0)


class Quench(_Step):
    op: Literal["quench"] = "quench"
    duration_us: float = Field(..., ge=0.0)
    p854_uW: float = Field(..., ge=0.0)


class Detect(_Step):
    op: Literal["detect"] = "detect"
    duration_us: float = Field(5000.0, gt=0.0)


Step = Annotated[
    Union[DopplerCool, OpticalPump, SidebandCool, Wait, SpecPulse, Quench, Detect],
    Field(discriminator="op"),
]


class PulseSequence(BaseModel):
    """Ordered steps; at most one spectroscopy pulse and at most one detection, which is last."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: List[Step] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _ordering(self) -> "PulseSequence":
        ops = [s.op for s in self.steps]
        if ops.count("detect") > 1:
            raise ValueError("at most one detect step is allowed")
        if "detect" in ops and ops[-1] != "detect":
            raise ValueError("detect must be the last step")
        if ops.count("spec_pulse") > 1:
            raise ValueError("at most one spec_pulse step is allowed")
        return self

    def index_of(self, op: str) -> List[int]:
        return [i for i, s in enumerate(self.steps) if s.op == op]

    def replace_step(self, index: int, **update) -> "PulseSequence":
        steps = list(self.steps)
        steps[index] = steps[index].model_copy(update=update)
        return PulseSequence(steps=steps)


def make_sequence(steps: List[Dict]) -> PulseSequence:
    """Build a PulseSequence from plain dicts, raising SequenceError with the field path."""
    try:
        return PulseSequence(steps=steps)
    except ValidationError as e:
        raise SequenceError(_describe(e)) from e


def _describe(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


# ---------------------------------------------------------------------------
# Experiment description
# ---------------------------------------------------------------------------


class ScanSpec(BaseModel):
    """Scanned variable and its values; either explicit values or start/stop/points."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    variable: Literal["detuning", "duration", "wait", "voltage", "quench"]
    start: Optional[float] = None
    stop: Optional[float] = None
    points: Optional[int] = Field(None, ge=1)
    values: Optional[List[float]] = None
    unit: Optional[str] = None

    @model_validator(mode="after")
    def _range(self) -> "ScanSpec":
        if self.values is None:
            if self.start is None or self.stop is None or self.points is None:
                raise ValueError("scan needs either values or start, stop and points")
        elif not self.values:
            raise ValueError("scan values must not be empty")
        expected = SCAN_UNITS[self.variable]
        if self.unit is not None and self.unit != expected:
            raise ValueError(f"{self.variable} scans are in {expected}, got {self.unit}")
        return self

    def grid(self) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        return np.linspace(self.start, self.stop, self.points)

    @property
    def unit_name(self) -> str:
        return SCAN_UNITS[self.variable]


class ExperimentFile(BaseModel):
    """Experiment file: steps, optional scan and probes, shots per point."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: List[Step] = Field(..., min_length=1)
    scan: Optional[ScanSpec] = None
    # probe name -> detuning offset added to the spec pulse [kHz]
    probes: Dict[str, float] = Field(default_factory=dict)
    shots: int = Field(100, ge=1)

    @property
    def sequence(self) -> PulseSequence:
        return PulseSequence(steps=self.steps)

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentFile":
        seq = PulseSequence(steps=self.steps)
        if self.scan is not None:
            _scan_target(seq, self.scan.variable)
        if self.probes and not seq.index_of("spec_pulse"):
            raise ValueError("probes need a spec_pulse step")
        return self


class CompensationModel(BaseModel):
    """Maps a differential compensation voltage to the ion's distance from the RF null."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    optimum_V: float = 0.0
    displacement_um_per_V: float = Field(1.0, gt=0.0)
    c2_per_m2: float = Field(0.52e7, gt=0.0)
    residual_beta: float = Field(0.0, ge=0.0)


class DetectionSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    signal_kHz: float = Field(12.0, gt=0.0)
    background_kHz: float = Field(4.0, ge=0.0)
    d_lifetime_s: float = Field(1.2, gt=0.0)


class ExperimentModel(BaseModel):
    """Physical parameters of the simulated experiment (unit-suffixed keys)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    axial_MHz: float = Field(1.2, gt=0.0)
    radial_MHz: float = Field(2.0, gt=0.0)
    rf_MHz: float = Field(RF_FREQUENCY_MHZ, gt=0.0)
    rf_amplitude_V: float = Field(140.0, ge=0.0)
    mass_amu: float = Field(40.0, gt=0.0)
    beam_angle_deg: float = Field(45.0, ge=0.0, le=90.0)  # 729 nm beam to the trap axis
    radial_beam_angle_deg: float = Field(45.0, ge=0.0, le=90.0)
    beta: float = Field(0.0, ge=0.0, lt=2.4)
    doppler_excess: float = Field(DEFAULT_DOPPLER_EXCESS, ge=1.0)
    heating_rate_per_ms: float = Field(0.0, ge=0.0)
    laser_linewidth_kHz: float = Field(0.0, ge=0.0)  # FWHM
    gamma_slope_kHz_per_uW: float = Field(GAMMA_EFF_SLOPE_KHZ_PER_UW, ge=0.0)
    exact_couplings: bool = False
    detection: DetectionSettings = Field(default_factory=DetectionSettings)
    compensation: Optional[CompensationModel] = None

    @property
    def omega_ax(self) -> float:
        return mhz_to_angular(self.axial_MHz)

    @property
    def omega_rad(self) -> float:
        return mhz_to_angular(self.radial_MHz)

    @property
    def omega_rf(self) -> float:
        return mhz_to_angular(self.rf_MHz)

    @property
    def mass_kg(self) -> float:
        return self.mass_amu * ATOMIC_MASS

    @property
    def gamma_trap(self) -> float:
        """Axial heating rate [phonons/s]."""
        return self.heating_rate_per_ms * 1e3

    @property
    def eta_axial(self) -> float:
        beam = BeamGeometry(WAVELENGTHS_NM["S1/2-D5/2"], self.beam_angle_deg)
        return lamb_dicke(beam, self.mass_kg, self.omega_ax)

    @property
    def eta_radial(self) -> float:
        beam = BeamGeometry(WAVELENGTHS_NM["S1/2-D5/2"], self.radial_beam_angle_deg)
        return lamb_dicke(beam, self.mass_kg, self.omega_rad)

    @property
    def eta_spont(self) -> float:
        beam = BeamGeometry(WAVELENGTHS_NM["S1/2-P3/2"], role="quench")
        return lamb_dicke(beam, self.mass_kg, self.omega_ax, projected=False)

    def detection_model(self, window_us: float) -> DetectionModel:
        d = self.detection
        return DetectionModel(d.signal_kHz, d.background_kHz, window_us, d.d_lifetime_s)

    def beta_at(self, voltage: Optional[float]) -> float:
        """Modulation index, driven by the compensation voltage when one is scanned."""
        if voltage is None:
            return self.beta
        if self.compensation is None:
            raise SequenceError("voltage scans need a compensation model in the experiment")
        comp = self.compensation
        d_um = (voltage - comp.optimum_V) * comp.displacement_um_per_V
        drive = RfDrive.from_MHz(self.rf_MHz, self.rf_amplitude_V)
        ion = IonSpecies(mass_amu=self.mass_amu)
        beta = beta_from_displacement(
            [d_um, 0.0], comp.c2_per_m2, drive, ion, WAVELENGTHS_NM["S1/2-D5/2"]
        )
        return float(np.hypot(beta, comp.residual_beta))


# ---------------------------------------------------------------------------
# Motion and spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Line:
    name: str
    position: float  # detuning of the resonance [rad/s]
    rabi: np.ndarray  # per-shot Rabi frequency [rad/s]


def _g(n: np.ndarray, dn: int, eta: float, exact: bool) -> np.ndarray:
    return np.abs(coupling(n, dn, 1.0, eta, exact))


def spectrum_lines(
    model: ExperimentModel,
    n_ax: np.ndarray,
    n_rad: np.ndarray,
    omega0: float,
    beta: Optional[float] = None,
) -> List[Line]:
    """All resonances with their per-shot couplings for the given phonon numbers."""
    beta = model.beta if beta is None else beta
    ex = model.exact_couplings
    eta_a, eta_r = model.eta_axial, model.eta_radial
    w_a, w_r, w_rf = model.omega_ax, model.omega_rad, model.omega_rf
    ca = _g(n_ax, 0, eta_a, ex)
    cr = _g(n_rad, 0, eta_r, ex)
    s0 = omega0 * float(j0(beta))
    s1 = omega0 * float(j1(beta))
    lines = [
        Line("carrier", 0.0, s0 * ca * cr),
        Line("axial_red", -w_a, s0 * _g(n_ax, -1, eta_a, ex) * cr),
        Line("axial_blue", w_a, s0 * _g(n_ax, 1, eta_a, ex) * cr),
        Line("axial_red2", -2.0 * w_a, s0 * _g(n_ax, -2, eta_a, ex) * cr),
        Line("axial_blue2", 2.0 * w_a, s0 * _g(n_ax, 2, eta_a, ex) * cr),
        Line("radial_red", -w_r, s0 * ca * _g(n_rad, -1, eta_r, ex)),
        Line("radial_blue", w_r, s0 * ca * _g(n_rad, 1, eta_r, ex)),
        Line(
            "difference_blue",
            w_r - w_a,
            s0 * _g(n_ax, -1, eta_a, ex) * _g(n_rad, 1, eta_r, ex),
        ),
        Line(
            "difference_red",
            -(w_r - w_a),
            s0 * _g(n_ax, 1, eta_a, ex) * _g(n_rad, -1, eta_r, ex),
        ),
        Line("micromotion_red", -w_rf, s1 * ca * cr),
        Line("micromotion_blue", w_rf, s1 * ca * cr),
    ]
    return lines


def excitation_probability(
    lines: List[Line], detuning: np.ndarray, duration_s: float
) -> np.ndarray:
    """Per-shot excitation min(1, Σ lines) at angular detuning(s)."""
    total = np.zeros(np.shape(detuning))
    for line in lines:
        total = total + rabi_excitation(detuning - line.position, duration_s, line.rabi)
    return np.clip(total, 0.0, 1.0)


@dataclass
class MotionBudget:
    """Phonon distributions of both modes at the spectroscopy pulse."""

    axial: MotionalState
    radial: MotionalState


def prepare_motion(seq: PulseSequence, model: ExperimentModel) -> MotionBudget:
    """Propagate the motional distributions through the steps before the spec pulse."""
    axial = MotionalState.thermal(0.0, model.omega_ax)
    radial = MotionalState.thermal(0.0, model.omega_rad)
    for step in seq.steps:
        if step.op == "spec_pulse":
            break
        axial, radial = _motion_step(step, model, axial, radial)
    return MotionBudget(axial, radial)


def _motion_step(step, model: ExperimentModel, axial: MotionalState, radial: MotionalState):
    if step.op == "doppler_cool":
        t = step.duration_us * 1e-6
        axial = doppler_cool(model.omega_ax, t, excess=model.doppler_excess)
        radial = doppler_cool(model.omega_rad, t, excess=model.doppler_excess)
    elif step.op == "sideband_cool":
        params = CoolingParams(
            eta_729=model.eta_axial,
            eta_spont=model.eta_spont,
            omega0=khz_to_angular(step.omega0_kHz),
            gamma_eff=angular_gamma(gamma_eff(step.p854_uW, model.gamma_slope_kHz_per_uW)),
            gamma_trap=model.gamma_trap,
            omega_ax=model.omega_ax,
        )
        axial = sideband_cool(axial, step.duration_us * 1e-6, params, step.laser_heating)
    elif step.op == "wait":
        axial = heat(axial, step.duration_us * 1e-6, model.gamma_trap)
    return axial, radial


# ---------------------------------------------------------------------------
# Shots
# ---------------------------------------------------------------------------


def simulate_shots(
    seq: PulseSequence,
    model: ExperimentModel,
    shots: int,
    rng: np.random.Generator,
    detuning_offset_kHz: float = 0.0,
    voltage: Optional[float] = None,
    motion: Optional[MotionBudget] = None,
) -> np.ndarray:
    """
    Run one sequence for `shots` independent repetitions.

    motion, when given, is the result of prepare_motion(seq, model).

    Returns:
        Boolean array, True where the shot reads out as D (dark)
    """
    if shots < 1:
        raise SequenceError("Need at least one shot")
    if motion is None:
        motion = prepare_motion(seq, model)
    shelved = np.zeros(shots, dtype=bool)
    pulse = seq.index_of("spec_pulse")
    if pulse:
        sp = seq.steps[pulse[0]]
        n_ax = motion.axial.sample(rng, shots)
        n_rad = motion.radial.sample(rng, shots)
        hwhm = khz_to_angular(model.laser_linewidth_kHz) / 2.0
        jitter = rng.standard_cauchy(shots) * hwhm
        lines = spectrum_lines(
            model, n_ax, n_rad, khz_to_angular(sp.omega0_kHz), model.beta_at(voltage)
        )
        detuning = khz_to_angular(sp.detuning_kHz + detuning_offset_kHz) + jitter
        p_exc = excitation_probability(lines, detuning, sp.duration_us * 1e-6)
        shelved = rng.random(shots) < p_exc
        for step in seq.steps[pulse[0] + 1 :]:
            if step.op == "quench":
                rate = gamma_eff(step.p854_uW, model.gamma_slope_kHz_per_uW) * 1e3
                survive = np.exp(-rate * step.duration_us * 1e-6)
                shelved &= rng.random(shots) < survive
    detect = seq.index_of("detect")
    if detect:
        window = seq.steps[detect[0]].duration_us
        _, dark = detect_shots(shelved, model.detection_model(window), rng)
        return dark
    return shelved


# ---------------------------------------------------------------------------
# Records and scans
# ---------------------------------------------------------------------------


RECORD_COLUMNS = ["scan_value", "probe", "p", "err", "N"]


@dataclass
class ExperimentRecord:
    """
    Result of a run or scan.

    frame: one row per (scan point, probe) with columns scan_value, probe, p, err, N
    outcomes: per-shot D/S booleans aligned with the frame rows
    nbar_axial: engine-internal axial n̄ at the spectroscopy pulse per row
    """

    frame: pd.DataFrame
    variable: str = "none"
    unit: str = ""
    seed: int = 0
    config_hash: str = ""
    outcomes: List[np.ndarray] = field(default_factory=list)
    nbar_axial: Optional[np.ndarray] = None

    @property
    def metadata(self) -> Dict[str, str]:
        return {
            "seed": str(self.seed),
            "config_hash": self.config_hash,
            "variable": self.variable,
            "unit": self.unit,
        }

    def probe(self, name: str) -> pd.DataFrame:
        return self.frame[self.frame["probe"] == name].reset_index(drop=True)


def _scan_target(seq: PulseSequence, variable: str) -> Optional[int]:
    op = {"detuning": "spec_pulse", "duration": "spec_pulse", "wait": "wait", "quench": "quench"}
    if variable == "voltage":
        return None
    idx = seq.index_of(op[variable])
    if len(idx) != 1:
        raise ValueError(f"a {variable} scan needs exactly one {op[variable]} step, found {len(idx)}")
    return idx[0]


def sequence_at(seq: PulseSequence, variable: str, value: float) -> PulseSequence:
    """Sequence with the scanned step parameter set to value."""
    try:
        idx = _scan_target(seq, variable)
    except ValueError as e:
        raise SequenceError(str(e)) from e
    if idx is None:
        return seq
    key = "detuning_kHz" if variable == "detuning" else "duration_us"
    if key == "duration_us" and value < 0:
        raise SequenceError(f"{variable} scan value {value} must be >= 0")
    return seq.replace_step(idx, **{key: float(value)})


def _point_job(args) -> Tuple[np.ndarray, float]:
    seq, model, shots, offset, voltage, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    motion = prepare_motion(seq, model)
    outcome = simulate_shots(seq, model, shots, rng, offset, voltage, motion)
    return outcome, motion.axial.mean


def scan(
    experiment: ExperimentFile,
    model: ExperimentModel,
    seed: int,
    workers: int = 1,
    config_hash: str = "",
) -> ExperimentRecord:
    """
    Run the experiment at every scan value and probe.

    Args:
        experiment: Steps, scan, probes and shots per point
        model: Physical parameters
        seed: Master seed
        workers: Process-pool size (1 runs serially; results are identical)
        config_hash: Stored in the record metadata

    Returns:
        ExperimentRecord with one row per (scan value, probe)
    """
    seq = experiment.sequence
    probes = experiment.probes or {DEFAULT_PROBE: 0.0}
    if experiment.scan is None:
        values, variable, unit = np.array([0.0]), "none", ""
    else:
        values, variable, unit = (
            experiment.scan.grid(),
            experiment.scan.variable,
            experiment.scan.unit_name,
        )
    children = np.random.SeedSequence(seed).spawn(len(values) * len(probes))
    jobs, rows = [], []
    k = 0
    for value in values:
        point_seq = seq if variable in ("none", "voltage") else sequence_at(seq, variable, value)
        voltage = float(value) if variable == "voltage" else None
        for name, offset in probes.items():
            jobs.append((point_seq, model, experiment.shots, offset, voltage, children[k]))
            rows.append((float(value), name))
            k += 1

    logger.info(
        "Scanning %s over %d points x %d probes, %d shots each",
        variable,
        len(values),
        len(probes),
        experiment.shots,
    )
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_point_job, jobs))
    else:
        results = [_point_job(j) for j in jobs]

    n = experiment.shots
    outcomes = [r[0] for r in results]
    p = np.array([o.mean() for o in outcomes])
    frame = pd.DataFrame(
        {
            "scan_value": [r[0] for r in rows],
            "probe": [r[1] for r in rows],
            "p": p,
            "err": projection_noise(p, n),
            "N": np.full(len(rows), n, dtype=int),
        }
    )
    return ExperimentRecord(
        frame=frame,
        variable=variable,
        unit=unit,
        seed=seed,
        config_hash=config_hash,
        outcomes=outcomes,
        nbar_axial=np.array([r[1] for r in results]),
    )


def run_sequence(
    seq: PulseSequence,
    model: ExperimentModel,
    shots: int,
    seed: int,
    config_hash: str = "",
) -> ExperimentRecord:
    """Run a single sequence (no scan) for N shots."""
    if shots < 1:
        raise SequenceError("Need at least one shot")
    experiment = ExperimentFile(steps=list(seq.steps), shots=shots)
    return scan(experiment, model, seed, config_hash=config_hash)
