#!/usr/bin/env python3
"""Tests for pulse sequences, per-shot simulation and seeded scans."""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402
from pydantic import ValidationError  # noqa: E402

from microtrap.errors import SequenceError  # noqa: E402
from microtrap.estimators import asymmetry_table, fit_heating_rate  # noqa: E402
from microtrap.sequence_engine import (  # noqa: E402
    CompensationModel,
    ExperimentFile,
    ExperimentModel,
    ScanSpec,
    excitation_probability,
    make_sequence,
    prepare_motion,
    run_sequence,
    scan,
    sequence_at,
    spectrum_lines,
)

# zero carrier off-resonance excitation at the ±1.2 MHz probes: √(Ω₀² + Δ²)·t = 18·2π
THERMOMETRY_PULSE_US = 18.0e3 / 1204.159


def _steps(spec_detuning=0.0, spec_us=5.0, omega0=100.0, cool_us=2000.0, extra=()):
    steps = [
        {"op": "doppler_cool", "duration_us": 2000.0},
        {"op": "optical_pump"},
        {"op": "sideband_cool", "duration_us": cool_us, "p854_uW": 3.0, "omega0_kHz": 200.0},
        {
            "op": "spec_pulse",
            "detuning_kHz": spec_detuning,
            "duration_us": spec_us,
            "omega0_kHz": omega0,
        },
    ]
    steps += list(extra)
    steps.append({"op": "detect", "duration_us": 5000.0})
    return steps


@pytest.fixture
def model():
    return ExperimentModel(axial_MHz=1.2, radial_MHz=2.0)


def test_detect_must_be_last():
    """Detection anywhere but at the end is a SequenceError naming the problem."""
    steps = _steps()
    steps.insert(1, {"op": "detect"})
    with pytest.raises(SequenceError) as info:
        make_sequence(steps)
    assert "detect" in str(info.value)


def test_single_spec_pulse():
    """Two spectroscopy pulses are rejected."""
    steps = _steps()
    steps.insert(3, dict(steps[3]))
    with pytest.raises(SequenceError):
        make_sequence(steps)


def test_step_parameter_validation():
    """Short Doppler cooling, negative durations and unknown ops carry the field path."""
    with pytest.raises(SequenceError) as info:
        make_sequence([{"op": "doppler_cool", "duration_us": 500.0}])
    assert "steps.0" in str(info.value)
    with pytest.raises(SequenceError):
        make_sequence([{"op": "wait", "duration_us": -1.0}])
    with pytest.raises(SequenceError):
        make_sequence([{"op": "teleport"}])


def test_scan_spec():
    """Scans take explicit values or start/stop/points in the variable's unit."""
    assert list(ScanSpec(variable="wait", values=[0, 10]).grid()) == [0.0, 10.0]
    assert ScanSpec(variable="detuning", start=-1, stop=1, points=3).grid().tolist() == [-1, 0, 1]
    with pytest.raises(ValidationError):
        ScanSpec(variable="detuning", start=0.0)
    with pytest.raises(ValidationError):
        ScanSpec(variable="duration", values=[1.0], unit="ms")


def test_experiment_needs_scan_target():
    """A wait scan without a wait step is invalid."""
    with pytest.raises(ValidationError):
        ExperimentFile(steps=_steps(), scan={"variable": "wait", "values": [0, 100]})


def test_sequence_at_sets_parameter():
    """The scanned value replaces the detuning or duration of the target step."""
    seq = make_sequence(_steps())
    detuned = sequence_at(seq, "detuning", 250.0)
    assert detuned.steps[3].detuning_kHz == 250.0
    assert seq.steps[3].detuning_kHz == 0.0
    with pytest.raises(SequenceError):
        sequence_at(seq, "duration", -1.0)
    with pytest.raises(SequenceError):
        sequence_at(seq, "quench", 10.0)


def test_prepare_motion_doppler_then_sideband(model):
    """Doppler gives the excess-factor limit; long sideband cooling without heating reaches ~0."""
    doppler_only = make_sequence(_steps(cool_us=0.0))
    motion = prepare_motion(doppler_only, model)
    expected = model.doppler_excess * 22.3 / (2.0 * 1.2)
    assert motion.axial.mean == pytest.approx(expected, rel=1e-3)
    cooled = prepare_motion(make_sequence(_steps()), model)
    assert cooled.axial.mean < 0.01
    assert cooled.radial.mean == pytest.approx(model.doppler_excess * 22.3 / 4.0, rel=1e-3)


def test_wait_heats_axial_mode():
    """A wait after cooling adds Γ_trap·t phonons."""
    model = ExperimentModel(heating_rate_per_ms=2.0)
    steps = _steps()
    steps.insert(3, {"op": "wait", "duration_us": 500.0})
    before = prepare_motion(make_sequence(_steps()), model).axial.mean
    after = prepare_motion(make_sequence(steps), model).axial.mean
    assert after - before == pytest.approx(1.0, rel=1e-2)


def test_spectrum_lines_positions(model):
    """Lines sit at the carrier, the motional sidebands and ±Ω."""
    n = np.array([1])
    lines = {line.name: line for line in spectrum_lines(model, n, n, 1.0)}
    assert lines["carrier"].position == 0.0
    assert lines["axial_blue"].position == pytest.approx(model.omega_ax)
    assert lines["radial_red"].position == pytest.approx(-model.omega_rad)
    assert lines["difference_blue"].position == pytest.approx(model.omega_rad - model.omega_ax)
    assert lines["micromotion_blue"].position == pytest.approx(model.omega_rf)
    assert float(lines["micromotion_blue"].rabi[0]) == 0.0


def test_micromotion_sideband_strength(model):
    """With β > 0 the micromotion line couples with J₁(β) relative to the carrier J₀(β)."""
    n = np.array([0])
    lines = {line.name: line for line in spectrum_lines(model, n, n, 1.0, beta=0.17)}
    ratio = float(lines["micromotion_red"].rabi[0] / lines["carrier"].rabi[0])
    assert ratio == pytest.approx(0.08531, abs=1e-5)


def test_excitation_is_capped(model):
    """Summed line excitation never exceeds one."""
    n = np.zeros(4, dtype=int)
    lines = spectrum_lines(model, n, n, 2 * np.pi * 1e5)
    p = excitation_probability(lines, np.zeros(4), 5e-6)
    assert np.all((p >= 0) & (p <= 1))


def test_carrier_pi_pulse_shelves(model):
    """A resonant π-pulse on a cooled ion reads dark nearly every shot."""
    record = run_sequence(make_sequence(_steps()), model, shots=400, seed=1)
    assert record.frame["p"].iloc[0] > 0.9
    assert record.frame["N"].iloc[0] == 400


def test_quench_returns_ion(model):
    """A long quench pulse after shelving empties D5/2 again."""
    extra = [{"op": "quench", "duration_us": 100.0, "p854_uW": 1.0}]
    record = run_sequence(make_sequence(_steps(extra=extra)), model, shots=400, seed=1)
    assert record.frame["p"].iloc[0] < 0.1


def test_same_seed_same_record(model):
    """Records are a pure function of the seed."""
    exp = ExperimentFile(
        steps=_steps(), scan={"variable": "detuning", "start": -50, "stop": 50, "points": 5}, shots=50
    )
    a = scan(exp, model, seed=7)
    b = scan(exp, model, seed=7)
    pd.testing.assert_frame_equal(a.frame, b.frame)
    c = scan(exp, model, seed=8)
    assert not all(np.array_equal(x, y) for x, y in zip(a.outcomes, c.outcomes))


def test_pool_matches_serial(model):
    """Process-pool scans reproduce the serial record exactly."""
    exp = ExperimentFile(
        steps=_steps(), scan={"variable": "duration", "values": [1.0, 3.0, 5.0]}, shots=40
    )
    serial = scan(exp, model, seed=3)
    pooled = scan(exp, model, seed=3, workers=2)
    pd.testing.assert_frame_equal(serial.frame, pooled.frame)
    assert serial.variable == "duration" and serial.unit == "us"


def test_scan_prepares_motion_once_per_point(model, monkeypatch):
    """Each scan point builds its motional budget exactly once."""
    import microtrap.sequence_engine as engine

    calls = []
    original = engine.prepare_motion

    def counting(seq, m):
        calls.append(seq)
        return original(seq, m)

    monkeypatch.setattr(engine, "prepare_motion", counting)
    exp = ExperimentFile(
        steps=_steps(), scan={"variable": "duration", "values": [1.0, 3.0]}, shots=20
    )
    scan(exp, model, seed=5)
    assert len(calls) == 2


def test_record_metadata(model):
    """Records carry seed, hash and scan variable for the file header."""
    exp = ExperimentFile(steps=_steps(), shots=10)
    record = scan(exp, model, seed=4, config_hash="abc")
    assert record.metadata == {"seed": "4", "config_hash": "abc", "variable": "none", "unit": ""}
    assert list(record.frame.columns) == ["scan_value", "probe", "p", "err", "N"]
    assert record.frame["probe"].iloc[0] == "main"


def test_voltage_scan_needs_compensation(model):
    """Voltage scans without a compensation model are a SequenceError."""
    exp = ExperimentFile(steps=_steps(), scan={"variable": "voltage", "values": [0.0]}, shots=5)
    with pytest.raises(SequenceError):
        scan(exp, model, seed=0)


def test_compensation_minimises_micromotion():
    """β is smallest at the optimum voltage and grows linearly away from it."""
    model = ExperimentModel(
        compensation=CompensationModel(optimum_V=0.4, displacement_um_per_V=1.0, c2_per_m2=0.52e7)
    )
    assert model.beta_at(0.4) == 0.0
    assert model.beta_at(1.4) == pytest.approx(2.0 * model.beta_at(0.9))
    assert model.beta_at(None) == model.beta


def _delayed_thermometry_steps(wait_us):
    return [
        {"op": "doppler_cool", "duration_us": 2000.0},
        {"op": "optical_pump"},
        {"op": "sideband_cool", "duration_us": 8000.0, "p854_uW": 3.0, "omega0_kHz": 200.0},
        {"op": "wait", "duration_us": wait_us},
        {
            "op": "spec_pulse",
            "detuning_kHz": 0.0,
            "duration_us": THERMOMETRY_PULSE_US,
            "omega0_kHz": 100.0,
        },
        {"op": "detect", "duration_us": 5000.0},
    ]


@pytest.mark.parametrize("target", [0.3, 0.56, 1.2])
def test_thermometry_round_trip(target):
    """With 250 shots per sideband the asymmetry n̄ lands within 2σ of the engine's n̄ in most runs."""
    model = ExperimentModel(axial_MHz=1.2, radial_MHz=2.0, heating_rate_per_ms=1.0)
    exp = ExperimentFile(
        steps=_delayed_thermometry_steps(target * 1e3),
        probes={"red": -1200.0, "blue": 1200.0},
        shots=250,
    )
    hits = 0
    for seed in range(20):
        record = scan(exp, model, seed=seed)
        truth = float(record.nbar_axial[0])
        assert truth == pytest.approx(target, abs=0.15)
        table = asymmetry_table(record.frame)
        if not table.empty and abs(table["nbar"].iloc[0] - truth) <= 2.0 * table["nbar_err"].iloc[0]:
            hits += 1
    assert hits >= 14


def test_heating_rate_end_to_end():
    """An injected 2.1 phonons/ms comes back from the delayed-thermometry scan and the line fit."""
    model = ExperimentModel(axial_MHz=1.2, radial_MHz=2.0, heating_rate_per_ms=2.1)
    exp = ExperimentFile(
        steps=_delayed_thermometry_steps(0.0),
        scan={"variable": "wait", "values": [0.0, 250.0, 500.0, 750.0, 1000.0], "unit": "us"},
        probes={"red": -1200.0, "blue": 1200.0},
        shots=20000,
    )
    record = scan(exp, model, seed=11)
    fit = fit_heating_rate(record.frame, "us")
    assert fit["slope"] == pytest.approx(2.1, abs=0.3)
    assert fit["intercept"] == pytest.approx(float(record.nbar_axial[0]), abs=0.05)
    assert fit.extra["rejected"] == []
