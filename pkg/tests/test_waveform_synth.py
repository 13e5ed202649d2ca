#!/usr/bin/env python3
"""Tests for static wells, compensation and shuttling waveforms."""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from microtrap.constants import mhz_to_angular  # noqa: E402
from microtrap.errors import DomainError, GeometryError, InfeasibleError  # noqa: E402
from microtrap.geometry import TrapSpec, build_trap  # noqa: E402
from microtrap.rf_dynamics import IonSpecies, RfDrive  # noqa: E402
from microtrap.waveform_synth import (  # noqa: E402
    SLEW_LIMIT_V,
    BasisCurves,
    VoltageSet,
    Waveform,
    compensation_scan,
    compensation_voltage,
    curvature_to_omega,
    differential_gradient,
    max_axial_frequency,
    shuttle_waveform,
    smootherstep,
    solve_voltages,
    target_curvature,
    transport_pairs,
    waveform_sidecar,
)

CA40 = IonSpecies()
DRIVE = RfDrive()
OMEGA = mhz_to_angular(0.3)


@pytest.fixture(scope="module")
def trap():
    return build_trap(TrapSpec())


@pytest.fixture(scope="module")
def basis(trap):
    return BasisCurves.analytic(trap)


def test_curvature_round_trip():
    """κ = mω²/(Ze) and back."""
    kappa = target_curvature(OMEGA, CA40)
    assert curvature_to_omega(kappa, CA40) == pytest.approx(OMEGA)
    assert curvature_to_omega(-1.0, CA40) == 0.0


def test_basis_shape(basis, trap):
    """The analytic basis has one row per pair and rejects windows outside its range."""
    assert basis.values.shape == (trap.n_pairs, len(basis.x_um))
    assert basis.source == "analytic"
    assert basis.labels[0] == "DC00"
    with pytest.raises(DomainError):
        basis.local(np.array([basis.x_um[-1] + 100.0]), [0])
    with pytest.raises(DomainError):
        BasisCurves(trap, basis.x_um, basis.values[:3])


def test_static_well_in_storage(basis, trap):
    """A 0.3 MHz well at the storage centre is reached within a few percent and within bounds."""
    x0 = float(trap.centers[4])
    vs = solve_voltages(basis, x0, OMEGA, CA40)
    assert vs.omega == pytest.approx(OMEGA, rel=0.05)
    assert np.all(np.abs(vs.voltages) <= 10.0 + 1e-9)
    active = np.nonzero(vs.voltages)[0]
    assert active.min() >= 1 and active.max() <= 7
    assert vs.to_dict()["position_um"] == x0


def test_flat_target_gives_zero_voltages(basis, trap):
    """ω = 0 needs no voltages; negative targets are outside the domain."""
    vs = solve_voltages(basis, float(trap.centers[21]), 0.0, CA40)
    assert not vs.voltages.any()
    with pytest.raises(DomainError):
        solve_voltages(basis, float(trap.centers[21]), -1.0, CA40)


def test_unreachable_frequency(basis, trap):
    """10 MHz is beyond ±10 V; the error carries the reachable maximum and position."""
    x0 = float(trap.centers[4])
    w_max = max_axial_frequency(basis, x0, CA40)
    assert OMEGA < w_max < mhz_to_angular(10.0)
    with pytest.raises(InfeasibleError) as info:
        solve_voltages(basis, x0, mhz_to_angular(10.0), CA40)
    assert info.value.max_omega == pytest.approx(w_max)
    assert info.value.position_um == x0


def test_tighter_bound_lowers_maximum(basis, trap):
    """The reachable frequency scales as the square root of the voltage bound."""
    x0 = float(trap.centers[21])
    full = max_axial_frequency(basis, x0, CA40, bound_V=10.0)
    quarter = max_axial_frequency(basis, x0, CA40, bound_V=2.5)
    assert quarter == pytest.approx(full / 2.0, rel=1e-6)


def test_voltage_set_bounds():
    """Electrode voltages including the differential must respect the bound."""
    vs = VoltageSet(("DC00", "DC01"), [1.0, -2.0], differential=[0.4, 0.0])
    assert vs.electrode_voltages() == {
        "DC00T": 1.2,
        "DC00B": 0.8,
        "DC01T": -2.0,
        "DC01B": -2.0,
    }
    with pytest.raises(DomainError):
        VoltageSet(("DC00",), [9.9], differential=[1.0])
    with pytest.raises(DomainError):
        VoltageSet(("DC00", "DC01"), [1.0])


def test_smootherstep():
    """Starts and ends at rest, symmetric about the midpoint."""
    assert smootherstep(0.0) == 0.0
    assert smootherstep(1.0) == 1.0
    assert smootherstep(0.5) == pytest.approx(0.5)
    eps = 1e-4
    assert smootherstep(eps) / eps < 1e-6
    assert smootherstep(1.5) == 1.0


def test_static_waveform_is_constant(basis):
    """start = end holds the same voltages for every sample."""
    wf = shuttle_waveform(basis, 21, 21, 50.0, 5, OMEGA, CA40)
    assert np.all(wf.voltages == wf.voltages[0])
    assert wf.max_step_V == 0.0
    assert np.all(wf.positions_um == wf.positions_um[0])


def test_shuttle_between_neighbours(basis, trap):
    """The well moves monotonically from one centre to the next."""
    wf = shuttle_waveform(basis, 4, 5, 20.0, 9, OMEGA, CA40, slew_limit_V=None, drift_tolerance=0.5)
    assert wf.positions_um[0] == pytest.approx(trap.centers[4])
    assert wf.positions_um[-1] == pytest.approx(trap.centers[5])
    assert np.all(np.diff(wf.positions_um) > 0)
    frame = wf.to_frame()
    assert list(frame.columns) == ["t_us"] + list(basis.labels)
    assert frame["t_us"].iloc[-1] == 20.0
    sidecar = waveform_sidecar(wf, OMEGA, {"config_hash": "x"})
    assert sidecar["metadata"]["start_segment"] == "DC04"
    assert sidecar["feasibility"]["samples"] == 9
    assert sidecar["config_hash"] == "x"


def test_shuttle_slew_limit(basis, trap):
    """A tiny slew limit is reported with the failing position."""
    with pytest.raises(InfeasibleError) as info:
        shuttle_waveform(basis, 4, 5, 20.0, 9, OMEGA, CA40, slew_limit_V=1e-6, drift_tolerance=0.5)
    assert trap.centers[4] < info.value.position_um <= trap.centers[5]


def test_shuttle_voltages_are_continuous(basis):
    """Neighbouring storage segments: steps stay under the default slew limit and shrink with sampling."""
    coarse = shuttle_waveform(basis, 4, 5, 100.0, 100, OMEGA, CA40, drift_tolerance=0.5)
    fine = shuttle_waveform(basis, 4, 5, 100.0, 400, OMEGA, CA40, drift_tolerance=0.5)
    assert coarse.max_step_V < SLEW_LIMIT_V
    assert fine.max_step_V < 0.5 * coarse.max_step_V


def test_transport_pairs_span_both_ends(trap):
    """The active set covers every pair between the two end windows."""
    assert transport_pairs(trap, 4, 5, 3) == list(range(1, 9))
    assert transport_pairs(trap, 21, 4, 3) == list(range(1, 25))
    assert transport_pairs(trap, 0, 1, 3) == list(range(0, 5))


def test_shuttle_infeasible_target(basis):
    """Transport at an unreachable frequency fails at the first sample."""
    with pytest.raises(InfeasibleError) as info:
        shuttle_waveform(basis, 4, 6, 20.0, 5, mhz_to_angular(10.0), CA40)
    assert info.value.position_um is not None


def test_shuttle_validation(basis):
    """Bad segments, durations and sample counts are rejected."""
    with pytest.raises(GeometryError):
        shuttle_waveform(basis, 0, 99, 20.0, 5, OMEGA, CA40)
    with pytest.raises(DomainError):
        shuttle_waveform(basis, 4, 5, 0.0, 5, OMEGA, CA40)
    with pytest.raises(DomainError):
        shuttle_waveform(basis, 4, 5, 20.0, 1, OMEGA, CA40)


def test_waveform_times_must_increase():
    """Sample times must be strictly increasing."""
    with pytest.raises(DomainError):
        Waveform(np.array([0.0, 0.0]), ("DC00",), np.zeros((2, 1)), np.zeros(2), np.zeros(2))


def test_compensation_cancels_field_along_gradient():
    """V* = g·E/(g·g) leaves only the field component orthogonal to g."""
    g = np.array([0.0, 120.0, 40.0])
    stray = np.array([0.0, 60.0, 0.0])
    comp = compensation_voltage(stray, g, 0.52e7, DRIVE, CA40)
    residual = np.array(comp.residual_field_V_per_m)
    assert comp.voltage_V == pytest.approx(g[1:] @ stray[1:] / (g[1:] @ g[1:]))
    assert residual @ g[1:] == pytest.approx(0.0, abs=1e-9)
    assert comp.beta > 0
    exact = compensation_voltage([50.0, 0.0], [100.0, 0.0], 0.52e7, DRIVE, CA40)
    assert exact.voltage_V == pytest.approx(0.5)
    assert exact.beta == 0.0


def test_compensation_limits():
    """Fields beyond the electrode bound or gradients without radial component are infeasible."""
    with pytest.raises(InfeasibleError):
        compensation_voltage([1e4, 0.0], [100.0, 0.0], 0.52e7, DRIVE, CA40)
    with pytest.raises(InfeasibleError):
        compensation_voltage([10.0, 0.0], [0.0, 0.0], 0.52e7, DRIVE, CA40)
    with pytest.raises(DomainError):
        compensation_voltage([10.0], [1.0], 0.52e7, DRIVE, CA40)


def test_compensation_scan_minimum():
    """The micromotion excitation ratio vanishes at the compensating voltage."""
    frame = compensation_scan([0.0, 50.0], [0.0, 100.0], [0.0, 0.25, 0.5, 0.75, 1.0], 0.52e7, DRIVE)
    best = frame.loc[frame["excitation_ratio"].idxmin()]
    assert best["voltage_V"] == 0.5
    assert best["excitation_ratio"] == 0.0
    assert frame["beta"].iloc[0] == pytest.approx(frame["beta"].iloc[-1])


def test_differential_gradient_is_radial(trap):
    """A differential on a pair pushes the ion radially, not along the axis."""
    x0 = float(trap.centers[21])
    g = differential_gradient(trap, 21, (x0, 0.0, 0.0))
    assert abs(g[1]) > 0
    assert abs(g[0]) < 1e-4 * abs(g[1])
