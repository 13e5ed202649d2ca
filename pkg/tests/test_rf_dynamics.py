#!/usr/bin/env python3
"""Tests for stability parameters, secular frequencies, pseudopotential and micromotion."""
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from microtrap.constants import ELEMENTARY_CHARGE, UM, angular_to_mhz  # noqa: E402
from microtrap.errors import ConfigError, DomainError, StabilityWarning  # noqa: E402
from microtrap.field_solver import Grid3D, PotentialField  # noqa: E402
from microtrap.rf_dynamics import (  # noqa: E402
    IonSpecies,
    RfDrive,
    beta_from_displacement,
    beta_from_field,
    contour_table,
    equilibrium_displacement,
    floquet_frequency,
    micromotion_amplitude,
    micromotion_ratio,
    pseudo_secular_frequencies,
    pseudopotential,
    radial_frequency,
    secular_frequency,
    secular_series,
    secular_tone,
    stability_q,
)

DRIVE = RfDrive.from_MHz(24.841, 140.0)
CA40 = IonSpecies()
C2 = 2.0e7  # [m⁻²]


def _quadrupole(c2: float = C2) -> PotentialField:
    """Ideal RF basis φ = c₂/2·(y² − z²) on a 5 µm grid."""
    grid = Grid3D((-10.0, -50.0, -50.0), (5.0, 5.0, 5.0), (5, 21, 21))
    _, y, z = np.meshgrid(*grid.axes, indexing="ij")
    return PotentialField(grid, 0.5 * c2 * ((y * UM) ** 2 - (z * UM) ** 2), "RF")


def test_stability_q_storage_and_processing():
    """Storage and processing c₂ map onto q ≈ 0.144 and q ≈ 0.552 at 140 V, 24.841 MHz."""
    assert stability_q(0.52e7, DRIVE, CA40) == pytest.approx(0.1441, abs=5e-4)
    assert stability_q(1.99e7, DRIVE, CA40) == pytest.approx(0.5516, abs=5e-4)


def test_stability_q_scaling():
    """q is linear in c₂ and U, inverse in m and Ω²."""
    q = stability_q(C2, DRIVE, CA40)
    assert stability_q(2 * C2, DRIVE, CA40) == pytest.approx(2 * q)
    assert stability_q(C2, RfDrive(DRIVE.omega, 280.0), CA40) == pytest.approx(2 * q)
    assert stability_q(C2, RfDrive(2 * DRIVE.omega, 140.0), CA40) == pytest.approx(q / 4)
    assert stability_q(C2, DRIVE, IonSpecies(80.0)) == pytest.approx(q / 2)


def test_lowest_order_secular_frequency():
    """ω = Ωq/(2√2) gives ≈ 1.266 MHz in the storage zone."""
    q = stability_q(0.52e7, DRIVE, CA40)
    sec = secular_frequency(q, DRIVE)
    assert angular_to_mhz(sec.lowest_order) == pytest.approx(1.266, abs=2e-3)
    assert angular_to_mhz(sec.lowest_order) == pytest.approx(1.26, rel=0.05)


def test_floquet_close_to_lowest_order_at_small_q():
    """At q = 0.14 the Floquet value is within 2% of the lowest-order formula."""
    sec = secular_frequency(0.14, DRIVE)
    assert abs(sec.relative_correction) < 0.02


def test_floquet_deviates_at_large_q():
    """At q = 0.55 the lowest-order formula is off by several percent."""
    sec = secular_frequency(0.55, DRIVE)
    assert 0.03 < sec.relative_correction < 0.12


def test_floquet_matches_series():
    """The monodromy result agrees with the continued-fraction series at moderate q."""
    for q in (0.1, 0.3, 0.5):
        assert floquet_frequency(q, DRIVE) == pytest.approx(secular_series(q, DRIVE), rel=5e-3)


def test_floquet_outside_stability_region():
    """Beyond the first stability region the Floquet frequency is undefined."""
    assert math.isnan(floquet_frequency(1.0, DRIVE))
    assert floquet_frequency(0.0, DRIVE) == 0.0


def test_secular_tone_matches_floquet():
    """The spectral peak of a long trajectory sits at the Floquet frequency."""
    tone = secular_tone(0.3, DRIVE)
    assert tone == pytest.approx(floquet_frequency(0.3, DRIVE), rel=0.02)


def test_stability_warning():
    """q ≥ 0.9 emits a StabilityWarning."""
    with pytest.warns(StabilityWarning):
        secular_frequency(0.95, DRIVE)


def test_invalid_drive_and_ion():
    """Non-physical drive or ion parameters are rejected."""
    with pytest.raises(ConfigError):
        RfDrive(0.0, 140.0)
    with pytest.raises(ConfigError):
        RfDrive(DRIVE.omega, -1.0)
    with pytest.raises(ConfigError):
        IonSpecies(0.0)
    with pytest.raises(DomainError):
        stability_q(-1.0, DRIVE, CA40)


def test_pseudopotential_scales_with_amplitude_squared():
    """Doubling U multiplies the pseudopotential and the depth by exactly 4."""
    rf = _quadrupole()
    a = pseudopotential(rf, DRIVE, CA40)
    b = pseudopotential(rf, RfDrive(DRIVE.omega, 2 * DRIVE.amplitude), CA40)
    assert np.allclose(b.phi_eV, 4.0 * a.phi_eV, rtol=1e-12, atol=0.0)
    assert b.depth_eV == pytest.approx(4.0 * a.depth_eV, rel=1e-9)


def test_pseudopotential_minimum_and_depth():
    """The ideal quadrupole has its minimum on the axis and escapes at the nearest edge."""
    pmap = pseudopotential(_quadrupole(), DRIVE, CA40)
    assert pmap.minimum_um == (0.0, 0.0)
    scale = ELEMENTARY_CHARGE * DRIVE.amplitude**2 / (4.0 * CA40.mass_kg * DRIVE.omega**2)
    edge = scale * C2**2 * (45.0 * UM) ** 2
    assert pmap.depth_eV == pytest.approx(edge, rel=1e-6)
    assert pmap.saddle_um is not None
    assert max(abs(pmap.saddle_um[0]), abs(pmap.saddle_um[1])) == pytest.approx(45.0)


def test_pseudo_secular_frequencies_match_formula():
    """The Hessian of the pseudopotential reproduces ω = Ωq/(2√2) in both directions."""
    pmap = pseudopotential(_quadrupole(), DRIVE, CA40)
    wy, wz = pseudo_secular_frequencies(pmap, CA40)
    expected = radial_frequency(C2, DRIVE, CA40)
    assert wy == pytest.approx(expected, rel=1e-6)
    assert wz == pytest.approx(expected, rel=1e-6)


def test_conductor_nodes_excluded():
    """Masked conductor nodes are NaN in the cross-section."""
    rf = _quadrupole()
    mask = np.zeros(rf.grid.shape, dtype=bool)
    mask[:, -3:, :] = True
    pmap = pseudopotential(rf, DRIVE, CA40, conductor_mask=mask)
    assert np.isnan(pmap.phi_eV[-2:, :]).all()
    assert np.isfinite(pmap.phi_eV[:10, :]).all()


def test_contour_table():
    """Basins below the depth are closed and grow with the level."""
    pmap = pseudopotential(_quadrupole(), DRIVE, CA40)
    levels = [0.25 * pmap.depth_eV, 0.5 * pmap.depth_eV, 0.9 * pmap.depth_eV]
    table = contour_table(pmap, levels)
    assert list(table["level_eV"]) == levels
    assert table["closed"].all()
    assert table["area_um2"].is_monotonic_increasing
    assert (table["y_max_um"] > 0).all()


def test_micromotion_ratio():
    """β = 0.17 gives J₁/J₀ ≈ 0.0853 and its square as excitation ratio."""
    ratio, excitation = micromotion_ratio(0.17)
    assert ratio == pytest.approx(0.08531, abs=1e-5)
    assert excitation == pytest.approx(ratio**2)
    assert micromotion_ratio(0.0) == (0.0, 0.0)
    with pytest.raises(DomainError):
        micromotion_ratio(2.5)
    with pytest.raises(DomainError):
        micromotion_ratio(-0.1)


def test_micromotion_amplitude():
    """x = βλ/2."""
    assert micromotion_amplitude(0.17, 729.0) == pytest.approx(61.965)
    assert micromotion_amplitude(0.0, 729.0) == 0.0


def test_equilibrium_displacement_and_beta():
    """A static field displaces the ion by eE/(mω²); β grows linearly with the field."""
    omega = radial_frequency(C2, DRIVE, CA40)
    d = equilibrium_displacement([0.0, 10.0], C2, DRIVE, CA40)
    expected = ELEMENTARY_CHARGE * 10.0 / (CA40.mass_kg * omega**2) / UM
    assert d[1] == pytest.approx(expected)
    b1 = beta_from_field([0.0, 10.0], C2, DRIVE, CA40, 729.0)
    b2 = beta_from_field([0.0, 20.0], C2, DRIVE, CA40, 729.0)
    assert b2 == pytest.approx(2.0 * b1)
    assert b1 == pytest.approx(beta_from_displacement(d, C2, DRIVE, CA40, 729.0))


def test_beta_from_displacement_convention():
    """β = 2·projection·(q·d/2)/λ, consistent with x = βλ/2."""
    q = stability_q(C2, DRIVE, CA40)
    beta = beta_from_displacement([1.0, 0.0], C2, DRIVE, CA40, 729.0, projection=1.0)
    assert micromotion_amplitude(beta, 729.0) == pytest.approx(q * 1.0e3 / 2.0)


def test_radial_frequency_consistent():
    """radial_frequency equals the lowest-order secular frequency of the same q."""
    q = stability_q(C2, DRIVE, CA40)
    assert radial_frequency(C2, DRIVE, CA40) == pytest.approx(DRIVE.omega * q / (2 * math.sqrt(2)))
