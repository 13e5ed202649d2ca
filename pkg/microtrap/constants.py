#!/usr/bin/env python3
"""
Physical constants and ⁴⁰Ca⁺ reference data.

Conventions used throughout the package:
- lengths on geometry/grid objects are in micrometres [µm]
- angular frequencies are in [rad/s] unless a name ends in _Hz/_kHz/_MHz
- potentials are in volts per volt applied for basis fields [V/V]
"""
import numpy as np
from scipy import constants as sc

ELEMENTARY_CHARGE = sc.e  # [C]
ATOMIC_MASS = sc.physical_constants["atomic mass constant"][0]  # [kg]
HBAR = sc.hbar  # [J·s]
TWO_PI = 2.0 * np.pi

UM = 1e-6  # [m/µm]

# ⁴⁰Ca⁺ level data
CA40_MASS_AMU = 40.0
D52_LIFETIME_S = 1.2
P_LINEWIDTH = TWO_PI * 22.3e6  # natural linewidth Γ of the P levels [rad/s]

WAVELENGTHS_NM = {
    "S1/2-P1/2": 397.0,
    "D3/2-P1/2": 866.0,
    "D5/2-P3/2": 854.0,
    "S1/2-D5/2": 729.0,
    "S1/2-P3/2": 393.0,
}

# Operating point of the trap
RF_FREQUENCY_MHZ = 24.841
RF_AMPLITUDE_V = 140.0
DC_VOLTAGE_LIMIT_V = 10.0

# Quench calibration (854 nm power → effective D5/2 width)
GAMMA_EFF_SLOPE_KHZ_PER_UW = 31.6

# Doppler excess factor giving n̄ = 12 at ω_ax = 2π·1.1 MHz
DEFAULT_DOPPLER_EXCESS = 12.0 * 2.0 * 1.1e6 / 22.3e6


def mhz_to_angular(f_mhz: float) -> float:
    """Convert an ordinary frequency [MHz] to angular frequency [rad/s]."""
    return TWO_PI * f_mhz * 1e6


def khz_to_angular(f_khz: float) -> float:
    """Convert an ordinary frequency [kHz] to angular frequency [rad/s]."""
    return TWO_PI * f_khz * 1e3


def angular_to_mhz(omega: float) -> float:
    """Convert an angular frequency [rad/s] to [MHz]."""
    return omega / TWO_PI / 1e6
