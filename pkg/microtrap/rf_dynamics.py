#!/usr/bin/env python3
"""
RF dynamics: stability parameter, secular frequencies, pseudopotential and
micromotion observables.

Formulas:
- q = 2·Z·e·U·c₂ / (m·Ω²)
- ω_sec = Ω·q / (2√2) (lowest order), Floquet value from the one-period
  monodromy matrix of ẍ = −(q·Ω²/2)·cos(Ωt)·x
- Φ(r) = Z²·e²·U²·|∇φ_basis(r)|² / (4·m·Ω²)
- Ω₁/Ω₀ = J₁(β)/J₀(β); excitation ratio = (J₁/J₀)²
- x_mm = β·λ/2
"""
import logging
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage
from scipy.integrate import solve_ivp
from scipy.special import j0, j1, jn_zeros

from microtrap.constants import (
    ATOMIC_MASS,
    CA40_MASS_AMU,
    ELEMENTARY_CHARGE,
    RF_AMPLITUDE_V,
    RF_FREQUENCY_MHZ,
    UM,
    mhz_to_angular,
)
from microtrap.errors import ConfigError, DomainError, StabilityWarning
from microtrap.field_solver import PotentialField

logger = logging.getLogger(__name__)

STABILITY_WARN_Q = 0.9
BESSEL_J0_ZERO = float(jn_zeros(0, 1)[0])  # 2.4048...


@dataclass(frozen=True)
class RfDrive:
    """RF drive: angular frequency Ω [rad/s] and amplitude U [V] (U = Vpp/2)."""

    omega: float = mhz_to_angular(RF_FREQUENCY_MHZ)
    amplitude: float = RF_AMPLITUDE_V

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigError("RF angular frequency must be > 0")
        if self.amplitude < 0:
            raise ConfigError("RF amplitude must be >= 0")

    @classmethod
    def from_MHz(cls, frequency_MHz: float, amplitude_V: float) -> "RfDrive":
        return cls(mhz_to_angular(frequency_MHz), amplitude_V)


@dataclass(frozen=True)
class IonSpecies:
    """Ion mass [u] and charge [e]."""

    mass_amu: float = CA40_MASS_AMU
    charge: int = 1

    def __post_init__(self):
        if not self.mass_amu > 0:
            raise ConfigError("Ion mass must be > 0")
        if self.charge < 1:
            raise ConfigError("Ion charge must be >= 1")

    @property
    def mass_kg(self) -> float:
        return self.mass_amu * ATOMIC_MASS


def stability_q(c2: float, drive: RfDrive, ion: IonSpecies) -> float:
    """
    Mathieu stability parameter.

    Args:
        c2: Quadrupole coefficient [m⁻² per V]
        drive: RF drive
        ion: Ion species

    Returns:
        q = 2·Z·e·U·c₂/(m·Ω²) [dimensionless]
    """
    if c2 < 0:
        raise DomainError("c2 must be >= 0")
    return 2.0 * ion.charge * ELEMENTARY_CHARGE * drive.amplitude * c2 / (
        ion.mass_kg * drive.omega**2
    )


@dataclass(frozen=True)
class SecularFrequency:
    lowest_order: float  # [rad/s]
    floquet: float  # [rad/s], nan outside the first stability region
    q: float

    @property
    def relative_correction(self) -> float:
        if self.lowest_order == 0:
            return 0.0
        return self.floquet / self.lowest_order - 1.0


def mathieu_monodromy(q: float, drive: RfDrive, a: float = 0.0) -> np.ndarray:
    """Monodromy matrix of ẍ = −(Ω²/4)(a − 2q·cos Ωt)·x over one RF period."""
    omega = drive.omega
    period = 2.0 * np.pi / omega

    def rhs(t, s):
        x, v = s[:2], s[2:]
        k = (omega**2 / 4.0) * (a - 2.0 * q * np.cos(omega * t))
        return np.concatenate([v, -k * x])

    sol = solve_ivp(
        rhs,
        (0.0, period),
        [1.0, 0.0, 0.0, 1.0],
        method="DOP853",
        rtol=1e-11,
        atol=1e-12,
    )
    x_end, v_end = sol.y[:2, -1], sol.y[2:, -1]
    return np.array([[x_end[0], x_end[1]], [v_end[0], v_end[1]]])


def floquet_frequency(q: float, drive: RfDrive, a: float = 0.0) -> float:
    """Secular angular frequency from the Floquet exponent: cos(ω·T) = tr(M)/2."""
    if q == 0 and a == 0:
        return 0.0
    half_trace = 0.5 * np.trace(mathieu_monodromy(q, drive, a))
    if abs(half_trace) > 1.0:
        return float("nan")
    period = 2.0 * np.pi / drive.omega
    return float(np.arccos(half_trace) / period)


def secular_series(q: float, drive: RfDrive, a: float = 0.0) -> float:
    """Higher-order continued-fraction series for β, ω = β·Ω/2."""
    beta_sq = a
    beta_sq += (0.5 + a / 2.0) * q**2
    beta_sq += (25.0 / 128.0 + 273.0 * a / 512.0) * q**4
    beta_sq += (317.0 / 2304.0 + 59525.0 * a / 82944.0) * q**6
    return float(np.sqrt(beta_sq) * drive.omega / 2.0)


def secular_frequency(q: float, drive: RfDrive) -> SecularFrequency:
    """
    Radial secular frequency, lowest order and Floquet-corrected.

    Warns with StabilityWarning for q ≥ 0.9.
    """
    if q < 0:
        raise DomainError("q must be >= 0")
    if q >= STABILITY_WARN_Q:
        msg = f"q = {q:.3f} at or beyond the stability warning threshold {STABILITY_WARN_Q}"
        logger.warning(msg)
        warnings.warn(msg, StabilityWarning)
    lowest = drive.omega * q / (2.0 * np.sqrt(2.0))
    return SecularFrequency(float(lowest), floquet_frequency(q, drive), float(q))


def secular_tone(
    q: float, drive: RfDrive, periods: int = 400, samples_per_period: int = 16
) -> float:
    """
    Secular angular frequency read off the spectrum of a long trajectory.

    Integrates the Mathieu equation from rest displacement, windows the
    trajectory and refines the strongest tone below Ω/2 by parabolic
    interpolation of the log spectrum.
    """
    omega = drive.omega
    period = 2.0 * np.pi / omega
    t = np.arange(periods * samples_per_period) * (period / samples_per_period)

    def rhs(tt, s):
        return [s[1], (q * omega**2 / 2.0) * np.cos(omega * tt) * s[0]]

    sol = solve_ivp(rhs, (0.0, t[-1]), [1.0, 0.0], t_eval=t, method="DOP853", rtol=1e-9, atol=1e-12)
    x = sol.y[0] * np.hanning(len(t))
    spectrum = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(len(t), d=t[1] - t[0]) * 2.0 * np.pi
    band = (freqs > 0) & (freqs < omega / 2.0)
    idx = np.nonzero(band)[0]
    k = idx[np.argmax(spectrum[band])]
    if 0 < k < len(spectrum) - 1:
        a, b, c = np.log(spectrum[k - 1 : k + 2] + 1e-300)
        shift = 0.5 * (a - c) / (a - 2 * b + c)
    else:
        shift = 0.0
    return float(freqs[k] + shift * (freqs[1] - freqs[0]))


@dataclass(frozen=True, eq=False)
class PseudoMap:
    """Pseudopotential on a yz cross-section [eV], offset so the minimum is 0."""

    y_um: np.ndarray
    z_um: np.ndarray
    phi_eV: np.ndarray  # shape (ny, nz); nan on excluded nodes
    depth_eV: float
    minimum_um: Tuple[float, float]
    saddle_um: Optional[Tuple[float, float]]
    x_um: float

    def to_frame(self) -> pd.DataFrame:
        Y, Z = np.meshgrid(self.y_um, self.z_um, indexing="ij")
        return pd.DataFrame({"y_um": Y.ravel(), "z_um": Z.ravel(), "phi_eV": self.phi_eV.ravel()})

    def basin(self, level_eV: float) -> np.ndarray:
        """Connected region below level that contains the minimum."""
        return _basin(self.phi_eV, level_eV, self._min_index)

    @property
    def _min_index(self) -> Tuple[int, int]:
        j = int(np.argmin(np.abs(self.y_um - self.minimum_um[0])))
        k = int(np.argmin(np.abs(self.z_um - self.minimum_um[1])))
        return j, k


def _basin(phi: np.ndarray, level: float, seed: Tuple[int, int]) -> np.ndarray:
    below = np.nan_to_num(phi, nan=np.inf) < level
    labels, _ = ndimage.label(below)
    lab = labels[seed]
    if lab == 0:
        return np.zeros_like(below)
    return labels == lab


def _escapes(region: np.ndarray) -> bool:
    return bool(region[0, :].any() or region[-1, :].any() or region[:, 0].any() or region[:, -1].any())


def pseudopotential(
    rf_basis: PotentialField,
    drive: RfDrive,
    ion: IonSpecies,
    x_um: Optional[float] = None,
    conductor_mask: Optional[np.ndarray] = None,
    boundary_layer: int = 1,
) -> PseudoMap:
    """
    Pseudopotential cross-section with trap depth and escape saddle.

    The gradient is taken over the full 3D field; the outer boundary_layer
    nodes and conductor nodes are excluded. The depth is the highest level
    whose basin around the minimum does not reach the edge of the section,
    found by bisection on a flood fill.

    Args:
        rf_basis: RF basis field (all RF electrodes at 1 V)
        drive: RF drive
        ion: Ion species
        x_um: Axial position of the cross-section (default: grid centre)
        conductor_mask: Optional 3D mask of conductor nodes to exclude
        boundary_layer: Nodes trimmed from every edge

    Returns:
        PseudoMap in eV
    """
    xs, ys, zs = rf_basis.grid.axes
    i = len(xs) // 2 if x_um is None else int(np.argmin(np.abs(xs - x_um)))
    grads = np.gradient(rf_basis.values, *[h * UM for h in rf_basis.grid.spacing], edge_order=2)
    e2 = sum(g[i] ** 2 for g in grads)
    scale = (ion.charge * drive.amplitude) ** 2 * ELEMENTARY_CHARGE / (4.0 * ion.mass_kg * drive.omega**2)
    phi = scale * e2  # [eV]
    if conductor_mask is not None:
        phi = np.where(conductor_mask[i], np.nan, phi)
    b = boundary_layer
    if b > 0:
        phi = phi[b:-b, b:-b]
        ys, zs = ys[b:-b], zs[b:-b]
    finite = np.where(np.isfinite(phi), phi, np.inf)
    j0_, k0 = np.unravel_index(int(np.argmin(finite)), phi.shape)
    phi = phi - finite[j0_, k0]

    lo, hi = 0.0, float(np.nanmax(phi))
    if _escapes(_basin(phi, hi * (1 + 1e-12) + 1e-300, (j0_, k0))):
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _escapes(_basin(phi, mid, (j0_, k0))):
                hi = mid
            else:
                lo = mid
        inner = _basin(phi, lo, (j0_, k0))
        outer = _basin(phi, hi, (j0_, k0))
        ring = ndimage.binary_dilation(inner) & outer & ~inner
        if ring.any():
            cand = np.where(ring, np.nan_to_num(phi, nan=np.inf), np.inf)
            js, ks = np.unravel_index(int(np.argmin(cand)), phi.shape)
            depth = float(phi[js, ks])
            saddle = (float(ys[js]), float(zs[ks]))
        else:
            depth, saddle = lo, None
    else:
        depth, saddle = hi, None
    logger.debug("Pseudopotential depth %.4f eV at x=%.1f µm", depth, xs[i])
    return PseudoMap(ys, zs, phi, depth, (float(ys[j0_]), float(zs[k0])), saddle, float(xs[i]))


def contour_table(pmap: PseudoMap, levels_eV: Sequence[float]) -> pd.DataFrame:
    """Area and extents of the basin below each equi-pseudopotential level."""
    dy = pmap.y_um[1] - pmap.y_um[0]
    dz = pmap.z_um[1] - pmap.z_um[0]
    rows: List[Dict] = []
    for level in levels_eV:
        region = pmap.basin(level)
        if region.any():
            jj, kk = np.nonzero(region)
            rows.append(
                {
                    "level_eV": float(level),
                    "area_um2": float(region.sum() * dy * dz),
                    "y_min_um": float(pmap.y_um[jj.min()]),
                    "y_max_um": float(pmap.y_um[jj.max()]),
                    "z_min_um": float(pmap.z_um[kk.min()]),
                    "z_max_um": float(pmap.z_um[kk.max()]),
                    "closed": bool(not _escapes(region)),
                }
            )
        else:
            rows.append({"level_eV": float(level), "area_um2": 0.0, "closed": True})
    return pd.DataFrame(rows)


def pseudo_secular_frequencies(
    pmap: PseudoMap, ion: IonSpecies, window_um: Optional[float] = None
) -> Tuple[float, float]:
    """Harmonic ω_y, ω_z [rad/s] from a quadratic fit of Φ around its minimum."""
    dy = pmap.y_um[1] - pmap.y_um[0]
    window = window_um if window_um is not None else 3.0 * dy
    y0, z0 = pmap.minimum_um
    jy = np.nonzero(np.abs(pmap.y_um - y0) <= window + 1e-9)[0]
    kz = np.nonzero(np.abs(pmap.z_um - z0) <= window + 1e-9)[0]
    Y, Z = np.meshgrid(pmap.y_um[jy] - y0, pmap.z_um[kz] - z0, indexing="ij")
    v = pmap.phi_eV[np.ix_(jy, kz)]
    ok = np.isfinite(v)
    y, z, v = Y[ok], Z[ok], v[ok]
    design = np.column_stack([np.ones_like(y), y, z, y**2, z**2, y * z])
    coeffs, *_ = np.linalg.lstsq(design, v, rcond=None)
    hess = np.array([[2 * coeffs[3], coeffs[5]], [coeffs[5], 2 * coeffs[4]]])
    k = np.linalg.eigvalsh(hess) * ELEMENTARY_CHARGE / UM**2  # [J/m²]
    return tuple(float(np.sqrt(max(v_, 0.0) / ion.mass_kg)) for v_ in k)


def micromotion_ratio(beta: float) -> Tuple[float, float]:
    """
    Micromotion sideband strength.

    Args:
        beta: Modulation index, 0 ≤ β < first zero of J₀

    Returns:
        (Rabi ratio J₁(β)/J₀(β), excitation ratio (J₁/J₀)²)
    """
    if beta < 0 or beta >= BESSEL_J0_ZERO:
        raise DomainError(f"beta = {beta} outside [0, {BESSEL_J0_ZERO:.4f})")
    ratio = float(j1(beta) / j0(beta))
    return ratio, ratio**2


def micromotion_amplitude(beta: float, wavelength_nm: float) -> float:
    """Micromotion amplitude x = β·λ/2 [nm]."""
    if beta < 0:
        raise DomainError("beta must be >= 0")
    return beta * wavelength_nm / 2.0


def radial_frequency(c2: float, drive: RfDrive, ion: IonSpecies) -> float:
    """Lowest-order radial secular frequency [rad/s] for a quadrupole c₂."""
    return drive.omega * stability_q(c2, drive, ion) / (2.0 * np.sqrt(2.0))


def equilibrium_displacement(
    stray_field: Sequence[float], c2: float, drive: RfDrive, ion: IonSpecies
) -> np.ndarray:
    """Radial displacement [µm] of the ion from the RF null under a static field [V/m]."""
    omega = radial_frequency(c2, drive, ion)
    if omega <= 0:
        raise DomainError("No radial confinement (c2·U = 0)")
    e = np.asarray(stray_field, dtype=float)
    return ion.charge * ELEMENTARY_CHARGE * e / (ion.mass_kg * omega**2) / UM


def beta_from_displacement(
    displacement_um: Sequence[float],
    c2: float,
    drive: RfDrive,
    ion: IonSpecies,
    wavelength_nm: float,
    projection: float = 1.0 / np.sqrt(2.0),
) -> float:
    """
    Modulation index for an ion displaced from the RF null.

    The driven micromotion amplitude is q·|d|/2 (displacement times the local
    RF gradient); β follows the same x = β·λ/2 convention as
    micromotion_amplitude, with the beam projection onto the motion.
    """
    q = stability_q(c2, drive, ion)
    amplitude_nm = q * float(np.linalg.norm(displacement_um)) * 1e3 / 2.0
    return 2.0 * projection * amplitude_nm / wavelength_nm


def beta_from_field(
    field_V_per_m: Sequence[float],
    c2: float,
    drive: RfDrive,
    ion: IonSpecies,
    wavelength_nm: float,
    projection: float = 1.0 / np.sqrt(2.0),
) -> float:
    """Modulation index caused by a residual static radial field at the RF null."""
    d = equilibrium_displacement(field_V_per_m, c2, drive, ion)
    return beta_from_displacement(d, c2, drive, ion, wavelength_nm, projection)
