#!/usr/bin/env python3
"""
⁴⁰Ca⁺ atomic model: level scheme, Lamb-Dicke factors, motional states and
coherent carrier/sideband dynamics.

Rabi convention: P = sin²(Ω·t/2), so a π-pulse takes t = π/Ω. Ω₀ is the
carrier Rabi frequency of the motional ground state; the Laguerre couplings
are normalised so that Ω₀,₀ = Ω₀.
"""
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from microtrap.constants import (
    D52_LIFETIME_S,
    HBAR,
    P_LINEWIDTH,
    WAVELENGTHS_NM,
)
from microtrap.errors import ConfigError, DomainError

ArrayLike = Union[float, Sequence[float], np.ndarray]

TRUNCATION_WEIGHT = 1e-6


@dataclass(frozen=True)
class LevelScheme:
    """Levels, transition wavelengths [nm] and lifetimes [s] of ⁴⁰Ca⁺."""

    levels: Tuple[str, ...] = ("S1/2", "P1/2", "P3/2", "D3/2", "D5/2")
    wavelengths_nm: Dict[str, float] = field(default_factory=lambda: dict(WAVELENGTHS_NM))
    lifetimes_s: Dict[str, float] = field(
        default_factory=lambda: {
            "P1/2": 7.1e-9,
            "P3/2": 6.9e-9,
            "D3/2": 1.2,
            "D5/2": D52_LIFETIME_S,
        }
    )
    p_linewidth: float = P_LINEWIDTH  # [rad/s]
    # only these two Zeeman sublevels are dynamical
    qubit: Tuple[str, str] = ("S1/2(m=+1/2)", "D5/2(m=+5/2)")

    def __post_init__(self):
        if any(v <= 0 for v in self.wavelengths_nm.values()):
            raise ConfigError("Transition wavelengths must be > 0")
        if any(v <= 0 for v in self.lifetimes_s.values()):
            raise ConfigError("Lifetimes must be > 0")


CA40 = LevelScheme()


@dataclass(frozen=True)
class BeamGeometry:
    """Laser beam: wavelength [nm], angle to the trap axis [deg], role."""

    wavelength_nm: float
    angle_deg: float = 45.0
    role: str = "spectroscopy"

    def __post_init__(self):
        if not 0.0 <= self.angle_deg <= 90.0:
            raise ConfigError(f"Beam angle {self.angle_deg}° outside [0, 90]")
        if self.wavelength_nm <= 0:
            raise ConfigError("Beam wavelength must be > 0")
        if self.role not in ("cooling", "pumping", "spectroscopy", "quench"):
            raise ConfigError(f"Unknown beam role: {self.role}")


def lamb_dicke(
    beam: BeamGeometry, mass_kg: float, omega: float, projected: bool = True
) -> float:
    """
    Lamb-Dicke factor η = (2π/λ)·cosθ·√(ħ/(2mω)).

    Args:
        beam: Beam wavelength and angle to the mode axis
        mass_kg: Ion mass [kg]
        omega: Mode angular frequency [rad/s]
        projected: False for spontaneous-emission recoil (cos θ omitted)
    """
    if not omega > 0:
        raise DomainError("Mode frequency must be > 0")
    k = 2.0 * np.pi / (beam.wavelength_nm * 1e-9)
    proj = np.cos(np.radians(beam.angle_deg)) if projected else 1.0
    return float(k * proj * np.sqrt(HBAR / (2.0 * mass_kg * omega)))


def thermal_pn(nbar: float, n: ArrayLike) -> np.ndarray:
    """Thermal occupation pₙ = n̄ⁿ/(n̄+1)ⁿ⁺¹, evaluated in log form."""
    n = np.asarray(n, dtype=float)
    if nbar < 0:
        raise DomainError("nbar must be >= 0")
    if nbar == 0:
        return np.where(n == 0, 1.0, 0.0)
    return np.exp(n * np.log(nbar) - (n + 1.0) * np.log(nbar + 1.0))


def thermal_cutoff(nbar: float, weight: float = TRUNCATION_WEIGHT) -> int:
    """Smallest n_max with thermal tail weight Σ_{n>n_max} pₙ < weight."""
    if nbar <= 0:
        return 0
    r = nbar / (nbar + 1.0)
    return max(0, int(np.ceil(np.log(weight) / np.log(r))) - 1)


@dataclass(frozen=True, eq=False)
class MotionalState:
    """
    Motional state of one mode: thermal(n̄), fock(n) or an explicit distribution.

    populations() returns the truncated support (n, pₙ).
    """

    kind: str
    omega: float = 0.0
    nbar: float = 0.0
    n: int = 0
    distribution: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "thermal":
            if self.nbar < 0:
                raise ConfigError("Thermal n̄ must be >= 0")
        elif self.kind == "fock":
            if self.n < 0:
                raise ConfigError("Fock n must be >= 0")
        elif self.kind == "distribution":
            p = np.asarray(self.distribution, dtype=float)
            if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ConfigError("Distribution must be non-negative and sum to 1")
            object.__setattr__(self, "distribution", p)
        else:
            raise ConfigError(f"Unknown motional state kind: {self.kind}")

    @classmethod
    def thermal(cls, nbar: float, omega: float = 0.0) -> "MotionalState":
        return cls("thermal", omega=omega, nbar=nbar)

    @classmethod
    def fock(cls, n: int, omega: float = 0.0) -> "MotionalState":
        return cls("fock", omega=omega, n=n)

    @classmethod
    def from_populations(cls, p: Sequence[float], omega: float = 0.0) -> "MotionalState":
        p = np.clip(np.asarray(p, dtype=float), 0.0, None)
        return cls("distribution", omega=omega, distribution=p / p.sum())

    def populations(self, weight: float = TRUNCATION_WEIGHT) -> Tuple[np.ndarray, np.ndarray]:
        if self.kind == "fock":
            return np.array([self.n]), np.array([1.0])
        if self.kind == "thermal":
            n = np.arange(thermal_cutoff(self.nbar, weight) + 1)
            return n, thermal_pn(self.nbar, n)
        p = self.distribution
        keep = np.nonzero(p > 0)[0]
        last = keep[-1] if keep.size else 0
        return np.arange(last + 1), p[: last + 1]

    def dense(self, n_max: int) -> np.ndarray:
        """Populations on 0..n_max, renormalised."""
        n, p = self.populations()
        out = np.zeros(n_max + 1)
        sel = n <= n_max
        out[n[sel]] = p[sel]
        return out / out.sum()

    @property
    def mean(self) -> float:
        if self.kind == "thermal":
            return float(self.nbar)
        n, p = self.populations()
        return float(np.dot(n, p) / p.sum())

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw phonon numbers for independent shots."""
        if self.kind == "fock":
            return np.full(size, self.n, dtype=int)
        if self.kind == "thermal":
            if self.nbar == 0:
                return np.zeros(size, dtype=int)
            # geometric on {0, 1, ...} with success 1/(n̄+1)
            return rng.geometric(1.0 / (self.nbar + 1.0), size=size) - 1
        n, p = self.populations()
        return rng.choice(n, size=size, p=p / p.sum())


def carrier_rabi(
    n: ArrayLike, omega0: float, eta: float, exact: bool = False
) -> np.ndarray:
    """Carrier Rabi frequency Ω_{n,n}: Ω₀(1 − η²n), or Ω₀·Lₙ(η²) when exact."""
    n = np.asarray(n)
    if exact:
        return omega0 * eval_genlaguerre(n, 0, eta**2)
    return omega0 * (1.0 - eta**2 * n)


def coupling(
    n: ArrayLike, dn: int, omega0: float, eta: float, exact: bool = False
) -> np.ndarray:
    """
    Rabi frequency of the n → n + dn transition.

    First order in η: Ω₀·η^|dn|·sqrt(n>!/n<!)/|dn|!; exact:
    Ω₀·η^|dn|·sqrt(n<!/n>!)·L_{n<}^{|dn|}(η²). Zero when n + dn < 0.
    """
    n = np.asarray(n)
    if dn == 0:
        return carrier_rabi(n, omega0, eta, exact)
    s = abs(dn)
    n_lo = np.minimum(n, n + dn)
    n_hi = np.maximum(n, n + dn)
    valid = n_lo >= 0
    lo = np.where(valid, n_lo, 0)
    hi = np.where(valid, n_hi, s)
    if exact:
        ratio = np.exp(0.5 * (gammaln(lo + 1.0) - gammaln(hi + 1.0)))
        val = omega0 * eta**s * ratio * eval_genlaguerre(lo, s, eta**2)
    else:
        ratio = np.exp(0.5 * (gammaln(hi + 1.0) - gammaln(lo + 1.0)) - gammaln(s + 1.0))
        val = omega0 * eta**s * ratio
    return np.where(valid, val, 0.0)


def _flop(rabi: np.ndarray, p: np.ndarray, t: ArrayLike) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("Pulse time must be >= 0")
    phase = np.multiply.outer(t, rabi) / 2.0
    return np.clip(np.sin(phase) ** 2 @ p, 0.0, 1.0)


def carrier_flop(
    t: ArrayLike, omega0: float, eta: float, state: MotionalState, exact: bool = False
) -> np.ndarray:
    """
    Thermally averaged carrier excitation P_D(t) = Σ pₙ sin²(Ω_{n,n}·t/2).

    Args:
        t: Pulse duration(s) [s]
        omega0: Ground-state carrier Rabi frequency [rad/s]
        eta: Lamb-Dicke factor of the probed mode
        state: Motional state
        exact: Use Laguerre couplings instead of the linearised Ω₀(1 − η²n)
    """
    n, p = state.populations()
    return _flop(carrier_rabi(n, omega0, eta, exact), p, t)


def sideband_flop(
    order: str,
    t: ArrayLike,
    omega0: float,
    eta: float,
    state: MotionalState,
    exact: bool = False,
) -> np.ndarray:
    """Thermally averaged red (n → n−1) or blue (n → n+1) sideband excitation."""
    dn = {"red": -1, "blue": 1}.get(order)
    if dn is None:
        raise DomainError(f"Sideband order must be 'red' or 'blue', got {order!r}")
    n, p = state.populations()
    return _flop(coupling(n, dn, omega0, eta, exact), p, t)


def rabi_excitation(detuning: ArrayLike, t: float, rabi: ArrayLike) -> np.ndarray:
    """Two-level excitation Ω²/(Ω²+Δ²)·sin²(√(Ω²+Δ²)·t/2); angular units."""
    d = np.asarray(detuning, dtype=float)
    r = np.asarray(rabi, dtype=float)
    gen2 = r**2 + d**2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(gen2 > 0, r**2 / gen2 * np.sin(np.sqrt(gen2) * t / 2.0) ** 2, 0.0)
    return out


def lorentzian(f: ArrayLike, center: float, fwhm: float, amplitude: float) -> np.ndarray:
    """Lorentzian with peak value amplitude at center and full width fwhm."""
    if not fwhm > 0:
        raise DomainError("fwhm must be > 0")
    hw2 = (fwhm / 2.0) ** 2
    f = np.asarray(f, dtype=float)
    return amplitude * hw2 / ((f - center) ** 2 + hw2)


def sinc2(f: ArrayLike, center: float, fwhm: float, amplitude: float) -> np.ndarray:
    """Pulsed-excitation sinc² lineshape with the given full width at half maximum."""
    if not fwhm > 0:
        raise DomainError("fwhm must be > 0")
    f = np.asarray(f, dtype=float)
    return amplitude * np.sinc(0.885893 * (f - center) / fwhm) ** 2
