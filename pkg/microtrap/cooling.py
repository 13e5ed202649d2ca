#!/usr/bin/env python3
"""
Cooling, heating and quench models.

Rate convention: γ_eff is quoted as an ordinary rate in kHz, so the D5/2
population decays as exp(−γ_eff·t); inside the sideband-cooling limits it
enters as the angular width 2π·γ_eff.

Formulas:
- Doppler limit: n̄ = χ·max(Γ/(2ω), n̄_floor)
- γ_eff = slope·P854 (slope 31.6 kHz/µW)
- laser-limited: n̄ = (η_spont²/η₇₂₉² + 1/4)·γ_eff²/(4ω_ax²)
- trap-limited: n̄ = Γ_trap/(W_cool − Γ_trap), W_cool = (η₇₂₉Ω₀)²/γ_eff
- heating: n̄(t) = n̄₀ + Γ_trap·t
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import expm_multiply

from microtrap.atomic_model import MotionalState, thermal_cutoff
from microtrap.constants import (
    DEFAULT_DOPPLER_EXCESS,
    GAMMA_EFF_SLOPE_KHZ_PER_UW,
    P_LINEWIDTH,
    TWO_PI,
)
from microtrap.errors import DomainError, NoCoolingError

logger = logging.getLogger(__name__)

MIN_DOPPLER_DURATION_S = 1e-3


@dataclass(frozen=True)
class CoolingParams:
    """
    Sideband-cooling parameters.

    eta_729, eta_spont: Lamb-Dicke factors
    omega0: carrier Rabi frequency [rad/s]
    gamma_eff: quench-broadened D5/2 width, angular [rad/s]
    gamma_trap: trap heating rate [phonons/s]
    omega_ax: axial mode frequency [rad/s]
    """

    eta_729: float
    eta_spont: float
    omega0: float
    gamma_eff: float
    gamma_trap: float
    omega_ax: float

    def __post_init__(self):
        for name in ("eta_729", "eta_spont", "omega0", "gamma_eff", "gamma_trap", "omega_ax"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")

    @property
    def incoherent(self) -> bool:
        """Sideband excitation is incoherent when η₇₂₉Ω₀ ≤ γ_eff."""
        return self.eta_729 * self.omega0 <= self.gamma_eff

    @property
    def cooling_rate(self) -> float:
        """Per-phonon cooling rate (η₇₂₉Ω₀)²/γ_eff [1/s]."""
        if self.gamma_eff <= 0:
            return 0.0
        return (self.eta_729 * self.omega0) ** 2 / self.gamma_eff


def doppler_limit(
    omega: float,
    linewidth: float = P_LINEWIDTH,
    excess: float = DEFAULT_DOPPLER_EXCESS,
    floor: float = 0.0,
) -> float:
    """Mean phonon number after Doppler cooling, χ·max(Γ/(2ω), floor)."""
    if not omega > 0:
        raise DomainError("Mode frequency must be > 0")
    if excess < 1.0:
        raise DomainError("Doppler excess factor must be >= 1")
    return excess * max(linewidth / (2.0 * omega), floor)


def doppler_cool(
    omega: float,
    duration_s: float = MIN_DOPPLER_DURATION_S,
    linewidth: float = P_LINEWIDTH,
    excess: float = DEFAULT_DOPPLER_EXCESS,
    floor: float = 0.0,
) -> MotionalState:
    """Quasi-steady-state thermal state after Doppler cooling (duration ≥ 1 ms)."""
    if duration_s < MIN_DOPPLER_DURATION_S:
        raise DomainError(
            f"Doppler cooling needs >= {MIN_DOPPLER_DURATION_S * 1e3:g} ms, got {duration_s * 1e3:g} ms"
        )
    return MotionalState.thermal(doppler_limit(omega, linewidth, excess, floor), omega)


def gamma_eff(p854_uW: float, slope_kHz_per_uW: float = GAMMA_EFF_SLOPE_KHZ_PER_UW) -> float:
    """Effective D5/2 width [kHz] for a given 854 nm quench power [µW]."""
    if p854_uW < 0:
        raise DomainError("854 nm power must be >= 0")
    return slope_kHz_per_uW * p854_uW


def quench_decay(t_s, gamma_eff_kHz: float):
    """Remaining D5/2 population exp(−γ_eff·t)."""
    t = np.asarray(t_s, dtype=float)
    if np.any(t < 0):
        raise DomainError("Time must be >= 0")
    return np.exp(-gamma_eff_kHz * 1e3 * t)


def angular_gamma(gamma_eff_kHz: float) -> float:
    """Quench width as an angular frequency [rad/s]."""
    return TWO_PI * gamma_eff_kHz * 1e3


def sideband_cool_limit_laser(params: CoolingParams) -> float:
    """Laser-limited steady-state n̄ (off-resonant excitation and recoil, no trap heating)."""
    if not params.gamma_eff > 0 or not params.omega_ax > 0 or not params.eta_729 > 0:
        raise DomainError("gamma_eff, omega_ax and eta_729 must be > 0")
    prefactor = params.eta_spont**2 / params.eta_729**2 + 0.25
    return prefactor * params.gamma_eff**2 / (4.0 * params.omega_ax**2)


def sideband_cool_limit_trap(params: CoolingParams) -> Tuple[float, float]:
    """
    Heating-limited steady-state n̄ and net cooling rate W.

    Returns:
        (n̄ = Γ_trap/W, W = (η₇₂₉Ω₀)²/γ_eff − Γ_trap [1/s])

    Raises:
        NoCoolingError: W ≤ 0
    """
    if not params.gamma_eff > 0:
        raise DomainError("gamma_eff must be > 0")
    w = params.cooling_rate - params.gamma_trap
    if w <= 0:
        raise NoCoolingError(
            f"Net cooling rate W = {w:.4g} 1/s is not positive (heating {params.gamma_trap:.4g} 1/s)"
        )
    return params.gamma_trap / w, w


def heating_evolution(nbar0: float, t_s, gamma_trap: float):
    """Linear heating n̄(t) = n̄₀ + Γ_trap·t."""
    t = np.asarray(t_s, dtype=float)
    if np.any(t < 0):
        raise DomainError("Time must be >= 0")
    return nbar0 + gamma_trap * t


def birth_death_generator(n_max: int, up: float, down: float):
    """
    Sparse generator G with dp/dt = G·p for phonon jumps
    n → n+1 at rate up·(n+1) and n → n−1 at rate down·n, reflecting at n_max.
    """
    n = np.arange(n_max + 1, dtype=float)
    rise = up * (n + 1.0)
    rise[-1] = 0.0
    fall = down * n
    return diags(
        [-(rise + fall), rise[:-1], fall[1:]],
        [0, -1, 1],
        shape=(n_max + 1, n_max + 1),
        format="csr",
    )


def evolve_rates(
    state: MotionalState,
    duration_s: float,
    up: float,
    down: float,
    n_max: int = None,
) -> MotionalState:
    """Propagate a phonon distribution through a linear birth-death process."""
    if duration_s < 0:
        raise DomainError("Duration must be >= 0")
    if n_max is None:
        n_now, _ = state.populations()
        target = up / (down - up) if down > up else state.mean + up * duration_s
        n_max = max(int(n_now[-1]) + 20, thermal_cutoff(max(target, state.mean)) + 20, 40)
    p0 = state.dense(n_max)
    if duration_s == 0 or (up == 0 and down == 0):
        return MotionalState.from_populations(p0, state.omega)
    p = expm_multiply(birth_death_generator(n_max, up, down) * duration_s, p0)
    return MotionalState.from_populations(p, state.omega)


def sideband_cool(
    state: MotionalState,
    duration_s: float,
    params: CoolingParams,
    laser_heating: bool = False,
) -> MotionalState:
    """
    Incoherent sideband cooling as a phonon rate process.

    Cooling removes phonons at R·n with R = cooling_rate and trap heating adds
    Γ_trap·(n+1) with no matching removal term, so dn̄/dt = Γ_trap − (R − Γ_trap)·n̄
    and the steady state is Γ_trap/(R − Γ_trap). With laser_heating the
    off-resonant excitation and recoil add R·n̄_L to both rates, giving
    (Γ_trap + R·n̄_L)/(R − Γ_trap).
    """
    r = params.cooling_rate
    extra = 0.0
    if laser_heating and r > 0:
        extra = r * sideband_cool_limit_laser(params)
    up = params.gamma_trap + extra
    down = r + extra
    if r > 0 and not params.incoherent:
        logger.debug("Sideband cooling outside the incoherent regime (η₇₂₉Ω₀ > γ_eff)")
    return evolve_rates(state, duration_s, up, down)


def heat(state: MotionalState, duration_s: float, gamma_trap: float) -> MotionalState:
    """Trap heating during a wait: n̄ grows by Γ_trap·t."""
    return evolve_rates(state, duration_s, gamma_trap, gamma_trap)
