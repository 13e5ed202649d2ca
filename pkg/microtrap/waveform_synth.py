#!/usr/bin/env python3
"""
DC voltage synthesis: static wells, micromotion compensation and shuttling.

Static well: bounded least squares of the segment-pair axial basis curves
against φ_t(x) = ½·κ·(x − x₀)² + c over ± half a segment width around x₀,
κ = m·ω_ax²/(Z·e), with a free offset c and a ridge term on the voltages
weighted 1e-6 relative to |φ_t|²/bound². Only pairs within ±3 segments of the
well are active. The largest reachable κ at x₀ is found by linear
programming and reported when a target exceeds it.

Compensation: a differential ±V/2 on a pair adds the field −V·g with
g = (∇φ_top − ∇φ_bottom)/2; V* = g·E/(g·g) cancels the stray field E along g.

Shuttling: the well centre follows a smootherstep profile
s(τ) = 6τ⁵ − 15τ⁴ + 10τ³ between segment centres. The active pairs are fixed
for the whole path and each sample carries a weak pull towards the previous
one, so the voltages change continuously; consecutive samples may differ by
at most the slew limit (1 V unless configured).
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linprog, lsq_linear

from microtrap.analytic_field import axial_pair_basis, electrode_gradient
from microtrap.constants import DC_VOLTAGE_LIMIT_V, ELEMENTARY_CHARGE, UM, angular_to_mhz
from microtrap.errors import DomainError, InfeasibleError, NoConfinementError
from microtrap.field_solver import AxialCurve, PotentialField, axial_frequency
from microtrap.geometry import TrapGeometry, segment_at
from microtrap.rf_dynamics import IonSpecies, RfDrive, beta_from_field, micromotion_ratio

logger = logging.getLogger(__name__)

RIDGE = 1e-6
ACTIVE_PAIRS = 3
WINDOW_SAMPLES = 41
DRIFT_TOLERANCE = 0.10
SLEW_LIMIT_V = 1.0
CONTINUITY = 1e-4


@dataclass(frozen=True, eq=False)
class VoltageSet:
    """
    Per-pair DC voltages [V] with an optional top/bottom differential.

    The top electrode of pair i sees voltages[i] + differential[i]/2, the
    bottom one voltages[i] − differential[i]/2.
    """

    labels: Tuple[str, ...]
    voltages: np.ndarray
    differential: Optional[np.ndarray] = None
    bound_V: float = DC_VOLTAGE_LIMIT_V
    omega: float = 0.0
    position_um: float = 0.0
    residual: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=float)
        object.__setattr__(self, "voltages", v)
        if len(v) != len(self.labels):
            raise DomainError("One voltage per pair label is required")
        d = np.zeros_like(v) if self.differential is None else np.asarray(self.differential, float)
        object.__setattr__(self, "differential", d)
        if np.any(np.abs(v) + np.abs(d) / 2.0 > self.bound_V + 1e-9):
            raise DomainError(f"Electrode voltage outside ±{self.bound_V} V")

    def electrode_voltages(self) -> Dict[str, float]:
        out = {}
        for label, v, d in zip(self.labels, self.voltages, self.differential):
            out[f"{label}T"] = float(v + d / 2.0)
            out[f"{label}B"] = float(v - d / 2.0)
        return out

    def to_dict(self) -> Dict:
        return {
            "position_um": self.position_um,
            "omega_ax_MHz": angular_to_mhz(self.omega),
            "residual_V": self.residual,
            "voltages_V": dict(zip(self.labels, self.voltages.tolist())),
        }


@dataclass(frozen=True, eq=False)
class BasisCurves:
    """On-axis potential per volt of every DC pair, shape (n_pairs, n_x)."""

    geometry: TrapGeometry
    x_um: np.ndarray
    values: np.ndarray
    source: str = "solved"

    def __post_init__(self):
        if self.values.shape != (self.geometry.n_pairs, len(self.x_um)):
            raise DomainError("Basis values must have shape (n_pairs, n_x)")

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(self.geometry.pair_label(i) for i in range(self.geometry.n_pairs))

    @classmethod
    def analytic(cls, geometry: TrapGeometry, x_um: Optional[Sequence[float]] = None, step_um: float = 5.0):
        if x_um is None:
            lo, hi = geometry.x_extent
            x_um = np.arange(lo, hi + step_um / 2.0, step_um)
        x = np.asarray(x_um, dtype=float)
        return cls(geometry, x, axial_pair_basis(geometry, x), source="analytic")

    @classmethod
    def from_fields(
        cls, geometry: TrapGeometry, fields: Mapping[str, PotentialField], x_um: Sequence[float]
    ):
        """Sample solved electrode fields on the axis; a field is zero outside its window."""
        x = np.asarray(x_um, dtype=float)
        pts = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])
        values = np.zeros((geometry.n_pairs, len(x)))
        for i in range(geometry.n_pairs):
            for electrode in geometry.dc_pair(i):
                f = fields[electrode.label]
                inside = f.contains(pts)
                if inside.any():
                    values[i, inside] += f.value_at(pts[inside])
        return cls(geometry, x, values, source="solved")

    def local(self, x_um: np.ndarray, pairs: Sequence[int]) -> np.ndarray:
        """Basis of the given pairs interpolated at x_um, shape (len(pairs), len(x_um))."""
        lo, hi = self.x_um[0], self.x_um[-1]
        if np.min(x_um) < lo - 1e-9 or np.max(x_um) > hi + 1e-9:
            raise DomainError(f"Window [{np.min(x_um)}, {np.max(x_um)}] µm outside basis range")
        return np.vstack([np.interp(x_um, self.x_um, self.values[i]) for i in pairs])

    def potential(self, voltages: np.ndarray) -> np.ndarray:
        return np.asarray(voltages) @ self.values


def target_curvature(omega: float, ion: IonSpecies) -> float:
    """κ [V/m²] of a harmonic well with angular frequency omega."""
    return ion.mass_kg * omega**2 / (ion.charge * ELEMENTARY_CHARGE)


def curvature_to_omega(kappa: float, ion: IonSpecies) -> float:
    return float(np.sqrt(max(kappa, 0.0) * ion.charge * ELEMENTARY_CHARGE / ion.mass_kg))


def _window(
    basis: BasisCurves,
    position_um: float,
    active: int,
    pairs: Optional[Sequence[int]] = None,
    half_width_um: Optional[float] = None,
):
    geometry = basis.geometry
    if pairs is None or half_width_um is None:
        index, _ = segment_at(geometry, position_um)
        if half_width_um is None:
            half_width_um = geometry.widths[index] / 2.0
        if pairs is None:
            pairs = range(max(0, index - active), min(geometry.n_pairs, index + active + 1))
    lo = max(position_um - half_width_um, basis.x_um[0])
    hi = min(position_um + half_width_um, basis.x_um[-1])
    xs = np.linspace(lo, hi, WINDOW_SAMPLES)
    return xs, list(pairs)


def max_axial_frequency(
    basis: BasisCurves,
    position_um: float,
    ion: IonSpecies,
    bound_V: float = DC_VOLTAGE_LIMIT_V,
    active: int = ACTIVE_PAIRS,
    pairs: Optional[Sequence[int]] = None,
    half_width_um: Optional[float] = None,
) -> float:
    """
    Largest ω_ax [rad/s] of a well centred at position_um within the bounds.

    Maximises Σ vᵢ·κᵢ subject to Σ vᵢ·∂ₓφᵢ = 0 at x₀ and |vᵢ| ≤ bound, with
    κᵢ and ∂ₓφᵢ from local quadratic fits of the basis curves.
    """
    xs, pairs = _window(basis, position_um, active, pairs, half_width_um)
    local = basis.local(xs, pairs)
    c2, c1, _ = np.polyfit((xs - position_um) * UM, local.T, 2)
    res = linprog(
        -2.0 * c2,
        A_eq=c1[None, :],
        b_eq=[0.0],
        bounds=[(-bound_V, bound_V)] * len(pairs),
        method="highs",
    )
    if not res.success:
        return 0.0
    return curvature_to_omega(-res.fun, ion)


def solve_voltages(
    basis: BasisCurves,
    position_um: float,
    omega_target: float,
    ion: IonSpecies = IonSpecies(),
    bound_V: float = DC_VOLTAGE_LIMIT_V,
    active: int = ACTIVE_PAIRS,
    ridge: float = RIDGE,
    pairs: Optional[Sequence[int]] = None,
    half_width_um: Optional[float] = None,
    previous: Optional[np.ndarray] = None,
    continuity: float = 0.0,
) -> VoltageSet:
    """
    Synthesize a harmonic axial well.

    Args:
        basis: Axial basis curves of all pairs
        position_um: Well centre [µm]
        omega_target: Axial angular frequency [rad/s]; 0 gives a flat target
        ion: Trapped species
        bound_V: DC voltage limit
        active: Number of neighbouring pairs on each side that may be used
        ridge: Relative ridge weight on the voltages
        pairs: Explicit active pairs (overrides active)
        half_width_um: Fit window half-width (default half the local segment width)
        previous: Voltages of the preceding sample, all pairs
        continuity: Relative weight of ‖v − previous‖² on the active pairs

    Returns:
        VoltageSet with the achieved ω_ax (refit on the synthesized curve) and rms residual [V]

    Raises:
        InfeasibleError: target above the largest reachable ω_ax (carried on the error)
    """
    n = basis.geometry.n_pairs
    labels = basis.labels
    if omega_target < 0:
        raise DomainError("Target frequency must be >= 0")
    if omega_target == 0:
        return VoltageSet(labels, np.zeros(n), bound_V=bound_V, position_um=position_um)

    w_max = max_axial_frequency(basis, position_um, ion, bound_V, active, pairs, half_width_um)
    if omega_target > w_max:
        msg = (
            f"ω_ax = 2π·{angular_to_mhz(omega_target):.3f} MHz unreachable at x = {position_um:.1f} µm; "
            f"max 2π·{angular_to_mhz(w_max):.3f} MHz at ±{bound_V:g} V"
        )
        logger.error(msg)
        raise InfeasibleError(msg, max_omega=w_max, position_um=position_um)

    xs, pairs = _window(basis, position_um, active, pairs, half_width_um)
    local = basis.local(xs, pairs)
    kappa = target_curvature(omega_target, ion)
    target = 0.5 * kappa * ((xs - position_um) * UM) ** 2

    k = len(pairs)
    scale = np.linalg.norm(target) / bound_V
    a = np.column_stack([local.T, np.ones(len(xs))])
    rows = [a, np.hstack([np.sqrt(ridge) * scale * np.eye(k), np.zeros((k, 1))])]
    rhs = [target, np.zeros(k)]
    if previous is not None and continuity > 0:
        mu = np.sqrt(continuity) * scale
        rows.append(np.hstack([mu * np.eye(k), np.zeros((k, 1))]))
        rhs.append(mu * np.asarray(previous, dtype=float)[pairs])
    lower = np.r_[np.full(k, -bound_V), -np.inf]
    upper = np.r_[np.full(k, bound_V), np.inf]
    sol = lsq_linear(
        np.vstack(rows),
        np.concatenate(rhs),
        bounds=(lower, upper),
        method="bvls",
    )
    v = np.zeros(n)
    v[pairs] = np.clip(sol.x[:-1], -bound_V, bound_V)
    fit_residual = float(np.sqrt(np.mean((a @ np.r_[v[pairs], sol.x[-1]] - target) ** 2)))

    curve = AxialCurve(xs, v[pairs] @ local)
    try:
        achieved = axial_frequency(curve, ion, window_um=xs[-1] - xs[0]).omega
    except NoConfinementError:
        achieved = 0.0
    return VoltageSet(
        labels,
        v,
        bound_V=bound_V,
        omega=achieved,
        position_um=position_um,
        residual=fit_residual,
    )


# ---------------------------------------------------------------------------
# Micromotion compensation
# ---------------------------------------------------------------------------


def differential_gradient(
    geometry: TrapGeometry,
    pair: int,
    point_um: Sequence[float],
    fields: Optional[Mapping[str, PotentialField]] = None,
) -> np.ndarray:
    """g = (∇φ_top − ∇φ_bottom)/2 at a point [V/m per V of differential]."""
    top, bottom = geometry.dc_pair(pair)
    if fields is None:
        g_top = electrode_gradient(geometry, top.label, point_um)
        g_bottom = electrode_gradient(geometry, bottom.label, point_um)
    else:
        g_top = fields[top.label].gradient_at(point_um)
        g_bottom = fields[bottom.label].gradient_at(point_um)
    return 0.5 * (np.asarray(g_top) - np.asarray(g_bottom))


@dataclass(frozen=True)
class Compensation:
    voltage_V: float  # differential voltage
    residual_field_V_per_m: Tuple[float, float]
    beta: float  # residual modulation index


def _radial(vec: Sequence[float]) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    if v.shape == (3,):
        return v[1:]
    if v.shape == (2,):
        return v
    raise DomainError("Field vectors must have 2 (y, z) or 3 (x, y, z) components")


def compensation_voltage(
    stray_field: Sequence[float],
    gradient: Sequence[float],
    c2: float,
    drive: RfDrive,
    ion: IonSpecies = IonSpecies(),
    wavelength_nm: float = 729.0,
    bound_V: float = DC_VOLTAGE_LIMIT_V,
) -> Compensation:
    """
    Differential voltage that pushes the ion back to the RF null.

    Args:
        stray_field: Static field at the null [V/m], (y, z) or (x, y, z)
        gradient: Differential gradient g from differential_gradient
        c2: RF quadrupole coefficient [m⁻² per V]
        drive: RF drive
        wavelength_nm: Probe wavelength for the residual β

    Raises:
        InfeasibleError: |V*|/2 beyond the electrode bound
    """
    e = _radial(stray_field)
    g = _radial(gradient)
    gg = float(g @ g)
    if gg == 0:
        raise InfeasibleError("Compensation pair has no radial field at the ion")
    v = float(g @ e) / gg
    if abs(v) / 2.0 > bound_V:
        raise InfeasibleError(
            f"Compensation needs ±{abs(v) / 2.0:.2f} V, beyond ±{bound_V:g} V"
        )
    residual = e - v * g
    beta = beta_from_field(residual, c2, drive, ion, wavelength_nm) if np.any(residual) else 0.0
    return Compensation(v, (float(residual[0]), float(residual[1])), float(beta))


def compensation_scan(
    stray_field: Sequence[float],
    gradient: Sequence[float],
    voltages_V: Sequence[float],
    c2: float,
    drive: RfDrive,
    ion: IonSpecies = IonSpecies(),
    wavelength_nm: float = 729.0,
) -> pd.DataFrame:
    """Micromotion excitation ratio (J₁/J₀)² versus differential voltage."""
    e = _radial(stray_field)
    g = _radial(gradient)
    rows = []
    for v in voltages_V:
        residual = e - v * g
        beta = beta_from_field(residual, c2, drive, ion, wavelength_nm)
        _, ratio = micromotion_ratio(beta)
        rows.append((float(v), beta, ratio))
    return pd.DataFrame(rows, columns=["voltage_V", "beta", "excitation_ratio"])


# ---------------------------------------------------------------------------
# Shuttling
# ---------------------------------------------------------------------------


def smootherstep(tau: np.ndarray) -> np.ndarray:
    t = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


@dataclass(frozen=True, eq=False)
class Waveform:
    """Time-sampled voltage sets; one row per sample, one column per pair."""

    times_us: np.ndarray
    labels: Tuple[str, ...]
    voltages: np.ndarray
    positions_um: np.ndarray
    omegas: np.ndarray
    metadata: Dict = field(default_factory=dict)
    bound_V: float = DC_VOLTAGE_LIMIT_V

    def __post_init__(self):
        if len(self.times_us) > 1 and np.any(np.diff(self.times_us) <= 0):
            raise DomainError("Waveform sample times must be strictly increasing")
        if np.any(np.abs(self.voltages) > self.bound_V + 1e-9):
            raise DomainError(f"Waveform voltage outside ±{self.bound_V} V")

    @property
    def max_step_V(self) -> float:
        if len(self.voltages) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.voltages, axis=0))))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.voltages, columns=list(self.labels))
        frame.insert(0, "t_us", self.times_us)
        return frame

    def report(self, omega_target: float) -> Dict:
        drift = self.omegas / omega_target - 1.0 if omega_target > 0 else np.zeros_like(self.omegas)
        return {
            "samples": len(self.times_us),
            "max_step_V": self.max_step_V,
            "max_abs_V": float(np.max(np.abs(self.voltages))),
            "omega_ax_MHz_min": angular_to_mhz(float(np.min(self.omegas))),
            "omega_ax_MHz_max": angular_to_mhz(float(np.max(self.omegas))),
            "max_drift": float(np.max(np.abs(drift))),
            "feasible": True,
        }


def _sample_job(args):
    basis, x, omega, ion, bound, pairs, half, previous, continuity = args
    try:
        return solve_voltages(
            basis,
            x,
            omega,
            ion,
            bound,
            pairs=pairs,
            half_width_um=half,
            previous=previous,
            continuity=continuity,
        )
    except InfeasibleError as e:
        raise InfeasibleError(
            f"Sample at x = {x:.1f} µm infeasible: {e}", max_omega=e.max_omega, position_um=x
        )


def transport_pairs(geometry: TrapGeometry, start_segment: int, end_segment: int, active: int) -> list:
    """Pairs active for the whole transport: the span of both end windows."""
    lo = max(0, min(start_segment, end_segment) - active)
    hi = min(geometry.n_pairs, max(start_segment, end_segment) + active + 1)
    return list(range(lo, hi))


def shuttle_waveform(
    basis: BasisCurves,
    start_segment: int,
    end_segment: int,
    duration_us: float,
    samples: int,
    omega_target: float,
    ion: IonSpecies = IonSpecies(),
    bound_V: float = DC_VOLTAGE_LIMIT_V,
    slew_limit_V: Optional[float] = SLEW_LIMIT_V,
    drift_tolerance: float = DRIFT_TOLERANCE,
    active: int = ACTIVE_PAIRS,
    workers: int = 1,
    continuity: float = CONTINUITY,
) -> Waveform:
    """
    Transport waveform between two segment centres.

    One active pair set covers the whole path and the fit window half-width
    moves linearly between the end segments, so consecutive samples solve
    nearby problems. With continuity > 0 each sample is pulled towards the
    previous one and samples are solved in order; continuity = 0 solves them
    independently (in a process pool when workers > 1). slew_limit_V = None
    disables the step check.

    Raises:
        InfeasibleError: a sample cannot be synthesized, its ω_ax leaves the
            ±drift_tolerance band, or a voltage step exceeds slew_limit_V
            (position of the failing sample attached)
    """
    geometry = basis.geometry
    geometry.dc_pair(start_segment)
    geometry.dc_pair(end_segment)
    if not duration_us > 0:
        raise DomainError("Transport duration must be > 0")
    if samples < 2:
        raise DomainError("A waveform needs at least 2 samples")
    times = np.linspace(0.0, duration_us, samples)
    x0 = float(geometry.centers[start_segment])
    x1 = float(geometry.centers[end_segment])

    if start_segment == end_segment:
        static = solve_voltages(basis, x0, omega_target, ion, bound_V, active)
        volts = np.tile(static.voltages, (samples, 1))
        positions = np.full(samples, x0)
        omegas = np.full(samples, static.omega)
    else:
        s = smootherstep(times / duration_us)
        positions = x0 + (x1 - x0) * s
        h0 = geometry.widths[start_segment] / 2.0
        h1 = geometry.widths[end_segment] / 2.0
        halves = h0 + (h1 - h0) * s
        pairs = transport_pairs(geometry, start_segment, end_segment, active)
        if continuity > 0:
            sets, previous = [], None
            for x, half in zip(positions, halves):
                vs = _sample_job(
                    (basis, float(x), omega_target, ion, bound_V, pairs, float(half), previous, continuity)
                )
                sets.append(vs)
                previous = vs.voltages
        else:
            jobs = [
                (basis, float(x), omega_target, ion, bound_V, pairs, float(half), None, 0.0)
                for x, half in zip(positions, halves)
            ]
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    sets = list(pool.map(_sample_job, jobs))
            else:
                sets = [_sample_job(j) for j in jobs]
        volts = np.vstack([v.voltages for v in sets])
        omegas = np.array([v.omega for v in sets])

    if omega_target > 0:
        drift = np.abs(omegas / omega_target - 1.0)
        worst = int(np.argmax(drift))
        if drift[worst] > drift_tolerance:
            raise InfeasibleError(
                f"ω_ax drifts by {drift[worst]:.1%} at x = {positions[worst]:.1f} µm "
                f"(tolerance {drift_tolerance:.0%})",
                position_um=float(positions[worst]),
            )
    if slew_limit_V is not None and samples > 1:
        steps = np.max(np.abs(np.diff(volts, axis=0)), axis=1)
        worst = int(np.argmax(steps))
        if steps[worst] > slew_limit_V:
            raise InfeasibleError(
                f"Voltage step {steps[worst]:.3f} V exceeds slew limit {slew_limit_V:g} V "
                f"at x = {positions[worst + 1]:.1f} µm",
                position_um=float(positions[worst + 1]),
            )

    metadata = {
        "start_segment": geometry.pair_label(start_segment),
        "end_segment": geometry.pair_label(end_segment),
        "start_um": x0,
        "end_um": x1,
        "duration_us": duration_us,
        "omega_ax_target_MHz": angular_to_mhz(omega_target),
        "basis": basis.source,
    }
    logger.info(
        "Waveform %s -> %s: %d samples over %g µs",
        metadata["start_segment"],
        metadata["end_segment"],
        samples,
        duration_us,
    )
    return Waveform(times, basis.labels, volts, positions, omegas, metadata, bound_V)


def waveform_sidecar(waveform: Waveform, omega_target: float, extra: Optional[Dict] = None) -> Dict:
    doc = {"metadata": dict(waveform.metadata), "feasibility": waveform.report(omega_target)}
    if extra:
        doc.update(extra)
    return doc
