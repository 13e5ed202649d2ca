#!/usr/bin/env python3
"""
Field report: solved trap constants checked against reference values.

The measurement chain per zone:
    RF basis → quadrupole c₂ → q = 2ZeUc₂/(mΩ²) → ω = Ωq/(2√2) (+ Floquet)
    RF basis → pseudopotential cross-section → trap depth
    DC pair at −5 V → axial curve → ω_ax and well width at half depth

Tolerance profiles scale every reference tolerance:
    reference ×1, strict ×0.5, loose ×2
"""
import glob
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from microtrap.atomic_model import BeamGeometry, lamb_dicke
from microtrap.constants import WAVELENGTHS_NM, angular_to_mhz, mhz_to_angular
from microtrap.errors import ConfigError, MicrotrapError
from microtrap.field_cache import FieldCache
from microtrap.field_solver import (
    AxialCurve,
    PotentialField,
    axial_frequency,
    conductor_masks,
    dc_window_fields,
    quadrupole_c2,
    solve_basis,
    well_half_width,
    zone_window,
)
from microtrap.geometry import TrapGeometry, segment_at
from microtrap.records import read_frame, read_json, read_metadata, read_waveform
from microtrap.rf_dynamics import (
    IonSpecies,
    RfDrive,
    contour_table,
    pseudopotential,
    secular_frequency,
    stability_q,
)
from microtrap.waveform_synth import BasisCurves

logger = logging.getLogger(__name__)

TOLERANCE_PROFILES = {"reference": 1.0, "strict": 0.5, "loose": 2.0}
DEFAULT_PROFILE = "reference"

PROBE_VOLTAGE_V = -5.0
LAMB_DICKE_REFERENCE_MHZ = 1.1
CONTOUR_LEVELS_EV = (0.125, 0.25, 0.375, 0.5, 0.625, 0.75)


@dataclass(frozen=True)
class Reference:
    value: float
    tolerance: float
    relative: bool = True
    unit: str = ""


REFERENCES: Dict[str, Reference] = {
    "c2_storage_per_m2": Reference(0.52e7, 0.20, unit="m^-2"),
    "c2_processing_per_m2": Reference(1.99e7, 0.20, unit="m^-2"),
    "q_storage": Reference(0.14, 0.02, relative=False),
    "q_processing": Reference(0.55, 0.06, relative=False),
    "omega_rad_storage_MHz": Reference(1.26, 0.05, unit="MHz"),
    "floquet_deviation_storage": Reference(0.0, 0.02, relative=False),
    "trap_depth_storage_eV": Reference(0.755, 0.15, unit="eV"),
    "omega_ax_storage_MHz": Reference(1.20, 0.10, unit="MHz"),
    "half_width_storage_um": Reference(500.0, 0.15, unit="um"),
    "half_width_processing_um": Reference(264.0, 0.15, unit="um"),
    "eta_729": Reference(0.065, 0.001, relative=False),
    "eta_spont": Reference(0.17, 0.01, relative=False),
    "c2_storage_refinement": Reference(0.0, 0.10, relative=False),
}


def profile_scale(profile: str) -> float:
    try:
        return TOLERANCE_PROFILES[profile]
    except KeyError:
        raise ConfigError(
            f"Unknown tolerance profile {profile!r}; choose from {sorted(TOLERANCE_PROFILES)}"
        )


def check_entry(name: str, measured: float, profile: str = DEFAULT_PROFILE) -> Dict:
    """One report row: measured value, reference, allowed deviation and pass/fail."""
    ref = REFERENCES[name]
    allowed = ref.tolerance * profile_scale(profile)
    deviation = measured - ref.value
    if ref.relative:
        deviation = deviation / ref.value
    ok = bool(np.isfinite(measured) and abs(deviation) <= allowed)
    return {
        "name": name,
        "measured": float(measured),
        "reference": ref.value,
        "unit": ref.unit,
        "deviation": float(deviation),
        "allowed": allowed,
        "relative": ref.relative,
        "pass": ok,
    }


def build_field_report(
    measured: Dict[str, float], profile: str = DEFAULT_PROFILE, extra: Optional[Dict] = None
) -> Dict:
    """
    Report document: every measured quantity with a reference is checked, the
    rest are listed as values only.
    """
    profile_scale(profile)
    checks = [check_entry(k, v, profile) for k, v in measured.items() if k in REFERENCES]
    values = {k: float(v) for k, v in measured.items() if k not in REFERENCES}
    report = {
        "profile": profile,
        "checks": checks,
        "values": values,
        "passed": sum(c["pass"] for c in checks),
        "failed": sum(not c["pass"] for c in checks),
    }
    if extra:
        report.update(extra)
    return report


def lamb_dicke_values(
    beam: BeamGeometry, ion: IonSpecies, axial_MHz: float = LAMB_DICKE_REFERENCE_MHZ
) -> Dict[str, float]:
    """η of the 729 nm beam and of the 393 nm recoil at the reference axial frequency."""
    omega = mhz_to_angular(axial_MHz)
    recoil = BeamGeometry(WAVELENGTHS_NM["S1/2-P3/2"], role="quench")
    return {
        "eta_729": lamb_dicke(beam, ion.mass_kg, omega),
        "eta_spont": lamb_dicke(recoil, ion.mass_kg, omega, projected=False),
    }


@dataclass
class FieldMeasurement:
    values: Dict[str, float] = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    rf_fields: Dict[str, PotentialField] = field(default_factory=dict)
    dc_fields: Dict[str, PotentialField] = field(default_factory=dict)


def measure_rf_zone(
    geometry: TrapGeometry,
    zone: str,
    drive: RfDrive,
    ion: IonSpecies,
    spacing_um: float,
    margin_factor: float = 2.0,
    half_length_um: Optional[float] = None,
    tolerance: float = 1e-6,
    max_iterations: int = 20000,
    levels: int = 2,
    cache: Optional[FieldCache] = None,
    with_pseudopotential: bool = True,
):
    """
    Solve the RF basis around one zone and derive c₂, q, ω_rad and the trap depth.

    Returns:
        (values dict, RF basis field, pseudopotential map or None)
    """
    grid = zone_window(geometry, zone, spacing_um, margin_factor, half_length_um)
    rf = solve_basis(geometry, grid, "RF", tolerance, max_iterations, levels, cache)
    xc = geometry.zone_center(zone)
    fit = quadrupole_c2(rf, (xc, 0.0, 0.0), slit_um=geometry.slit_at(xc))
    q = stability_q(fit.c2, drive, ion)
    sec = secular_frequency(q, drive)
    values = {
        f"c2_{zone}_per_m2": fit.c2,
        f"q_{zone}": q,
        f"omega_rad_{zone}_MHz": angular_to_mhz(sec.lowest_order),
        f"omega_rad_floquet_{zone}_MHz": angular_to_mhz(sec.floquet),
        f"floquet_deviation_{zone}": sec.relative_correction,
        f"rf_null_y_{zone}_um": fit.null_y_um,
        f"rf_null_z_{zone}_um": fit.null_z_um,
    }
    pmap = None
    if with_pseudopotential:
        masks = conductor_masks(geometry, grid)
        mask = np.logical_or.reduce(list(masks.values())) if masks else None
        pmap = pseudopotential(rf, drive, ion, x_um=xc, conductor_mask=mask)
        values[f"trap_depth_{zone}_eV"] = pmap.depth_eV
    return values, rf, pmap


def probe_axial_well(
    basis: BasisCurves, pair: int, ion: IonSpecies, voltage_V: float = PROBE_VOLTAGE_V
):
    """Axial curve, ω_ax and half-depth width of a single pair at voltage_V."""
    label = basis.geometry.pair_label(pair)
    curve = AxialCurve(basis.x_um, voltage_V * basis.values[pair], {label: voltage_V})
    fit = axial_frequency(curve, ion)
    return curve, fit, well_half_width(curve)


def measure_fields(
    geometry: TrapGeometry,
    drive: RfDrive,
    ion: IonSpecies,
    spacing_um: float,
    margin_factor: float = 2.0,
    half_length_um: Optional[float] = None,
    tolerance: float = 1e-6,
    max_iterations: int = 20000,
    levels: int = 2,
    field_model: str = "solved",
    cache: Optional[FieldCache] = None,
    workers: int = 1,
    refine: bool = False,
) -> FieldMeasurement:
    """
    Solve (or load) every basis field and measure the trap constants.

    With field_model "analytic" the DC basis comes from the gapless-plane
    model instead of DC solves; the RF field is always solved.
    """
    result = FieldMeasurement()
    zones = [z for z in ("storage", "processing") if z in geometry.zones]
    solver = dict(
        tolerance=tolerance, max_iterations=max_iterations, levels=levels, cache=cache
    )
    for zone in zones:
        values, rf, pmap = measure_rf_zone(
            geometry, zone, drive, ion, spacing_um, margin_factor, half_length_um, **solver
        )
        result.values.update(values)
        result.rf_fields[zone] = rf
        result.tables[f"pseudopotential_{zone}"] = pmap.to_frame()
        result.tables[f"contours_{zone}"] = contour_table(pmap, CONTOUR_LEVELS_EV)

    if refine and "storage" in zones:
        fine, _, _ = measure_rf_zone(
            geometry, "storage", drive, ion, spacing_um / 2.0, margin_factor,
            half_length_um, with_pseudopotential=False, **solver,
        )
        coarse = result.values["c2_storage_per_m2"]
        result.values["c2_storage_refinement"] = fine["c2_storage_per_m2"] / coarse - 1.0

    # sample beyond the end segments so edge wells still rise to half depth
    lo, hi = geometry.x_extent
    pad = 2.0 * max(geometry.slits)
    x_um = np.arange(lo - pad, hi + pad + 2.5, 5.0)
    if field_model == "analytic":
        basis = BasisCurves.analytic(geometry, x_um)
    else:
        result.dc_fields = dc_window_fields(
            geometry, spacing_um, margin_factor, tolerance, max_iterations, levels, cache, workers
        )
        basis = BasisCurves.from_fields(geometry, result.dc_fields, x_um)

    for zone in zones:
        pair, _ = segment_at(geometry, geometry.zone_center(zone))
        try:
            curve, fit, width = probe_axial_well(basis, pair, ion)
        except MicrotrapError as e:
            logger.warning("No axial well for %s at %g V: %s", zone, PROBE_VOLTAGE_V, e)
            continue
        result.values[f"omega_ax_{zone}_MHz"] = angular_to_mhz(fit.omega)
        result.values[f"half_width_{zone}_um"] = width
        result.tables[f"axial_{zone}"] = curve.to_frame()
    return result


def summarize_outputs(directory: str) -> Dict:
    """Inventory of an output directory: field report verdict, records and waveforms."""
    if not os.path.isdir(directory):
        raise ConfigError(f"Output directory not found: {directory}")
    summary: Dict = {"directory": os.path.abspath(directory), "records": [], "waveforms": []}
    report_path = os.path.join(directory, "field_report.json")
    if os.path.exists(report_path):
        report = read_json(report_path)
        summary["field_report"] = {
            "profile": report.get("profile"),
            "passed": report.get("passed"),
            "failed": report.get("failed"),
            "failing": [c["name"] for c in report.get("checks", []) if not c.get("pass")],
        }
    for path in sorted(glob.glob(os.path.join(directory, "*.csv"))):
        meta = read_metadata(path)
        name = os.path.basename(path)
        if "config_hash" in meta:
            frame, _ = read_frame(path)
            summary["records"].append({"file": name, "rows": len(frame), **meta})
        elif os.path.exists(os.path.splitext(path)[0] + ".json"):
            _, side = read_waveform(path)
            feas = side.get("feasibility", {})
            summary["waveforms"].append({"file": name, **feas})
    fits: List[str] = sorted(
        os.path.basename(p) for p in glob.glob(os.path.join(directory, "*.fit.json"))
    )
    summary["fits"] = fits
    return summary
