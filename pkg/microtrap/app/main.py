#!/usr/bin/env python3
"""
FastAPI service over a microtrap results directory.

Read-only: serves the latest field report, record files and on-demand fits
of records, plus small calculators for the closed-form trap relations.
"""
import os
from typing import Dict, List, Optional

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from microtrap import __version__
from microtrap.atomic_model import BeamGeometry, lamb_dicke
from microtrap.config import configure_logging
from microtrap.constants import (
    ATOMIC_MASS,
    DEFAULT_DOPPLER_EXCESS,
    RF_AMPLITUDE_V,
    RF_FREQUENCY_MHZ,
    WAVELENGTHS_NM,
    angular_to_mhz,
    khz_to_angular,
    mhz_to_angular,
)
from microtrap.cooling import (
    CoolingParams,
    doppler_limit,
    sideband_cool_limit_laser,
    sideband_cool_limit_trap,
)
from microtrap.errors import ConfigError, FitError, MicrotrapError, NoCoolingError
from microtrap.estimators import FIT_MODELS, fit_record
from microtrap.records import read_json, read_record
from microtrap.reporting import summarize_outputs
from microtrap.rf_dynamics import IonSpecies, RfDrive, secular_frequency, stability_q

load_dotenv()
configure_logging()

# Disable docs unless explicitly enabled
DOCS_ENABLED = os.getenv("DOCS_ENABLED", "false").lower() == "true"

app = FastAPI(
    title="microtrap API",
    version=__version__,
    docs_url="/docs" if DOCS_ENABLED else None,
    redoc_url="/redoc" if DOCS_ENABLED else None,
    openapi_url="/openapi.json" if DOCS_ENABLED else None,
)

RESULTS_DIR = os.getenv("MICROTRAP_RESULTS_DIR", "results")


class RecordSummary(BaseModel):
    file: str
    rows: int
    seed: Optional[str] = None
    config_hash: Optional[str] = None
    variable: Optional[str] = None
    unit: Optional[str] = None


class RecordData(BaseModel):
    name: str
    metadata: Dict[str, str]
    rows: List[Dict]


class LambDicke(BaseModel):
    eta: float  # projected onto the mode
    eta_spont: float  # 393 nm recoil, unprojected
    axial_MHz: float


class Stability(BaseModel):
    q: float
    omega_MHz: float  # lowest order Ωq/(2√2)
    floquet_MHz: Optional[float]  # None outside the first stability region
    relative_correction: Optional[float]


class CoolingLimits(BaseModel):
    doppler_nbar: float
    laser_limited_nbar: float
    trap_limited_nbar: Optional[float]  # None when heating outruns cooling
    net_cooling_rate_per_s: float
    incoherent: bool


def _record_path(name: str) -> str:
    """Resolve a record name inside RESULTS_DIR; names never carry directories."""
    if os.path.basename(name) != name or name.startswith("."):
        raise HTTPException(status_code=400, detail="Invalid record name")
    stem = name[:-4] if name.endswith(".csv") else name
    path = os.path.join(RESULTS_DIR, f"{stem}.csv")
    if not os.path.exists(path):
        raise HTTPException(status_code=404, detail=f"Record {stem} not found")
    return path


def _finite(value: float) -> Optional[float]:
    return value if value == value else None


@app.get("/", response_class=JSONResponse)
def root():
    """Return API information with available endpoints."""
    return {
        "endpoints": [
            "/healthz",
            "/reports/fields",
            "/records",
            "/records/{name}",
            "/records/{name}/fit",
            "/calc/lamb-dicke",
            "/calc/stability",
            "/calc/cooling-limits",
        ]
    }


@app.get("/healthz")
def healthz():
    """Health check endpoint for CI."""
    return {"status": "ok", "version": __version__}


@app.get("/reports/fields")
def field_report():
    """Latest solve-fields report from the results directory."""
    path = os.path.join(RESULTS_DIR, "field_report.json")
    if not os.path.exists(path):
        raise HTTPException(status_code=404, detail="No field report available")
    try:
        return read_json(path)
    except ConfigError as e:
        raise HTTPException(status_code=500, detail=str(e))


@app.get("/records", response_model=List[RecordSummary])
def list_records():
    """Record CSVs in the results directory with their metadata."""
    if not os.path.isdir(RESULTS_DIR):
        return []
    return summarize_outputs(RESULTS_DIR)["records"]


@app.get("/records/{name}", response_model=RecordData)
def get_record(name: str):
    path = _record_path(name)
    try:
        frame, meta = read_record(path)
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return RecordData(name=name, metadata=meta, rows=frame.to_dict(orient="records"))


@app.get("/records/{name}/fit")
def fit(name: str, model: str = Query(..., description=f"One of {', '.join(FIT_MODELS)}")):
    """Fit a record on demand; fit failures are reported as 422."""
    path = _record_path(name)
    try:
        frame, meta = read_record(path)
        return fit_record(frame, model, meta.get("variable", ""), meta.get("unit", ""))
    except (ConfigError, FitError) as e:
        raise HTTPException(status_code=422, detail=str(e))


@app.get("/calc/lamb-dicke", response_model=LambDicke)
def calc_lamb_dicke(
    axial_MHz: float = Query(1.1, gt=0),
    wavelength_nm: float = Query(729.0, gt=0),
    angle_deg: float = Query(45.0, ge=0, le=90),
    mass_amu: float = Query(40.0, gt=0),
):
    """η of a beam and of the 393 nm spontaneous-emission recoil."""
    mass = mass_amu * ATOMIC_MASS
    omega = mhz_to_angular(axial_MHz)
    beam = BeamGeometry(wavelength_nm, angle_deg)
    recoil = BeamGeometry(WAVELENGTHS_NM["S1/2-P3/2"], role="quench")
    return LambDicke(
        eta=lamb_dicke(beam, mass, omega),
        eta_spont=lamb_dicke(recoil, mass, omega, projected=False),
        axial_MHz=axial_MHz,
    )


@app.get("/calc/stability", response_model=Stability)
def calc_stability(
    c2_per_m2: float = Query(..., ge=0),
    rf_MHz: float = Query(RF_FREQUENCY_MHZ, gt=0),
    rf_amplitude_V: float = Query(RF_AMPLITUDE_V, ge=0),
    mass_amu: float = Query(40.0, gt=0),
):
    """Stability parameter and radial secular frequency for a quadrupole c₂."""
    drive = RfDrive.from_MHz(rf_MHz, rf_amplitude_V)
    q = stability_q(c2_per_m2, drive, IonSpecies(mass_amu))
    sec = secular_frequency(q, drive)
    floquet = _finite(angular_to_mhz(sec.floquet))
    return Stability(
        q=q,
        omega_MHz=angular_to_mhz(sec.lowest_order),
        floquet_MHz=floquet,
        relative_correction=None if floquet is None else sec.relative_correction,
    )


@app.get("/calc/cooling-limits", response_model=CoolingLimits)
def calc_cooling_limits(
    axial_MHz: float = Query(1.1, gt=0),
    gamma_eff_kHz: float = Query(90.0, gt=0),
    omega0_kHz: float = Query(200.0, ge=0),
    heating_rate_per_ms: float = Query(0.0, ge=0),
    eta_729: float = Query(0.065, gt=0),
    eta_spont: float = Query(0.17, ge=0),
    doppler_excess: float = Query(DEFAULT_DOPPLER_EXCESS, ge=1),
):
    """Doppler, laser-limited and heating-limited mean phonon numbers."""
    omega = mhz_to_angular(axial_MHz)
    params = CoolingParams(
        eta_729=eta_729,
        eta_spont=eta_spont,
        omega0=khz_to_angular(omega0_kHz),
        gamma_eff=khz_to_angular(gamma_eff_kHz),
        gamma_trap=heating_rate_per_ms * 1e3,
        omega_ax=omega,
    )
    try:
        trap_nbar, rate = sideband_cool_limit_trap(params)
    except NoCoolingError:
        trap_nbar, rate = None, params.cooling_rate - params.gamma_trap
    try:
        return CoolingLimits(
            doppler_nbar=doppler_limit(omega, excess=doppler_excess),
            laser_limited_nbar=sideband_cool_limit_laser(params),
            trap_limited_nbar=trap_nbar,
            net_cooling_rate_per_s=rate,
            incoherent=params.incoherent,
        )
    except MicrotrapError as e:
        raise HTTPException(status_code=422, detail=str(e))
