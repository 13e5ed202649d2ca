#!/usr/bin/env python3
"""
Estimators and fits turning records into trap and cooling figures of merit.

- projection noise: √(p(1−p)/N)
- sideband asymmetry: A = P_red/P_blue, n̄ = A/(1−A)
- exponential a·exp(−γt), line a·x + b, Lorentzian with offset
- spectrum: peak finding, per-peak Lorentzian fits, carrier by mirror
  symmetry, (ω_ax, ω_rad) assigned from the offset pattern
  {ω_ax, ω_rad, 2ω_ax, ω_rad − ω_ax}

Nonlinear fits use Levenberg-Marquardt (scipy least_squares) with relative
step tolerance 1e-8 and at most 200·(p+1) evaluations; errors are first order
from the Jacobian.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from microtrap.atomic_model import lorentzian, sinc2
from microtrap.errors import DomainError, FitError

logger = logging.getLogger(__name__)

XTOL = 1e-8


@dataclass
class FitResult:
    """Parameter estimates with 1σ errors; unreliable when not converged."""

    params: Dict[str, float]
    errors: Dict[str, float]
    residual_norm: float
    converged: bool = True
    optimality: float = 0.0
    message: str = ""
    extra: Dict = field(default_factory=dict)

    @property
    def reliable(self) -> bool:
        return self.converged

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def to_dict(self) -> Dict:
        out = {
            "params": dict(self.params),
            "errors": dict(self.errors),
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "reliable": self.reliable,
        }
        if self.message:
            out["message"] = self.message
        out.update(self.extra)
        return out


def projection_noise(p, n):
    """Binomial error bar √(p(1−p)/N)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(np.asarray(n) < 1):
        raise DomainError("N must be >= 1")
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise DomainError("p must lie in [0, 1]")
    out = np.sqrt(p_arr * (1.0 - p_arr) / np.asarray(n, dtype=float))
    return float(out) if out.ndim == 0 else out


def asymmetry_nbar(
    p_red: float, p_blue: float, err_red: float = 0.0, err_blue: float = 0.0
) -> Tuple[float, float]:
    """
    Mean phonon number from the red/blue sideband excitation ratio.

    Returns:
        (n̄, first-order error)

    Raises:
        FitError: P_red ≥ P_blue or P_blue ≤ 0 (no thermometric solution)
    """
    if p_blue <= 0:
        raise FitError("Blue sideband excitation must be > 0")
    if p_red < 0:
        raise FitError("Red sideband excitation must be >= 0")
    if p_red >= p_blue:
        raise FitError(
            f"P_red = {p_red:.4g} >= P_blue = {p_blue:.4g}: heating dominated, no n̄ solution"
        )
    a = p_red / p_blue
    nbar = a / (1.0 - a)
    err_a = np.hypot(err_red / p_blue, p_red * err_blue / p_blue**2)
    return float(nbar), float(err_a / (1.0 - a) ** 2)


# ---------------------------------------------------------------------------
# Generic least squares
# ---------------------------------------------------------------------------


def _as_xy(x, y, sigma, min_points: int):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be 1D arrays of equal length")
    if len(x) < min_points:
        raise FitError(f"Need at least {min_points} points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("Data contains non-finite values")
    if sigma is None:
        return x, y, None
    s = np.asarray(sigma, dtype=float)
    if s.shape != x.shape or np.any(s <= 0):
        raise FitError("sigma must be positive and match the data")
    return x, y, s


def _nonlinear_fit(
    model: Callable[[np.ndarray, np.ndarray], np.ndarray],
    names: Sequence[str],
    x: np.ndarray,
    y: np.ndarray,
    p0: Sequence[float],
    sigma: Optional[np.ndarray] = None,
) -> FitResult:
    w = 1.0 if sigma is None else 1.0 / sigma

    def residual(params):
        return (model(x, params) - y) * w

    p0 = np.asarray(p0, dtype=float)
    sol = least_squares(
        residual, p0, method="lm", xtol=XTOL, ftol=1e-12, max_nfev=200 * (len(p0) + 1)
    )
    converged = sol.status > 0
    dof = len(x) - len(p0)
    ssr = float(np.sum(sol.fun**2))
    try:
        cov = np.linalg.inv(sol.jac.T @ sol.jac)
        if sigma is None:
            cov *= ssr / dof if dof > 0 else np.inf
        errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        errors = np.full(len(p0), np.inf)
    if not converged:
        logger.warning("Fit did not converge: %s", sol.message)
    return FitResult(
        params={n: float(v) for n, v in zip(names, sol.x)},
        errors={n: float(e) for n, e in zip(names, errors)},
        residual_norm=float(np.sqrt(ssr)),
        converged=converged,
        optimality=float(sol.optimality),
        message="" if converged else str(sol.message),
    )


# ---------------------------------------------------------------------------
# Lineshape fits
# ---------------------------------------------------------------------------


def fit_exponential(t, y, sigma=None) -> FitResult:
    """
    Fit y = a·exp(−γ·t).

    Initial guess from a log-linear fit of the positive samples. γ is in
    inverse units of t.
    """
    t, y, sigma = _as_xy(t, y, sigma, 4)
    pos = y > 0
    if pos.sum() >= 2 and np.ptp(t[pos]) > 0:
        slope, intercept = np.polyfit(t[pos], np.log(y[pos]), 1)
        p0 = [np.exp(intercept), max(-slope, 0.0)]
    else:
        p0 = [float(np.max(np.abs(y))) or 1.0, 1.0 / max(np.ptp(t), 1e-12)]

    def model(tt, p):
        return p[0] * np.exp(-p[1] * tt)

    return _nonlinear_fit(model, ("amplitude", "rate"), t, y, p0, sigma)


def fit_linear(x, y, sigma=None, through_origin: bool = False) -> FitResult:
    """
    Weighted linear least squares y = slope·x (+ intercept).

    With sigma the errors are absolute; without, they are scaled by the
    residual variance. Exactly determined fits get infinite errors.

    Raises:
        FitError: all abscissae equal
    """
    x, y, sigma = _as_xy(x, y, sigma, 1 if through_origin else 2)
    if not through_origin and np.ptp(x) == 0:
        raise FitError("Degenerate abscissa: all x values are equal")
    if through_origin and np.all(x == 0):
        raise FitError("Degenerate abscissa: all x values are zero")
    design = x[:, None] if through_origin else np.column_stack([x, np.ones_like(x)])
    names = ("slope",) if through_origin else ("slope", "intercept")
    w = np.ones_like(x) if sigma is None else 1.0 / sigma
    a = design * w[:, None]
    b = y * w
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    resid = b - a @ coef
    ssr = float(resid @ resid)
    dof = len(x) - len(names)
    cov = np.linalg.inv(a.T @ a)
    if sigma is None:
        cov = cov * (ssr / dof) if dof > 0 else np.full_like(cov, np.inf)
    errors = np.sqrt(np.abs(np.diag(cov)))
    params = {n: float(v) for n, v in zip(names, coef)}
    if through_origin:
        params["intercept"] = 0.0
    errs = {n: float(e) for n, e in zip(names, errors)}
    if through_origin:
        errs["intercept"] = 0.0
    return FitResult(params, errs, residual_norm=float(np.sqrt(ssr)), converged=True)


def _lineshape(name: str):
    if name == "lorentzian":
        return lorentzian
    if name == "sinc2":
        return sinc2
    raise DomainError(f"Unknown lineshape {name!r}")


def fit_lorentzian(
    x, y, sigma=None, offset: bool = True, lineshape: str = "lorentzian"
) -> FitResult:
    """
    Fit a single peak or dip: offset + amplitude·L(x; center, fwhm).

    Initialization: the extremum furthest from the median sets center and
    amplitude; the half-height crossings around it set the width.
    """
    x, y, sigma = _as_xy(x, y, sigma, 5)
    shape = _lineshape(lineshape)
    order = np.argsort(x)
    x, y = x[order], y[order]
    if sigma is not None:
        sigma = sigma[order]
    base = float(np.median(y)) if offset else 0.0
    i = int(np.argmax(np.abs(y - base)))
    amp = float(y[i] - base)
    if amp == 0:
        raise FitError("Flat data: no peak or dip to fit")
    half = np.abs(y - base) >= abs(amp) / 2.0
    lo = i
    while lo > 0 and half[lo - 1]:
        lo -= 1
    hi = i
    while hi < len(x) - 1 and half[hi + 1]:
        hi += 1
    width = max(x[hi] - x[lo], np.min(np.diff(x)) if len(x) > 1 else 1.0)
    scale = max(float(np.ptp(x)), 1e-12)

    def model(xx, p):
        fwhm = abs(p[1]) + 1e-12 * scale
        out = shape(xx, p[0], fwhm, p[2])
        return out + p[3] if offset else out

    p0 = [x[i], width, amp] + ([base] if offset else [])
    names = ("center", "fwhm", "amplitude") + (("offset",) if offset else ())
    result = _nonlinear_fit(model, names, x, y, p0, sigma)
    result.params["fwhm"] = abs(result.params["fwhm"])
    if not offset:
        result.params["offset"] = 0.0
        result.errors["offset"] = 0.0
    return result


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------


@dataclass
class SpectrumFit:
    """Result of fit_spectrum; positions in the record's detuning unit."""

    carrier: float
    axial: float
    radial: Optional[float]
    peaks: pd.DataFrame
    assigned: Dict[str, float]
    candidates: List[Tuple[float, Optional[float], int]]

    def to_dict(self) -> Dict:
        return {
            "carrier": self.carrier,
            "axial": self.axial,
            "radial": self.radial,
            "assigned": self.assigned,
            "peaks": self.peaks.to_dict(orient="records"),
        }


def find_lines(
    x, p, err=None, min_separation: Optional[float] = None, prominence: Optional[float] = None,
    lineshape: str = "lorentzian",
) -> pd.DataFrame:
    """
    Locate and fit the resonances of a spectrum.

    Returns:
        DataFrame with columns position, position_err, fwhm, amplitude (sorted by position)
    """
    x, p, err = _as_xy(x, p, err, 5)
    order = np.argsort(x)
    x, p = x[order], p[order]
    step = float(np.median(np.diff(x)))
    if step <= 0:
        raise FitError("Spectrum abscissa must be strictly increasing")
    if min_separation is None:
        min_separation = 10.0 * step
    smooth = np.convolve(p, np.ones(3) / 3.0, mode="same")
    noise = float(np.median(err)) if err is not None else float(np.median(np.abs(np.diff(p))))
    if prominence is None:
        prominence = max(0.05, 4.0 * noise)
    distance = max(1, int(round(min_separation / step)))
    idx, _ = find_peaks(smooth, prominence=prominence, distance=distance)
    half = max(2, distance // 2)
    rows = []
    for i in idx:
        lo, hi = max(0, i - half), min(len(x), i + half + 1)
        try:
            fit = fit_lorentzian(x[lo:hi], p[lo:hi], lineshape=lineshape)
            centered = abs(fit["center"] - x[i]) <= half * step and fit.reliable
        except FitError:
            centered = False
        if centered:
            rows.append((fit["center"], fit.errors["center"], fit["fwhm"], fit["amplitude"]))
        else:
            rows.append((float(x[i]), step, np.nan, float(p[i])))
    peaks = pd.DataFrame(rows, columns=["position", "position_err", "fwhm", "amplitude"])
    return peaks.sort_values("position").reset_index(drop=True)


def _mirror_score(positions: np.ndarray, center: float, tol: float) -> int:
    d = positions - center
    score = 0
    for v in d[d > tol]:
        if np.any(np.abs(d + v) <= tol):
            score += 1
    return score


def _explained(offsets: np.ndarray, axial: float, radial: Optional[float], tol: float) -> int:
    targets = [axial, 2.0 * axial]
    if radial is not None:
        targets += [radial, radial - axial]
    return int(sum(np.any(np.abs(np.asarray(targets) - o) <= tol) for o in offsets))


def fit_spectrum(
    x,
    p,
    err=None,
    expected_lines: Optional[int] = None,
    tolerance: Optional[float] = None,
    lineshape: str = "lorentzian",
    min_separation: Optional[float] = None,
) -> SpectrumFit:
    """
    Identify carrier, axial and radial frequencies in a spectrum.

    The carrier is the line with the most mirror-image partners. Candidate
    (ω_ax, ω_rad) pairs are drawn from the carrier offsets and scored by how
    many offsets they explain among {ω_ax, 2ω_ax, ω_rad, ω_rad − ω_ax};
    ω_rad ≈ 2ω_ax is rejected as ambiguous with the second axial sideband.

    Raises:
        FitError: fewer than one sideband, or a tie between assignments
            (the candidates are attached to the exception)
    """
    peaks = find_lines(x, p, err, min_separation=min_separation, lineshape=lineshape)
    if expected_lines is not None and len(peaks) < expected_lines:
        logger.warning("Found %d lines, expected %d", len(peaks), expected_lines)
    if len(peaks) < 2:
        raise FitError(f"Only {len(peaks)} line(s) found; need the carrier and a sideband")
    pos = peaks["position"].to_numpy()
    step = float(np.median(np.diff(np.sort(np.asarray(x, dtype=float)))))
    tol = tolerance if tolerance is not None else max(3.0 * step, 0.02 * np.ptp(pos))

    scores = [_mirror_score(pos, c, tol) for c in pos]
    best = max(scores)
    if best == 0:
        raise FitError("No sideband pair symmetric about any line; cannot locate the carrier")
    # among equally mirrored lines prefer the strongest
    tied = [i for i, s in enumerate(scores) if s == best]
    ci = max(tied, key=lambda i: peaks["amplitude"].iloc[i])
    carrier = float(pos[ci])
    offsets = np.unique(np.round(np.abs(np.delete(pos, ci) - carrier), 9))
    offsets = offsets[offsets > tol]

    if len(offsets) == 1:
        axial, radial = float(offsets[0]), None
        candidates = [(axial, None, 1)]
    else:
        candidates = []
        for a in offsets:
            for r in offsets:
                if r <= a or abs(r - 2.0 * a) <= tol:
                    continue
                candidates.append((float(a), float(r), _explained(offsets, a, r, tol)))
        if not candidates:
            raise FitError("No (axial, radial) assignment fits the line pattern", candidates=[])
        candidates.sort(key=lambda c: -c[2])
        top = [c for c in candidates if c[2] == candidates[0][2]]
        if len(top) > 1:
            raise FitError(
                "Ambiguous line pattern: " + ", ".join(f"(ax={a:g}, rad={r:g})" for a, r, _ in top),
                candidates=top,
            )
        axial, radial = top[0][0], top[0][1]

    # refine from mirrored pairs
    def pair_mean(offset):
        d = pos - carrier
        hits = d[np.abs(np.abs(d) - offset) <= tol]
        return float(np.mean(np.abs(hits))) if hits.size else offset

    assigned = {"carrier": carrier, "axial": pair_mean(axial)}
    if radial is not None:
        assigned["radial"] = pair_mean(radial)
        assigned["difference"] = pair_mean(radial - axial)
    assigned["axial2"] = pair_mean(2.0 * axial)
    return SpectrumFit(
        carrier=carrier,
        axial=assigned["axial"],
        radial=assigned.get("radial"),
        peaks=peaks,
        assigned=assigned,
        candidates=candidates,
    )


# ---------------------------------------------------------------------------
# Pipelines over records
# ---------------------------------------------------------------------------


def pseudo_count_error(p, n):
    """Binomial error bar at p̂ = (k + 1)/(N + 2); finite when no shot or every shot is bright."""
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 1):
        raise DomainError("N must be >= 1")
    p_hat = (np.asarray(p, dtype=float) * n_arr + 1.0) / (n_arr + 2.0)
    out = np.sqrt(p_hat * (1.0 - p_hat) / n_arr)
    return float(out) if out.ndim == 0 else out


def asymmetry_table(frame: pd.DataFrame, red: str = "red", blue: str = "blue") -> pd.DataFrame:
    """
    Per scan value: P_red, P_blue and the asymmetry n̄ with its error.

    Errors come from pseudo-count estimates when the record carries shot
    counts. Scan values without a thermometric solution (P_red ≥ P_blue) are
    left out and listed in table.attrs["rejected"].
    """
    probes = set(frame["probe"])
    if not {red, blue} <= probes:
        raise FitError(f"Record needs probes {red!r} and {blue!r}, found {sorted(probes)}")
    r = frame[frame["probe"] == red].set_index("scan_value")
    b = frame[frame["probe"] == blue].set_index("scan_value")
    rows, rejected = [], []
    for value in r.index.intersection(b.index):
        p_red, p_blue = r.at[value, "p"], b.at[value, "p"]
        if "N" in frame.columns:
            err_red = pseudo_count_error(p_red, r.at[value, "N"])
            err_blue = pseudo_count_error(p_blue, b.at[value, "N"])
        else:
            err_red, err_blue = r.at[value, "err"], b.at[value, "err"]
        try:
            nbar, err = asymmetry_nbar(p_red, p_blue, err_red, err_blue)
        except FitError as e:
            logger.warning("Scan value %g rejected: %s", value, e)
            rejected.append({"scan_value": float(value), "reason": str(e)})
            continue
        rows.append((float(value), p_red, p_blue, nbar, err))
    table = pd.DataFrame(rows, columns=["scan_value", "p_red", "p_blue", "nbar", "nbar_err"])
    table.attrs["rejected"] = rejected
    return table


def fit_heating_rate(frame: pd.DataFrame, unit: str = "us") -> FitResult:
    """
    Heating rate from a delayed-thermometry record: per-delay asymmetry n̄,
    then a weighted line n̄(t) = n̄₀ + Γ·t. Slope in phonons per ms.
    """
    table = asymmetry_table(frame)
    if len(table) < 2:
        raise FitError(
            f"Heating-rate fit needs at least two delays with P_red < P_blue, "
            f"{len(table.attrs['rejected'])} rejected"
        )
    scale = {"us": 1e-3, "ms": 1.0, "s": 1e3}.get(unit)
    if scale is None:
        raise FitError(f"Unsupported delay unit {unit!r}")
    t_ms = table["scan_value"].to_numpy() * scale
    sigma = table["nbar_err"].to_numpy()
    result = fit_linear(t_ms, table["nbar"].to_numpy(), sigma=sigma if np.all(sigma > 0) else None)
    result.extra["points"] = table.to_dict(orient="records")
    result.extra["rejected"] = table.attrs["rejected"]
    return result


def fit_gamma_slope(decays: Dict[float, Tuple[Sequence[float], Sequence[float]]]) -> FitResult:
    """
    Quench calibration: fit exp(−γt) per 854 nm power, then γ = slope·P through the origin.

    Args:
        decays: {power [µW]: (t [µs], remaining D population)}

    Returns:
        FitResult with slope in kHz/µW; per-power γ in extra["gamma_kHz"]
    """
    if len(decays) < 2:
        raise FitError("Need decay curves at two or more powers")
    powers, gammas, errs = [], [], []
    for power in sorted(decays):
        t_us, y = decays[power]
        fit = fit_exponential(t_us, y)
        powers.append(power)
        gammas.append(fit["rate"] * 1e3)  # 1/µs -> kHz
        errs.append(max(fit.errors["rate"] * 1e3, 1e-9))
    sigma = np.asarray(errs) if np.all(np.isfinite(errs)) and min(errs) > 1e-9 else None
    result = fit_linear(powers, gammas, sigma=sigma, through_origin=True)
    result.extra["gamma_kHz"] = dict(zip(powers, gammas))
    return result


FIT_MODELS = ("spectrum", "heating", "exponential", "lorentzian", "linear", "thermometry")


def fit_record(frame: pd.DataFrame, model: str, variable: str = "", unit: str = "") -> Dict:
    """
    Fit a record with the named model and return a JSON-ready report.

    Raises:
        FitError: empty record, unknown model or model/record mismatch
    """
    if frame is None or frame.empty:
        raise FitError("Record is empty")
    if model not in FIT_MODELS:
        raise FitError(f"Unknown fit model {model!r}; choose from {', '.join(FIT_MODELS)}")
    report = {"model": model, "variable": variable, "unit": unit}
    if model == "heating":
        if variable and variable != "wait":
            raise FitError(f"Heating fits need a wait scan, record scans {variable!r}")
        fit = fit_heating_rate(frame, unit or "us")
        report.update(fit.to_dict())
        report["rate_per_ms"] = fit["slope"]
        report["rate_per_ms_err"] = fit.errors["slope"]
        report["nbar0"] = fit["intercept"]
        report["nbar0_err"] = fit.errors["intercept"]
        return report
    if model == "thermometry":
        table = asymmetry_table(frame)
        if table.empty:
            raise FitError("No scan value has P_red < P_blue")
        report["points"] = table.to_dict(orient="records")
        report["rejected"] = table.attrs["rejected"]
        return report

    main = frame
    if frame["probe"].nunique() > 1:
        raise FitError(f"Model {model!r} expects a single-probe record")
    x = main["scan_value"].to_numpy(dtype=float)
    y = main["p"].to_numpy(dtype=float)
    err = main["err"].to_numpy(dtype=float)
    if model == "spectrum":
        if variable and variable != "detuning":
            raise FitError(f"Spectrum fits need a detuning scan, record scans {variable!r}")
        sf = fit_spectrum(x, y, np.maximum(err, 1e-3))
        report.update(sf.to_dict())
        # detuning in kHz -> trap frequencies in MHz
        report["axial_MHz"] = sf.axial / 1e3
        report["radial_MHz"] = None if sf.radial is None else sf.radial / 1e3
        return report
    if model == "exponential":
        fit = fit_exponential(x, y)
    elif model == "lorentzian":
        fit = fit_lorentzian(x, y)
    else:
        fit = fit_linear(x, y)
    report.update(fit.to_dict())
    return report
