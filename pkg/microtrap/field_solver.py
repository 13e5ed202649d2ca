#!/usr/bin/env python3
"""
Laplace solver for unit-voltage electrode basis potentials.

Each basis field is the potential with one electrode (or electrode group) at
1 V and every other conductor plus the outer box at 0 V. The solve is
red-black successive over-relaxation on a regular grid, started from a
prolongated coarse-grid solution. Residuals are reported as the max-norm of
the Gauss-Seidel correction, i.e. the discrete Laplacian scaled by
h²/(2·Σ h⁻²·h²), in volts per volt applied.

Basis fields are solved in local windows; outside its window a field is
treated as 0 (grounded exterior).
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple
import warnings

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator

from microtrap.constants import ELEMENTARY_CHARGE, UM
from microtrap.errors import (
    ConfigError,
    GeometryError,
    NoConfinementError,
    OutOfGridError,
    QuadrupoleFitWarning,
    SolverError,
)
from microtrap.geometry import Box, TrapGeometry

if TYPE_CHECKING:
    from microtrap.field_cache import FieldCache
    from microtrap.rf_dynamics import IonSpecies

logger = logging.getLogger(__name__)

RF_GROUP = "RF"
DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 20000


@dataclass(frozen=True)
class Grid3D:
    """Regular grid: origin [µm], spacing per axis [µm], points per axis."""

    origin: Tuple[float, float, float]
    spacing: Tuple[float, float, float]
    shape: Tuple[int, int, int]

    def __post_init__(self):
        if len(self.origin) != 3 or len(self.spacing) != 3 or len(self.shape) != 3:
            raise ConfigError("Grid3D needs three components per axis")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if min(self.spacing) <= 0:
            raise ConfigError(f"Grid spacing must be > 0, got {self.spacing}")
        if min(self.shape) < 3:
            raise ConfigError(f"Grid needs at least 3 points per axis, got {self.shape}")

    @property
    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(
            self.origin[k] + self.spacing[k] * np.arange(self.shape[k]) for k in range(3)
        )

    @property
    def upper(self) -> Tuple[float, float, float]:
        return tuple(self.origin[k] + self.spacing[k] * (self.shape[k] - 1) for k in range(3))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.origin) - tol
        hi = np.asarray(self.upper) + tol
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def coarsened(self) -> "Grid3D":
        """Grid with doubled spacing sharing the origin and covering the same box."""
        shape = tuple((n - 1) // 2 + 1 for n in self.shape)
        return Grid3D(self.origin, tuple(2.0 * h for h in self.spacing), shape)

    def key(self) -> Dict:
        return {"origin": list(self.origin), "spacing": list(self.spacing), "shape": list(self.shape)}

    @classmethod
    def covering(
        cls, lower: Sequence[float], upper: Sequence[float], spacing: float
    ) -> "Grid3D":
        """Smallest grid with nodes on multiples of spacing that covers [lower, upper]."""
        if spacing <= 0:
            raise ConfigError(f"Grid spacing must be > 0, got {spacing}")
        lo = [np.floor(v / spacing + 1e-9) * spacing for v in lower]
        hi = [np.ceil(v / spacing - 1e-9) * spacing for v in upper]
        shape = tuple(max(3, int(round((h - l) / spacing)) + 1) for l, h in zip(lo, hi))
        return cls(tuple(float(v) for v in lo), (spacing,) * 3, shape)


def _cross_section_half(geometry: TrapGeometry) -> Tuple[float, float]:
    spec = geometry.spec
    half_y = max(geometry.slits) / 2.0 + spec.finger_length_um
    half_z = spec.layer_separation_um / 2.0 + spec.wafer_thickness_um
    return half_y, half_z


def electrode_window(
    geometry: TrapGeometry,
    label: str,
    spacing_um: float,
    margin_factor: float = 2.0,
) -> Grid3D:
    """
    Local grid around one DC electrode with a grounded margin of
    margin_factor × (local slit width) on every side.
    """
    if margin_factor < 2.0:
        raise ConfigError("Boundary margin must be at least 2 slit widths")
    electrode = geometry.electrode(label)
    if electrode.kind != "DC":
        raise GeometryError(f"{label} is not a DC electrode; use zone_window for RF")
    margin = margin_factor * geometry.slits[electrode.pair]
    x0, x1, *_ = electrode.bounds()
    half_y, half_z = _cross_section_half(geometry)
    return Grid3D.covering(
        (x0 - margin, -half_y - margin, -half_z - margin),
        (x1 + margin, half_y + margin, half_z + margin),
        spacing_um,
    )


def zone_window(
    geometry: TrapGeometry,
    zone: str,
    spacing_um: float,
    margin_factor: float = 2.0,
    half_length_um: Optional[float] = None,
) -> Grid3D:
    """Local grid centred on the middle segment of a zone, used for RF solves."""
    if margin_factor < 2.0:
        raise ConfigError("Boundary margin must be at least 2 slit widths")
    xc = geometry.zone_center(zone)
    slit = geometry.slit_at(xc)
    margin = margin_factor * slit
    half_x = half_length_um if half_length_um is not None else margin
    half_y, half_z = _cross_section_half(geometry)
    return Grid3D.covering(
        (xc - half_x, -half_y - margin, -half_z - margin),
        (xc + half_x, half_y + margin, half_z + margin),
        spacing_um,
    )


def _box_slices(grid: Grid3D, box: Box, tol: float = 1e-9):
    slices = []
    for k, axis in enumerate(grid.axes):
        lo, hi = box[2 * k], box[2 * k + 1]
        idx = np.nonzero((axis >= lo - tol) & (axis <= hi + tol))[0]
        if idx.size == 0:
            return None
        slices.append(slice(int(idx[0]), int(idx[-1]) + 1))
    return tuple(slices)


def conductor_masks(geometry: TrapGeometry, grid: Grid3D) -> Dict[str, np.ndarray]:
    """Boolean node mask per electrode label (electrodes missing the grid are omitted)."""
    masks = {}
    for e in geometry.electrodes:
        mask = None
        for box in e.boxes:
            sl = _box_slices(grid, box)
            if sl is None:
                continue
            if mask is None:
                mask = np.zeros(grid.shape, dtype=bool)
            mask[sl] = True
        if mask is not None:
            masks[e.label] = mask
    return masks


def source_labels(geometry: TrapGeometry, label: str) -> List[str]:
    """Electrode labels held at 1 V for a basis label ('RF' drives both RF electrodes)."""
    if label == RF_GROUP:
        return [e.label for e in geometry.rf_electrodes]
    geometry.electrode(label)
    return [label]


def dirichlet_problem(
    geometry: TrapGeometry, label: str
) -> Callable[[Grid3D], Tuple[np.ndarray, np.ndarray]]:
    """Callable mapping a grid to (fixed-node mask, fixed values) for one basis solve."""
    sources = set(source_labels(geometry, label))

    def boundary(grid: Grid3D):
        fixed = np.zeros(grid.shape, dtype=bool)
        values = np.zeros(grid.shape)
        fixed[0, :, :] = fixed[-1, :, :] = True
        fixed[:, 0, :] = fixed[:, -1, :] = True
        fixed[:, :, 0] = fixed[:, :, -1] = True
        for name, mask in conductor_masks(geometry, grid).items():
            fixed |= mask
            if name in sources:
                values[mask] = 1.0
        return fixed, values

    return boundary


def optimal_omega(grid: Grid3D) -> float:
    """Over-relaxation factor from the Jacobi spectral radius of the box."""
    w = [1.0 / h**2 for h in grid.spacing]
    rho = sum(wk * np.cos(np.pi / (n - 1)) for wk, n in zip(w, grid.shape)) / sum(w)
    return 2.0 / (1.0 + np.sqrt(max(1.0 - rho**2, 0.0)))


def relax_laplace(
    values: np.ndarray,
    fixed: np.ndarray,
    spacing: Sequence[float],
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    omega: float = 1.0,
    check_every: int = 10,
) -> Tuple[np.ndarray, float, int]:
    """
    Red-black SOR on a 3D array with Dirichlet nodes.

    Args:
        values: Initial potential; fixed nodes hold their boundary values
        fixed: Mask of Dirichlet nodes (outer faces must be fixed)
        spacing: Grid spacing per axis [µm]
        tolerance: Max Gauss-Seidel correction at convergence [V/V]
        max_iterations: Sweep cap
        omega: Over-relaxation factor in (0, 2)

    Returns:
        (potential, residual, iterations)

    Raises:
        SolverError: no convergence within max_iterations
    """
    phi = np.array(values, dtype=float)
    wx, wy, wz = (1.0 / h**2 for h in spacing)
    denom = 2.0 * (wx + wy + wz)
    inner = phi[1:-1, 1:-1, 1:-1]
    free = ~fixed[1:-1, 1:-1, 1:-1]
    ii, jj, kk = np.indices(inner.shape)
    parity = (ii + jj + kk) % 2
    colors = [free & (parity == 0), free & (parity == 1)]

    def gauss_seidel():
        nb = (
            wx * (phi[2:, 1:-1, 1:-1] + phi[:-2, 1:-1, 1:-1])
            + wy * (phi[1:-1, 2:, 1:-1] + phi[1:-1, :-2, 1:-1])
            + wz * (phi[1:-1, 1:-1, 2:] + phi[1:-1, 1:-1, :-2])
        )
        return nb / denom

    residual = np.inf
    for iteration in range(1, max_iterations + 1):
        for mask in colors:
            gs = gauss_seidel()
            inner[mask] += omega * (gs[mask] - inner[mask])
        if iteration % check_every == 0 or iteration == max_iterations:
            corr = gauss_seidel() - inner
            residual = float(np.max(np.abs(corr[free]))) if free.any() else 0.0
            if residual <= tolerance:
                return phi, residual, iteration
    raise SolverError(
        f"Laplace relaxation did not converge in {max_iterations} sweeps "
        f"(residual {residual:.3e} > {tolerance:.1e})",
        residual=residual,
        iterations=max_iterations,
    )


def solve_dirichlet(
    grid: Grid3D,
    boundary: Callable[[Grid3D], Tuple[np.ndarray, np.ndarray]],
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    levels: int = 2,
) -> Tuple[np.ndarray, float, int]:
    """Nested-grid solve: relax on coarsened grids first, prolongate, then relax."""
    fixed, values = boundary(grid)
    guess = values.copy()
    if levels > 0 and min(grid.shape) >= 9:
        coarse = grid.coarsened()
        coarse_phi, _, _ = solve_dirichlet(
            coarse, boundary, tolerance * 10.0, max_iterations, levels - 1
        )
        interp = RegularGridInterpolator(
            coarse.axes, coarse_phi, bounds_error=False, fill_value=None
        )
        mesh = np.stack(np.meshgrid(*grid.axes, indexing="ij"), axis=-1)
        guess = interp(mesh.reshape(-1, 3)).reshape(grid.shape)
        guess[fixed] = values[fixed]
    return relax_laplace(
        guess, fixed, grid.spacing, tolerance, max_iterations, optimal_omega(grid)
    )


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Basis potential samples on a grid [V per V applied]."""

    grid: Grid3D
    values: np.ndarray
    label: str
    residual: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        if tuple(self.values.shape) != tuple(self.grid.shape):
            raise ConfigError(
                f"Field values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        self.values.setflags(write=False)

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.grid.axes, self.values, method="linear")

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.grid.contains(points)

    def value_at(self, points: np.ndarray) -> np.ndarray:
        """Trilinear interpolation at points [µm]; raises if any point is off-grid."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(self.contains(pts)):
            raise OutOfGridError(f"Point outside grid of field {self.label}")
        lo = np.asarray(self.grid.origin)
        hi = np.asarray(self.grid.upper)
        return self._interpolator(np.clip(pts, lo, hi))

    def gradient_at(self, point: Sequence[float], step_um: Optional[float] = None) -> np.ndarray:
        """Central-difference gradient ∇φ at a point [V/m per V applied]."""
        h = step_um if step_um is not None else 0.5 * min(self.grid.spacing)
        p = np.asarray(point, dtype=float)
        offsets = np.vstack([np.eye(3) * h, -np.eye(3) * h]) + p
        vals = self.value_at(offsets)
        return (vals[:3] - vals[3:]) / (2.0 * h * UM)


FieldSet = Sequence[Tuple[PotentialField, float]]


def superpose(fields: FieldSet, points: np.ndarray) -> np.ndarray:
    """Σ voltageᵢ·basisᵢ at points [µm]; a field contributes 0 outside its grid."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    total = np.zeros(len(pts))
    covered = np.zeros(len(pts), dtype=bool)
    for f, voltage in fields:
        inside = f.contains(pts)
        covered |= inside
        if voltage != 0.0 and inside.any():
            total[inside] += voltage * f.value_at(pts[inside])
    if not covered.all():
        bad = pts[~covered][0]
        raise OutOfGridError(f"Point {tuple(bad)} µm lies outside every field grid")
    return total


def potential_at(fields: FieldSet, point: Sequence[float]) -> float:
    """Potential [V] at one point from a set of (basis field, voltage) pairs."""
    return float(superpose(fields, np.asarray(point, dtype=float))[0])


@dataclass(frozen=True, eq=False)
class AxialCurve:
    """Potential along the RF-null line: x [µm], φ [V], applied voltages."""

    x_um: np.ndarray
    phi_V: np.ndarray
    provenance: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x_um) < 3 or len(self.x_um) != len(self.phi_V):
            raise ConfigError("AxialCurve needs at least 3 matching samples")
        if np.any(np.diff(self.x_um) <= 0):
            raise ConfigError("AxialCurve x samples must be strictly increasing")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x_um": self.x_um, "phi_V": self.phi_V})


def axial_curve(
    fields: FieldSet,
    x_um: Sequence[float],
    y_um: float = 0.0,
    z_um: float = 0.0,
) -> AxialCurve:
    """Sample the superposed potential along the trap axis."""
    x = np.asarray(x_um, dtype=float)
    pts = np.column_stack([x, np.full_like(x, y_um), np.full_like(x, z_um)])
    phi = superpose(fields, pts)
    provenance = {}
    for f, v in fields:
        provenance[f.label] = provenance.get(f.label, 0.0) + float(v)
    return AxialCurve(x, phi, provenance)


def well_half_width(curve: AxialCurve) -> float:
    """Full width [µm] of the axial well at half its depth below the curve maximum."""
    x, phi = curve.x_um, curve.phi_V
    i0 = int(np.argmin(phi))
    top = float(np.max(phi))
    half = phi[i0] + 0.5 * (top - phi[i0])
    if top - phi[i0] <= 0:
        raise NoConfinementError("Flat curve has no well")

    def crossing(indices):
        prev = i0
        for i in indices:
            if phi[i] >= half:
                return x[prev] + (half - phi[prev]) * (x[i] - x[prev]) / (phi[i] - phi[prev])
            prev = i
        raise NoConfinementError("Well does not rise to half depth inside the sampled range")

    left = crossing(range(i0 - 1, -1, -1))
    right = crossing(range(i0 + 1, len(x)))
    return float(right - left)


@dataclass(frozen=True)
class AxialFit:
    omega: float  # [rad/s]
    center_um: float
    curvature_V_per_m2: float
    residual: float


def axial_frequency(
    curve: AxialCurve, ion: "IonSpecies", window_um: float = 50.0
) -> AxialFit:
    """
    Axial secular frequency from a quadratic fit around the interior minimum.

    ω_ax = sqrt(Z·e·κ/m) with κ = d²φ/dx² [V/m²].

    Raises:
        NoConfinementError: minimum on the range edge or κ ≤ 0
    """
    x, phi = curve.x_um, curve.phi_V
    i0 = int(np.argmin(phi))
    if i0 == 0 or i0 == len(x) - 1:
        raise NoConfinementError("Axial potential has no interior minimum")
    sel = np.abs(x - x[i0]) <= window_um
    if sel.sum() < 5:
        sel = np.zeros(len(x), dtype=bool)
        sel[np.argsort(np.abs(x - x[i0]))[: min(5, len(x))]] = True
    xs = x[sel] - x[i0]
    coeffs, res, *_ = np.polyfit(xs, phi[sel], 2, full=True)
    a, b, _ = coeffs
    kappa = 2.0 * a / UM**2
    if kappa <= 0:
        raise NoConfinementError(f"Non-positive axial curvature {kappa:.3e} V/m²")
    center = x[i0] - b / (2.0 * a)
    residual = float(np.sqrt(res[0] / sel.sum())) if len(res) else 0.0
    omega = float(np.sqrt(ion.charge * ELEMENTARY_CHARGE * kappa / ion.mass_kg))
    return AxialFit(omega, float(center), float(kappa), residual)


@dataclass(frozen=True)
class QuadrupoleFit:
    c2: float  # [m⁻² per V applied]
    null_y_um: float
    null_z_um: float
    residual: float  # rms misfit relative to rms field variation


def quadrupole_c2(
    field: PotentialField,
    point_um: Sequence[float],
    window_um: Optional[float] = None,
    slit_um: Optional[float] = None,
    threshold: float = 1e-2,
) -> QuadrupoleFit:
    """
    Fit a + by + cz + Ay² + Bz² + Cyz to the cross-section nearest point.x.

    c₂ = sqrt((A − B)² + C²), the quadrupole strength independent of the
    axes' orientation. The window defaults to ±10% of the slit half-width,
    widened to at least two grid spacings.
    """
    px, py, pz = (float(v) for v in point_um)
    xs, ys, zs = field.grid.axes
    if not field.grid.contains([px, py, pz])[0]:
        raise OutOfGridError(f"Point {tuple(point_um)} outside grid of {field.label}")
    min_window = 2.0 * max(field.grid.spacing[1], field.grid.spacing[2])
    if window_um is None:
        window_um = 0.1 * slit_um / 2.0 if slit_um else min_window
    window_um = max(window_um, min_window)
    i = int(np.argmin(np.abs(xs - px)))
    jy = np.nonzero(np.abs(ys - py) <= window_um + 1e-9)[0]
    kz = np.nonzero(np.abs(zs - pz) <= window_um + 1e-9)[0]
    Y, Z = np.meshgrid(ys[jy] - py, zs[kz] - pz, indexing="ij")
    phi = field.values[i][np.ix_(jy, kz)]
    y, z, v = Y.ravel(), Z.ravel(), phi.ravel()
    design = np.column_stack([np.ones_like(y), y, z, y**2, z**2, y * z])
    coeffs, *_ = np.linalg.lstsq(design, v, rcond=None)
    _, b, c, A, B, C = coeffs
    misfit = v - design @ coeffs
    spread = np.sqrt(np.mean((v - v.mean()) ** 2))
    residual = float(np.sqrt(np.mean(misfit**2)) / spread) if spread > 0 else 0.0
    hessian = np.array([[2 * A, C], [C, 2 * B]])
    try:
        dy, dz = np.linalg.solve(hessian, [-b, -c])
    except np.linalg.LinAlgError:
        dy, dz = 0.0, 0.0
    c2 = float(np.hypot(A - B, C) / UM**2)
    if residual > threshold:
        msg = f"Quadrupole fit residual {residual:.2e} above {threshold:.0e} for {field.label}"
        logger.warning(msg)
        warnings.warn(msg, QuadrupoleFitWarning)
    return QuadrupoleFit(c2, py + float(dy), pz + float(dz), residual)


def solve_basis(
    geometry: TrapGeometry,
    grid: Grid3D,
    label: str,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    levels: int = 2,
    cache: Optional["FieldCache"] = None,
) -> PotentialField:
    """
    Solve the unit-voltage basis potential of one electrode (or 'RF' for both RF electrodes).

    Raises:
        GeometryError: unknown electrode
        SolverError: non-convergence, with residual and electrode label
    """
    source_labels(geometry, label)
    if cache is not None:
        cached = cache.load(geometry, grid, label, tolerance)
        if cached is not None:
            return cached
    logger.info("Solving basis %s on grid %s", label, grid.shape)
    try:
        phi, residual, iterations = solve_dirichlet(
            grid, dirichlet_problem(geometry, label), tolerance, max_iterations, levels
        )
    except SolverError as e:
        raise SolverError(
            f"Basis solve for {label} failed: {e}",
            residual=e.residual,
            iterations=e.iterations,
            electrode=label,
        )
    logger.info("Basis %s converged in %d sweeps, residual %.2e", label, iterations, residual)
    result = PotentialField(grid, phi, label, residual, iterations)
    if cache is not None:
        cache.store(geometry, result, tolerance)
    return result


def _solve_job(args):
    geometry, grid, label, tolerance, max_iterations, levels, cache = args
    return solve_basis(geometry, grid, label, tolerance, max_iterations, levels, cache)


def solve_many(
    geometry: TrapGeometry,
    jobs: Sequence[Tuple[str, Grid3D]],
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    levels: int = 2,
    cache: Optional["FieldCache"] = None,
    workers: int = 1,
) -> List[PotentialField]:
    """Solve independent basis fields, optionally in a process pool; order is preserved."""
    args = [(geometry, grid, label, tolerance, max_iterations, levels, cache) for label, grid in jobs]
    if workers <= 1 or len(args) <= 1:
        return [_solve_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_job, args))


def dc_window_fields(
    geometry: TrapGeometry,
    spacing_um: float,
    margin_factor: float = 2.0,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    levels: int = 2,
    cache: Optional["FieldCache"] = None,
    workers: int = 1,
) -> Dict[str, PotentialField]:
    """Basis fields of every DC electrode, each in its own local window."""
    jobs = [
        (e.label, electrode_window(geometry, e.label, spacing_um, margin_factor))
        for e in geometry.dc_electrodes
    ]
    fields = solve_many(geometry, jobs, tolerance, max_iterations, levels, cache, workers)
    return {f.label: f for f in fields}


def pair_fields(
    geometry: TrapGeometry, fields: Dict[str, PotentialField], index: int, voltage: float
) -> List[Tuple[PotentialField, float]]:
    """(field, voltage) entries driving both electrodes of a DC pair."""
    top, bottom = geometry.dc_pair(index)
    return [(fields[top.label], voltage), (fields[bottom.label], voltage)]
