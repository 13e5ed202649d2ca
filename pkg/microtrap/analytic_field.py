#!/usr/bin/env python3
"""
Gapless-plane approximation of DC electrode potentials.

Every electrode is treated as a rectangle in an infinite grounded plane; the
potential of a rectangle at 1 V is its solid angle over 2π. For the two-layer
trap the two planes are averaged, so an electrode contributes Ω/(4π) and all
electrodes of both layers at 1 V give exactly 1 between the wafers.

Fast and smooth, used for waveform synthesis without a full Laplace solve.
"""
from typing import Sequence

import numpy as np

from microtrap.constants import UM
from microtrap.geometry import TrapGeometry


def rectangle_solid_angle(x1, x2, y1, y2, xp, yp, height) -> np.ndarray:
    """Solid angle of the rectangle [x1,x2]×[y1,y2] seen from height above (xp, yp)."""
    h = np.abs(height)

    def term(x, y):
        dx, dy = x - xp, y - yp
        return np.arctan(dx * dy / (h * np.sqrt(dx**2 + dy**2 + h**2)))

    return np.abs(term(x2, y2) - term(x1, y2) - term(x2, y1) + term(x1, y1))


def electrode_potential(geometry: TrapGeometry, label: str, points: np.ndarray) -> np.ndarray:
    """Potential per volt of one DC electrode at points [µm], shape (N, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    electrode = geometry.electrode(label)
    plane = geometry.spec.layer_separation_um / 2.0
    total = np.zeros(len(pts))
    for x0, x1, y0, y1, z0, _ in electrode.boxes:
        # the electrode face toward the slit lies on the inner wafer surface
        face = plane if z0 > 0 else -plane
        height = face - pts[:, 2]
        total += rectangle_solid_angle(x0, x1, y0, y1, pts[:, 0], pts[:, 1], height)
    return total / (4.0 * np.pi)


def electrode_gradient(
    geometry: TrapGeometry, label: str, point: Sequence[float], step_um: float = 0.1
) -> np.ndarray:
    """Central-difference ∇φ of one electrode at a point [V/m per V applied]."""
    p = np.asarray(point, dtype=float)
    offsets = np.vstack([np.eye(3) * step_um, -np.eye(3) * step_um]) + p
    vals = electrode_potential(geometry, label, offsets)
    return (vals[:3] - vals[3:]) / (2.0 * step_um * UM)


def axial_pair_basis(geometry: TrapGeometry, x_um: Sequence[float]) -> np.ndarray:
    """On-axis potential per volt of every DC pair, shape (n_pairs, len(x_um))."""
    x = np.asarray(x_um, dtype=float)
    pts = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])
    out = np.empty((geometry.n_pairs, len(x)))
    for i in range(geometry.n_pairs):
        top, bottom = geometry.dc_pair(i)
        out[i] = electrode_potential(geometry, top.label, pts) + electrode_potential(
            geometry, bottom.label, pts
        )
    return out
