#!/usr/bin/env python3
"""Tests for the gapless-plane DC potential model."""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from microtrap.analytic_field import (  # noqa: E402
    axial_pair_basis,
    electrode_gradient,
    electrode_potential,
    rectangle_solid_angle,
)
from microtrap.geometry import TrapSpec, build_trap  # noqa: E402


@pytest.fixture(scope="module")
def trap():
    return build_trap(TrapSpec())


def test_square_solid_angle():
    """A 2a square seen from height a on its axis subtends 2π/3."""
    omega = rectangle_solid_angle(-1.0, 1.0, -1.0, 1.0, 0.0, 0.0, 1.0)
    assert omega == pytest.approx(2.0 * np.pi / 3.0)


def test_large_plane_solid_angle():
    """A plane much larger than the height subtends a half sphere."""
    omega = rectangle_solid_angle(-1e6, 1e6, -1e6, 1e6, 0.0, 0.0, 1.0)
    assert omega == pytest.approx(2.0 * np.pi, rel=1e-5)


def test_solid_angle_independent_of_side():
    """Points below and above the plane see the same solid angle."""
    a = rectangle_solid_angle(0.0, 2.0, 0.0, 3.0, 0.5, 0.5, 1.5)
    b = rectangle_solid_angle(0.0, 2.0, 0.0, 3.0, 0.5, 0.5, -1.5)
    assert a == pytest.approx(b)


def test_electrode_potential_range(trap):
    """A single electrode at 1 V gives a potential in (0, 1/2) between the wafers."""
    xc = float(trap.centers[4])
    v = electrode_potential(trap, "DC04T", np.array([[xc, 0.0, 0.0], [xc, -200.0, 0.0]]))
    assert (v > 0).all() and (v < 0.5).all()
    assert v[1] > v[0]


def test_pair_basis_shape_and_peak(trap):
    """One row per pair; each pair's on-axis potential peaks over its own segment."""
    lo, hi = trap.x_extent
    x = np.arange(lo, hi + 2.5, 5.0)
    basis = axial_pair_basis(trap, x)
    assert basis.shape == (trap.n_pairs, len(x))
    for i in (0, 4, 10, 21, 30):
        peak = x[np.argmax(basis[i])]
        assert trap.seg_x0[i] - 5.0 <= peak <= trap.seg_x1[i] + 5.0


def test_pair_basis_symmetric_about_segment(trap):
    """A segment's on-axis potential is mirror symmetric about its centre."""
    xc = float(trap.centers[4])
    d = np.array([25.0, 100.0, 400.0])
    basis = axial_pair_basis(trap, np.concatenate([xc - d, xc + d]))
    assert np.allclose(basis[4, :3], basis[4, 3:], rtol=1e-10)


def test_wider_slit_gives_weaker_axis_potential(trap):
    """The 500 µm storage slit couples less to the axis than the 250 µm processing slit."""
    storage = axial_pair_basis(trap, [float(trap.centers[4])])[4, 0]
    processing = axial_pair_basis(trap, [float(trap.centers[21])])[21, 0]
    assert storage < processing


def test_electrode_gradient_points_toward_electrode(trap):
    """The top electrode sits at y < 0; the potential rises toward it."""
    xc = float(trap.centers[4])
    g = electrode_gradient(trap, "DC04T", (xc, 0.0, 0.0))
    assert g[1] < 0
    assert abs(g[0]) < 1e-6 * abs(g[1])


def test_pair_gradient_cancels_on_axis(trap):
    """Top and bottom electrodes of a pair are point symmetric, so their radial fields cancel."""
    xc = float(trap.centers[21])
    top = electrode_gradient(trap, "DC21T", (xc, 0.0, 0.0))
    bottom = electrode_gradient(trap, "DC21B", (xc, 0.0, 0.0))
    total = top + bottom
    assert np.allclose(total[1:], 0.0, atol=1e-6 * abs(top[1]))
