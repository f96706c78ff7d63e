import math

import numpy as np
import pytest

from obshom.capacity import (
    box_shape_for_gamma,
    cap_ball,
    cap_variational,
    discrete_node_capacity,
    energy_identity,
    equilibrium_potential,
    farfield_check,
    fundamental_solution,
    shell_flux,
    solve_potential,
)
from obshom.grid import GridSpec
from obshom.shapes import ShapeSpec


def test_cap_ball_closed_forms():
    assert cap_ball(1.0, 3) == pytest.approx(4 * math.pi)
    assert cap_ball(math.exp(-1), 2) == pytest.approx(2 * math.pi)
    assert cap_ball(1e-12, 3) < 1e-10
    assert cap_ball(0.0, 3) == 0.0


def test_fundamental_solution():
    x = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    assert fundamental_solution(x, 3) == pytest.approx([1 / (4 * math.pi), 1 / (8 * math.pi)])
    assert fundamental_solution(np.array([[math.e, 0.0]]), 2) == pytest.approx([-1 / (2 * math.pi)])


def test_empty_shape_has_zero_capacity():
    assert cap_variational(ShapeSpec.empty(), 3, 1.0, 1 / 8).value == 0.0
    assert cap_variational(ShapeSpec.empty(), 2, None, 1 / 16).value == 0.0


def test_ball_3d_converges_from_below():
    exact = cap_ball(0.25, 3)
    vals = [cap_variational(ShapeSpec.ball(0.25), 3, 1.0, h).value for h in (1 / 8, 1 / 16)]
    assert vals[0] < vals[1] < exact
    assert exact - vals[1] < 0.7 * (exact - vals[0])


def test_ball_2d_close_to_closed_form():
    exact = 2 * math.pi / math.log(4)
    vals = [cap_variational(ShapeSpec.ball(0.25), 2, None, h).value for h in (1 / 32, 1 / 64)]
    assert vals[0] < vals[1] < exact
    assert vals[1] == pytest.approx(exact, rel=0.05)


def test_energy_identity_and_flux():
    sol = solve_potential(ShapeSpec.ball(0.25), 3, 1.0, 1 / 16)
    assert energy_identity(sol) == pytest.approx(sol.capacity, rel=1e-9)
    for rho in (0.4, 0.6, 0.8):
        assert shell_flux(sol.phi, rho) == pytest.approx(sol.capacity, rel=1e-6)
    sol2 = solve_potential(ShapeSpec.ball(0.25), 2, None, 1 / 32)
    assert energy_identity(sol2) == pytest.approx(sol2.capacity, rel=1e-9)
    assert shell_flux(sol2.phi, 0.5) == pytest.approx(sol2.capacity, rel=1e-6)


def test_dirichlet_box_lower_than_farfield():
    far = cap_variational(ShapeSpec.ball(0.25), 3, 1.0, 1 / 16).value
    dir_ = cap_variational(ShapeSpec.ball(0.25), 3, 1.0, 1 / 16, boundary="dirichlet").value
    # a zero Dirichlet box at finite distance overestimates the capacity
    assert dir_ > far


def test_equilibrium_potential_bounds():
    phi = equilibrium_potential(ShapeSpec.ball(0.25), 3, 1.0, 1 / 16)
    x = phi.spec.positions()
    d = np.linalg.norm(x, axis=-1)
    assert phi.values.max() <= 1.0 + 1e-12
    assert np.all(phi.values[d <= 0.25 - 1e-9] == 1.0)
    out = d > 0.25 + 1e-9
    M = 0.25 + phi.spec.h
    assert np.all(phi.values[out] <= M / d[out] + 1e-9)
    with pytest.raises(ValueError):
        equilibrium_potential(ShapeSpec.ball(0.25), 2, None, 1 / 16)


def test_ball_potential_is_its_own_equivalent():
    sol = solve_potential(ShapeSpec.ball(0.25), 3, 1.0, 1 / 16)
    prof = farfield_check(sol.phi, sol.capacity, 0.25, [0.5])
    assert prof.deviation[0] < 0.02


def test_farfield_warns_past_half_box():
    sol = solve_potential(ShapeSpec.ball(0.25), 3, 1.0, 1 / 16)
    with pytest.warns(UserWarning, match="half the box"):
        prof = farfield_check(sol.phi, sol.capacity, 0.25, [0.25, 0.75])
    assert prof.warnings


def test_node_capacity_refinement():
    c3 = [discrete_node_capacity(GridSpec.unit_cube(3, m), 3) for m in (32, 64, 128)]
    scaled3 = [c * m for c, m in zip(c3, (32, 64, 128))]
    assert max(scaled3) / min(scaled3) < 1.10
    assert c3[0] > c3[1] > c3[2]
    c2 = [discrete_node_capacity(GridSpec.unit_cube(2, m), 2) * math.log(m) for m in (32, 64, 128)]
    assert max(c2) / min(c2) < 1.15


def test_node_constant_matches_lattice_green_function():
    # Watson's constant: the simple cubic lattice Green function at the origin is 0.252731
    c = discrete_node_capacity(GridSpec.unit_cube(3, 16), 3) * 16
    assert c == pytest.approx(1 / 0.2527310098, rel=1e-3)


def test_box_shape_calibration():
    shape = box_shape_for_gamma(4 * math.pi, (1.0, 1.0, 1.0))
    assert shape.kind == "box"
    assert len(set(shape.half_widths)) == 1
    # a cube of half width a has capacity about 0.6607 * 4 pi * (2a); the ball of equal capacity has r = 1
    assert shape.half_widths[0] == pytest.approx(1 / (2 * 0.6607), rel=0.03)
