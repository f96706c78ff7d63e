import math

import numpy as np
import pytest

from obshom.corrector import (
    free_profile,
    gradient_concentration,
    h1_bound_check,
    norm_scaling,
    solve_corrector,
    solve_free_corrector,
)
from obshom.grid import GridSpec
from obshom.media import MediumConfig, build_holes, gamma_window_for, sample_gamma_field

from conftest import FOUR_PI
from test_obstacle import plain_poisson


def holes_for(cfg, eps, cells, mode="auto", seed=0):
    spec = GridSpec.unit_cube(cfg.dim, cells)
    return spec, build_holes(sample_gamma_field(cfg, seed, gamma_window_for(spec, eps)), eps, spec, mode)


def test_no_holes_no_alpha_is_zero(empty2):
    spec, holes = holes_for(empty2, 0.25, 16)
    run = solve_corrector(0.25, 0.0, holes, spec)
    assert not np.any(run.w.values)
    assert run.h1_semi == 0.0 and run.boundary_flux_ok


def test_no_holes_is_torsion_profile(empty2):
    spec, holes = holes_for(empty2, 0.25, 16)
    run = solve_corrector(0.25, 3.0, holes, spec)
    assert np.allclose(run.w.values, plain_poisson(spec, -3.0), atol=1e-12)
    assert run.w.values.max() <= 0.0


def test_resolved_holes_are_pinned(const2):
    spec, holes = holes_for(const2, 0.5, 128, "resolved")
    run = solve_corrector(0.5, 2 * math.pi, holes, spec)
    assert np.all(run.w.values.ravel()[holes.t_eps.members] == 1.0)
    assert run.boundary_flux_ok


def test_grid_mismatch_rejected(const2):
    _, holes = holes_for(const2, 0.25, 48)
    with pytest.raises(ValueError):
        solve_corrector(0.25, 1.0, holes, GridSpec.unit_cube(2, 32))
    with pytest.raises(ValueError):
        solve_corrector(0.25, -1.0, holes)


def test_free_corrector_trivial(empty2):
    spec = GridSpec.unit_cube(2, 16)
    g = sample_gamma_field(empty2, 0, gamma_window_for(spec, 0.25))
    assert not np.any(solve_free_corrector(0.25, 0.0, g, spec).values)


def test_free_corrector_matches_local_profile(const3):
    # near the hole, w0 minus the local profile is harmonic, hence nearly constant
    spec = GridSpec.unit_cube(3, 64)
    g = sample_gamma_field(const3, 0, gamma_window_for(spec, 0.5))
    w0 = solve_free_corrector(0.5, FOUR_PI, g, spec)
    x = spec.positions().reshape(-1, 3)
    d = np.linalg.norm(x - 0.5, axis=1)
    prof = free_profile(x, 0.5, (1, 1, 1), FOUR_PI, 1.0, 3)
    sel = (d >= 0.1) & (d <= 0.3)
    diff = w0.values.ravel()[sel] - prof[sel]
    assert np.ptp(diff) < 0.1 * np.ptp(prof[sel])


def test_norm_scaling_degenerate(empty2):
    runs = []
    for eps, cells in ((0.5, 16), (0.25, 16), (0.125, 32)):
        spec, holes = holes_for(empty2, eps, cells)
        runs.append(solve_corrector(eps, 0.0, holes, spec))
    fit = norm_scaling(runs)
    assert fit.degenerate and math.isnan(fit.slope)
    assert h1_bound_check(runs)["max"] == 0.0
    with pytest.raises(ValueError):
        norm_scaling(runs[:2])


def test_point_mode_3d_sweep(const3):
    # per-eps grids chosen so that every hole is sub-grid but the grid still resolves eps
    runs = []
    for eps, cells in ((1 / 4, 16), (1 / 5, 20), (1 / 6, 30)):
        spec, holes = holes_for(const3, eps, cells, "point")
        runs.append(solve_corrector(eps, 12.0, holes, spec))
    assert norm_scaling(runs, 2.0).slope >= 1.5
    assert h1_bound_check(runs)["ratio"] <= 5.0


def test_gradient_concentration_trivial(const2, empty2):
    spec, holes = holes_for(const2, 0.25, 48)
    run = solve_corrector(0.25, 2 * math.pi, holes, spec)
    assert gradient_concentration(run, 0.0) == (0.0, 0.0)
    spec, holes = holes_for(empty2, 0.25, 48)
    run = solve_corrector(0.25, 0.0, holes, spec)
    assert gradient_concentration(run, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)) == (0.0, 0.0)


def test_gradient_concentration_with_phi_one_is_energy(const2):
    spec, holes = holes_for(const2, 0.25, 48)
    run = solve_corrector(0.25, 2 * math.pi, holes, spec)
    total, target = gradient_concentration(run, 1.0)
    assert total == pytest.approx(run.grad_energy, rel=1e-12)
    assert target == pytest.approx(2 * math.pi)
