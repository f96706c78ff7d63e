"""The homogenised semilinear problem and the end-to-end convergence harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._linalg import SPDSolver
from .grid import GridSpec, ScalarField, dirichlet_energy, laplacian_apply, lp_norm, stiffness_matrix
from .media import MediumConfig, build_holes, derive_seed, gamma_window_for, sample_gamma_field
from .obstacle import solve_eps_problem

HOM_METHODS = ("picard", "newton")


def negative_part(u: ScalarField) -> ScalarField:
    return ScalarField(u.spec, np.maximum(0.0, -u.values), u.boundary_mask)


def _source(spec: GridSpec, f) -> np.ndarray:
    if callable(f):
        x = spec.positions()
        f = f(*[x[..., a] for a in range(spec.dim)])
    return np.array(np.broadcast_to(np.asarray(f, dtype=float), spec.shape))


def energy_J(u: ScalarField, f) -> float:
    """Discrete ``int 1/2|grad u|^2 - f u``."""
    f = _source(u.spec, f)
    return dirichlet_energy(u) - float(np.sum(u.spec.node_weights() * f * u.values))


def energy_J_alpha(u: ScalarField, f, alpha0: float) -> float:
    """``energy_J`` plus ``1/2 alpha0 int (u_-)^2``."""
    neg = np.maximum(0.0, -u.values)
    return energy_J(u, f) + 0.5 * alpha0 * float(np.sum(u.spec.node_weights() * neg * neg))


@dataclass(eq=False)
class HomogenizedProblem:
    spec: GridSpec
    f: np.ndarray
    alpha0: float

    def __post_init__(self):
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be >= 0")
        self.f = _source(self.spec, self.f)


def homogenized_residual(u: ScalarField, f, alpha0: float) -> float:
    """Max-norm of ``-Lap_h u - alpha0 u_- - f`` on interior nodes."""
    f = _source(u.spec, f)
    r = -laplacian_apply(u).values - alpha0 * np.maximum(0.0, -u.values) - f
    return float(np.max(np.abs(r[u.interior]), initial=0.0))


def solve_homogenized(problem: HomogenizedProblem, method: str = "picard", relax: float = 0.5,
                      tol: float = 1e-9, max_iters: int = 10_000) -> ScalarField:
    """Minimise the discrete limit energy.

    ``picard`` iterates ``-Lap u_new = f + alpha0 (u_old)_-`` with
    under-relaxation; ``newton`` is the semismooth Newton (active set) method
    on ``{u < 0}``, which terminates exactly.
    """
    if method not in HOM_METHODS:
        raise ValueError(f"method must be one of {HOM_METHODS}")
    spec = problem.spec
    free = np.flatnonzero(~spec.boundary_mask().ravel())
    K = stiffness_matrix(spec)[free][:, free]
    hn = spec.cell_volume
    b = hn * problem.f.ravel()[free]
    a0 = problem.alpha0
    solver = SPDSolver(K)
    x = solver.solve(b)
    if a0 > 0:
        if method == "picard":
            for it in range(max_iters):
                x_new = solver.solve(b + hn * a0 * np.maximum(0.0, -x))
                step = x_new - x
                x = x + relax * step
                if np.max(np.abs(step)) <= tol:
                    break
            else:
                raise RuntimeError(f"fixed-point iteration did not converge in {max_iters} steps")
        else:
            neg = x < 0
            for it in range(max_iters):
                A = (K + hn * a0 * sp.diags(neg.astype(float))).tocsr()
                x = SPDSolver(A).solve(b)
                new = x < 0
                if np.array_equal(new, neg):
                    break
                neg = new
            else:
                raise RuntimeError("semismooth Newton did not settle")
    u = np.zeros(spec.size)
    u[free] = x
    return ScalarField(spec, u.reshape(spec.shape))


def poisson_solve(spec: GridSpec, f) -> ScalarField:
    return solve_homogenized(HomogenizedProblem(spec, f, 0.0))


@dataclass
class ConvergenceReport:
    eps_list: list
    alpha0_used: float
    medium: dict
    seeds: list
    cells: int
    rows: list = field(default_factory=list)
    per_eps: list = field(default_factory=list)
    homogenized_energy: float = 0.0
    obstacle_inactive: bool = False
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "eps_list": self.eps_list,
            "alpha0_used": self.alpha0_used,
            "medium": self.medium,
            "seeds": self.seeds,
            "cells": self.cells,
            "homogenized_energy": self.homogenized_energy,
            "obstacle_inactive": self.obstacle_inactive,
            "per_eps": self.per_eps,
            "rows": self.rows,
            "errors": self.errors,
        }


def common_cells(eps_list, minimum: int = 64) -> int:
    """Smallest multiple of every 1/eps (and of 4/eps) that is at least ``minimum``."""
    qs = []
    for e in eps_list:
        q = round(1.0 / e)
        if abs(q * e - 1.0) > 1e-9:
            raise ValueError(f"1/eps must be an integer, got eps={e}")
        qs.append(4 * q)
    base = math.lcm(*qs)
    return base * max(1, math.ceil(minimum / base))


def convergence_experiment(config: MediumConfig, f, eps_list, alpha0: float, seeds=(0,), cells: int | None = None,
                           mode: str = "auto", solver: str = "pdas", tol: float = 1e-8) -> ConvergenceReport:
    """Solve the perforated problem for each (eps, seed) on the unit cube and compare with the limit."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be decreasing")
    seeds = [int(s) for s in seeds]
    cells = common_cells(eps_list) if cells is None else int(cells)
    spec = GridSpec.unit_cube(config.dim, cells)
    fv = _source(spec, f)
    ubar = solve_homogenized(HomogenizedProblem(spec, fv, alpha0))
    j_alpha = energy_J_alpha(ubar, fv, alpha0)
    report = ConvergenceReport(eps_list, float(alpha0), config.to_dict(), seeds, cells, homogenized_energy=j_alpha)
    any_contact = False
    for eps in eps_list:
        errs, gaps, energies = [], [], []
        for seed in seeds:
            try:
                g = sample_gamma_field(config, derive_seed(seed, round(1 / eps)), gamma_window_for(spec, eps))
                holes = build_holes(g, eps, spec, mode)
                sol = solve_eps_problem(fv, holes, spec, solver=solver, tol=tol)
            except (ValueError, RuntimeError) as exc:
                report.errors.append({"eps": eps, "seed": seed, "stage": type(exc).__name__, "message": str(exc)})
                continue
            any_contact |= sol.contact_count > 0
            diff = ScalarField(spec, sol.field.values - ubar.values)
            err = lp_norm(diff, 2.0)
            gap = abs(sol.energy - j_alpha)
            errs.append(err)
            gaps.append(gap)
            energies.append(sol.energy)
            report.rows.append({"eps": eps, "seed": seed, "l2_error": err, "energy_J": sol.energy,
                                "energy_gap": gap, "contact_count": sol.contact_count,
                                "point_holes": len(holes.coupling)})
        if errs:
            report.per_eps.append({
                "eps": eps,
                "l2_error": float(np.mean(errs)),
                "l2_error_spread": float(np.std(errs)),
                "energy_J": float(np.mean(energies)),
                "energy_gap": float(np.mean(gaps)),
                "energy_gap_spread": float(np.std(gaps)),
            })
    report.obstacle_inactive = not any_contact
    return report


def eps_problem_energy(u: np.ndarray, s: np.ndarray, holes, f) -> float:
    """Energy of the perforated problem at an arbitrary (grid field, hole values) pair."""
    spec = holes.spec
    nodes, wi = holes.point_nodes
    fld = ScalarField(spec, u)
    e = energy_J(fld, f)
    return e + 0.5 * float(np.sum(wi * (fld.values.ravel()[nodes] - np.asarray(s)) ** 2))


def energy_sandwich(sol, holes, ubar: ScalarField, corrector, f) -> tuple[float, float]:
    """(J(u_eps), J(v + v_- w_eps)) with v = u-bar; the first must not exceed the second."""
    v = ubar.values
    z = v + np.maximum(0.0, -v) * corrector.w.values
    nodes, _ = holes.point_nodes
    vz = v.ravel()[nodes]
    s = vz + np.maximum(0.0, -vz)
    return sol.energy, eps_problem_energy(z, s, holes, f)
