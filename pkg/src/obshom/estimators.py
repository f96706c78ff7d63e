"""scikit-learn style front end.

The functional modules do the work; these classes hold hyper-parameters in
``__init__`` (so ``get_params``/``set_params``/``clone`` work), learn state in
``fit`` (trailing-underscore attributes) and map source terms to solutions in
``transform``.

>>> est = Alpha0Estimator(window_sizes=(4, 8), samples=2)     # doctest: +SKIP
>>> est.fit(medium).alpha0_                                  # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .capacity import cap_variational, solve_potential
from .corrector import solve_corrector
from .effective import estimate_alpha0, estimate_ell
from .grid import GridSpec
from .homogenize import HomogenizedProblem, solve_homogenized
from .media import MediumConfig, build_holes, gamma_window_for, sample_gamma_field
from .obstacle import solve_eps_problem
from .shapes import ShapeSpec


def check_medium(medium) -> MediumConfig:
    """Accept a MediumConfig or its dict form."""
    if isinstance(medium, MediumConfig):
        return medium
    if isinstance(medium, dict):
        return MediumConfig.from_dict(medium)
    raise TypeError(f"expected MediumConfig or dict, got {type(medium).__name__}")


def check_shape(shape) -> ShapeSpec:
    if isinstance(shape, ShapeSpec):
        return shape
    if isinstance(shape, dict):
        return ShapeSpec.from_dict(shape)
    raise TypeError(f"expected ShapeSpec or dict, got {type(shape).__name__}")


def check_source(f, spec: GridSpec) -> np.ndarray:
    """Source term as node values: scalar, array of grid shape, or callable of coordinates."""
    if callable(f):
        x = spec.positions()
        f = f(*[x[..., a] for a in range(spec.dim)])
    arr = np.asarray(f, dtype=float)
    try:
        arr = np.broadcast_to(arr, spec.shape)
    except ValueError:
        raise ValueError(f"source of shape {arr.shape} does not match grid {spec.shape}") from None
    if not np.isfinite(arr).all():
        raise ValueError("source must be finite")
    return np.array(arr)


class CapacityEstimator(BaseEstimator):
    def __init__(self, n=3, h=1 / 32, box_radius=None, boundary="farfield"):
        self.n = n
        self.h = h
        self.box_radius = box_radius
        self.boundary = boundary

    def fit(self, shape, y=None):
        shape = check_shape(shape)
        self.result_ = cap_variational(shape, self.n, self.box_radius, self.h, self.boundary)
        self.capacity_ = self.result_.value
        return self

    def potential(self, shape):
        """Equilibrium potential of ``shape`` with the fitted settings."""
        return solve_potential(check_shape(shape), self.n, self.box_radius, self.h, self.boundary).phi


class ContactDensityEstimator(BaseEstimator):
    """Estimate ell(alpha) for a medium."""

    def __init__(self, alpha=1.0, window_sizes=None, samples=None, cells_per_unit=None, seed=0, solver="pdas"):
        self.alpha = alpha
        self.window_sizes = window_sizes
        self.samples = samples
        self.cells_per_unit = cells_per_unit
        self.seed = seed
        self.solver = solver

    def fit(self, medium, y=None):
        est = estimate_ell(self.alpha, check_medium(medium), self.window_sizes, self.samples,
                           self.cells_per_unit, self.seed, self.solver)
        self.estimate_ = est
        self.ell_hat_ = est.ell_hat
        self.ci_halfwidth_ = est.ci_halfwidth
        return self


class Alpha0Estimator(BaseEstimator):
    """Bisection estimate of the critical coefficient."""

    def __init__(self, window_sizes=None, samples=None, cells_per_unit=None, seed=0, theta=0.005,
                 rtol=0.01, solver="pdas"):
        self.window_sizes = window_sizes
        self.samples = samples
        self.cells_per_unit = cells_per_unit
        self.seed = seed
        self.theta = theta
        self.rtol = rtol
        self.solver = solver

    def fit(self, medium, y=None):
        est = estimate_alpha0(check_medium(medium), self.window_sizes, self.samples, self.cells_per_unit,
                              self.seed, self.theta, self.rtol, solver=self.solver)
        self.estimate_ = est
        self.alpha0_ = est.alpha0
        self.bracket_ = (est.bracket_lo, est.bracket_hi)
        self.trace_ = est.bisection_trace
        return self


class HomogenizedSolver(TransformerMixin, BaseEstimator):
    """Maps a source ``f`` to the limit solution u-bar on the unit cube."""

    def __init__(self, alpha0=0.0, dim=2, cells=64, method="picard", tol=1e-9):
        self.alpha0 = alpha0
        self.dim = dim
        self.cells = cells
        self.method = method
        self.tol = tol

    def fit(self, X=None, y=None):
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be >= 0")
        self.spec_ = GridSpec.unit_cube(self.dim, self.cells)
        return self

    def transform(self, f):
        check_is_fitted(self, "spec_")
        u = solve_homogenized(HomogenizedProblem(self.spec_, check_source(f, self.spec_), self.alpha0),
                              method=self.method, tol=self.tol)
        return u.values


class PerforatedObstacleSolver(TransformerMixin, BaseEstimator):
    """Maps a source ``f`` to u-eps for one realisation of the perforated unit cube."""

    def __init__(self, medium=None, eps=0.25, seed=0, cells=64, mode="auto", solver="pdas"):
        self.medium = medium
        self.eps = eps
        self.seed = seed
        self.cells = cells
        self.mode = mode
        self.solver = solver

    def fit(self, X=None, y=None):
        medium = check_medium(self.medium if X is None else X)
        self.spec_ = GridSpec.unit_cube(medium.dim, self.cells)
        gamma = sample_gamma_field(medium, self.seed, gamma_window_for(self.spec_, self.eps))
        self.holes_ = build_holes(gamma, self.eps, self.spec_, self.mode)
        return self

    def transform(self, f):
        check_is_fitted(self, "holes_")
        self.solution_ = solve_eps_problem(check_source(f, self.spec_), self.holes_, self.spec_, solver=self.solver)
        return self.solution_.field.values

    def corrector(self, alpha0):
        check_is_fitted(self, "holes_")
        return solve_corrector(self.eps, alpha0, self.holes_, self.spec_)
