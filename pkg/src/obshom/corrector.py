"""The corrector w^eps and the free solution w^eps_0.

``w^eps`` solves ``Lap w = alpha0`` off the holes with ``w = 1`` on them and
``w = 0`` on the outer boundary.  Resolved holes are Dirichlet nodes; a
sub-grid hole pins its own value to 1 and talks to its node through the
calibrated coupling, whose energy ``W (w_i - 1)^2`` is part of
``int |grad w|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, NodeSet, ScalarField, dirichlet_energy, face_differences, lp_norm
from .media import GammaField, HoleField, lattice_sites_in
from .obstacle import ObstacleProblem, solve_obstacle

DEFAULT_P = (1.0, 2.0, 4.0)


@dataclass(eq=False)
class CorrectorRun:
    eps: float
    alpha0: float
    holes: HoleField
    w: ScalarField
    l2: float
    lp: dict
    h1_semi: float
    boundary_flux_ok: bool
    grad_energy: float = 0.0
    point_terms: np.ndarray = field(default_factory=lambda: np.empty(0))

    def summary(self) -> dict:
        return {
            "eps": self.eps,
            "alpha0": self.alpha0,
            "l2": self.l2,
            "lp": {str(p): v for p, v in self.lp.items()},
            "h1_semi": self.h1_semi,
            "grad_energy": self.grad_energy,
            "boundary_flux_ok": self.boundary_flux_ok,
        }


def corrector_problem(alpha0: float, holes: HoleField) -> ObstacleProblem:
    nodes, wi = holes.point_nodes
    return ObstacleProblem(holes.spec, -float(alpha0), holes.resolved_nodes, "equality_one",
                           point_nodes=nodes, point_coupling=wi)


def solve_corrector(eps: float, alpha0: float, holes: HoleField, spec: GridSpec | None = None,
                    p_values=DEFAULT_P) -> CorrectorRun:
    spec = holes.spec if spec is None else spec
    if spec != holes.spec:
        raise ValueError("holes were built on a different grid")
    if alpha0 < 0:
        raise ValueError("alpha0 must be >= 0")
    sol = solve_obstacle(corrector_problem(alpha0, holes))
    w = sol.field
    nodes, wi = holes.point_nodes
    point_terms = wi * (w.values.ravel()[nodes] - 1.0) ** 2
    grad = 2.0 * dirichlet_energy(w) + float(point_terms.sum())
    on_holes = np.all(w.values.ravel()[holes.resolved_nodes.members] == 1.0)
    outer = spec.boundary_mask() & ~holes.t_eps.mask()
    on_boundary = np.all(w.values[outer] == 0.0)
    ok = bool(on_holes and on_boundary and sol.residual < 1e-6)
    return CorrectorRun(float(eps), float(alpha0), holes, w, lp_norm(w, 2.0),
                        {float(p): lp_norm(w, p) for p in p_values}, math.sqrt(grad), ok, grad, point_terms)


def solve_free_corrector(eps: float, alpha0: float, gamma: GammaField, spec: GridSpec) -> ScalarField:
    """``Lap w0 = alpha0 - sum gamma(k) eps^n delta_{eps k}`` in D, ``w0 = 0`` on the boundary."""
    n = spec.dim
    loads = np.zeros(spec.shape)
    for k in lattice_sites_in(spec, eps):
        if not gamma.window.contains(k):
            raise ValueError(f"gamma field window does not cover lattice point {k}")
        g = gamma.at(k)
        if g:
            loads[spec.nearest_index(eps * np.asarray(k, dtype=float))] += eps**n * g
    problem = ObstacleProblem(spec, -float(alpha0), NodeSet.empty(spec), point_loads=loads)
    return solve_obstacle(problem).field


def free_profile(x, eps: float, k, alpha0: float, r: float, n: int) -> np.ndarray:
    """h^eps_{alpha,k}: the local profile of w0 near the hole at eps k."""
    d = np.atleast_2d(np.asarray(x, dtype=float)) - eps * np.asarray(k, dtype=float)
    rho = np.linalg.norm(d, axis=-1)
    quad = alpha0 / (2 * n) * rho**2
    with np.errstate(divide="ignore"):  # +inf at the hole centre itself
        if n == 2:
            return quad - r * eps**2 * np.log(rho)
        return quad + eps**n * r ** (n - 2) / rho ** (n - 2)


@dataclass(frozen=True)
class ScalingFit:
    eps: tuple
    norms: tuple
    slope: float
    degenerate: bool
    log_ratios: tuple = ()

    def to_dict(self) -> dict:
        return {"eps": list(self.eps), "norms": list(self.norms), "slope": self.slope,
                "degenerate": self.degenerate, "log_ratios": list(self.log_ratios)}


def norm_scaling(runs, p: float = 2.0) -> ScalingFit:
    """Least-squares slope of ``log ||w||_p`` against ``log eps``.

    For n=2 also returns ``||w||_p / (eps^2 |log eps|)`` per run.
    """
    runs = list(runs)
    if len(runs) < 3:
        raise ValueError("need at least three runs")
    eps = np.array([r.eps for r in runs])
    norms = np.array([r.lp[float(p)] if float(p) in r.lp else lp_norm(r.w, p) for r in runs])
    n = runs[0].w.spec.dim
    ratios = tuple(float(v / (e * e * abs(math.log(e)))) for v, e in zip(norms, eps)) if n == 2 else ()
    if np.any(norms <= 0):
        return ScalingFit(tuple(eps), tuple(norms), float("nan"), True, ratios)
    slope = float(np.polyfit(np.log(eps), np.log(norms), 1)[0])
    return ScalingFit(tuple(eps), tuple(norms), slope, False, ratios)


def gradient_concentration(run: CorrectorRun, phi) -> tuple[float, float]:
    """(int |grad w|^2 phi, alpha0 int phi) with phi a field or a callable of coordinates."""
    spec = run.w.spec
    if callable(phi):
        x = spec.positions()
        phi = phi(*[x[..., a] for a in range(spec.dim)])
    phi = np.broadcast_to(np.asarray(phi, dtype=float), spec.shape)
    total = 0.0
    for a, d, wt in face_differences(run.w):
        lo = [slice(None)] * spec.dim
        hi = [slice(None)] * spec.dim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        phi_face = 0.5 * (phi[tuple(lo)] + phi[tuple(hi)])
        total += float(np.sum(wt * d * d * phi_face))
    nodes, _ = run.holes.point_nodes
    total += float(np.sum(run.point_terms * phi.ravel()[nodes]))
    return total, run.alpha0 * float(np.sum(spec.node_weights() * phi))


def h1_bound_check(runs) -> dict:
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("need at least two runs")
    vals = np.array([r.h1_semi for r in runs])
    ratio = float(vals.max() / vals.min()) if vals.min() > 0 else (1.0 if vals.max() == 0 else math.inf)
    return {"max": float(vals.max()), "min": float(vals.min()), "ratio": ratio}
