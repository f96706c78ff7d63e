"""Discrete obstacle problems.

Every problem here is the quadratic program

    minimise  1/2 x^T Q x - F^T x   subject to  x_j >= 0 for j in C

where ``x`` collects the free grid values and, for sub-grid holes, one extra
unknown per hole.  ``Q`` is the stiffness matrix (``u^T K u`` is twice the
discrete Dirichlet energy, so free rows of ``K`` are ``-h^n`` times the
Laplacian) plus the hole couplings, and ``F = h^n f - K_FD u_D``.
Residuals are always reported in PDE units, i.e. divided by ``h^n``.

A sub-grid hole at node ``i`` with coupling capacity ``W`` contributes
``1/2 W (u_i - s)^2`` with its own value ``s``; the constraint "u >= 0 on
the hole" becomes ``s >= 0``.

Three solvers are provided: a primal-dual active set method (default, exact
up to a linear solve), projected SOR and exhaustive active-set enumeration.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._linalg import SPDSolver
from .grid import GridSpec, NodeSet, ScalarField, stiffness_matrix
from .media import GammaField, HoleField, LatticeBox

CONSTRAINT_KINDS = ("lower_zero", "equality_one")
SOLVERS = ("pdas", "psor", "brute")


@dataclass(eq=False)
class ObstacleProblem:
    """Obstacle problem on ``spec`` with source ``rhs`` (PDE units).

    ``boundary`` holds Dirichlet values on the outer layer (zero if None).
    ``point_nodes``/``point_coupling`` describe sub-grid holes.
    """

    spec: GridSpec
    rhs: np.ndarray
    constraint_nodes: NodeSet
    constraint_kind: str = "lower_zero"
    boundary: np.ndarray | None = None
    point_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    point_coupling: np.ndarray = field(default_factory=lambda: np.empty(0))
    point_loads: np.ndarray | None = None

    def __post_init__(self):
        if self.constraint_kind not in CONSTRAINT_KINDS:
            raise ValueError(f"constraint_kind must be one of {CONSTRAINT_KINDS}")
        rhs = np.broadcast_to(np.asarray(self.rhs, dtype=float), self.spec.shape)
        if not np.isfinite(rhs).all():
            raise ValueError("rhs must be finite")
        self.rhs = np.array(rhs)
        if self.constraint_nodes.spec != self.spec:
            raise ValueError("constraint nodes live on a different grid")
        if self.boundary is not None:
            self.boundary = np.asarray(self.boundary, dtype=float).reshape(self.spec.shape)
        self.point_nodes = np.asarray(self.point_nodes, dtype=np.int64).ravel()
        self.point_coupling = np.asarray(self.point_coupling, dtype=float).ravel()
        if self.point_nodes.size != self.point_coupling.size:
            raise ValueError("one coupling per point hole")
        if np.any(self.point_coupling <= 0):
            raise ValueError("point couplings must be positive")
        bmask = self.spec.boundary_mask().ravel()
        if bmask[self.constraint_nodes.members].any() or bmask[self.point_nodes].any():
            raise ValueError("constraints must sit on interior nodes")
        if self.point_loads is not None:
            self.point_loads = np.asarray(self.point_loads, dtype=float).reshape(self.spec.shape)


@dataclass(eq=False)
class ObstacleSolution:
    field: ScalarField
    contact_mask: np.ndarray
    iterations: int
    residual: float
    slack_residual: float
    energy: float
    hole_values: np.ndarray
    solver: str

    @property
    def contact_count(self) -> int:
        return int(self.contact_mask.sum())

    def summary(self) -> dict:
        return {
            "energy": self.energy,
            "iterations": self.iterations,
            "residual": self.residual,
            "slack_residual": self.slack_residual,
            "contact_count": self.contact_count,
            "solver": self.solver,
        }


@dataclass(eq=False)
class _System:
    Q: sp.csr_matrix
    F: np.ndarray
    constrained: np.ndarray
    free: np.ndarray
    u_fixed: np.ndarray
    n_points: int
    scale: float
    const: float

    def field(self, x: np.ndarray, spec: GridSpec) -> np.ndarray:
        u = self.u_fixed.copy()
        u[self.free] = x[: self.free.size]
        return u.reshape(spec.shape)


def _assemble(problem: ObstacleProblem) -> _System:
    spec = problem.spec
    N = spec.size
    K = stiffness_matrix(spec)
    hn = spec.h**spec.dim
    dirichlet = spec.boundary_mask().ravel().copy()
    u_fixed = np.zeros(N)
    if problem.boundary is not None:
        u_fixed[dirichlet] = problem.boundary.ravel()[dirichlet]
    eq_one = problem.constraint_kind == "equality_one"
    if eq_one:
        dirichlet[problem.constraint_nodes.members] = True
        u_fixed[problem.constraint_nodes.members] = 1.0
    free = np.flatnonzero(~dirichlet)
    loads = hn * problem.rhs.ravel()
    if problem.point_loads is not None:
        loads = loads + problem.point_loads.ravel()
    F_u = loads[free] - K[free][:, dirichlet] @ u_fixed[dirichlet]
    Q_uu = K[free][:, free]
    const = 0.5 * float(u_fixed[dirichlet] @ (K[dirichlet][:, dirichlet] @ u_fixed[dirichlet])) - float(loads[dirichlet] @ u_fixed[dirichlet])
    pos = -np.ones(N, dtype=np.int64)
    pos[free] = np.arange(free.size)
    P = problem.point_nodes.size
    W = problem.point_coupling
    if P:
        rows = pos[problem.point_nodes]
        if np.any(rows < 0):
            raise ValueError("point holes must sit on free nodes")
        nf = free.size
        if eq_one:
            # s fixed at 1: the coupling acts as a penalty towards 1
            Q = (Q_uu + sp.csr_matrix((W, (rows, rows)), shape=(nf, nf))).tocsr()
            F = F_u.copy()
            np.add.at(F, rows, W)
            const += 0.5 * float(W.sum())
            P_unknowns = 0
        else:
            cols = nf + np.arange(P)
            C = sp.csr_matrix(
                (np.concatenate([W, -W, -W, W]),
                 (np.concatenate([rows, rows, cols, cols]), np.concatenate([rows, cols, rows, cols]))),
                shape=(nf + P, nf + P),
            )
            Q = (sp.block_diag([Q_uu, sp.csr_matrix((P, P))]) + C).tocsr()
            F = np.concatenate([F_u, np.zeros(P)])
            P_unknowns = P
    else:
        Q, F, P_unknowns = Q_uu.tocsr(), F_u, 0
    constrained = np.zeros(Q.shape[0], dtype=bool)
    if not eq_one:
        constrained[pos[problem.constraint_nodes.members]] = True
        constrained[free.size:] = True
    return _System(Q, np.asarray(F, dtype=float), constrained, free, u_fixed, P_unknowns, hn, const)


def _finish(problem, sysm: _System, x: np.ndarray, iterations: int, solver: str) -> ObstacleSolution:
    spec = problem.spec
    C = sysm.constrained
    # exact projection: rounding-level negatives on constrained unknowns are zeros
    x = x.copy()
    x[C & (x < 0) & (x > -1e-12 * (1 + np.abs(x).max()))] = 0.0
    lam = (sysm.Q @ x - sysm.F) / sysm.scale
    free_rows = ~C | (x > 0)
    residual = float(np.max(np.abs(lam[free_rows]), initial=0.0))
    slack = float(np.max(np.abs(np.minimum(x[C], lam[C])), initial=0.0))
    u = sysm.field(x, spec)
    contact = np.zeros(spec.size, dtype=bool)
    nf = sysm.free.size
    if problem.constraint_kind == "lower_zero":
        cons = problem.constraint_nodes.members
        contact[cons] = u.ravel()[cons] == 0.0
        s = x[nf:]
        contact[problem.point_nodes[s == 0.0]] = True
    else:
        s = np.ones(problem.point_nodes.size)
    energy = 0.5 * float(x @ (sysm.Q @ x)) - float(sysm.F @ x) + sysm.const
    mask = spec.boundary_mask()
    if problem.constraint_kind == "equality_one":
        mask = mask | problem.constraint_nodes.mask()
    fld = ScalarField(spec, u, mask)
    return ObstacleSolution(fld, contact.reshape(spec.shape), iterations, residual, slack, energy, s, solver)


def _pdas(sysm: _System, tol: float, max_iters: int, x0=None):
    Q, F, C = sysm.Q, sysm.F, sysm.constrained
    cdiag = Q.diagonal()
    if x0 is None:
        # start from the unconstrained minimiser: active where it goes negative
        x = SPDSolver(Q).solve(F)
    else:
        x = np.asarray(x0, dtype=float).copy()
    lam = np.zeros_like(F)
    active = C & (lam - cdiag * x > 0)
    seen = set()
    for it in range(1, max_iters + 1):
        inactive = np.flatnonzero(~active)
        x = np.zeros_like(F)
        if inactive.size:
            x[inactive] = SPDSolver(Q[inactive][:, inactive]).solve(F[inactive])
        lam = Q @ x - F
        lam[~active] = 0.0
        new_active = C & (lam - cdiag * x > 0)
        if np.array_equal(new_active, active):
            return x, it
        key = np.packbits(new_active).tobytes()
        if key in seen:
            # cycling from rounding: settle on the union, which is feasible
            active = active | new_active
            continue
        seen.add(key)
        active = new_active
    raise RuntimeError(f"active-set iteration did not settle in {max_iters} steps")


@numba.njit(cache=True)
def _psor_kernel(indptr, indices, data, diag, F, constrained, x, omega, tol, max_iters):
    n = x.size
    for it in range(1, max_iters + 1):
        change = 0.0
        for i in range(n):
            acc = F[i]
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    acc -= data[p] * x[j]
            new = (1.0 - omega) * x[i] + omega * acc / diag[i]
            if constrained[i] and new < 0.0:
                new = 0.0
            d = abs(new - x[i]) * diag[i]
            if d > change:
                change = d
            x[i] = new
        if change <= tol:
            return it
    return -1


def _psor(sysm: _System, tol: float, max_iters: int, omega: float, x0=None):
    Q = sysm.Q.tocsr()
    x = np.zeros_like(sysm.F) if x0 is None else np.array(x0, dtype=float)
    it = _psor_kernel(Q.indptr.astype(np.int64), Q.indices.astype(np.int64), Q.data, Q.diagonal(),
                      sysm.F, sysm.constrained, x, omega, tol * sysm.scale, max_iters)
    if it < 0:
        raise RuntimeError(f"projected SOR did not converge in {max_iters} sweeps")
    return x, it


BRUTE_MAX_UNKNOWNS = 2500
BRUTE_MAX_CONSTRAINTS = 20


def _brute(sysm: _System):
    Q, F = sysm.Q.tocsc(), sysm.F
    C = np.flatnonzero(sysm.constrained)
    if Q.shape[0] > BRUTE_MAX_UNKNOWNS or C.size > BRUTE_MAX_CONSTRAINTS:
        raise ValueError(f"brute force limited to {BRUTE_MAX_UNKNOWNS} unknowns and {BRUTE_MAX_CONSTRAINTS} constraints")
    lu = spla.splu(Q)
    xstar = lu.solve(F)
    if C.size == 0:
        return xstar, 1
    E = np.zeros((Q.shape[0], C.size))
    E[C, np.arange(C.size)] = 1.0
    Z = lu.solve(E)
    S = Z[C]
    y = xstar[C]
    # The QP is strictly convex, so exactly one active set satisfies the KKT
    # conditions (feasible values off A, nonnegative multipliers mu on A).
    # Visit sizes from both ends (0, k, 1, k-1, ...) and stop at that set, so
    # nearly-empty and nearly-full active sets are both found quickly.
    best = None
    count = 0
    k = C.size
    sizes = [s for pair in zip(range(k + 1), range(k, -1, -1)) for s in pair]
    for size in dict.fromkeys(sizes):
        for A in itertools.combinations(range(C.size), size):
            count += 1
            A = list(A)
            if A:
                mu = np.linalg.solve(S[np.ix_(A, A)], -y[A])
                if np.any(mu < -1e-12 * (1 + np.abs(mu).max())):
                    continue
                xc = y + S[:, A] @ mu
                xc[A] = 0.0
            else:
                mu, xc = None, y
            if np.all(xc >= -1e-13 * (1 + np.abs(y).max())):
                best = (A, mu)
                break
        if best is not None:
            break
    if best is None:
        raise RuntimeError("no active set satisfies the KKT conditions")
    A, mu = best
    x = xstar.copy()
    if A:
        x += Z[:, A] @ mu
        x[C[A]] = 0.0
    return x, count


def solve_obstacle(problem: ObstacleProblem, solver: str = "pdas", tol: float = 1e-8,
                   max_iters: int | None = None, omega: float = 1.5, x0=None) -> ObstacleSolution:
    """Solve ``problem`` with the chosen method (see module docstring)."""
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}")
    sysm = _assemble(problem)
    if not sysm.constrained.any():
        x, it = SPDSolver(sysm.Q).solve(sysm.F), 1
    elif solver == "pdas":
        x, it = _pdas(sysm, tol, max_iters or 200, x0)
    elif solver == "psor":
        x, it = _psor(sysm, tol, max_iters or 100_000, omega, x0)
    else:
        x, it = _brute(sysm)
    sol = _finish(problem, sysm, x, it, solver)
    if solver == "pdas" and sol.residual > max(tol, 1e-6) * 1e3:
        raise RuntimeError(f"active-set solve residual {sol.residual:.3g} above tolerance")
    return sol


def brute_force_obstacle(problem: ObstacleProblem) -> ObstacleSolution:
    """Exhaustive active-set enumeration; small instances only."""
    return solve_obstacle(problem, solver="brute")


@dataclass(frozen=True)
class KKTReport:
    stencil_residual: float
    feasibility_violation: float
    complementarity_residual: float

    def ok(self, tol: float) -> bool:
        return max(self.stencil_residual, self.feasibility_violation, self.complementarity_residual) <= tol


def check_kkt(sol: ObstacleSolution, problem: ObstacleProblem) -> KKTReport:
    """Max-norm KKT residuals of an arbitrary field (PDE units)."""
    sysm = _assemble(problem)
    u = sol.field.values.ravel()
    x = np.concatenate([u[sysm.free], np.asarray(sol.hole_values, dtype=float)[: sysm.n_points]])
    lam = (sysm.Q @ x - sysm.F) / sysm.scale
    C = sysm.constrained
    free_rows = ~C | (x > 0)
    return KKTReport(
        float(np.max(np.abs(lam[free_rows]), initial=0.0)),
        float(max(0.0, -np.min(x[C], initial=0.0))),
        float(np.max(np.abs(np.minimum(x[C], lam[C])), initial=0.0)),
    )


def solve_eps_problem(f, holes: HoleField, spec: GridSpec | None = None, solver: str = "pdas",
                      tol: float = 1e-8) -> ObstacleSolution:
    """The perforated problem: u >= 0 on the holes, u = 0 on the outer boundary."""
    spec = holes.spec if spec is None else spec
    if spec != holes.spec:
        raise ValueError("holes were built on a different grid")
    nodes, wi = holes.point_nodes
    problem = ObstacleProblem(spec, f, holes.resolved_nodes, "lower_zero",
                              point_nodes=nodes, point_coupling=wi)
    return solve_obstacle(problem, solver=solver, tol=tol)


def aux_grid(window: LatticeBox, m: int) -> GridSpec:
    """Grid of the auxiliary problem on ``A = lo + [-1/2, t - 1/2]^n`` (unit cells around each site).

    ``m`` (odd) nodes per unit length are cell centred, so interior nodes tile A
    exactly and every lattice point is a node.
    """
    if m < 4 or m % 2 == 0:
        raise ValueError("cells_per_unit m must be odd and >= 5 so lattice points fall on cell centres")
    h = 1.0 / m
    origin = tuple(l - 0.5 - 0.5 * h for l in window.lo)
    return GridSpec(window.dim, origin, h, tuple(t * m + 2 for t in window.shape))


def lattice_node(window: LatticeBox, m: int, k) -> tuple[int, ...]:
    return tuple((int(kd) - l) * m + (m + 1) // 2 for kd, l in zip(k, window.lo))


def auxiliary_problem(alpha: float, window: LatticeBox, gamma: GammaField, m: int) -> ObstacleProblem:
    spec = aux_grid(window, m)
    for d in range(window.dim):
        if window.lo[d] < gamma.window.lo[d] or window.hi[d] > gamma.window.hi[d]:
            raise ValueError("gamma field does not cover the auxiliary window")
    loads = np.zeros(spec.shape)
    for k in window.points():
        g = gamma.at(k)
        if g:
            loads[lattice_node(window, m, k)] += g
    interior = np.flatnonzero(~spec.boundary_mask().ravel())
    return ObstacleProblem(spec, -float(alpha), NodeSet(spec, interior), "lower_zero", point_loads=loads)


def solve_auxiliary(alpha: float, window: LatticeBox, gamma: GammaField, m: int,
                    solver: str = "pdas", tol: float = 1e-8) -> ObstacleSolution:
    """v-bar for the window: minimise int 1/2|grad v|^2 + alpha v - sum gamma(k) v(k), v >= 0."""
    problem = auxiliary_problem(alpha, window, gamma, m)
    if alpha > 0 and not np.any(problem.point_loads):
        sysm = _assemble(problem)
        return _finish(problem, sysm, np.zeros_like(sysm.F), 0, solver)
    return solve_obstacle(problem, solver=solver, tol=tol)


def _r_from_gamma(gamma_k: float, n: int) -> float:
    from .media import radius_from_gamma
    return radius_from_gamma(gamma_k, n)


def R_alpha(alpha: float, r: float, n: int) -> float:
    """Radius where h_{alpha,k} attains its minimum."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if n == 2:
        return math.sqrt(2.0 * r / alpha)
    return (n * (n - 2) * r ** (n - 2) / alpha) ** (1.0 / n)


def D_alpha(alpha: float, r: float, n: int) -> float:
    """Minimum value of h_{alpha,k}, so that h - D and its gradient vanish at R(alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if n == 2:
        return 0.5 * r * (1.0 - math.log(2.0 * r / alpha))
    return (alpha / (2 * n)) ** ((n - 2) / n) * r ** (2 * (n - 2) / n) * ((n - 2) / 2) ** (2 / n) * (n / (n - 2))


def h_alpha_profile(x, k, alpha: float, r: float, n: int) -> np.ndarray:
    """(alpha/2n)|x-k|^2 + r^{n-2}/|x-k|^{n-2}  (n=3)  or  ... - r log|x-k|  (n=2)."""
    d = np.atleast_2d(np.asarray(x, dtype=float)) - np.asarray(k, dtype=float)
    rho = np.linalg.norm(d, axis=-1)
    if np.any(rho == 0):
        raise ValueError("h_alpha is singular at x = k")
    quad = alpha / (2 * n) * rho**2
    if n == 2:
        return quad - r * np.log(rho)
    return quad + r ** (n - 2) / rho ** (n - 2)


def lower_bound_check(vbar: ObstacleSolution, k, alpha: float, gamma_k: float) -> float:
    """min over B_1(k) minus B_2h(k) of v-bar minus the maximum-principle lower bound."""
    spec = vbar.field.spec
    n = spec.dim
    r = _r_from_gamma(gamma_k, n)
    x = spec.positions().reshape(-1, n)
    rho = np.linalg.norm(x - np.asarray(k, dtype=float), axis=1)
    sel = (rho < 1.0) & (rho >= 2 * spec.h)
    if not sel.any():
        raise ValueError("B_1(k) has no nodes outside the 2h exclusion")
    lo, hi = np.asarray(spec.origin), np.asarray(spec.origin) + np.asarray(spec.extent)
    if np.any(np.asarray(k) - 1 < lo) or np.any(np.asarray(k) + 1 > hi):
        raise ValueError("B_1(k) must lie inside the window")
    if r == 0:
        bound = alpha / (2 * n) * (rho[sel] ** 2 - 1.0)
    else:
        bound = h_alpha_profile(x[sel], k, alpha, r, n) - alpha / (2 * n)
        if n >= 3:
            bound = bound - r ** (n - 2)
    return float(np.min(vbar.field.values.ravel()[sel] - bound))
