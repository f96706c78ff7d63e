"""Capacities, equilibrium potentials and the far-field monopole picture.

For ``n = 3`` the condition "phi -> 0 at infinity" is imposed on a finite
box in one of two ways:

``farfield`` (default)
    The exterior of the box is replaced by the exact monopole energy.  If
    ``phi`` behaves like ``c/|x|`` outside the box then
    ``int_ext |grad phi|^2 = int_dbox (x.nu / |x|^2) phi^2``; this surface
    term is added to the discrete energy as a diagonal Robin matrix ``B``.
    It is exact for balls and leaves only higher multipoles as truncation
    error, so small boxes suffice.

``dirichlet``
    ``phi = 0`` on the box.  This overestimates the capacity by a factor of
    about ``1/(1 - r/R)``.

For ``n = 2`` the capacity is relative to the unit disk: nodes with
``|x| >= 1`` are held at zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache, reduce

import numpy as np
import scipy.sparse as sp

from ._linalg import SPDSolver
from .grid import GridSpec, NodeSet, ScalarField, dirichlet_energy, rasterize_shape, stiffness_matrix
from .shapes import ShapeSpec

METHODS = ("closed_form", "variational", "discrete_node")
BOUNDARIES = ("farfield", "dirichlet")

# lattice radius used to calibrate single-node capacities
_NODE_BOX_3D = 24
_NODE_DISK_2D = 128


@dataclass(frozen=True)
class CapacityResult:
    value: float
    method: str
    resolution: float | None = None
    residual: float = 0.0
    box_radius: float | None = None
    boundary: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown capacity method {self.method!r}")
        if self.value < 0:
            raise ValueError("capacity must be >= 0")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "resolution": self.resolution,
            "residual": self.residual,
            "box_radius": self.box_radius,
            "boundary": self.boundary,
        }


def cap_ball(r: float, n: int) -> float:
    """Closed-form capacity of the ball of radius ``r`` (relative to B_1 when n=2)."""
    if n == 3:
        if r < 0:
            raise ValueError("radius must be >= 0")
        return 4.0 * math.pi * r
    if n == 2:
        if not 0 <= r < 1:
            raise ValueError("n=2 capacity is relative to B_1 and needs 0 <= r < 1")
        return 0.0 if r == 0 else -2.0 * math.pi / math.log(r)
    raise ValueError("n must be 2 or 3")


def fundamental_solution(x, n: int) -> np.ndarray:
    """h(x) with -Lap h = delta."""
    rho = np.linalg.norm(np.atleast_2d(x), axis=-1)
    if n == 3:
        return 1.0 / (4.0 * math.pi * rho)
    return -np.log(rho) / (2.0 * math.pi)


def centred_grid(n: int, radius: float, h: float) -> GridSpec:
    """Grid on ``[-radius, radius]^n`` with a node at the origin."""
    cells = int(round(radius / h))
    if cells < 2 or abs(cells * h - radius) > 1e-9 * radius:
        raise ValueError(f"radius {radius} is not a multiple of h={h}")
    return GridSpec(n, (-cells * h,) * n, h, (2 * cells + 1,) * n)


def robin_matrix(spec: GridSpec) -> sp.dia_matrix:
    """Surface quadrature of ``(x.nu/|x|^2) phi^2`` over the outer faces of the grid box."""
    n = spec.dim
    x = spec.positions()
    r2 = np.sum(x**2, axis=-1)
    diag = np.zeros(spec.shape)
    for a in range(n):
        ws = []
        for b in range(n):
            if b == a:
                ws.append(np.ones(spec.shape[b]))
            else:
                w = np.ones(spec.shape[b])
                w[0] = w[-1] = 0.5
                ws.append(w)
        w = spec.h ** (n - 1) * reduce(np.multiply.outer, ws)
        for side in (0, -1):
            sl = [slice(None)] * n
            sl[a] = side
            sl = tuple(sl)
            normal = 1.0 if side == -1 else -1.0
            diag[sl] += w[sl] * normal * x[sl][..., a] / r2[sl]
    return sp.diags(diag.ravel())


@dataclass(eq=False)
class PotentialSolution:
    """Discrete equilibrium potential with the data needed for the identities."""

    phi: ScalarField
    shape_nodes: NodeSet
    capacity: float
    exterior_energy: float
    residual: float
    boundary: str
    box_radius: float
    charge: float = field(default=0.0)


def _solve_mask(spec: GridSpec, shape_mask: np.ndarray, zero_mask: np.ndarray, robin: bool, rtol: float):
    K = stiffness_matrix(spec)
    if robin:
        K = (K + robin_matrix(spec)).tocsr()
    one = shape_mask.ravel()
    fixed = one | zero_mask.ravel()
    free = ~fixed
    phi = np.zeros(spec.size)
    phi[one] = 1.0
    rhs = -(K[free][:, one] @ phi[one])
    A = K[free][:, free]
    solver = SPDSolver(A, rtol=rtol)
    phi[free] = solver.solve(rhs)
    res = float(np.max(np.abs(A @ phi[free] - rhs), initial=0.0)) / spec.h**spec.dim
    energy = float(phi @ (K @ phi))
    charge = float((K @ phi)[one].sum())
    return phi, energy, charge, res


def solve_potential(shape: ShapeSpec, n: int, box_radius: float | None, h: float,
                    boundary: str = "farfield", rtol: float = 1e-10) -> PotentialSolution:
    """Equilibrium potential of ``shape`` centred at the origin.

    For n=2 the domain is the unit disk and ``box_radius`` must be None or 1.
    """
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}")
    rad = shape.bounding_radius
    if n == 2:
        if box_radius not in (None, 1, 1.0):
            raise ValueError("n=2 capacities are relative to B_1; box_radius must be 1")
        if rad >= 1:
            raise ValueError("shape must lie inside B_1")
        box_radius = 1.0
    elif n == 3:
        if box_radius is None:
            box_radius = 16 * 2 * rad
        if box_radius - rad < 2 * rad:
            raise ValueError("box must leave a margin of at least the shape diameter")
    else:
        raise ValueError("n must be 2 or 3")
    spec = centred_grid(n, box_radius, h)
    zero_mask = spec.boundary_mask()
    if n == 2:
        zero_mask = zero_mask | (np.sum(spec.positions() ** 2, axis=-1) >= 1.0 - 1e-12)
    robin = n == 3 and boundary == "farfield"
    if robin:
        zero_mask = np.zeros(spec.shape, dtype=bool)
    nodes = rasterize_shape(shape, (0.0,) * n, spec) if not shape.is_empty else NodeSet.empty(spec)
    if len(nodes) == 0:
        phi = ScalarField.zeros(spec)
        return PotentialSolution(phi, nodes, 0.0, 0.0, 0.0, boundary, box_radius)
    phi, energy, charge, res = _solve_mask(spec, nodes.mask(), zero_mask, robin, rtol)
    mask = spec.boundary_mask() | nodes.mask()
    fld = ScalarField(spec, phi.reshape(spec.shape), mask)
    ext = float(phi @ (robin_matrix(spec) @ phi)) if robin else 0.0
    return PotentialSolution(fld, nodes, energy, ext, res, boundary, box_radius, charge)


def cap_variational(shape: ShapeSpec, n: int, box_radius: float | None, h: float,
                    boundary: str = "farfield") -> CapacityResult:
    sol = solve_potential(shape, n, box_radius, h, boundary)
    return CapacityResult(sol.capacity, "variational", h, sol.residual, sol.box_radius,
                          boundary if n == 3 else "disk")


def equilibrium_potential(shape: ShapeSpec, n: int, box_radius: float | None, h: float,
                          boundary: str = "farfield") -> ScalarField:
    if n != 3:
        raise ValueError("equilibrium potentials are defined for n=3")
    return solve_potential(shape, n, box_radius, h, boundary).phi


def energy_identity(sol: PotentialSolution) -> float:
    """``2 * dirichlet_energy(phi)`` plus the exterior monopole energy (zero for Dirichlet boxes)."""
    return 2.0 * dirichlet_energy(sol.phi) + sol.exterior_energy


def shell_flux(phi: ScalarField, radius: float) -> float:
    """Outward flux ``-int phi_nu`` through the node shell of the cube ``|x|_inf <= radius``.

    Summed face by face from stencil differences, independent of any matrix.
    """
    spec = phi.spec
    x = spec.positions()
    inside = np.max(np.abs(x), axis=-1) <= radius + 1e-9 * spec.h
    v = phi.values
    total = 0.0
    w = spec.h ** (spec.dim - 2)
    for a in range(spec.dim):
        ins = np.diff(inside.astype(np.int8), axis=a)
        d = np.diff(v, axis=a)
        # ins == -1: inner node first, flux in +a direction is -d
        total += w * float(np.sum(np.where(ins == -1, -d, 0.0)) + np.sum(np.where(ins == 1, d, 0.0)))
    return total


@dataclass(frozen=True)
class FarfieldProfile:
    radii: tuple[float, ...]
    deviation: tuple[float, ...]
    exponent: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"radii": list(self.radii), "deviation": list(self.deviation),
                "exponent": self.exponent, "warnings": list(self.warnings)}


def farfield_check(phi: ScalarField, gamma: float, M: float, radii=None) -> FarfieldProfile:
    """Profile of ``sup_{|x|=rho} |phi/(gamma h) - 1|`` over ``rho``.

    ``M`` is the radius of a ball containing the shape; radii default to
    ``2M, 4M, ...`` up to half the box.
    """
    spec = phi.spec
    if spec.dim != 3:
        raise ValueError("far-field check is for n=3")
    # the box extends box_radius to each side; trust the profile up to half of that
    half_box = 0.25 * min(spec.extent)
    if radii is None:
        radii = []
        rho = 2.0 * M
        while rho <= half_box:
            radii.append(rho)
            rho *= 2
    radii = [float(r) for r in radii]
    x = spec.positions().reshape(-1, 3)
    dist = np.linalg.norm(x, axis=1)
    vals = phi.values.ravel()
    devs, warn = [], []
    for rho in radii:
        if rho > half_box:
            warn.append(f"radius {rho} exceeds half the box ({half_box}); truncation may dominate")
        sel = np.abs(dist - rho) <= 0.5 * spec.h
        if not sel.any():
            raise ValueError(f"no nodes near |x|={rho}")
        ratio = vals[sel] / (gamma * fundamental_solution(x[sel], 3))
        devs.append(float(np.max(np.abs(ratio - 1.0))))
    for w in warn:
        warnings.warn(w)
    if len(radii) >= 2 and all(d > 0 for d in devs):
        slope = float(np.polyfit(np.log(radii), np.log(devs), 1)[0])
    else:
        slope = float("nan")
    return FarfieldProfile(tuple(radii), tuple(devs), slope, tuple(warn))


@lru_cache(maxsize=None)
def _node_constant_3d() -> float:
    """Capacity of one node of the unit lattice."""
    spec = centred_grid(3, _NODE_BOX_3D, 1.0)
    mask = np.zeros(spec.shape, dtype=bool)
    mask[(_NODE_BOX_3D,) * 3] = True
    _, energy, _, _ = _solve_mask(spec, mask, np.zeros(spec.shape, dtype=bool), True, 1e-12)
    return energy


@lru_cache(maxsize=None)
def _node_offset_2d() -> float:
    """kappa in cap(node, disk of R lattice units) = 2 pi / (log R + kappa)."""
    R = _NODE_DISK_2D
    spec = centred_grid(2, float(R), 1.0)
    mask = np.zeros(spec.shape, dtype=bool)
    mask[R, R] = True
    zero = spec.boundary_mask() | (np.sum(spec.positions() ** 2, axis=-1) >= R * R - 1e-9)
    _, energy, _, _ = _solve_mask(spec, mask, zero, False, 1e-12)
    return 2.0 * math.pi / energy - math.log(R)


def discrete_node_capacity(spec: GridSpec, n: int | None = None) -> float:
    """Capacity of a single grid node at spacing ``spec.h``.

    n=3 uses exact scaling ``c_1 * h``.  n=2 is relative to B_1, computed
    exactly on a disk of 128 lattice units and continued to other spacings
    through ``2 pi / (|log h| + kappa)``, exact in the limit of large disks.
    """
    n = spec.dim if n is None else n
    if n == 3:
        return _node_constant_3d() * spec.h
    if n == 2:
        if spec.h >= 0.5:
            raise ValueError("node capacity relative to B_1 needs h < 1/2")
        return 2.0 * math.pi / (-math.log(spec.h) + _node_offset_2d())
    raise ValueError("n must be 2 or 3")


@lru_cache(maxsize=None)
def _reference_box_capacity(half_widths: tuple[float, ...]) -> float:
    shape = ShapeSpec.box(half_widths)
    h = min(half_widths) / 6.0
    rad = shape.bounding_radius
    cells = int(math.ceil(3.0 * rad / h))
    return cap_variational(shape, 3, cells * h, h).value


def box_shape_for_gamma(gamma: float, aspect=None) -> ShapeSpec:
    """Box with half widths proportional to ``aspect`` whose capacity is ``gamma`` (n=3).

    Uses ``cap(s B) = s cap(B)``; the reference box is solved once per aspect.
    """
    aspect = (0.5, 0.5, 0.5) if aspect is None else tuple(float(a) for a in aspect)
    if len(aspect) != 3 or min(aspect) <= 0:
        raise ValueError("box aspect needs three positive half widths")
    if gamma == 0:
        return ShapeSpec.empty()
    scale = gamma / _reference_box_capacity(aspect)
    return ShapeSpec.box([a * scale for a in aspect])
