"""Uniform structured grids in two and three dimensions.

Every solver in the package works on node values of a vertex-centred grid
with square cells.  The outermost layer of nodes always carries Dirichlet
data, so the (2n+1)-point stencil is complete at every free node.

Field dump format (ASCII)::

    dim nx ny [nz] h ox oy [oz]
    v_0
    v_1
    ...

values in C (row-major) order, first axis slowest, written with ``repr`` so
a dump/load round trip is bit exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp

from .shapes import ShapeSpec


@dataclass(frozen=True)
class GridSpec:
    dim: int
    origin: tuple[float, ...]
    h: float
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if len(self.origin) != self.dim or len(self.shape) != self.dim:
            raise ValueError("origin and shape must have dim entries")
        if not self.h > 0:
            raise ValueError("spacing h must be positive")
        if any(int(s) < 4 for s in self.shape):
            raise ValueError(f"need at least 4 nodes per side, got {self.shape}")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def from_extent(cls, origin, extent, cells) -> "GridSpec":
        """Grid covering ``origin + [0, extent]`` with ``cells`` cells per axis.

        Rejects anisotropic spacing.
        """
        extent = np.broadcast_to(np.asarray(extent, dtype=float), (len(origin),))
        cells = np.broadcast_to(np.asarray(cells, dtype=int), (len(origin),))
        hs = extent / cells
        if not np.allclose(hs, hs[0], rtol=1e-12, atol=0):
            raise ValueError(f"anisotropic spacing {hs}; square cells only")
        return cls(len(origin), tuple(origin), float(hs[0]), tuple(int(c) + 1 for c in cells))

    @classmethod
    def unit_cube(cls, dim: int, cells: int) -> "GridSpec":
        return cls.from_extent((0.0,) * dim, 1.0, cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple((s - 1) * self.h for s in self.shape)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def axis(self, a: int) -> np.ndarray:
        return self.origin[a] + self.h * np.arange(self.shape[a])

    def positions(self) -> np.ndarray:
        """Node coordinates, array of shape ``(*shape, dim)``."""
        grids = np.meshgrid(*[self.axis(a) for a in range(self.dim)], indexing="ij")
        return np.stack(grids, axis=-1)

    def position_of(self, flat: np.ndarray) -> np.ndarray:
        idx = np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)
        return np.asarray(self.origin) + self.h * idx

    def nearest_index(self, point) -> tuple[int, ...]:
        rel = (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.h
        return tuple(int(v) for v in np.rint(rel))

    def contains_index(self, idx) -> bool:
        return all(0 <= i < s for i, s in zip(idx, self.shape))

    def flat(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[a] = 0
            mask[tuple(sl)] = True
            sl[a] = -1
            mask[tuple(sl)] = True
        return mask

    def node_weights(self) -> np.ndarray:
        """Trapezoid quadrature weights (``h**n`` in the interior)."""
        ws = []
        for s in self.shape:
            w = np.ones(s)
            w[0] = w[-1] = 0.5
            ws.append(w)
        return self.cell_volume * reduce(np.multiply.outer, ws)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "origin": list(self.origin), "h": self.h, "shape": list(self.shape)}


@dataclass(frozen=True, eq=False)
class NodeSet:
    spec: GridSpec
    members: np.ndarray

    def __post_init__(self):
        m = np.unique(np.asarray(self.members, dtype=np.int64).ravel())
        if m.size and (m[0] < 0 or m[-1] >= self.spec.size):
            raise ValueError("node index outside grid")
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    @classmethod
    def empty(cls, spec: GridSpec) -> "NodeSet":
        return cls(spec, np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.members.size)

    def __iter__(self):
        return iter(self.members.tolist())

    def mask(self) -> np.ndarray:
        m = np.zeros(self.spec.size, dtype=bool)
        m[self.members] = True
        return m.reshape(self.spec.shape)

    def union(self, *others: "NodeSet") -> "NodeSet":
        return NodeSet(self.spec, np.concatenate([self.members] + [o.members for o in others]))

    def positions(self) -> np.ndarray:
        return self.spec.position_of(self.members)


@dataclass(eq=False)
class ScalarField:
    spec: GridSpec
    values: np.ndarray
    boundary_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.spec.shape)
        if self.boundary_mask is None:
            self.boundary_mask = self.spec.boundary_mask()
        else:
            self.boundary_mask = np.asarray(self.boundary_mask, dtype=bool).reshape(self.spec.shape)
            if not self.boundary_mask[self.spec.boundary_mask()].all():
                raise ValueError("outer node layer must be Dirichlet")
        if not np.isfinite(self.values).all():
            raise ValueError("field values must be finite")

    @classmethod
    def zeros(cls, spec: GridSpec, boundary_mask=None) -> "ScalarField":
        return cls(spec, np.zeros(spec.shape), boundary_mask)

    @classmethod
    def from_function(cls, spec: GridSpec, fn, boundary_mask=None) -> "ScalarField":
        x = spec.positions()
        return cls(spec, fn(*[x[..., a] for a in range(spec.dim)]), boundary_mask)

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary_mask

    def copy(self) -> "ScalarField":
        return ScalarField(self.spec, self.values.copy(), self.boundary_mask.copy())


def laplacian_apply(u: ScalarField) -> ScalarField:
    """Five/seven-point Laplacian on free nodes, zero on Dirichlet nodes."""
    if not u.interior.any():
        raise ValueError("field has no interior nodes")
    v = u.values
    n = u.spec.dim
    out = np.zeros_like(v)
    inner = (slice(1, -1),) * n
    acc = -2.0 * n * v[inner]
    for a in range(n):
        lo = [slice(1, -1)] * n
        hi = [slice(1, -1)] * n
        lo[a] = slice(0, -2)
        hi[a] = slice(2, None)
        acc = acc + v[tuple(lo)] + v[tuple(hi)]
    out[inner] = acc / u.spec.h**2
    out[u.boundary_mask] = 0.0
    return ScalarField(u.spec, out, u.boundary_mask)


def _trapezoid_1d(s: int) -> sp.dia_matrix:
    w = np.ones(s)
    w[0] = w[-1] = 0.5
    return sp.diags(w)


def stiffness_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Assembled Dirichlet form: ``u @ K @ u == 2 * dirichlet_energy(u)``.

    Faces lying in the outer boundary planes carry trapezoid half weights, so
    ``K`` restricted to free rows is ``-h**n`` times the Laplacian stencil.
    """
    n = spec.dim
    terms = []
    for a in range(n):
        s = spec.shape[a]
        d = sp.diags([-np.ones(s - 1), np.ones(s - 1)], [0, 1], shape=(s - 1, s))
        factors = [_trapezoid_1d(spec.shape[b]) if b != a else (d.T @ d) for b in range(n)]
        terms.append(reduce(sp.kron, factors))
    return (spec.h ** (n - 2) * sum(terms)).tocsr()


def face_differences(u: ScalarField):
    """Yield ``(axis, diff, weight)`` per axis: forward differences across faces with their weights."""
    n = u.spec.dim
    for a in range(n):
        diff = np.diff(u.values, axis=a)
        ws = []
        for b in range(n):
            if b == a:
                ws.append(np.ones(u.spec.shape[b] - 1))
            else:
                w = np.ones(u.spec.shape[b])
                w[0] = w[-1] = 0.5
                ws.append(w)
        yield a, diff, u.spec.h ** (n - 2) * reduce(np.multiply.outer, ws)


def dirichlet_energy(u: ScalarField) -> float:
    """Discrete ``1/2 * integral |grad u|^2``."""
    return 0.5 * sum(float(np.sum(w * d * d)) for _, d, w in face_differences(u))


def lp_norm(u: ScalarField, p: float) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    w = u.spec.node_weights()
    return float(np.sum(w * np.abs(u.values) ** p) ** (1.0 / p))


# rounding slack for the closed shape test, relative to h
_INSIDE_SLACK = 1e-9


def rasterize_shape(shape: ShapeSpec, center, spec: GridSpec) -> NodeSet:
    """Nodes inside ``center + shape``; sub-grid shapes collapse to the nearest node."""
    if shape.is_empty:
        return NodeSet.empty(spec)
    center = np.asarray(center, dtype=float)
    rad = shape.bounding_radius
    lo = np.floor((center - rad - np.asarray(spec.origin)) / spec.h).astype(int)
    hi = np.ceil((center + rad - np.asarray(spec.origin)) / spec.h).astype(int)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(spec.shape) - 1)
    if np.any(hi < lo):
        near = spec.nearest_index(center)
        if not spec.contains_index(near):
            raise ValueError("shape does not intersect the grid")
        return NodeSet(spec, [spec.flat(near)])
    ranges = [np.arange(l, h_ + 1) for l, h_ in zip(lo, hi)]
    idx = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    offsets = np.asarray(spec.origin) + spec.h * idx - center
    inside = shape.contains(offsets, slack=_INSIDE_SLACK * spec.h)
    if not inside.any():
        near = spec.nearest_index(center)
        if not spec.contains_index(near):
            raise ValueError("shape does not intersect the grid")
        return NodeSet(spec, [spec.flat(near)])
    flat = np.ravel_multi_index(tuple(idx[inside].T), spec.shape)
    return NodeSet(spec, flat)


def write_field(path, u: ScalarField) -> None:
    spec = u.spec
    header = [str(spec.dim), *map(str, spec.shape), repr(spec.h), *map(repr, spec.origin)]
    with open(path, "w") as fh:
        fh.write(" ".join(header) + "\n")
        fh.write("\n".join(repr(float(v)) for v in u.values.ravel()))
        fh.write("\n")


def read_field(path) -> ScalarField:
    with open(path) as fh:
        header = fh.readline().split()
        dim = int(header[0])
        shape = tuple(int(s) for s in header[1 : 1 + dim])
        h = float(header[1 + dim])
        origin = tuple(float(o) for o in header[2 + dim : 2 + 2 * dim])
        values = np.array([float(line) for line in fh if line.strip()])
    spec = GridSpec(dim, origin, h, shape)
    return ScalarField(spec, values.reshape(shape))


def write_csv_slice(path, u: ScalarField, axis: int = 2, index: int | None = None) -> None:
    """Write a 2D slice as tidy ``x,y,value`` rows (the whole field for dim 2)."""
    spec = u.spec
    vals = u.values
    pos = spec.positions()
    if spec.dim == 3:
        index = spec.shape[axis] // 2 if index is None else index
        vals = np.take(vals, index, axis=axis)
        pos = np.take(pos, index, axis=axis)
        keep = [a for a in range(3) if a != axis]
        pos = pos[..., keep]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "value"])
        for (x, y), v in zip(pos.reshape(-1, 2), vals.ravel()):
            wr.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def ball_volume(n: int) -> float:
    """Volume of the unit ball (omega_n)."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)
