"""Stationary random capacity fields on the integer lattice and the holes they induce.

The realisation ``omega`` is a 64-bit seed.  The value at site ``k`` is a
function of ``(seed, k)`` only, through a counter-based SplitMix64 hash:

    z  = mix(seed + GOLDEN * (stream + 1))
    z  = mix(z ^ (k_d * AXIS[d]))          for each axis d
    u  = (z >> 11) * 2**-53                uniform in [0, 1)

with ``mix`` the SplitMix64 finaliser (constants 0xBF58476D1CE4E5B9,
0x94D049BB133111EB, shifts 30/27/31) applied after adding GOLDEN =
0x9E3779B97F4A7C15.  All arithmetic is unsigned 64-bit with wrap-around and
the float conversion is exact, so fields are bit-identical on every
platform.  Shifting the realisation by ``k'`` is literally adding ``k'`` to
the site before hashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, NodeSet, ball_volume, rasterize_shape
from .shapes import ShapeSpec

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
AXIS = tuple(np.uint64(c) for c in (0xD1B54A32D192ED03, 0xABC98388FB8FAC03, 0x8CB92BA72F3D8DD7))

LAWS = ("constant", "iid_uniform", "bernoulli_dilution", "moving_average", "shifted_periodic")


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, sites: np.ndarray, stream: int = 0) -> np.ndarray:
    """Uniform [0,1) variates, one per row of ``sites`` (integer lattice points)."""
    sites = np.ascontiguousarray(np.atleast_2d(sites), dtype=np.int64)
    base = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    z = _mix(base + GOLDEN * np.array([stream + 1], dtype=np.uint64))
    z = np.repeat(z, sites.shape[0])
    for d in range(sites.shape[1]):
        z = _mix(z ^ (sites[:, d].view(np.uint64) * AXIS[d]))
    return (z >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic sub-seed for sample ``keys`` of a master seed."""
    z = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    for k in keys:
        z = _mix(z ^ (np.array([k & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) * AXIS[0]))
    return int(z[0])


@dataclass(frozen=True)
class LatticeBox:
    """Integer sites ``lo <= k < lo + shape``."""

    lo: tuple[int, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.shape) or any(s <= 0 for s in self.shape):
            raise ValueError("lattice window must be nonempty")
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))

    @classmethod
    def cube(cls, dim: int, t: int, lo: int = 0) -> "LatticeBox":
        return cls((lo,) * dim, (t,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def hi(self) -> tuple[int, ...]:
        return tuple(l + s for l, s in zip(self.lo, self.shape))

    def points(self) -> np.ndarray:
        rng = [np.arange(l, l + s) for l, s in zip(self.lo, self.shape)]
        return np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def contains(self, k) -> bool:
        return all(l <= v < h for v, l, h in zip(k, self.lo, self.hi))

    def shifted(self, by) -> "LatticeBox":
        return LatticeBox(tuple(l + b for l, b in zip(self.lo, by)), self.shape)


@dataclass(frozen=True)
class MediumConfig:
    dim: int
    law: dict
    gamma_bar: float
    gamma_lower: float | None = None
    M: float | None = None
    shape_kind: str = "ball"
    box_aspect: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if not self.gamma_bar > 0:
            raise ValueError("gamma_bar must be > 0")
        if self.gamma_lower is not None and not 0 <= self.gamma_lower <= self.gamma_bar:
            raise ValueError("gamma_lower must lie in [0, gamma_bar]")
        if self.shape_kind not in ("ball", "box", "point"):
            raise ValueError(f"unknown shape_kind {self.shape_kind!r}")
        if self.shape_kind == "box" and self.dim == 2:
            raise ValueError("box holes need dim 3; in dim 2 holes are balls")
        object.__setattr__(self, "law", _normalise_law(self.law, self.dim))
        lo, hi = law_bounds(self.law, self.gamma_bar)
        if lo < 0 or hi > self.gamma_bar * (1 + 1e-12):
            raise ValueError(f"law {self.law['kind']} has values in [{lo}, {hi}], outside [0, gamma_bar={self.gamma_bar}]")
        if self.gamma_lower is not None and lo < self.gamma_lower * (1 - 1e-12):
            raise ValueError(f"law minimum {lo} is below gamma_lower={self.gamma_lower}")

    @property
    def support(self) -> tuple[float, float]:
        return law_bounds(self.law, self.gamma_bar)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "law": _jsonable(self.law),
            "gamma_bar": self.gamma_bar,
            "gamma_lower": self.gamma_lower,
            "M": self.M,
            "shape_kind": self.shape_kind,
            "box_aspect": None if self.box_aspect is None else list(self.box_aspect),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MediumConfig":
        d = dict(d)
        if d.get("box_aspect") is not None:
            d["box_aspect"] = tuple(d["box_aspect"])
        return cls(**d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _normalise_law(law: dict, dim: int) -> dict:
    law = dict(law)
    kind = law.get("kind")
    if kind not in LAWS:
        raise ValueError(f"unknown law {kind!r}; expected one of {LAWS}")
    need = {
        "constant": {"gamma"},
        "iid_uniform": {"gamma_lo", "gamma_hi"},
        "bernoulli_dilution": {"p_empty", "gamma"},
        "moving_average": {"L", "base"},
        "shifted_periodic": {"period", "pattern"},
    }[kind]
    allowed = need | {"kind"} | ({"weights"} if kind == "moving_average" else set())
    missing = need - law.keys()
    if missing:
        raise ValueError(f"law {kind} missing parameters {sorted(missing)}")
    extra = law.keys() - allowed
    if extra:
        raise ValueError(f"law {kind} got unknown parameters {sorted(extra)}")
    if kind == "iid_uniform" and law["gamma_lo"] > law["gamma_hi"]:
        raise ValueError("gamma_lo > gamma_hi")
    if kind == "bernoulli_dilution" and not 0 <= law["p_empty"] <= 1:
        raise ValueError("p_empty must be in [0, 1]")
    if kind == "moving_average":
        L = int(law["L"])
        if L < 0:
            raise ValueError("moving_average range L must be >= 0")
        base = _normalise_law(law["base"], dim)
        if base["kind"] not in ("iid_uniform", "bernoulli_dilution", "constant"):
            raise ValueError("moving_average base law must be iid")
        n_w = (2 * L + 1) ** dim
        w = law.get("weights")
        w = np.full(n_w, 1.0 / n_w) if w is None else np.asarray(w, dtype=float).ravel()
        if w.size != n_w or np.any(w < 0):
            raise ValueError(f"moving_average needs {n_w} nonnegative weights")
        law.update(L=L, base=base, weights=tuple(float(x) for x in w))
    if kind == "shifted_periodic":
        P = int(law["period"])
        pat = np.asarray(law["pattern"], dtype=float)
        if pat.shape != (P,) * dim:
            raise ValueError(f"pattern must have shape {(P,) * dim}")
        law.update(period=P, pattern=_jsonable(pat.tolist()))
    return law


def law_bounds(law: dict, gamma_bar: float) -> tuple[float, float]:
    kind = law["kind"]
    if kind == "constant":
        return float(law["gamma"]), float(law["gamma"])
    if kind == "iid_uniform":
        return float(law["gamma_lo"]), float(law["gamma_hi"])
    if kind == "bernoulli_dilution":
        p, g = law["p_empty"], float(law["gamma"])
        return (0.0 if p > 0 else g), (g if p < 1 else 0.0)
    if kind == "moving_average":
        blo, bhi = law_bounds(law["base"], gamma_bar)
        s = float(sum(law["weights"]))
        return min(max(s * blo, 0.0), gamma_bar), min(max(s * bhi, 0.0), gamma_bar)
    pat = np.asarray(law["pattern"], dtype=float)
    return float(pat.min()), float(pat.max())


def _iid_values(law: dict, seed: int, sites: np.ndarray, stream: int) -> np.ndarray:
    kind = law["kind"]
    if kind == "constant":
        return np.full(sites.shape[0], float(law["gamma"]))
    u = site_uniforms(seed, sites, stream)
    if kind == "iid_uniform":
        return law["gamma_lo"] + (law["gamma_hi"] - law["gamma_lo"]) * u
    if kind == "bernoulli_dilution":
        return np.where(u < law["p_empty"], 0.0, float(law["gamma"]))
    raise ValueError(f"{kind} is not an iid law")


@dataclass(frozen=True, eq=False)
class GammaField:
    config: MediumConfig
    seed: int
    window: LatticeBox
    values: np.ndarray
    shift: tuple[int, ...] = field(default=None)

    def at(self, k) -> float:
        idx = tuple(int(v) - l for v, l in zip(k, self.window.lo))
        return float(self.values[idx])

    def items(self):
        for k, v in zip(self.window.points(), self.values.ravel()):
            yield tuple(int(c) for c in k), float(v)


def sample_gamma_field(config: MediumConfig, seed: int, window: LatticeBox, shift=None) -> GammaField:
    """Sample gamma(k, tau_shift omega) for every k in ``window``."""
    if window.dim != config.dim:
        raise ValueError("window dimension does not match the medium")
    shift = (0,) * config.dim if shift is None else tuple(int(s) for s in shift)
    law = config.law
    pts = window.points() + np.asarray(shift, dtype=np.int64)
    kind = law["kind"]
    if kind in ("constant", "iid_uniform", "bernoulli_dilution"):
        vals = _iid_values(law, seed, pts, stream=0)
    elif kind == "moving_average":
        L = law["L"]
        w = np.asarray(law["weights"])
        offs = LatticeBox((-L,) * config.dim, (2 * L + 1,) * config.dim).points()
        vals = np.zeros(pts.shape[0])
        for o, wo in zip(offs, w):
            if wo:
                vals += wo * _iid_values(law["base"], seed, pts + o, stream=0)
        vals = np.clip(vals, 0.0, config.gamma_bar)
    else:
        P = law["period"]
        phase = np.floor(site_uniforms(seed, np.arange(config.dim)[:, None], stream=1) * P).astype(np.int64)
        pat = np.asarray(law["pattern"], dtype=float)
        idx = np.mod(pts + phase, P)
        vals = pat[tuple(idx.T)]
    vals = np.asarray(vals, dtype=float).reshape(window.shape)
    vals.setflags(write=False)
    return GammaField(config, int(seed), window, vals, shift)


def shift_consistency(fld: GammaField, k_shift) -> bool:
    """Check gamma(k + k', omega) == gamma(k, tau_{k'} omega) on the window overlap."""
    k_shift = tuple(int(v) for v in k_shift)
    moved = sample_gamma_field(fld.config, fld.seed, fld.window, shift=tuple(a + b for a, b in zip(fld.shift, k_shift)))
    lo = [max(l, l - s) for l, s in zip(fld.window.lo, k_shift)]
    hi = [min(h, h - s) for h, s in zip(fld.window.hi, k_shift)]
    if any(a >= b for a, b in zip(lo, hi)):
        return True
    src = tuple(slice(a + s - l, b + s - l) for a, b, s, l in zip(lo, hi, k_shift, fld.window.lo))
    dst = tuple(slice(a - l, b - l) for a, b, l in zip(lo, hi, fld.window.lo))
    return bool(np.array_equal(fld.values[src], moved.values[dst]))


def ball_capacity_constant(n: int) -> float:
    """n(n-2) omega_n, the capacity of the unit ball for n >= 3."""
    return n * (n - 2) * ball_volume(n)


def radius_from_gamma(gamma: float, n: int) -> float:
    if n not in (2, 3):
        raise ValueError("n must be 2 or 3")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma == 0:
        return 0.0
    if n == 2:
        return gamma / (2 * math.pi)
    return (gamma / ball_capacity_constant(n)) ** (1.0 / (n - 2))


def hole_radius_eps(r: float, eps: float, n: int) -> float:
    """Physical hole radius a^eps(r) at the critical scaling."""
    if r < 0:
        raise ValueError("r must be >= 0")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if r == 0:
        return 0.0
    if n == 2:
        return math.exp(-1.0 / (r * eps * eps))
    return r * eps ** (n / (n - 2))


@dataclass(eq=False)
class HoleField:
    gamma: GammaField
    eps: float
    shape_kind: str
    mode: str
    spec: GridSpec
    holes: dict
    t_eps: NodeSet
    calibrated_gamma: dict
    coupling: dict
    radii: dict

    @property
    def point_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat node indices and coupling capacities of sub-grid holes."""
        if not self.coupling:
            return np.empty(0, dtype=np.int64), np.empty(0)
        ks = sorted(self.coupling)
        return (np.array([self.holes[k].members[0] for k in ks], dtype=np.int64),
                np.array([self.coupling[k] for k in ks]))

    @property
    def resolved_nodes(self) -> NodeSet:
        members = [self.holes[k].members for k in sorted(self.holes) if k not in self.coupling]
        if not members:
            return NodeSet.empty(self.spec)
        return NodeSet(self.spec, np.concatenate(members))


def lattice_sites_in(spec: GridSpec, eps: float) -> list[tuple[int, ...]]:
    """Lattice points k with eps*k strictly inside the grid box; they must sit on nodes."""
    q = 1.0 / eps
    lo = np.asarray(spec.origin)
    hi = lo + np.asarray(spec.extent)
    kmin = np.floor(lo * q).astype(int) + 1
    kmax = np.ceil(hi * q).astype(int) - 1
    rng = [np.arange(a, b + 1) for a, b in zip(kmin, kmax)]
    pts = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    out = []
    for k in pts:
        x = eps * k
        if np.all(x > lo + 1e-12) and np.all(x < hi - 1e-12):
            idx = spec.nearest_index(x)
            if np.max(np.abs(spec.origin + spec.h * np.asarray(idx) - x)) > 1e-9 * spec.h:
                raise ValueError(f"lattice point eps*k={x} is not a grid node; choose h dividing eps")
            out.append(tuple(int(c) for c in k))
    return out


def default_envelope(config: MediumConfig) -> float:
    """Smallest admissible Assumption-1 constant M for the medium's support."""
    gmax = config.support[1]
    n = config.dim
    if gmax == 0:
        return 0.0
    if n == 2:
        return 1.0 / radius_from_gamma(gmax, 2)
    if config.shape_kind == "box":
        from .capacity import box_shape_for_gamma
        return box_shape_for_gamma(gmax, config.box_aspect).bounding_radius
    return radius_from_gamma(gmax, n)


def build_holes(gamma: GammaField, eps: float, domain: GridSpec, mode: str = "auto") -> HoleField:
    """Realise the holes S_eps(k, omega) on ``domain`` for every lattice point inside it.

    ``mode`` is ``resolved`` (rasterise, hole radius must be >= 2h), ``point``
    (one node per hole, coupled to the hole value through a capacity-calibrated
    conductance) or ``auto`` (resolved when possible, else point).
    """
    from .capacity import box_shape_for_gamma, discrete_node_capacity

    if mode not in ("resolved", "point", "auto"):
        raise ValueError(f"unknown hole mode {mode!r}")
    config = gamma.config
    n = config.dim
    if domain.dim != n:
        raise ValueError("domain dimension does not match the medium")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    h = domain.h
    if h > eps / 4 * (1 + 1e-12):
        raise ValueError(f"grid spacing {h} too coarse for eps={eps}; need h <= eps/4")
    M = default_envelope(config) if config.M is None else config.M
    sites = lattice_sites_in(domain, eps)
    holes, calibrated, coupling, radii = {}, {}, {}, {}
    c_node = None
    for k in sites:
        if not gamma.window.contains(k):
            raise ValueError(f"gamma field window does not cover lattice point {k}")
        g = gamma.at(k)
        center = eps * np.asarray(k, dtype=float)
        if g == 0:
            holes[k] = NodeSet.empty(domain)
            radii[k] = 0.0
            continue
        if config.shape_kind == "box":
            shape = box_shape_for_gamma(g, config.box_aspect).scaled(eps ** (n / (n - 2)))
            a = shape.bounding_radius
        else:
            a = hole_radius_eps(radius_from_gamma(g, n), eps, n)
            shape = ShapeSpec.ball(a)
        radii[k] = a
        resolved = mode == "resolved" or (mode == "auto" and a >= 2 * h and config.shape_kind != "point")
        if resolved:
            if a < 2 * h:
                raise ValueError(f"hole at k={k} has radius {a:.3g} < 2h={2 * h:.3g}; use point mode")
            nodes = rasterize_shape(shape, center, domain)
            d = np.sqrt(np.sum((nodes.positions() - center) ** 2, axis=1)).max()
            if d > eps / 2:
                raise ValueError(f"hole at k={k} leaves B_eps/2(eps k): node distance {d:.4g}")
            envelope = M * eps ** (n / (n - 2)) if n >= 3 else math.exp(-M / eps**2)
            if d > envelope * (1 + 1e-9) + 1e-9 * h:
                raise ValueError(f"hole at k={k} violates Assumption 1: distance {d:.4g} > envelope {envelope:.4g}")
            holes[k] = nodes
            calibrated[k] = g
        else:
            if c_node is None:
                c_node = discrete_node_capacity(domain, n)
            c_hole = eps**n * g
            if c_hole >= c_node:
                raise ValueError(
                    f"hole at k={k} (capacity {c_hole:.3g}) is neither resolvable (radius {a:.3g} < 2h) "
                    f"nor sub-grid (node capacity {c_node:.3g}); refine or coarsen the grid"
                )
            wi = 1.0 / (1.0 / c_hole - 1.0 / c_node)
            holes[k] = NodeSet(domain, [domain.flat(domain.nearest_index(center))])
            coupling[k] = wi
            calibrated[k] = 1.0 / (1.0 / wi + 1.0 / c_node) / eps**n
    all_nodes = [s.members for s in holes.values()]
    t_eps = NodeSet(domain, np.concatenate(all_nodes)) if all_nodes else NodeSet.empty(domain)
    if len(t_eps) != sum(len(s) for s in holes.values()):
        raise ValueError("holes overlap")
    if (t_eps.mask() & domain.boundary_mask()).any():
        raise ValueError("a hole touches the outer boundary of D")
    return HoleField(gamma, eps, config.shape_kind, mode, domain, holes, t_eps, calibrated, coupling, radii)


def gamma_window_for(domain: GridSpec, eps: float) -> LatticeBox:
    """Smallest lattice box covering every lattice point of ``domain`` at scale eps."""
    q = 1.0 / eps
    lo = np.floor(np.asarray(domain.origin) * q).astype(int)
    hi = np.ceil((np.asarray(domain.origin) + np.asarray(domain.extent)) * q).astype(int)
    return LatticeBox(tuple(lo), tuple(hi - lo + 1))
