"""Contact-set densities and the critical coefficient alpha_0.

``estimate_ell`` samples the normalised contact measure of the auxiliary
obstacle problem on cubes of growing side ``t`` and reports the mean at the
largest ``t``.  ``estimate_alpha0`` bisects the bracket of
``alpha0_bracket`` on the sign of that estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import ScalarField, ball_volume, laplacian_apply
from .media import LatticeBox, MediumConfig, derive_seed, radius_from_gamma, sample_gamma_field
from .obstacle import ObstacleSolution, solve_auxiliary

DEFAULT_T = {2: (8, 16, 32, 64), 3: (4, 8, 16)}
DEFAULT_M = {2: 9, 3: 5}
DEFAULT_SAMPLES = {2: 16, 3: 8}


def contact_measure(sol: ObstacleSolution) -> float:
    """h^n times the number of interior nodes where v-bar is exactly zero."""
    spec = sol.field.spec
    return spec.cell_volume * int(np.count_nonzero(sol.contact_mask & ~spec.boundary_mask()))


def window_measure(gamma_field, window: LatticeBox, alpha: float, m: int, solver: str = "pdas") -> float:
    return contact_measure(solve_auxiliary(alpha, window, gamma_field, m, solver=solver))


def _check_partition(window: LatticeBox, parts) -> None:
    cover = np.zeros(window.shape, dtype=np.int64)
    for p in parts:
        if p.dim != window.dim or not all(a >= b for a, b in zip(p.lo, window.lo)) or not all(
            a <= b for a, b in zip(p.hi, window.hi)
        ):
            raise ValueError(f"partition element {p} is not inside the window")
        sl = tuple(slice(a - l, b - l) for a, b, l in zip(p.lo, p.hi, window.lo))
        cover[sl] += 1
    if not np.all(cover == 1):
        raise ValueError("partition does not tile the window")


def subadditivity_check(alpha: float, window: LatticeBox, partition, config: MediumConfig, seed: int,
                        m: int) -> float:
    """``sum_i m(A_i) - m(A)``; subadditivity says this is >= 0."""
    _check_partition(window, partition)
    g = sample_gamma_field(config, seed, window)
    whole = window_measure(g, window, alpha, m)
    return sum(window_measure(g, p, alpha, m) for p in partition) - whole


def quadrants(window: LatticeBox) -> list[LatticeBox]:
    """Split a box with even sides into 2^n congruent sub-boxes."""
    if any(s % 2 for s in window.shape):
        raise ValueError("window sides must be even")
    half = tuple(s // 2 for s in window.shape)
    out = []
    for corner in np.ndindex(*(2,) * window.dim):
        lo = tuple(l + c * hs for l, c, hs in zip(window.lo, corner, half))
        out.append(LatticeBox(lo, half))
    return out


@dataclass
class EllEstimate:
    alpha: float
    window_sizes: list
    ratios: dict
    cells_per_unit: int
    ell_hat: float
    ci_halfwidth: float
    trend: list = field(default_factory=list)

    def __post_init__(self):
        for t, rs in self.ratios.items():
            if any(r < 0 or r > 1 + 1e-12 for r in rs):
                raise ValueError(f"ratio outside [0,1] at t={t}")

    def rows(self):
        for t in self.window_sizes:
            for s, r in enumerate(self.ratios[t]):
                yield {"alpha": self.alpha, "t": t, "sample": s, "ratio": r}

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "window_sizes": list(self.window_sizes),
            "ratios": {str(t): list(v) for t, v in self.ratios.items()},
            "cells_per_unit": self.cells_per_unit,
            "ell_hat": self.ell_hat,
            "ci_halfwidth": self.ci_halfwidth,
            "trend": self.trend,
        }


def _mean_ci(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


def estimate_ell(alpha: float, config: MediumConfig, window_sizes=None, samples: int | None = None,
                 m: int | None = None, seed: int = 0, solver: str = "pdas") -> EllEstimate:
    """Monte Carlo estimate of the contact density at ``alpha``.

    Sample ``s`` at side ``t`` uses the realisation ``derive_seed(seed, t, s)``
    on the cube ``[0, t)^n``.
    """
    n = config.dim
    window_sizes = list(DEFAULT_T[n] if window_sizes is None else window_sizes)
    samples = DEFAULT_SAMPLES[n] if samples is None else int(samples)
    m = DEFAULT_M[n] if m is None else int(m)
    if samples < 1:
        raise ValueError("need at least one sample")
    if any(b <= a for a, b in zip(window_sizes, window_sizes[1:])):
        raise ValueError("window sizes must be increasing")
    ratios, trend = {}, []
    for t in window_sizes:
        window = LatticeBox.cube(n, t)
        rs = []
        for s in range(samples):
            g = sample_gamma_field(config, derive_seed(seed, t, s), window)
            rs.append(window_measure(g, window, alpha, m, solver) / t**n)
        ratios[t] = rs
        mean, ci = _mean_ci(rs)
        trend.append({"t": t, "mean": mean, "ci": ci})
    ell, ci = trend[-1]["mean"], trend[-1]["ci"]
    return EllEstimate(float(alpha), window_sizes, ratios, m, min(max(ell, 0.0), 1.0), ci, trend)


def alpha0_bracket(config: MediumConfig, n: int | None = None) -> tuple[float, float]:
    """Lower and upper thresholds for alpha_0 from the radius bounds of the medium."""
    n = config.dim if n is None else n
    g_hi = config.support[1]
    if g_hi == 0:
        return 0.0, 0.0
    r_hi = radius_from_gamma(g_hi, n)
    if n == 2:
        return 0.0, 8.0 * r_hi
    # gamma_lower, when given, is the assumed uniform lower bound; otherwise the law's own minimum
    g_lo = config.support[0] if config.gamma_lower is None else config.gamma_lower
    lo = n * (n - 2) * radius_from_gamma(g_lo, n) ** (n - 2) if g_lo > 0 else 0.0
    return lo, 2**n * n * (n - 2) * r_hi ** (n - 2)


@dataclass
class Alpha0Estimate:
    bracket_lo: float
    bracket_hi: float
    bisection_trace: list
    alpha0: float
    threshold: float
    final_lo: float = 0.0
    final_hi: float = 0.0
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if not self.bracket_lo - 1e-12 <= self.alpha0 <= self.bracket_hi + 1e-12:
            raise ValueError("alpha0 outside its bracket")

    def to_dict(self) -> dict:
        return {
            "bracket": [self.bracket_lo, self.bracket_hi],
            "alpha0": self.alpha0,
            "final_interval": [self.final_lo, self.final_hi],
            "threshold": self.threshold,
            "trace": self.bisection_trace,
            "warnings": self.warnings,
        }


def _classify(est: EllEstimate, theta: float) -> str:
    if est.ell_hat - est.ci_halfwidth > theta:
        return "positive"
    if est.ell_hat + est.ci_halfwidth < theta:
        return "zero"
    return "ambiguous"


def estimate_alpha0(config: MediumConfig, window_sizes=None, samples: int | None = None, m: int | None = None,
                    seed: int = 0, theta: float = 0.005, rtol: float = 0.01, max_steps: int = 40,
                    solver: str = "pdas") -> Alpha0Estimate:
    """Bisection for sup{alpha : ell(alpha) = 0} inside the bracket.

    An ambiguous cell (CI straddling ``theta``) is re-estimated once with
    twice the samples; if still ambiguous it is counted as zero and the
    estimate carries a warning.
    """
    n = config.dim
    samples = DEFAULT_SAMPLES[n] if samples is None else int(samples)
    lo0, hi0 = alpha0_bracket(config)
    if hi0 == 0:
        return Alpha0Estimate(0.0, 0.0, [], 0.0, theta, 0.0, 0.0)
    lo, hi = lo0, hi0
    trace, warn = [], []
    for _ in range(max_steps):
        if hi - lo <= rtol * hi0:
            break
        mid = 0.5 * (lo + hi)
        est = estimate_ell(mid, config, window_sizes, samples, m, seed, solver)
        verdict = _classify(est, theta)
        if verdict == "ambiguous":
            est = estimate_ell(mid, config, window_sizes, 2 * samples, m, seed, solver)
            verdict = _classify(est, theta)
            if verdict == "ambiguous":
                warn.append(f"ambiguous contact density at alpha={mid:.6g}; counted as zero")
                verdict = "zero"
        trace.append({"alpha": mid, "ell_hat": est.ell_hat, "ci": est.ci_halfwidth, "verdict": verdict})
        if verdict == "positive":
            hi = mid
        else:
            lo = mid
    for w in warn:
        warnings.warn(w)
    return Alpha0Estimate(lo0, hi0, trace, 0.5 * (lo + hi), theta, lo, hi, warn)


def trace_monotone(trace, slack: float = 0.0) -> bool:
    """ell_hat nondecreasing in alpha up to the combined confidence half-widths."""
    pts = sorted(trace, key=lambda e: e["alpha"])
    return all(b["ell_hat"] + b["ci"] + a["ci"] + slack >= a["ell_hat"] for a, b in zip(pts, pts[1:]))


def periodic_cell_alpha(pattern, m: int) -> dict:
    """Per-cell capacity density of a periodic medium and its periodic corrector.

    On the periodic cell (one lattice site per unit cell, ``pattern`` giving
    gamma per site) the equation ``Lap_h w = alpha - sum gamma_k delta_k`` is
    solvable only when its zero Fourier mode vanishes, which fixes
    ``alpha = sum gamma / |cell|``.  The corrector is computed by FFT and its
    periodic residual is returned as a certificate.
    """
    pattern = np.atleast_1d(np.asarray(pattern, dtype=float))
    n = pattern.ndim
    if n not in (2, 3):
        raise ValueError("pattern must be 2- or 3-dimensional")
    h = 1.0 / m
    shape = tuple(p * m for p in pattern.shape)
    src = np.zeros(shape)
    for k in np.ndindex(*pattern.shape):
        src[tuple(kd * m for kd in k)] = pattern[k] / h**n
    rhs = -src
    alpha = -rhs.mean()
    rhs = rhs + alpha
    freqs = [np.fft.fftfreq(s) for s in shape]
    lam = sum(
        (2 * np.cos(2 * np.pi * f.reshape([-1 if a == b else 1 for b in range(n)])) - 2) / h**2
        for a, f in enumerate(freqs)
    )
    rh = np.fft.fftn(rhs)
    zero_mode = abs(rh.flat[0]) / rhs.size
    lam.flat[0] = 1.0
    w_hat = rh / lam
    w_hat.flat[0] = 0.0
    w = np.real(np.fft.ifftn(w_hat))
    lap = sum(np.roll(w, 1, a) + np.roll(w, -1, a) - 2 * w for a in range(n)) / h**2
    res = float(np.max(np.abs(lap - rhs)))
    return {"alpha": float(alpha), "cell_volume": float(pattern.size), "zero_mode": float(zero_mode),
            "residual": res, "corrector_min": float(w.min()), "corrector_max": float(w.max())}


def mean_value_check(fld: ScalarField, alpha: float, samples) -> dict:
    """Worst ``ball average - v(y0) - alpha r^2 / (2(n+2))`` over sampled balls.

    ``samples`` is a list of ``(y0, r)`` with ``y0`` a node.  Also reports the
    largest violation of the precondition ``Lap_h v <= alpha`` on the balls.
    """
    spec = fld.spec
    n = spec.dim
    c_n = 1.0 / (2 * (n + 2))
    x = spec.positions().reshape(-1, n)
    v = fld.values.ravel()
    lap = laplacian_apply(fld).values.ravel()
    interior = ~spec.boundary_mask().ravel()
    worst, pre = -math.inf, 0.0
    for y0, r in samples:
        idx = spec.flat(spec.nearest_index(y0))
        d = np.linalg.norm(x - x[idx], axis=1)
        ball = d <= r + 1e-12
        avg = float(v[ball].mean())
        worst = max(worst, avg - v[idx] - alpha * c_n * r * r)
        pre = max(pre, float(np.max(lap[ball & interior] - alpha, initial=-math.inf)))
    return {"worst_slack": worst, "precondition_violation": max(pre, 0.0)}


def ell_curve(alphas, config: MediumConfig, **kw) -> list[EllEstimate]:
    return [estimate_ell(a, config, **kw) for a in alphas]


def omega_bound(n: int) -> float:
    """1 - omega_n / 2^n, the contact density guaranteed at the upper threshold."""
    return 1.0 - ball_volume(n) / 2**n
