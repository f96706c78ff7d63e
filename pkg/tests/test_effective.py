import math

import numpy as np
import pytest

from obshom.effective import (
    alpha0_bracket,
    contact_measure,
    estimate_alpha0,
    estimate_ell,
    mean_value_check,
    omega_bound,
    periodic_cell_alpha,
    quadrants,
    subadditivity_check,
    trace_monotone,
)
from obshom.grid import GridSpec, ScalarField
from obshom.media import LatticeBox, MediumConfig, sample_gamma_field
from obshom.obstacle import solve_auxiliary

from conftest import FOUR_PI, TWO_PI

IID2 = MediumConfig(2, {"kind": "iid_uniform", "gamma_lo": 0.0, "gamma_hi": 6.0}, gamma_bar=6.0)


def test_contact_measure_extremes(empty2):
    W = LatticeBox.cube(2, 3)
    g = sample_gamma_field(empty2, 0, W)
    full = solve_auxiliary(1.0, W, g, 5)
    assert contact_measure(full) == pytest.approx(9.0)
    assert contact_measure(solve_auxiliary(-1.0, W, g, 5)) == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_negative_alpha_never_touches(seed):
    est = estimate_ell(-1.0, IID2, (4, 8), 2, 9, seed)
    assert est.ell_hat == 0.0
    assert all(r == 0.0 for rs in est.ratios.values() for r in rs)


def test_ell_nondecreasing_in_alpha():
    ests = [estimate_ell(a, IID2, (4, 8), 4, 9, 0) for a in (0.5, 2.0, 4.0, 8.0)]
    for a, b in zip(ests, ests[1:]):
        assert b.ell_hat + b.ci_halfwidth + a.ci_halfwidth >= a.ell_hat
    assert ests[-1].ell_hat > 0.5


def test_ell_rows_are_tidy():
    est = estimate_ell(3.0, IID2, (4, 8), 3, 9, 0)
    rows = list(est.rows())
    assert len(rows) == 6
    assert set(rows[0]) == {"alpha", "t", "sample", "ratio"}


def test_quadrants_and_partition_checks(empty2):
    W = LatticeBox.cube(2, 8)
    q = quadrants(W)
    assert len(q) == 4 and sum(math.prod(p.shape) for p in q) == 64
    assert subadditivity_check(1.0, W, [W], IID2, 0, 5) == 0.0
    assert subadditivity_check(1.0, W, q, empty2, 0, 5) == 0.0
    with pytest.raises(ValueError, match="tile"):
        subadditivity_check(1.0, W, q[:3], IID2, 0, 5)


def test_subadditivity_two_level():
    W = LatticeBox.cube(2, 16)
    lo, hi = alpha0_bracket(IID2)
    assert subadditivity_check(0.5 * (lo + hi), W, quadrants(W), IID2, 0, 9) >= 0.0


def test_brackets(const2, const3):
    assert alpha0_bracket(const3) == pytest.approx((3.0, 24.0))
    assert alpha0_bracket(const2) == pytest.approx((0.0, 8.0))
    c = MediumConfig(3, {"kind": "constant", "gamma": FOUR_PI}, gamma_bar=FOUR_PI, gamma_lower=0.0)
    assert alpha0_bracket(c)[0] == 0.0
    c = MediumConfig(3, {"kind": "constant", "gamma": FOUR_PI}, gamma_bar=FOUR_PI, gamma_lower=FOUR_PI)
    assert alpha0_bracket(c)[0] == pytest.approx(3.0)


def test_alpha0_empty_medium(empty2):
    assert estimate_alpha0(empty2, (4,), 2, 5).alpha0 == 0.0


def test_alpha0_2d_constant(const2):
    est = estimate_alpha0(const2, (4, 8), 2, 9, 0)
    assert 0.0 <= est.alpha0 <= 8.0
    assert est.final_hi - est.final_lo <= 0.01 * 8.0 + 1e-12
    assert trace_monotone(est.bisection_trace)
    # the per-cell capacity density for the constant medium is 2 pi
    assert est.alpha0 == pytest.approx(TWO_PI, rel=0.25)
    d = est.to_dict()
    assert d["bracket"] == [0.0, 8.0] and d["trace"]


def test_trace_monotone_detects_violation():
    tr = [{"alpha": 1.0, "ell_hat": 0.5, "ci": 0.01}, {"alpha": 2.0, "ell_hat": 0.2, "ci": 0.01}]
    assert not trace_monotone(tr)
    assert trace_monotone(tr[::-1][:1])


def test_periodic_cell_oracle():
    res = periodic_cell_alpha(np.full((1, 1, 1), FOUR_PI), 8)
    assert res["alpha"] == pytest.approx(FOUR_PI)
    assert res["zero_mode"] < 1e-12 and res["residual"] < 1e-8
    res = periodic_cell_alpha(np.array([[1.0, 2.0], [0.0, 3.0]]), 8)
    assert res["alpha"] == pytest.approx(1.5)


def test_mean_value_exact_cases():
    spec = GridSpec.from_extent((-1.0, -1.0), 2.0, 64)
    quad = ScalarField.from_function(spec, lambda x, y: 3.0 * (x * x + y * y) / 4)
    assert abs(mean_value_check(quad, 3.0, [((0, 0), 0.3), ((0.1, -0.2), 0.5)])["worst_slack"]) < 1e-3
    harm = ScalarField.from_function(spec, lambda x, y: x * x - y * y + 2 * x)
    assert mean_value_check(harm, 0.0, [((0, 0), 0.3), ((0.1, -0.2), 0.5)])["worst_slack"] <= 1e-12


def test_mean_value_on_obstacle_solutions_improves_with_refinement():
    W = LatticeBox.cube(2, 6)
    g = sample_gamma_field(IID2, 1, W)
    rng = np.random.default_rng(0)
    samples = [(tuple(rng.uniform(0.5, 4.5, 2)), rng.uniform(0.2, 0.6)) for _ in range(20)]
    res = [mean_value_check(solve_auxiliary(5.0, W, g, m).field, 5.0, samples) for m in (9, 17)]
    assert all(r["precondition_violation"] < 1e-8 for r in res)
    assert res[1]["worst_slack"] < res[0]["worst_slack"]
    assert res[1]["worst_slack"] < 0.01


def test_omega_bound():
    assert omega_bound(3) == pytest.approx(1 - (4 * math.pi / 3) / 8)
    assert omega_bound(3) == pytest.approx(0.4764, abs=1e-4)
