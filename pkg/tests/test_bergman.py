import math

import numpy as np
import pytest

from radialke import bergman
from radialke import geometry as geo
from radialke.errors import ConfigurationError


@pytest.fixture(scope="module")
def grid():
    return geo.make_grid(30.0, 2048)


@pytest.fixture(scope="module")
def smooth_chain(grid):
    return bergman.build_chain(4.0, None, p=1, m=1, grid=grid)


@pytest.fixture(scope="module")
def smooth_run(smooth_chain):
    return bergman.run_levels(smooth_chain, 40)


# ---------------------------------------------------------------------------
# section ranges
# ---------------------------------------------------------------------------

def test_section_range_level_one():
    b = bergman.section_range(1, 1, 4.0)
    assert (b.j_min, b.j_max, b.n_sections) == (0, 2, 3)


def test_section_range_level_ten_p_two():
    b = bergman.section_range(10, 2, 4.0)
    assert b.n_sections == 41


def test_section_range_ceiling_with_divisor():
    b = bergman.section_range(4, 2, 4.0, geo.divisor(zero="1/2"))
    assert b.j_min == 4
    b = bergman.section_range(3, 1, 4.0, geo.divisor(zero="1/2"))
    assert b.j_min == 2  # ceil(3/2)


def test_section_range_rejects_fractional_degree():
    with pytest.raises(ConfigurationError):
        bergman.section_range(1, 1, 4.5)


def test_section_count_formula(smooth_run):
    counts = np.array(smooth_run.n_sections)
    ells = np.arange(1, counts.size + 1)
    assert np.array_equal(counts, 2 * ells + 1)


# ---------------------------------------------------------------------------
# Gram diagonals
# ---------------------------------------------------------------------------

def test_gram_beta_oracle(smooth_chain):
    basis = bergman.section_range(1, 1, 4.0)
    got = np.exp(bergman.gram_diagonal(basis, smooth_chain, None))
    expected = np.array([2 * math.pi / 3, math.pi / 3, 2 * math.pi / 3])
    np.testing.assert_allclose(got, expected, rtol=1e-8)


def test_gram_beta_oracle_against_quadrature():
    # independent oracle: adaptive quadrature of the same integrand
    from scipy.integrate import quad
    for j in range(3):
        val, err = quad(lambda t, j=j: math.exp((j + 1) * t) / (1 + math.exp(t)) ** 4,
                        -60, 60)
        expected = [2 * math.pi / 3, math.pi / 3, 2 * math.pi / 3][j]
        assert 2 * math.pi * val == pytest.approx(expected, rel=1e-9)


def test_gram_symmetry(smooth_chain):
    lv1 = bergman.bergman_step(None, smooth_chain)
    basis = bergman.section_range(2, 1, 4.0)
    log_g = bergman.gram_diagonal(basis, smooth_chain, lv1)
    np.testing.assert_allclose(log_g, log_g[::-1], rtol=1e-12)


def test_gram_monotone_in_frac_eps(grid):
    # the eps floor on the fractional frame raises the measure, so the Gram
    # norms shrink together with eps
    chain = bergman.build_chain(4.0, geo.divisor(zero="1/2"), p=1, m=1, grid=grid)
    basis = bergman.section_range(1, 1, 4.0, geo.divisor(zero="1/2"))
    assert basis.j_min == 1  # ceil(1/2): fractional part 1/2 at this level
    g_small = bergman.gram_diagonal(basis, chain, None, frac_eps=1e-3)
    g_big = bergman.gram_diagonal(basis, chain, None, frac_eps=1e-1)
    assert np.all(g_small < g_big)


def test_gram_integrability_guard(grid):
    chain = bergman.build_chain(4.0, None, p=1, m=1, grid=grid)
    bad_tau = geo.fs_weight(1.0, grid)  # too little decay for the top exponent
    bad_chain = bergman.WeightChain(4.0, 1, 1, geo.DivisorData(), grid,
                                    bad_tau, chain.target)
    with pytest.raises(ConfigurationError, match="grows"):
        bergman.gram_diagonal(bergman.section_range(1, 1, 4.0), bad_chain, None)


# ---------------------------------------------------------------------------
# level recursion
# ---------------------------------------------------------------------------

def test_first_level_from_empty_chain(smooth_chain):
    lv = bergman.bergman_step(None, smooth_chain)
    assert lv.level == 1
    assert np.all(np.isfinite(lv.log_gram))


def test_kappa_convex_and_slopes(smooth_run):
    for lv in smooth_run.levels[::7]:
        kappa = lv.kappa
        assert kappa.is_positively_curved(tol=1e-8)
        assert kappa.slope_minus == lv.basis.j_min
        assert kappa.slope_plus == lv.basis.j_max
        assert kappa.degree == lv.basis.degree


def test_renormalized_level_one_is_kappa(smooth_run):
    lv = smooth_run.levels[0]
    np.testing.assert_allclose(bergman.renormalized_profile(lv),
                               lv.kappa.values, rtol=1e-12)


def test_rescaled_slope_approaches_step_degree(smooth_run):
    lv = smooth_run.levels[-1]
    ell = lv.level
    assert lv.basis.j_max / ell == pytest.approx(2.0, abs=2.5 / ell)


def test_distances_decreasing(smooth_run):
    d = np.array(smooth_run.distances)
    assert d[-1] < 0.06
    assert np.all(np.diff(d[19:]) <= 1e-12)


def test_route_agreement(smooth_chain):
    assert smooth_chain.route_agreement <= 1e-9


def test_two_route_precheck_in_convergence(smooth_run):
    out = bergman.convergence_check(smooth_run)
    assert out["route_agreement"] <= 1e-5
    assert out["final_liminf_slack"] <= 1e-6


def test_convergence_check_needs_three_levels(smooth_chain):
    short = bergman.run_levels(smooth_chain, 1)
    with pytest.raises(ConfigurationError):
        bergman.convergence_check(short)


def test_integral_chain_holds(smooth_run):
    cert = bergman.integral_chain_check(smooth_run)
    assert cert["holds"]
    assert cert["max_relative_slack"] <= 1e-8
    assert cert["count_formula_exact"]
    assert cert["asymptote"] == 2


def test_integral_chain_holds_conic(grid):
    chain = bergman.build_chain(4.0, geo.divisor(zero="1/2"), p=1, m=1, grid=grid)
    run = bergman.run_levels(chain, 30)
    cert = bergman.integral_chain_check(run)
    assert cert["holds"]


def test_decay_guard_satisfied(smooth_run):
    assert smooth_run.guard_margin >= 0.0


def test_off_diagonal_modes_vanish(grid):
    # quadrature of the angular modes: off-diagonal Gram entries are exactly
    # the nonzero Fourier modes of a rotation-invariant density
    rng = np.random.default_rng(9)
    theta = np.linspace(0.0, 2.0 * math.pi, 257)[:-1]
    for _ in range(10):
        j1, j2 = rng.integers(0, 7, size=2)
        while j1 == j2:
            j2 = rng.integers(0, 7)
        mode = np.exp(1j * (j1 - j2) * theta)
        integral = np.abs(np.mean(mode))
        assert integral <= 1e-12


def test_c_ell_finite_and_trend(smooth_run):
    c = np.array(smooth_run.c_ells)
    assert np.all(np.isfinite(c))
    trend = bergman.c_ell_trend(smooth_run)
    assert np.min(trend[5:]) > -1.0  # bounded below along the run


def test_c_ell_rejects_wrong_slopes(smooth_run):
    lv = smooth_run.levels[10]
    grid = lv.kappa.grid
    bad_ref = (lv.level + 3.0) * smooth_run.chain.target.values
    with pytest.raises(ConfigurationError, match="slope"):
        bergman.c_ell_diagnostic(lv, bad_ref)


def test_build_chain_p2_conic_runs(grid):
    chain = bergman.build_chain(4.0, geo.divisor(zero="1/2"), p=2, m=1, grid=grid)
    run = bergman.run_levels(chain, 25)
    d = np.array(run.distances)
    assert d[-1] < d[4]
    cert = bergman.integral_chain_check(run)
    assert cert["holds"]


def test_kernel_levels_jointly_convex_over_family():
    # positivity propagation: running the recursion fiber by fiber over a
    # jointly positive family keeps every kernel level jointly convex in
    # (t, s); the model-scale mechanism behind relative positivity
    from radialke import family as fam
    base = np.linspace(-1.5, 1.5, 9)
    grid9 = geo.make_grid(30.0, 257)
    f = fam.build_family(fam.perturbed_family_recipe(4.0, 0.05), base, grid9)
    runs = [bergman.run_levels(
        bergman.build_chain(4.0, None, p=1, m=1, grid=grid9, twist=tw), 6)
        for tw in f.twists]
    ht = runs[0].grid.spacing
    hs = float(base[1] - base[0])
    for ell in range(6):
        U = np.column_stack([r.levels[ell].kappa.values for r in runs])
        cert = fam.hessian_certificate(U, ht, hs, tol=1e-8)
        assert cert["passed"], (ell, cert["min_tt"], cert["min_det"])


def test_eps_chain_supports_gap_machinery_only(grid):
    # the floored weights keep the Grams and the chain inequality exact, but
    # finite-eps runs are not convergence statements and say so
    chain = bergman.build_chain(4.0, geo.divisor(zero="1/2"), p=2, m=1,
                                grid=grid, eps=0.05)
    run = bergman.run_levels(chain, 8, frac_eps=0.05)
    assert bergman.integral_chain_check(run)["holds"]
    assert all(np.isnan(c) for c in run.c_ells)
    with pytest.raises(ConfigurationError, match="eps = 0"):
        bergman.convergence_check(run)


def test_build_chain_m2_target_consistency(grid):
    # the m = 2 chain weight is built from the first step, the target from
    # the second; both must stay convex on the rescaled class
    chain = bergman.build_chain(4.0, None, p=2, m=2, grid=grid)
    assert chain.tau.is_positively_curved(tol=1e-8)
    assert chain.target.is_positively_curved(tol=1e-8)
    run = bergman.run_levels(chain, 20)
    assert run.distances[-1] < run.distances[0]
