import math
from fractions import Fraction

import numpy as np
import pytest

from radialke import geometry as geo
from radialke import masolver as ma
from radialke.errors import ConfigurationError, ConvergenceError


@pytest.fixture(scope="module")
def grid():
    return geo.default_grid()


@pytest.fixture(scope="module")
def smooth_report(grid):
    return ma.solve_ke_ode(ma.ke_problem(4.0, grid=grid))


def closed_form(k, t):
    return (k - 2.0) * np.logaddexp(0.0, t) + math.log((k - 2.0) / (2.0 * math.pi))


# ---------------------------------------------------------------------------
# direct solves
# ---------------------------------------------------------------------------

def test_smooth_oracle_k4(grid, smooth_report):
    win = grid.window(-28.0, 28.0)
    err = np.max(np.abs(smooth_report.solution.values - closed_form(4.0, grid.nodes))[win])
    assert err <= 1e-6


@pytest.mark.parametrize("k", [3.0, 4.0, 5.0, 6.0])
def test_smooth_oracle_family(grid, k):
    rep = ma.solve_ke_ode(ma.ke_problem(k, grid=grid))
    win = grid.window(-28.0, 28.0)
    err = np.max(np.abs(rep.solution.values - closed_form(k, grid.nodes))[win])
    assert err <= 1e-6


def test_total_mass_is_adjoint_degree(grid, smooth_report):
    assert geo.weight_mass(smooth_report.solution) == pytest.approx(2.0)
    assert smooth_report.mass_defect <= 1e-9


def test_conic_solution_lelong(grid):
    D = geo.divisor(zero=Fraction(1, 2))
    rep = ma.solve_ke_ode(ma.ke_problem(4.0, D, grid))
    assert geo.lelong_numbers(rep.solution) == (0.5, 0.0)
    assert rep.mass_defect <= 1e-9
    # declared slope confirmed by the profile itself at the left end
    fd_slope = (rep.solution.values[1] - rep.solution.values[0]) / grid.spacing
    assert fd_slope == pytest.approx(0.5, abs=1e-6)


def test_conic_solution_fine_grid_consistency(grid):
    D = geo.divisor(zero=Fraction(1, 2))
    coarse = ma.solve_ke_ode(ma.ke_problem(4.0, D, grid))
    fine_grid = geo.make_grid(30.0, 16384)
    fine = ma.solve_ke_ode(ma.ke_problem(4.0, D, fine_grid))
    win = grid.window(-20.0, 20.0)
    interp = np.interp(grid.nodes[win], fine_grid.nodes, fine.solution.values)
    assert np.max(np.abs(coarse.solution.values[win] - interp)) < 1e-5


def test_degenerate_band_background_accepted(grid):
    # curvature vanishing on a half line still solves: the density keeps the
    # Newton system invertible
    chi = geo.fs_weight(1.0, grid) + geo.kink_weight(grid)
    prob = ma.MAProblem(chi, geo.fs_weight(4.0, grid), geo.DivisorData())
    rep = ma.solve_ke_ode(prob)
    assert rep.residual <= 1e-10


def test_nonintegrable_configuration_rejected(grid):
    # twist slope too large at +inf makes the density grow
    chi = geo.fs_weight(2.0, grid)
    twist = geo.fs_weight(2.0, grid)
    with pytest.raises(ConfigurationError, match="not integrable"):
        ma.MAProblem(chi, twist, geo.DivisorData())


def test_adjoint_degree_guard(grid):
    with pytest.raises(ConfigurationError, match="semiample degree"):
        ma.ke_problem(2.0, grid=grid)
    with pytest.raises(ConfigurationError, match="exhausts"):
        ma.ke_problem(3.0, grid=grid, delta=1.5)


def test_newton_reports_divergence(grid):
    prob = ma.ke_problem(4.0, grid=grid)
    with pytest.raises(ConvergenceError) as err:
        ma.solve_ke_ode(prob, tol=1e-10, max_iter=2)
    assert err.value.residual is not None


def test_comparison_principle_on_random_twists(grid):
    # pointwise larger twist weight gives a pointwise larger solution
    rng = np.random.default_rng(42)
    t = grid.nodes
    base = geo.fs_weight(4.0, grid)
    for _ in range(5):
        bump = np.zeros(t.size)
        for _ in range(3):
            c, w = rng.uniform(-6, 6), rng.uniform(0.5, 2.0)
            bump += rng.uniform(0.0, 0.3) * np.exp(-((t - c) / w) ** 2)
        bigger = geo.RadialWeight(grid, base.values + bump, 0.0, 4.0, 4.0)
        lo = ma.solve_ke_ode(ma.ke_problem(4.0, grid=grid, twist=base))
        hi = ma.solve_ke_ode(ma.ke_problem(4.0, grid=grid, twist=bigger))
        assert np.all(hi.solution.values >= lo.solution.values - 1e-9)


# ---------------------------------------------------------------------------
# energy functionals
# ---------------------------------------------------------------------------

def test_energy_zero(grid):
    bg = geo.fs_weight(2.0, grid)
    assert ma.energy(np.zeros(grid.node_count), bg) == 0.0


def test_energy_constant_gives_degree(grid):
    bg = geo.fs_weight(2.0, grid)
    a = 0.7
    assert ma.energy(np.full(grid.node_count, a), bg) == pytest.approx(2.0 * a, rel=1e-9)


def test_energy_first_variation_matches_fd(grid):
    rng = np.random.default_rng(0)
    bg = geo.fs_weight(2.0, grid)
    t = grid.nodes
    phi = 0.3 * np.exp(-(t / 3.0) ** 2)
    v = 0.1 * np.exp(-((t - 1.0) / 2.0) ** 2)
    s = 1e-5
    fd = (ma.energy(phi + s * v, bg) - ma.energy(phi, bg)) / s
    assert abs(fd - ma.energy_variation(phi, v, bg)) <= 1e-6


def test_g_functional_zero_for_unit_mass(grid):
    bg = geo.fs_weight(2.0, grid)
    # measure normalized to unit mass: G(0) = -log 1 = 0
    log_mu = -np.log(np.sum(grid.trapezoid_weights)) * np.ones(grid.node_count)
    assert ma.g_functional(np.zeros(grid.node_count), bg, log_mu) == pytest.approx(0.0, abs=1e-12)


def test_g_functional_constant_formula(grid):
    bg = geo.fs_weight(2.0, grid)
    log_mu = np.zeros(grid.node_count)  # mass = 2T
    mass = float(np.sum(grid.trapezoid_weights))
    a = 0.4
    got = ma.g_functional(np.full(grid.node_count, a), bg, log_mu)
    assert got == pytest.approx(a * 2.0 - a - math.log(mass), rel=1e-9)


def test_solved_potential_maximizes_g_on_unit_class(grid):
    prob = ma.ke_problem(3.0, grid=grid)  # adjoint degree 1
    rep = ma.solve_ke_ode(prob)
    log_mu = prob.log_density_at_background()
    g_star = ma.g_functional(rep.potential, prob.background, log_mu)
    rng = np.random.default_rng(1234)
    t = grid.nodes
    for _ in range(25):
        v = rng.uniform(-1, 1) * np.exp(-((t - rng.uniform(-5, 5)) / rng.uniform(1, 3)) ** 2)
        v *= 0.1 / max(1e-30, np.max(np.abs(v)))
        assert g_star >= ma.g_functional(rep.potential + v, prob.background, log_mu) - 1e-9


# ---------------------------------------------------------------------------
# regularization family
# ---------------------------------------------------------------------------

def test_uniform_bound_check(grid):
    reports = [ma.solve_ke_ode(ma.ke_problem(4.0, grid=grid, delta=d))
               for d in (0.1, 0.05, 0.01)]
    cert = ma.uniform_bound_check(reports)
    assert np.isfinite(cert["bound"]) and cert["count"] == 3
    single = ma.uniform_bound_check(reports[:1])
    assert single["bound"] == reports[0].sup_potential
    with pytest.raises(ConfigurationError):
        ma.uniform_bound_check([])


def test_regularized_diagonal_smooth(grid):
    base = ma.ke_problem(4.0, grid=grid)
    sched = [0.1 * 0.5 ** i for i in range(8)]
    diag = ma.regularized_diagonal(base, sched, sched)
    assert diag.converged
    assert len(diag.reports) == 8
    plain = ma.solve_ke_ode(base)
    dist = np.max(np.abs(diag.reports[-1].potential - plain.potential))
    assert dist < 5e-3  # full 1e-3 bound needs the longer acceptance schedule


def test_regularized_diagonal_monotone_in_delta(grid):
    # the rescaled potentials decrease toward the limit after the constant
    # shift from the proof of the stability statement
    base = ma.ke_problem(4.0, grid=grid)
    deltas = [0.2, 0.1, 0.05, 0.025, 0.0125]
    psis = []
    for d in deltas:
        rep = ma.solve_ke_ode(base.with_regularization(d, 1e-12))
        psis.append(rep.potential / (1.0 - d) - math.log(1.0 - d) / (1.0 - d))
    plain = ma.solve_ke_ode(base).potential
    K = min(0.0, min(float(np.min(p)) for p in psis))
    shifted = [p - K * d / (1.0 - d) for p, d in zip(psis, deltas)]
    for a, b in zip(shifted, shifted[1:]):
        assert np.all(b <= a + 1e-6)  # decreasing along delta downward
    assert np.all(shifted[-1] >= plain - 1e-2)


def test_regularized_diagonal_rejects_bad_schedules(grid):
    base = ma.ke_problem(4.0, grid=grid)
    with pytest.raises(ConfigurationError):
        ma.regularized_diagonal(base, [], [0.1])
    with pytest.raises(ConfigurationError):
        ma.regularized_diagonal(base, [0.1, 0.1], [0.1, 0.05])
    with pytest.raises(ConfigurationError):
        ma.regularized_diagonal(base, [0.1, -0.05], [0.1, 0.05])


def test_diagonal_requires_recipe(grid):
    chi = geo.fs_weight(2.0, grid)
    prob = ma.MAProblem(chi, geo.fs_weight(4.0, grid), geo.DivisorData())
    with pytest.raises(ConfigurationError, match="recipe|constructor"):
        ma.regularized_diagonal(prob, [0.1, 0.05], [0.1, 0.05])
