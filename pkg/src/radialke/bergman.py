"""Bergman kernel iteration in the rotation-invariant monomial basis.

At level ``l`` the section space of the iterated adjoint bundle is spanned by
monomials ``z^j`` whose exponents run over an integer window cut by the
divisor vanishing orders.  Rotation invariance makes every Gram matrix
diagonal, so one level is a vector of log Gram norms plus the convex
log-kernel profile

    kappa_l(t) = log sum_j exp(j t - log G_j).

The recursion feeds ``kappa_l`` back into the next level's inner product
together with the fixed chain weight ``tau``; renormalized profiles
``(kappa_l - log l!) / l`` converge to the step weight plus the rescaled
canonical divisor weight.  Everything is kept in log scale; Gram norms span
hundreds of orders of magnitude by level 200.

Quadrature runs on a widened copy of the working grid so that every Gram
integrand has decayed below 1e-30 of its peak at the boundary; the driver
verifies this guard on every level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .geometry import (DivisorData, RadialGrid, RadialWeight, default_grid,
                       divisor_eps_weight, divisor_frame_log,
                       divisor_log_weight, fs_weight)
from .kernels import affine_lse_profile, affine_lse_quadrature, logsumexp
from .masolver import ke_problem, solve_ke_ode
from . import ricci as ricci_mod

DECAY_GUARD_LOG = math.log(1e-30)


# ---------------------------------------------------------------------------
# section bases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SectionBasis:
    """Monomial exponent window of one level."""

    level: int
    p: int
    k: float
    divisor: DivisorData
    j_min: int
    j_max: int

    @property
    def n_sections(self) -> int:
        return self.j_max - self.j_min + 1

    @property
    def degree(self) -> int:
        return self.level * self.step_degree

    @property
    def step_degree(self) -> int:
        return _step_degree(self.p, self.k)

    @property
    def exponents(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1, dtype=np.float64)


def _step_degree(p: int, k: float) -> int:
    d1 = Fraction(p) * (Fraction(k).limit_denominator(10**9) - 2)
    if d1.denominator != 1 or d1 <= 0:
        raise ConfigurationError(
            f"level bundle degree p*(k-2) = {d1} must be a positive integer")
    return int(d1)


def section_range(level: int, p: int, k: float,
                  D: DivisorData | None = None) -> SectionBasis:
    """Exponent window at a level: sections vanish on the scaled divisor.

    Lower end is the ceiling of the vanishing order at zero, upper end the
    level degree minus the ceiling at infinity.
    """
    if level < 1:
        raise ConfigurationError(f"level must be >= 1, got {level}")
    D = D or DivisorData()
    d1 = _step_degree(p, k)
    lp = Fraction(level * p)
    j_min = int(math.ceil(lp * D.coefficient("zero")))
    j_max = level * d1 - int(math.ceil(lp * D.coefficient("infinity")))
    if j_max < j_min:
        raise ConfigurationError(
            f"empty section space at level {level}: window [{j_min}, {j_max}]")
    return SectionBasis(level, p, float(k), D, j_min, j_max)


def frac_frame_log(basis: SectionBasis, grid: RadialGrid,
                   eps: float = 0.0) -> np.ndarray:
    """Fractional-part frame profile of the level.

    For each divisor point the exponent is ``ceil(l p a) - l p a``, applied
    to the eps-floored Fubini-Study frame norm.
    """
    lp = Fraction(basis.level * basis.p)
    terms = []
    for loc, a in basis.divisor.terms:
        frac = Fraction(math.ceil(lp * a)) - lp * a
        if frac:
            terms.append((loc, frac))
    return divisor_frame_log(DivisorData(tuple(terms)), grid, eps)


# ---------------------------------------------------------------------------
# weight chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightChain:
    """Fixed data of one kernel recursion: the inner-product weight ``tau``
    built from the previous iteration step, and the convergence target."""

    k: float
    p: int
    m: int
    divisor: DivisorData
    grid: RadialGrid
    tau: RadialWeight
    target: RadialWeight
    eps: float = 0.0
    route_agreement: float = float("nan")

    @property
    def step_degree(self) -> int:
        return _step_degree(self.p, self.k)


def build_chain(k: float, D: DivisorData | None = None, p: int = 1,
                m: int = 1, grid: RadialGrid | None = None, *,
                eps: float = 0.0, twist: RadialWeight | None = None,
                solver_tol: float = 1e-10) -> WeightChain:
    """Assemble the level-recursion weights for outer step ``m``.

    Runs the p-step iteration to ``m - 1`` for the chain weight and one step
    further for the target.  With ``p = 1`` every step solves the direct
    equation, and the target is cross-checked against an independent direct
    solve; the sup distance is stored as ``route_agreement``.
    """
    if m < 1:
        raise ConfigurationError(f"outer index m must be >= 1, got {m}")
    D = D or DivisorData()
    grid = grid or default_grid()
    state = ricci_mod.initial_state(k, D, p, grid, eps=eps, twist=twist)
    for _ in range(m - 1):
        state = ricci_mod.ricci_step(state, tol=solver_tol)
    w_prev = state.weight
    state = ricci_mod.ricci_step(state, tol=solver_tol)
    w_m = state.weight

    div_weight = (divisor_eps_weight(D, grid, eps) if eps > 0
                  else divisor_log_weight(D, grid))
    twist_used = twist if twist is not None else fs_weight(k, grid)
    tau = (w_prev.scaled((p - 1) / p) + div_weight.scaled(float(p - 1))
           + twist_used).shifted(-math.log(p))
    target = w_m + div_weight.scaled(float(p))

    route = float("nan")
    if p == 1 and eps == 0:
        ke = solve_ke_ode(ke_problem(k, D, grid, twist=twist), tol=solver_tol)
        route = float(np.max(np.abs(target.values - ke.solution.values)))
    return WeightChain(float(k), int(p), int(m), D, grid, tau, target,
                       eps=eps, route_agreement=route)


# ---------------------------------------------------------------------------
# levels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BergmanLevel:
    basis: SectionBasis
    log_gram: np.ndarray
    kappa: RadialWeight

    def __post_init__(self):
        a = np.asarray(self.log_gram, dtype=np.float64)
        a.setflags(write=False)
        object.__setattr__(self, "log_gram", a)

    @property
    def level(self) -> int:
        return self.basis.level


def gram_diagonal(basis: SectionBasis, chain: WeightChain,
                  prev: Optional[BergmanLevel] = None,
                  frac_eps: Optional[float] = None) -> np.ndarray:
    """Log Gram norms of the monomial sections at one level.

    The inner product weight is the previous kernel times ``e^{-tau}``; the
    measure picks up the canonical ``2 pi e^t dt`` pairing.  Off-diagonal
    entries vanish identically by rotation symmetry and are not computed.
    ``frac_eps`` optionally multiplies the measure by the eps-floored
    fractional-part frame of the level.
    """
    grid = chain.tau.grid
    t = grid.nodes
    kappa_prev = np.zeros(t.size) if prev is None else prev.kappa.values
    s_min_prev = 0.0 if prev is None else prev.kappa.slope_minus
    s_max_prev = 0.0 if prev is None else prev.kappa.slope_plus

    lo = basis.j_min + 1.0 - s_min_prev - chain.tau.slope_minus
    hi = basis.j_max + 1.0 - s_max_prev - chain.tau.slope_plus
    if lo <= 0:
        raise ConfigurationError(
            f"gram integrand grows at t -> -inf (slope {lo}) at level {basis.level}")
    if hi >= 0:
        raise ConfigurationError(
            f"gram integrand grows at t -> +inf (slope {hi}) at level {basis.level}")

    base = -kappa_prev - chain.tau.values + t + math.log(2.0 * math.pi)
    if frac_eps is not None:
        base = base + frac_frame_log(basis, grid, frac_eps)
    logw = np.log(grid.trapezoid_weights)
    offsets = np.zeros(basis.n_sections)
    return affine_lse_quadrature(t, logw, basis.exponents, offsets, base)


def bergman_step(prev: Optional[BergmanLevel], chain: WeightChain,
                 frac_eps: Optional[float] = None) -> BergmanLevel:
    """Advance the kernel recursion by one level (``prev=None`` starts at 1)."""
    level = 1 if prev is None else prev.level + 1
    basis = section_range(level, chain.p, chain.k, chain.divisor)
    log_gram = gram_diagonal(basis, chain, prev, frac_eps)
    grid = chain.tau.grid
    kappa_vals = affine_lse_profile(grid.nodes, basis.exponents, -log_gram)
    kappa = RadialWeight(grid, kappa_vals, float(basis.j_min),
                         float(basis.j_max), float(basis.degree))
    return BergmanLevel(basis, log_gram, kappa)


def renormalized_profile(level: BergmanLevel) -> np.ndarray:
    """``(kappa_l - log l!) / l``, the profile that converges to the target."""
    ell = level.level
    return (level.kappa.values - math.lgamma(ell + 1)) / ell


def c_ell_diagnostic(level: BergmanLevel, reference: np.ndarray) -> float:
    """Log gap between the kernel and a scaled reference profile.

    ``reference`` must be the level-scaled target plus the fractional frame,
    with matching end slopes; if the infimum escapes to the grid boundary the
    reference is rejected as slope-inconsistent.
    """
    reference = np.asarray(reference, dtype=np.float64)
    d = level.kappa.values - reference
    h = level.kappa.grid.spacing
    imin = int(np.argmin(d))
    if imin == 0 and (d[1] - d[0]) / h > 1e-6:
        raise ConfigurationError("reference slope mismatch at t -> -inf; "
                                 "infimum escapes the grid")
    if imin == d.size - 1 and (d[-1] - d[-2]) / h < -1e-6:
        raise ConfigurationError("reference slope mismatch at t -> +inf; "
                                 "infimum escapes the grid")
    return float(d[imin])


# ---------------------------------------------------------------------------
# run driver
# ---------------------------------------------------------------------------

@dataclass
class BergmanRun:
    chain: WeightChain
    grid: RadialGrid                      # widened quadrature grid
    levels: list[BergmanLevel] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)
    liminf_slacks: list[float] = field(default_factory=list)
    chain_log_integrals: list[float] = field(default_factory=list)
    chain_log_bounds: list[float] = field(default_factory=list)
    c_ells: list[float] = field(default_factory=list)
    guard_margin: float = float("inf")

    @property
    def n_sections(self) -> list[int]:
        return [lv.basis.n_sections for lv in self.levels]

    def chain_slacks(self) -> np.ndarray:
        """Relative overshoot of the integral chain bound, one per level."""
        return np.expm1(np.array(self.chain_log_integrals)
                        - np.array(self.chain_log_bounds))


def quadrature_halfwidth(chain: WeightChain, ell_max: int) -> float:
    """Half width needed for the 1e-30 decay guard on every Gram integrand.

    The slowest column decays at the minimal end-slope margin of the
    recursion; the peak location is bounded by a fixed core width.
    """
    beta_lo, beta_hi = math.inf, math.inf
    prev_lo, prev_hi = 0.0, 0.0
    for ell in range(1, ell_max + 1):
        b = section_range(ell, chain.p, chain.k, chain.divisor)
        beta_lo = min(beta_lo, b.j_min + 1.0 - prev_lo - chain.tau.slope_minus)
        beta_hi = min(beta_hi, -(b.j_max + 1.0 - prev_hi - chain.tau.slope_plus))
        prev_lo, prev_hi = float(b.j_min), float(b.j_max)
    beta = min(beta_lo, beta_hi)
    if beta <= 0.05:
        raise ConfigurationError(f"decay margin {beta} too small for quadrature")
    core = 12.0 + math.log1p(ell_max * chain.step_degree)
    return core + (-DECAY_GUARD_LOG) / beta


def run_levels(chain: WeightChain, ell_max: int,
               window: tuple[float, float] = (-10.0, 10.0),
               frac_eps: Optional[float] = None,
               reference_fn=None) -> BergmanRun:
    """Run the kernel recursion to ``ell_max`` with traces.

    Per level: sup distance of the renormalized profile to the target on the
    window, the one-sided slack below the target, the integral-chain pair
    (log integral, log bound), and the reference gap.  The decay guard is
    verified on the slowest Gram column of every level.
    """
    if ell_max < 1:
        raise ConfigurationError(f"ell_max must be >= 1, got {ell_max}")
    wide = chain.grid.widened(quadrature_halfwidth(chain, ell_max))
    chain_w = WeightChain(chain.k, chain.p, chain.m, chain.divisor, wide,
                          chain.tau.resampled(wide),
                          chain.target.resampled(wide), chain.eps,
                          chain.route_agreement)
    run = BergmanRun(chain_w, wide)
    t = wide.nodes
    logw = np.log(wide.trapezoid_weights)
    win = wide.window(*window)
    target = chain_w.target.values
    log_n_sum = 0.0
    prev = None
    for ell in range(1, ell_max + 1):
        lv = bergman_step(prev, chain_w, frac_eps)
        run.levels.append(lv)
        # decay guard: slowest columns sit at the window ends
        prev_kappa = np.zeros(t.size) if prev is None else prev.kappa.values
        for j in (lv.basis.j_min, lv.basis.j_max):
            col = j * t - prev_kappa - chain_w.tau.values + t
            peak = float(np.max(col))
            margin = peak - max(float(col[0]), float(col[-1])) + DECAY_GUARD_LOG
            run.guard_margin = min(run.guard_margin, margin)
        if run.guard_margin < 0:
            raise ConfigurationError(
                f"quadrature decay guard violated at level {ell}; widen the grid")
        r = renormalized_profile(lv)
        diff = r[win] - target[win]
        run.distances.append(float(np.max(np.abs(diff))))
        run.liminf_slacks.append(max(0.0, -float(np.min(r - target))))
        # integral chain, all three factors against the same nodal measure
        log_i = logsumexp(lv.kappa.values / ell - chain_w.tau.values + t
                          + math.log(2.0 * math.pi) + logw)
        log_n_sum += math.log(lv.basis.n_sections)
        run.chain_log_integrals.append(log_i)
        run.chain_log_bounds.append(log_n_sum / ell)
        if chain_w.eps == 0 and not frac_eps:
            ref = ell * target + frac_frame_log(lv.basis, wide, 0.0)
            run.c_ells.append(c_ell_diagnostic(lv, ref))
        else:
            run.c_ells.append(float("nan"))
        prev = lv
    return run


def convergence_check(run: BergmanRun, monotone_from: int = 20) -> dict:
    """Decay certificate for a finished run.

    Requires at least three levels; reports the final distance, whether the
    distance trace decreases monotonically from ``monotone_from`` on, and the
    one-sided slack trend below the target.  Only the eps = 0 chain is a
    convergence statement: at finite eps the floored reference and the
    vanishing-constrained sections carry different divisor slopes by design,
    so those runs support the gap machinery only.
    """
    if run.chain.eps != 0:
        raise ConfigurationError("convergence certification requires an eps = 0 "
                                 "chain; finite-eps chains back the reference-gap "
                                 "machinery only")
    if len(run.levels) < 3:
        raise ConfigurationError("convergence check needs at least three levels")
    d = np.array(run.distances)
    start = min(monotone_from, len(d)) - 1
    steps = np.diff(d[start:])
    monotone = bool(np.all(steps <= 1e-12)) if steps.size else True
    slack = np.array(run.liminf_slacks)
    return {
        "final_distance": float(d[-1]),
        "monotone_from": monotone_from,
        "monotone": monotone,
        "max_distance_after": float(np.max(d[start:])),
        "final_liminf_slack": float(slack[-1]),
        "liminf_decreasing": bool(slack[-1] <= slack[min(start, slack.size - 1)] + 1e-12),
        "route_agreement": run.chain.route_agreement,
    }


def integral_chain_check(run: BergmanRun, rel_tol: float = 1e-8) -> dict:
    """Finite-level integral bound certificate.

    The chained quadrature inequality is exact for the discrete sums, so any
    overshoot beyond rounding is an implementation error; the certificate
    reports the worst relative slack and the exact section-count formula
    check for empty divisors.
    """
    slack = run.chain_slacks()
    counts = np.array(run.n_sections)
    d1 = run.chain.step_degree
    ells = np.arange(1, counts.size + 1)
    exact_counts = None
    if run.chain.divisor.is_empty:
        exact_counts = bool(np.all(counts == ells * d1 + 1))
    return {
        "max_relative_slack": float(np.max(slack)),
        "holds": bool(np.max(slack) <= rel_tol),
        "count_formula_exact": exact_counts,
        "asymptote": d1,
        "final_integral": float(math.exp(run.chain_log_integrals[-1] -
                                         math.lgamma(counts.size + 1) / counts.size)),
    }


def c_ell_trend(run: BergmanRun) -> np.ndarray:
    """Per-level growth margin ``C_l - C_{l-1} - log l`` of the kernel infimum."""
    c = np.array(run.c_ells)
    ells = np.arange(2, c.size + 1)
    return c[1:] - c[:-1] - np.log(ells)
