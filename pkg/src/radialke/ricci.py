"""The p-step iteration toward the twisted Kahler-Einstein weight.

Starting from ``w_0 = p * phi_A`` on the rescaled semiample class, each step
solves the coupled Monge-Ampere equation with coupling ``(p-1)/p`` against
the previous total weight.  Successive sup-norm gaps contract at least by
``(p-1)/p``; the limit, rescaled by ``1/p``, solves the same limit equation
for every ``p`` and recovers the singular Kahler-Einstein weight once the
canonical divisor part is added back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .geometry import (DivisorData, RadialGrid, RadialWeight, default_grid,
                       divisor_log_weight, fs_weight, lelong_numbers)
from .masolver import (MAProblem, SolveReport, _adjoint_degree, ricci_problem,
                       solve_ke_ode)

RATIO_SLACK = 1e-3
DEFAULT_STOP = 1e-10


@dataclass(frozen=True)
class RicciState:
    """Iteration state: the total weight on the rescaled class at step m."""

    k: float
    divisor: DivisorData
    p: int
    m: int
    weight: RadialWeight
    grid: RadialGrid
    eps: float = 0.0
    delta: float = 0.0
    twist: Optional[RadialWeight] = None
    report: Optional[SolveReport] = None

    @property
    def potential(self) -> RadialWeight:
        """Relative potential against ``p * phi_A`` (bounded profile)."""
        d_bg = _adjoint_degree(self.k, self.divisor, self.delta)
        return self.weight - fs_weight(self.p * d_bg, self.grid)


@dataclass
class RicciTrace:
    gaps: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    norm_integrals: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    violations: list[int] = field(default_factory=list)

    def rows(self, p: int) -> list[tuple]:
        bound = (p - 1) / p
        out = []
        for i, g in enumerate(self.gaps):
            m = i + 1
            r = self.ratios[i - 1] if i >= 1 else float("nan")
            out.append((m, g, r, self.norm_integrals[i], self.residuals[i], bound))
        return out


def initial_state(k: float, divisor: DivisorData | None = None, p: int = 1,
                  grid: RadialGrid | None = None, *, eps: float = 0.0,
                  delta: float = 0.0,
                  twist: RadialWeight | None = None) -> RicciState:
    """m = 0 state with ``w_0 = p * phi_A`` exactly."""
    if p < 1:
        raise ConfigurationError(f"step count p must be >= 1, got {p}")
    divisor = divisor or DivisorData()
    grid = grid or default_grid()
    d_bg = _adjoint_degree(k, divisor, delta)
    return RicciState(float(k), divisor, int(p), 0, fs_weight(p * d_bg, grid),
                      grid, eps, delta, twist, None)


def _step_problem(state: RicciState) -> MAProblem:
    return ricci_problem(state.k, state.divisor, state.p, state.weight,
                         state.grid, eps=state.eps, delta=state.delta,
                         twist=state.twist)


def ricci_step(state: RicciState, tol: float = 1e-10) -> RicciState:
    """Advance the iteration by one solve against the current weight."""
    rep = solve_ke_ode(_step_problem(state), tol=tol)
    return replace(state, m=state.m + 1, weight=rep.solution, report=rep)


def normalize_constant(state: RicciState) -> dict:
    """Reference-measure integral of the current step and its normalization.

    The integral equals the class mass ``p * deg(A)`` by the solved equation;
    the record also carries the additive constant that would rescale it to
    the plain semiample volume, and the measure factor ``p`` built into the
    iteration so that rescaled limits agree across step counts.
    """
    if state.m < 1 or state.report is None:
        raise ConfigurationError("normalization is defined from m >= 1")
    grid = state.grid
    integral = float(np.sum(grid.trapezoid_weights * state.report.density))
    d_bg = _adjoint_degree(state.k, state.divisor, state.delta)
    return {
        "integral": integral,
        "target_mass": state.p * d_bg,
        "semiample_volume": d_bg,
        "constant": math.log(d_bg) - math.log(integral),
        "measure_factor": state.p,
    }


def fixed_point_residual(state: RicciState) -> float:
    """Sup-norm residual of the limit equation at the current weight.

    At the fixed point the coupled equation closes on itself (the previous
    iterate equals the current one), so the residual is evaluated for the
    problem coupled against ``state.weight`` itself.
    """
    prob = _step_problem(state)
    w = state.weight
    v = w.values - prob.background.values
    g = np.exp(prob.log_density_at_background())
    h = state.grid.spacing
    curv = prob.background.curvature_profile()
    res = ((v[:-2] - 2.0 * v[1:-1] + v[2:]) / h**2
           + curv[1:-1] - g[1:-1] * np.exp(v[1:-1]))
    return float(np.max(np.abs(res)))


def run_ricci(k: float, divisor: DivisorData | None = None, p: int = 1, *,
              m_max: int = 200, stop_tol: float = DEFAULT_STOP,
              grid: RadialGrid | None = None, eps: float = 0.0,
              delta: float = 0.0, twist: RadialWeight | None = None,
              solver_tol: float = 1e-10,
              ratio_slack: float = RATIO_SLACK) -> tuple[RicciState, RicciTrace]:
    """Iterate until the sup-norm gap reaches ``stop_tol`` or ``m_max``.

    Records gaps, contraction ratios for m >= 2, per-step normalization
    integrals and solver residuals.  A ratio exceeding ``(p-1)/p`` by more
    than ``ratio_slack`` is flagged in ``trace.violations`` rather than
    raised, so a contraction failure is a visible diagnostic.
    """
    if m_max < 2:
        raise ConfigurationError(f"m_max must be >= 2, got {m_max}")
    state = initial_state(k, divisor, p, grid, eps=eps, delta=delta, twist=twist)
    trace = RicciTrace()
    bound = (p - 1) / p + ratio_slack
    prev_weight = state.weight
    for m in range(1, m_max + 1):
        state = ricci_step(state, tol=solver_tol)
        gap = float(np.max(np.abs(state.weight.values - prev_weight.values)))
        prev_weight = state.weight
        trace.gaps.append(gap)
        trace.norm_integrals.append(normalize_constant(state)["integral"])
        trace.residuals.append(state.report.residual)
        if m >= 2:
            ratio = trace.gaps[-1] / trace.gaps[-2]
            trace.ratios.append(ratio)
            if ratio > bound:
                trace.violations.append(m)
        if gap <= stop_tol:
            break
    return state, trace


def compare_to_ke(state: RicciState, ke: SolveReport) -> dict:
    """Match the rescaled iteration limit against the direct solve.

    The smooth parts must agree in sup norm once the canonical divisor
    weight is added back to the rescaled limit; the Lelong parts then differ
    exactly by the divisor coefficients.
    """
    recipe = ke.problem.recipe or {}
    if recipe.get("kind") != "ke":
        raise ConfigurationError("comparison target must come from ke_problem")
    if not np.isclose(recipe.get("k", float("nan")), state.k):
        raise ConfigurationError("twist degrees differ between the two routes")
    if ke.problem.divisor != state.divisor:
        raise ConfigurationError("divisors differ between the two routes")
    if ke.problem.grid.node_count != state.grid.node_count or \
            not np.array_equal(ke.problem.grid.nodes, state.grid.nodes):
        raise ConfigurationError("grids differ between the two routes")
    if ke.problem.delta != state.delta or ke.problem.eps != state.eps:
        raise ConfigurationError("regularization parameters differ between the two routes")

    rescaled = state.weight.scaled(1.0 / state.p)
    candidate = rescaled + divisor_log_weight(state.divisor, state.grid)
    sup = float(np.max(np.abs(candidate.values - ke.solution.values)))
    lel_ke = lelong_numbers(ke.solution)
    lel_smooth = lelong_numbers(rescaled)
    return {
        "sup_distance": sup,
        "lelong_zero_diff": lel_ke[0] - lel_smooth[0],
        "lelong_infinity_diff": lel_ke[1] - lel_smooth[1],
        "divisor_zero": float(state.divisor.coefficient("zero")),
        "divisor_infinity": float(state.divisor.coefficient("infinity")),
    }
