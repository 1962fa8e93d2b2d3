"""Fiber families over a one-dimensional rotation-invariant base.

A family is a grid of twists ``u_L(t; s)`` over base nodes ``s = log|y|^2``,
each fiber carrying the same divisor.  For bi-invariant weights, positivity
of a current on the total space reduces to positive semidefiniteness of the
2x2 Hessian in ``(t, s)``, checked here through its (t,t) entry and its
determinant so that degenerate fibers never divide by a vanishing entry.

The workflow: build a family from a recipe (the joint-positivity precheck on
the twist gates admission), solve every fiber, then certify positivity of
the solved relative weight, uniform boundedness over compact base ranges,
and convexity of the fiberwise section norms in the base coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ConvergenceError
from .geometry import (DivisorData, RadialGrid, RadialWeight, fs_weight,
                       make_grid)
from .kernels import logsumexp
from .masolver import SolveReport, ke_problem, solve_ke_ode

DEFAULT_BASE = (-2.0, 2.0, 41)
DEFAULT_FIBER_N = 1024
POSITIVITY_TOL = 1e-6


# ---------------------------------------------------------------------------
# recipes and bump profiles
# ---------------------------------------------------------------------------

def _bump_fs(t: np.ndarray) -> np.ndarray:
    # normalized curvature profile of the model weight, exponential tails
    e = np.exp(-np.abs(t))
    return 4.0 * e / (1.0 + e) ** 2


def _bump_cauchy(t: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + t * t)


def _bump_log(t: np.ndarray) -> np.ndarray:
    v = np.logaddexp(0.0, t) * np.logaddexp(0.0, -t)
    return v / math.log(2.0) ** 2


BUMPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "fs_bump": _bump_fs,
    "cauchy_bump": _bump_cauchy,
    "log_bump": _bump_log,
}


@dataclass(frozen=True)
class FamilyRecipe:
    """Construction data for a built-in family.

    ``product`` has no base dependence; ``perturbed`` couples a bounded bump
    to the base through ``exp(s) * amplitude``; ``conic`` is ``perturbed``
    with a fixed fiber divisor.  A negative amplitude flips the coupling
    concave in the base and is only usable with the precheck bypass (the
    control experiment for the positivity certificate).
    """

    kind: str
    k: float = 4.0
    amplitude: float = 0.05
    bump: str = "fs_bump"
    divisor: DivisorData = field(default_factory=DivisorData)

    def __post_init__(self):
        if self.kind not in ("product", "perturbed", "conic"):
            raise ConfigurationError(f"unknown family recipe {self.kind!r}")
        if self.bump not in BUMPS:
            raise ConfigurationError(f"unknown bump profile {self.bump!r}")
        if self.kind == "conic" and self.divisor.is_empty:
            raise ConfigurationError("conic recipe needs a fiber divisor")
        if not self.divisor.is_klt:
            raise ConfigurationError("fiber divisor must be klt")


def product_family_recipe(k: float = 4.0) -> FamilyRecipe:
    return FamilyRecipe("product", k, 0.0)


def perturbed_family_recipe(k: float = 4.0, amplitude: float = 0.05,
                            bump: str = "fs_bump") -> FamilyRecipe:
    return FamilyRecipe("perturbed", k, amplitude, bump)


def conic_family_recipe(k: float = 4.0, a0: Fraction | float | str = Fraction(1, 2),
                        amplitude: float = 0.05,
                        bump: str = "fs_bump") -> FamilyRecipe:
    D = DivisorData((("zero", Fraction(a0)),))
    return FamilyRecipe("conic", k, amplitude, bump, D)


# ---------------------------------------------------------------------------
# joint positivity of (t, s) Hessians
# ---------------------------------------------------------------------------

def hessian_certificate(U: np.ndarray, ht: float, hs: float,
                        tol: float = POSITIVITY_TOL) -> dict:
    """Positive semidefiniteness certificate for a bi-invariant weight matrix.

    Second differences on interior nodes give the (t,t), (s,s) and mixed
    entries; the test is ``tt >= -tol * scale`` and ``det >= -tol * scale``
    with scales set by the largest observed entries, so discretization noise
    where the Hessian is tiny does not produce false failures.
    """
    if U.shape[0] < 3 or U.shape[1] < 3:
        raise ConfigurationError("hessian check needs at least 3 nodes per axis")
    tt = (U[:-2, 1:-1] - 2.0 * U[1:-1, 1:-1] + U[2:, 1:-1]) / ht**2
    ss = (U[1:-1, :-2] - 2.0 * U[1:-1, 1:-1] + U[1:-1, 2:]) / hs**2
    ts = (U[2:, 2:] - U[2:, :-2] - U[:-2, 2:] + U[:-2, :-2]) / (4.0 * ht * hs)
    det = tt * ss - ts * ts

    scale_tt = max(1.0, float(np.max(np.abs(tt))))
    scale_det = max(1.0, float(np.max(np.abs(det))))
    i_tt = np.unravel_index(int(np.argmin(tt)), tt.shape)
    i_det = np.unravel_index(int(np.argmin(det)), det.shape)
    min_tt = float(tt[i_tt])
    min_det = float(det[i_det])
    ok = (min_tt >= -tol * scale_tt) and (min_det >= -tol * scale_det)
    return {
        "passed": bool(ok),
        "min_tt": min_tt,
        "min_det": min_det,
        "max_abs_mixed": float(np.max(np.abs(ts))),
        "max_abs_ss": float(np.max(np.abs(ss))),
        "tt_location": (int(i_tt[0]) + 1, int(i_tt[1]) + 1),
        "det_location": (int(i_det[0]) + 1, int(i_det[1]) + 1),
        "tol": tol,
        "scale_tt": scale_tt,
        "scale_det": scale_det,
    }


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiberFamily:
    recipe: FamilyRecipe
    base_nodes: np.ndarray
    fiber_grid: RadialGrid
    twists: tuple[RadialWeight, ...]
    precheck: dict
    joint_positive: bool

    def __post_init__(self):
        b = np.asarray(self.base_nodes, dtype=np.float64)
        b.setflags(write=False)
        object.__setattr__(self, "base_nodes", b)

    @property
    def divisor(self) -> DivisorData:
        return self.recipe.divisor

    @property
    def base_count(self) -> int:
        return self.base_nodes.size

    def twist_matrix(self) -> np.ndarray:
        return np.column_stack([w.values for w in self.twists])


def default_base_nodes() -> np.ndarray:
    lo, hi, count = DEFAULT_BASE
    return np.linspace(lo, hi, count)


def build_family(recipe: FamilyRecipe, base_nodes: np.ndarray | None = None,
                 fiber_grid: RadialGrid | None = None, *,
                 bypass_precheck: bool = False,
                 tol: float = POSITIVITY_TOL) -> FiberFamily:
    """Assemble fiber twists and run the joint-positivity precheck.

    The precheck applies the 2x2 Hessian certificate to the twist matrix;
    rejection carries the offending node.  ``bypass_precheck`` admits a
    failing family anyway (control experiments only).
    """
    base = default_base_nodes() if base_nodes is None else np.asarray(base_nodes, float)
    if base.ndim != 1 or base.size < 1:
        raise ConfigurationError("base grid must be a nonempty 1-d array")
    if base.size > 1 and np.min(np.diff(base)) <= 0:
        raise ConfigurationError("base nodes must be strictly increasing")
    grid = fiber_grid or make_grid(30.0, DEFAULT_FIBER_N)

    bump = BUMPS[recipe.bump](grid.nodes)
    base_fs = fs_weight(recipe.k, grid)
    twists = []
    for s in base:
        if recipe.kind == "product":
            twists.append(base_fs)
        else:
            vals = base_fs.values + math.exp(s) * recipe.amplitude * bump
            twists.append(RadialWeight(grid, vals, 0.0, recipe.k, recipe.k))

    U = np.column_stack([w.values for w in twists])
    if base.size >= 3:
        cert = hessian_certificate(U, grid.spacing, float(base[1] - base[0]), tol)
    else:
        cert = {"passed": True, "note": "fewer than 3 base nodes, s-Hessian not testable"}
    if not cert["passed"] and not bypass_precheck:
        raise ConfigurationError(
            "family twist fails joint positivity: min det "
            f"{cert['min_det']:.3e} at interior node {cert['det_location']}, "
            f"min tt {cert['min_tt']:.3e}")
    return FiberFamily(recipe, base, grid, tuple(twists), cert,
                       bool(cert["passed"]))


@dataclass(frozen=True)
class RelativePotential:
    """Solved family: fiberwise total weights column by column."""

    family: FiberFamily
    weights: np.ndarray     # (fiber nodes) x (base nodes)
    potentials: np.ndarray  # bounded relative potentials, same shape
    reports: tuple[SolveReport, ...]

    def __post_init__(self):
        for name in ("weights", "potentials"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def solve_fiberwise(family: FiberFamily, tol: float = 1e-11) -> RelativePotential:
    """Solve the fiber equation in every base column."""
    cols, pots, reports = [], [], []
    for idx, twist in enumerate(family.twists):
        try:
            prob = ke_problem(family.recipe.k, family.divisor, family.fiber_grid,
                              twist=twist)
            rep = solve_ke_ode(prob, tol=tol)
        except (ConfigurationError, ConvergenceError) as exc:
            raise type(exc)(
                f"fiber {idx} (s = {family.base_nodes[idx]:+.4f}) failed: {exc}")
        cols.append(rep.solution.values)
        pots.append(rep.potential)
        reports.append(rep)
    return RelativePotential(family, np.column_stack(cols),
                             np.column_stack(pots), tuple(reports))


def base_positivity_check(rel: RelativePotential,
                          tol: float = POSITIVITY_TOL) -> dict:
    """Main positivity certificate of the solved relative weight.

    Both the fiber-direction entry and the determinant of the (t, s) Hessian
    must be nonnegative up to scaled tolerance at every interior node; the
    certificate carries the global minima and their locations.
    """
    if rel.family.base_count < 3:
        raise ConfigurationError("positivity check needs at least 3 base nodes")
    hs = float(rel.family.base_nodes[1] - rel.family.base_nodes[0])
    cert = hessian_certificate(rel.weights, rel.family.fiber_grid.spacing, hs, tol)
    cert["joint_positive_input"] = rel.family.joint_positive
    cert["scope"] = ("interior joint positivity over the sampled base window; "
                     "no extension across degenerate fibers is certified")
    return cert


def uniform_sup_check(rel: RelativePotential,
                      base_range: tuple[float, float]) -> dict:
    """Upper bound of the relative potential over a compact base range."""
    lo, hi = base_range
    mask = (rel.family.base_nodes >= lo) & (rel.family.base_nodes <= hi)
    if not np.any(mask):
        raise ConfigurationError(f"no base nodes inside [{lo}, {hi}]")
    sups = np.max(rel.potentials[:, mask], axis=0)
    bound = float(np.max(sups))
    if not np.isfinite(bound):
        raise ConvergenceError("relative potential unbounded over the range")
    return {"bound": bound, "fibers": int(np.sum(mask)), "range": (lo, hi)}


# ---------------------------------------------------------------------------
# fiberwise section norms
# ---------------------------------------------------------------------------

def ns_log_norm(j: int, m: int, fiber_index: int, family: FiberFamily) -> float:
    """Log of the fiberwise m-th root-integral section norm.

    The section ``z^j`` of the m-fold adjoint twisted bundle is integrated
    with the 1/m-th power of its pointwise norm against the canonical
    divisor weight, and the result is raised back to the m-th power:

        log |z^j|_m^2 = m log( 2 pi int exp((j/m + 1) t - u_L - a_0 t) dt ).

    A klt divisor makes every exponent integrable; the slope precheck
    rejects the rest.
    """
    if m < 1:
        raise ConfigurationError(f"root order m must be >= 1, got {m}")
    recipe = family.recipe
    # rounded-down degree of the m-fold adjoint bundle, as usual for
    # fractional divisor coefficients
    top = math.floor(m * (recipe.k + float(recipe.divisor.total) - 2.0) + 1e-9)
    if top < 0:
        raise ConfigurationError(f"adjoint bundle has no sections at m = {m}")
    if not (0 <= j <= top):
        raise ConfigurationError(f"exponent {j} outside section window [0, {top}]")
    if not (0 <= fiber_index < family.base_count):
        raise ConfigurationError(f"fiber index {fiber_index} out of range")
    a0 = float(recipe.divisor.coefficient("zero"))
    twist = family.twists[fiber_index]
    grid = family.fiber_grid
    t = grid.nodes

    slope_lo = j / m + 1.0 - a0
    slope_hi = j / m + 1.0 - twist.slope_plus - a0
    if slope_lo <= 0 or slope_hi >= 0:
        raise ConfigurationError(
            f"section z^{j} not integrable for this twist (end slopes "
            f"{slope_lo}, {slope_hi})")
    expo = (j / m + 1.0) * t - twist.values - a0 * t
    log_int = logsumexp(expo + np.log(grid.trapezoid_weights))
    return m * (math.log(2.0 * math.pi) + log_int)


def ns_norm(j: int, m: int, fiber_index: int, family: FiberFamily) -> float:
    """Fiberwise section norm (positive real); see :func:`ns_log_norm`."""
    return math.exp(ns_log_norm(j, m, fiber_index, family))


def ns_convexity_check(j: int, m: int, family: FiberFamily,
                       tol: float = 1e-8) -> dict:
    """Convexity of ``-log`` of the section norm along the base.

    Positivity of the induced base metric means the negative log norm is
    convex in ``s``; the certificate reports the smallest second difference.
    """
    if family.base_count < 3:
        raise ConfigurationError("convexity check needs at least 3 base nodes")
    vals = np.array([-ns_log_norm(j, m, idx, family)
                     for idx in range(family.base_count)])
    hs = float(family.base_nodes[1] - family.base_nodes[0])
    d2 = (vals[:-2] - 2.0 * vals[1:-1] + vals[2:]) / hs**2
    min_d2 = float(np.min(d2))
    return {"passed": bool(min_d2 >= -tol), "min_second_diff": min_d2,
            "values": vals, "tol": tol}
