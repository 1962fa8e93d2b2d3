"""Hot numeric kernels, each with a numba build and a pure-numpy fallback.

Everything downstream funnels its inner loops through three operations:

``tridiag_solve``
    Thomas elimination for the Newton linearizations of the radial
    Monge-Ampere equation.  No pivoting; the systems are weakly diagonally
    dominant by construction (negative definite interior plus Neumann rows).

``affine_lse_profile``
    ``out[i] = log sum_j exp(slopes[j] * t[i] + offsets[j])``, the log-kernel
    profile of a rotation-invariant Bergman kernel in its monomial basis.

``affine_lse_quadrature``
    ``out[j] = log sum_i exp(slopes[j] * t[i] + offsets[j] + base[i] + logw[i])``,
    a whole batch of exponentially weighted trapezoid integrals in log scale.
    Gram norms span hundreds of orders of magnitude at high level, so linear
    scale is never used.

The numba twins run the same arithmetic with explicit loops; agreement is
checked by the test suite at 1e-12 relative tolerance.
"""

from __future__ import annotations

import numpy as np

from ._accel import USING_NUMBA, njit


# ---------------------------------------------------------------------------
# pure numpy path
# ---------------------------------------------------------------------------

def tridiag_solve_numpy(dl: np.ndarray, d: np.ndarray, du: np.ndarray,
                        b: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system by the Thomas algorithm.

    ``dl[i]`` multiplies ``x[i-1]`` (``dl[0]`` unused), ``du[i]`` multiplies
    ``x[i+1]`` (``du[-1]`` unused).
    """
    n = d.shape[0]
    c = du.copy()
    dd = d.copy()
    x = b.astype(np.float64, copy=True)
    for i in range(1, n):
        m = dl[i] / dd[i - 1]
        dd[i] -= m * c[i - 1]
        x[i] -= m * x[i - 1]
    x[n - 1] /= dd[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = (x[i] - c[i] * x[i + 1]) / dd[i]
    return x


def affine_lse_profile_numpy(t: np.ndarray, slopes: np.ndarray,
                             offsets: np.ndarray) -> np.ndarray:
    m = np.outer(t, slopes) + offsets[None, :]
    mx = m.max(axis=1)
    return mx + np.log(np.exp(m - mx[:, None]).sum(axis=1))


def affine_lse_quadrature_numpy(t: np.ndarray, logw: np.ndarray,
                                slopes: np.ndarray, offsets: np.ndarray,
                                base: np.ndarray) -> np.ndarray:
    m = np.outer(slopes, t) + offsets[:, None] + (base + logw)[None, :]
    mx = m.max(axis=1)
    return mx + np.log(np.exp(m - mx[:, None]).sum(axis=1))


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

def _tridiag_core(dl, d, du, b):
    n = d.shape[0]
    c = du.copy()
    dd = d.copy()
    x = b.copy()
    for i in range(1, n):
        m = dl[i] / dd[i - 1]
        dd[i] -= m * c[i - 1]
        x[i] -= m * x[i - 1]
    x[n - 1] /= dd[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = (x[i] - c[i] * x[i + 1]) / dd[i]
    return x


def _lse_profile_core(t, slopes, offsets):
    n = t.shape[0]
    k = slopes.shape[0]
    out = np.empty(n)
    for i in range(n):
        mx = slopes[0] * t[i] + offsets[0]
        for j in range(1, k):
            e = slopes[j] * t[i] + offsets[j]
            if e > mx:
                mx = e
        s = 0.0
        for j in range(k):
            s += np.exp(slopes[j] * t[i] + offsets[j] - mx)
        out[i] = mx + np.log(s)
    return out


def _lse_quadrature_core(t, logw, slopes, offsets, base):
    n = t.shape[0]
    k = slopes.shape[0]
    out = np.empty(k)
    for j in range(k):
        mx = -np.inf
        for i in range(n):
            e = slopes[j] * t[i] + offsets[j] + base[i] + logw[i]
            if e > mx:
                mx = e
        s = 0.0
        for i in range(n):
            s += np.exp(slopes[j] * t[i] + offsets[j] + base[i] + logw[i] - mx)
        out[j] = mx + np.log(s)
    return out


if USING_NUMBA:
    tridiag_solve_numba = njit(cache=True)(_tridiag_core)
    affine_lse_profile_numba = njit(cache=True)(_lse_profile_core)
    affine_lse_quadrature_numba = njit(cache=True)(_lse_quadrature_core)

    tridiag_solve = tridiag_solve_numba
    affine_lse_profile = affine_lse_profile_numba
    affine_lse_quadrature = affine_lse_quadrature_numba
else:  # numpy fallback selected by env flag or missing numba
    tridiag_solve_numba = None
    affine_lse_profile_numba = None
    affine_lse_quadrature_numba = None

    tridiag_solve = tridiag_solve_numpy
    affine_lse_profile = affine_lse_profile_numpy
    affine_lse_quadrature = affine_lse_quadrature_numpy


def logsumexp(values: np.ndarray) -> float:
    """Stable log(sum(exp(values))) of a 1-d array."""
    mx = float(np.max(values))
    if not np.isfinite(mx):
        return mx
    return mx + float(np.log(np.sum(np.exp(values - mx))))
