"""Normalization conventions, pinned once and hashed into run manifests.

Every module in this package assumes the conventions below.  Silent constant
mismatches are the dominant wrong-answer risk in this kind of numerics, so the
text itself is an artifact: its sha256 is recorded in every run manifest and a
change here invalidates stored runs.
"""

import hashlib

CONVENTIONS = """\
radialke normalization conventions, version 1

coordinates
  t = log|z|^2 on the Riemann sphere minus its two fixed points.
  A rotation-invariant metric weight is a profile u(t); psh means u convex.

curvature and mass
  dd^c = (i/2pi) del delbar.  After circle averaging, the curvature of a
  radial weight u has density u''(t) dt away from the fixed points, and
  dd^c log|z|^2 is the unit point mass at z = 0.
  Asymptotic slopes s_minus = u'(-inf), s_plus = u'(+inf).
  Absolutely continuous mass: integral of u'' = s_plus - s_minus.
  Lelong numbers: nu(0) = s_minus, nu(inf) = degree - s_plus, where degree
  is the declared bundle degree carried by the weight.

frames
  Fubini-Study frame norms of the two torus-fixed sections of O(1):
  |s_0|^2 = e^t / (1 + e^t),  |s_inf|^2 = 1 / (1 + e^t); both lie in (0,1).
  The canonical (monomial) weight of the divisor a0.{0} + ainf.{inf} is the
  profile a0 * t, declared degree a0 + ainf.

measure pairing
  A weight psi on the canonical bundle induces, after circle averaging, the
  measure 2 pi e^{psi(t) + t} dt.  All integrals are trapezoid sums on the
  uniform t grid (default half width 30, 4096 nodes), evaluated in log scale.

Monge-Ampere normal form
  u''(t) = 2 pi F(t) exp(u - u_twist - c * u_prev + t), where F is the
  divisor frame factor prod_i (|s_i|^2 + eps^2)^{a_i}.  Solutions carry the
  slopes of their background weight; the bounded correction v = u - u_ref
  satisfies discrete Neumann conditions v'(+-T) = 0.
  Closed-form anchor: with twist k log(1+e^t), no divisor, the solution is
  (k-2) log(1+e^t) + log((k-2)/(2 pi)).

iteration normalization
  The p-step iteration multiplies its reference measure by p (a constant
  absorbed by the twist weight), so that the rescaled limits w_inf / p of
  every step count p solve one and the same limit equation.
"""

CONVENTIONS_HASH = hashlib.sha256(CONVENTIONS.encode("utf-8")).hexdigest()
