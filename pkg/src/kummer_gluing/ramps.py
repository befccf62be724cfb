"""Smooth step functions and their derivatives.

All ramps are the degree-9 polynomial step, which is C^4 across both ends.
C^4 is what keeps the glued error field in L^2_3.
"""

import numpy as np
from numpy.polynomial import Polynomial

_STEP = Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])
_STEP_D = [_STEP.deriv(k) for k in range(5)]


def smoothstep(x, deriv=0):
    """Step rising from 0 at x <= 0 to 1 at x >= 1, or its ``deriv``-th derivative."""
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    out = np.where(inside, _STEP_D[deriv](np.clip(x, 0.0, 1.0)), 0.0)
    if deriv == 0:
        out = np.where(x >= 1.0, 1.0, out)
    return out


def max_slope():
    """sup of the first derivative of :func:`smoothstep` (attained at x = 1/2)."""
    return float(_STEP_D[1](0.5))


def cutoff_beta(s, deriv=0):
    """The fixed cut function: 0 for s <= 1/2, 1 for s >= 1."""
    return smoothstep(2.0 * np.asarray(s, dtype=float) - 1.0, deriv) * 2.0**deriv


_STEP_I = _STEP.integ()
_STEP_I1 = float(_STEP_I(1.0))


def smoothstep_integral(x):
    """Antiderivative of :func:`smoothstep` vanishing for x <= 0 (equal to x - 1/2 for x >= 1)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0.0, _STEP_I(np.clip(x, 0.0, 1.0)), 0.0)
    return np.where(x > 1.0, _STEP_I1 + (x - 1.0), out)


def capped_distance(r, start=0.25, width=0.05, deriv=0):
    """r up to ``start``, then bending smoothly to the constant start + width/2."""
    r = np.asarray(r, dtype=float)
    u = (r - start) / width
    if deriv == 0:
        return r - width * smoothstep_integral(u)
    if deriv == 1:
        return 1.0 - smoothstep(u)
    return -smoothstep(u, deriv - 1) / width ** (deriv - 1)
