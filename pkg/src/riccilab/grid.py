"""Finite-difference stencils and quadrature on nonuniform 1-d grids.

All derivatives are taken with respect to a strictly increasing coordinate
array (usually arclength).  Central three-point stencils are second order
in the first derivative and second order on smoothly graded grids for the
second derivative.
"""

import numpy as np


def central_first(s, f):
    """First derivative at interior nodes via nonuniform central stencil.

    Returns an array of length len(s) - 2 (values at s[1:-1]).
    """
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    denom = hm * hp * (hm + hp)
    return (f[2:] * hm**2 - f[:-2] * hp**2 + f[1:-1] * (hp**2 - hm**2)) / denom


def central_second(s, f):
    """Second derivative at interior nodes via nonuniform central stencil."""
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    denom = hm * hp * (hm + hp)
    return 2.0 * (f[:-2] * hp - f[1:-1] * (hp + hm) + f[2:] * hm) / denom


def onesided_first(s, f, left=True):
    """Second-order one-sided first derivative at an end node."""
    if left:
        s0, s1, s2 = s[0], s[1], s[2]
        f0, f1, f2 = f[0], f[1], f[2]
    else:
        s0, s1, s2 = s[-1], s[-2], s[-3]
        f0, f1, f2 = f[-1], f[-2], f[-3]
    h1 = s1 - s0
    h2 = s2 - s0
    # derivative of the quadratic through the three points, at s0
    return (f1 * h2**2 - f2 * h1**2 - f0 * (h2**2 - h1**2)) / (h1 * h2 * (h2 - h1))


def derivatives(s, f, kind, period=None):
    """First and second derivative arrays of f(s).

    kind: 'odd'      -- f extends as an odd function through both ends
                        (sphere poles; f(end) must be 0),
          'even'     -- f extends as an even function through both ends,
          'periodic' -- periodic with the given period (nodes cover one
                        period without a duplicated endpoint),
          'open'     -- one-sided stencils at the ends.
    """
    if kind == "periodic":
        if period is None:
            raise ValueError("period required for periodic derivatives")
        s_ext = np.concatenate(([s[-1] - period], s, [s[0] + period]))
        f_ext = np.concatenate(([f[-1]], f, [f[0]]))
        return central_first(s_ext, f_ext), central_second(s_ext, f_ext)

    if kind in ("odd", "even"):
        s_ext = np.concatenate(([2 * s[0] - s[1]], s, [2 * s[-1] - s[-2]]))
        if kind == "even":
            lo, hi = f[1], f[-2]
        else:
            # odd reflection about the end values (pinned at f = 0 for poles,
            # but written so small drift reflects consistently)
            lo, hi = 2 * f[0] - f[1], 2 * f[-1] - f[-2]
        f_ext = np.concatenate(([lo], f, [hi]))
        return central_first(s_ext, f_ext), central_second(s_ext, f_ext)

    if kind == "open":
        d1 = np.empty_like(f)
        d2 = np.empty_like(f)
        d1[1:-1] = central_first(s, f)
        d2[1:-1] = central_second(s, f)
        d1[0] = onesided_first(s, f, left=True)
        d1[-1] = onesided_first(s, f, left=False)
        d2[0] = d2[1]
        d2[-1] = d2[-2]
        return d1, d2

    raise ValueError(f"unknown derivative kind {kind!r}")


def trapezoid_weights(s):
    """Trapezoid quadrature weights for nodes at positions s."""
    w = np.zeros_like(s)
    ds = np.diff(s)
    w[:-1] += 0.5 * ds
    w[1:] += 0.5 * ds
    return w


def periodic_weights(s, period):
    """Midpoint-cell quadrature weights on a periodic grid (no duplicate node)."""
    s_ext = np.concatenate(([s[-1] - period], s, [s[0] + period]))
    return 0.5 * (s_ext[2:] - s_ext[:-2])


def cumulative_trapezoid(y, s):
    """Cumulative trapezoid integral of y ds, starting at zero."""
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(s))
    return out
