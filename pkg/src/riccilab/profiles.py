"""Builders for the initial metrics used throughout the test scenarios."""

import numpy as np

from .geom import Topology, WarpedMetric


def round_sphere(radius=1.0, n=257):
    """Round 3-sphere of the given radius: psi(s) = r sin(s/r), s in [0, pi r]."""
    x = np.linspace(0.0, 1.0, n)
    phi = np.full(n, np.pi * radius)
    psi = radius * np.sin(np.pi * x)
    psi[0] = psi[-1] = 0.0
    return WarpedMetric(Topology.SPHERE, x, phi, psi)


def cylinder(radius=np.sqrt(2.0), length=10.0, n=257, periodic=True):
    """Product cylinder psi = radius; scalar curvature is 2/radius^2."""
    if periodic:
        x = np.arange(n) / n
        topo = Topology.CYLINDER_PERIODIC
    else:
        x = np.linspace(0.0, 1.0, n)
        topo = Topology.CYLINDER_OPEN
    return WarpedMetric(topo, x, np.full(x.size, float(length)), np.full(x.size, float(radius)))


def dumbbell(lobe_radius=1.0, neck_radius=0.25, neck_width=0.12, n=513):
    """Two sphere-like lobes joined by a smooth neck; sphere topology.

    The profile is r sin(pi x) suppressed by a Gaussian dip at x = 1/2, with
    phi chosen constant so the pole slopes in arclength are exactly 1.
    """
    x = np.linspace(0.0, 1.0, n)
    a = 1.0 - neck_radius / lobe_radius
    dip = 1.0 - a * np.exp(-((x - 0.5) / neck_width) ** 2)
    psi = lobe_radius * np.sin(np.pi * x) * dip
    psi[0] = psi[-1] = 0.0
    # d psi/dx at x = 0 for the exact profile
    slope0 = lobe_radius * np.pi * (1.0 - a * np.exp(-0.25 / neck_width**2))
    phi = np.full(n, slope0)
    return WarpedMetric(Topology.SPHERE, x, phi, psi)


def triple_lobe(lobe_radius=1.0, neck_radius=0.25, neck_width=0.08, n=769):
    """Three lobes with two necks (at x = 1/3 and x = 2/3); sphere topology."""
    x = np.linspace(0.0, 1.0, n)
    a = 1.0 - neck_radius / lobe_radius
    dip = (1.0 - a * np.exp(-((x - 1.0 / 3.0) / neck_width) ** 2)) * (
        1.0 - a * np.exp(-((x - 2.0 / 3.0) / neck_width) ** 2)
    )
    psi = lobe_radius * np.sin(np.pi * x) * dip
    psi[0] = psi[-1] = 0.0
    slope0 = lobe_radius * np.pi * (
        1.0 - a * np.exp(-(1.0 / 3.0) ** 2 / neck_width**2)
    ) * (1.0 - a * np.exp(-(2.0 / 3.0) ** 2 / neck_width**2))
    phi = np.full(n, slope0)
    return WarpedMetric(Topology.SPHERE, x, phi, psi)


def wavy_torus(mean_radius=1.0, amplitude=0.55, modes=2, length=None, n=512):
    """Periodic cylinder with steep radius oscillations.

    With slopes |psi_s| > 1 the fiber sectional curvature goes negative, so
    this profile exercises the negative-R audit paths (R_min < 0, lambda < 0).
    """
    if length is None:
        # shorter than the natural circumference so |psi_s| peaks above 1
        length = 0.8 * np.pi * mean_radius * modes
    x = np.arange(n) / n
    psi = mean_radius * (1.0 + amplitude * np.sin(2 * np.pi * modes * x))
    phi = np.full(n, float(length))
    return WarpedMetric(Topology.CYLINDER_PERIODIC, x, phi, psi)


def flat_ball(extent=12.0, curvature_radius=60.0, n=513):
    """Near-flat surrogate: polar cap of a large round sphere, psi ~ s.

    Exact Euclidean space is psi(s) = s with an open end; realizing it as a
    huge sphere keeps both ends smooth poles while the region s << R is flat
    to O((s/R)^2).  The grid is exponentially graded toward both poles so
    that about 40% of the nodes land inside arclength `extent` of each,
    where flat-space quantities are actually evaluated.
    """
    from scipy.optimize import brentq

    length = np.pi * curvature_radius
    half = length / 2.0
    frac = min(extent / half, 0.39)
    # on each half, s(u) = (L/2)(e^{au}-1)/(e^a-1); pick a so s(0.4) = extent
    a = brentq(lambda a: np.expm1(0.4 * a) / np.expm1(a) - frac, 1e-6, 50.0)
    x = np.linspace(0.0, 1.0, n)
    u = 2.0 * np.minimum(x, 1.0 - x)
    s_half = half * np.expm1(a * u) / np.expm1(a)
    s = np.where(x <= 0.5, s_half, length - s_half)
    phi = 2.0 * half * a * np.exp(a * u) / np.expm1(a)
    psi = curvature_radius * np.sin(s / curvature_radius)
    psi[0] = psi[-1] = 0.0
    return WarpedMetric(Topology.SPHERE, x, phi, psi)


def neckpinch_model(r0=1e-3, span_decades=1.5, n=2049):
    """Rotationally symmetric neckpinch model g = dr^2 + r^2/(8 ln(1/r)) dtheta^2.

    dtheta^2 is the scalar-curvature-1 2-sphere (our psi = sqrt(2)), so
    psi(r) = r / (2 sqrt(ln(1/r))).  The grid is log-spaced around r0.
    """
    lo = np.log10(r0) - span_decades
    hi = min(np.log10(r0) + span_decades, np.log10(0.4))
    r = np.logspace(lo, hi, n)
    psi = r / (2.0 * np.sqrt(np.log(1.0 / r)))
    # coordinate x in [0,1]; arclength equals r, so phi = dr/dx
    x = (r - r[0]) / (r[-1] - r[0])
    phi = np.gradient(r, x)
    return WarpedMetric(Topology.CYLINDER_OPEN, x, phi, psi)


BUILDERS = {
    "round_sphere": round_sphere,
    "cylinder": cylinder,
    "dumbbell": dumbbell,
    "triple_lobe": triple_lobe,
    "wavy_torus": wavy_torus,
    "flat_ball": flat_ball,
    "neckpinch_model": neckpinch_model,
}
