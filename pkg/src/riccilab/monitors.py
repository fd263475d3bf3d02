"""Inequality monitors for flow slices and series: curvature pinching,
Harnack-type estimates, soliton residuals, and the intrinsic-scale
thick/thin decomposition.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import geom
from .errors import HypothesisFailed
from .geom import Topology

N_DIM = 3


def _as_series(series):
    """Normalize a flow leg / trajectory / list of pairs to [(t, metric)]."""
    if hasattr(series, "times") and hasattr(series, "metrics"):
        return list(zip(series.times, series.metrics))
    if hasattr(series, "trajectory"):
        return list(series.trajectory)
    return list(series)


def _report(check, margins, tol=0.0):
    margins = np.asarray(margins, dtype=float)
    worst = int(np.argmin(margins))
    return {
        "check": check,
        "worst_margin": float(margins[worst]),
        "worst_node": worst,
        "pass": bool(margins[worst] >= -tol),
    }


# ---------------------------------------------------------------------------
# pinching


def hamilton_ivey_check(state, t, initial=None, r_scale=1.0):
    """Pointwise pinching check at time t: wherever the lowest curvature
    eigenvalue lam1 is negative, with X = -lam1 the scalar curvature must
    satisfy

        t R >= t X (ln(t X) + ln((1 + t)/t) - 3).

    Nodes with lam1 >= 0 pass outright.  The estimate assumes the initial
    slice was normalized (lam1 >= -1 everywhere); pass the initial metric
    to have that verified, and the report carries a `normalized` flag
    either way.

    r_scale multiplies the scalar curvature before the comparison; values
    below 1 serve as a negative control (the estimate couples R to the
    eigenvalue and must fail when R is artificially suppressed).
    """
    curv = geom.compute_curvature(state, validate=False)
    lam1 = np.min(curv.op_eigs, axis=1)
    r = r_scale * curv.scalar
    x_val = -lam1
    margins = np.full(r.shape, np.inf)
    neg = (x_val > 0) & (t > 0)
    if neg.any():
        tx = t * x_val[neg]
        rhs = tx * (np.log(tx) + np.log((1.0 + t) / t) - 3.0)
        margins[neg] = t * r[neg] - rhs
    rep = _report("hamilton_ivey", margins)
    rep["time"] = float(t)
    if initial is not None:
        init_lam1 = np.min(
            geom.compute_curvature(initial, validate=False).op_eigs, axis=1)
        rep["normalized"] = bool(init_lam1.min() >= -1.0 - 1e-9)
    else:
        rep["normalized"] = None
    return rep


@dataclass
class PinchingModel:
    """Tabulated monotone function phi with Rm >= -phi(R) semantics.

    Built by inverting the pinching relation s = t X (ln(t X) +
    ln((1+t)/t) - 3) at t = 1/(e^3 - 1), where the additive constants
    cancel and it reduces to s = X ln X.  Hence phi(s) ~ s / ln s for
    large s; phi is positive, nondecreasing, and phi(s)/s decreases to
    zero.
    """

    s_table: np.ndarray
    phi_table: np.ndarray
    s_min: float
    s_max: float

    @classmethod
    def build(cls, s_min=1e-2, s_max=1e9, n=400):
        s_tab = np.geomspace(s_min, s_max, n)

        def rel(x, s):
            return x * np.log(x) - s

        phi = np.empty(n)
        for i, s in enumerate(s_tab):
            hi = max(8.0, 4.0 * s)
            while rel(hi, s) < 0:
                hi *= 2.0
            phi[i] = brentq(rel, 1.0 + 1e-12, hi, s, xtol=1e-12)
        return cls(s_table=s_tab, phi_table=phi,
                   s_min=float(s_min), s_max=float(s_max))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.interp(np.log(np.clip(s, self.s_min, self.s_max)),
                        np.log(self.s_table), self.phi_table)
        return out if out.ndim else float(out)

    def check(self, metric):
        """Per-node margins of lam1 >= -phi(R); trivially passes where
        R is below the table range (phi there exceeds any admissible dip)."""
        curv = geom.compute_curvature(metric, validate=False)
        lam1 = np.min(curv.op_eigs, axis=1)
        margins = lam1 + self(curv.scalar)
        return _report("phi_pinching", margins)


# ---------------------------------------------------------------------------
# Harnack


def _check_nonneg_op(pairs, tol):
    for t, m in pairs:
        curv = geom.compute_curvature(m, validate=False)
        low = float(np.min(curv.op_eigs))
        scale = float(np.max(np.abs(curv.op_eigs))) or 1.0
        if low < -tol * scale:
            raise HypothesisFailed(
                f"curvature operator reaches {low:.4g} at t={t:.4g}")


def _series_r_and_t(pairs):
    times = np.array([t for t, _ in pairs])
    r = np.stack([geom.compute_curvature(m, validate=False).scalar
                  for _, m in pairs])
    return times, r


def trace_harnack(state_series, x_field=None, hyp_tol=1e-6):
    """Minimum over interior recorded times and nodes of

        H(X) = dR/dt + R/t + 2 R_s X + 2 Ric_rad X^2

    for the supplied radial field X (default 0) and for the pointwise
    minimizing X.  Time is measured from the series start; requires a
    nonnegative curvature operator throughout.
    """
    pairs = _as_series(state_series)
    _check_nonneg_op(pairs, hyp_tol)
    times, r = _series_r_and_t(pairs)
    t0 = times[0]
    worst_sup, worst_min = np.inf, np.inf
    details = []
    for k in range(1, len(pairs) - 1):
        t, m = pairs[k]
        if t - t0 <= 0:
            continue
        r_t = (r[k + 1] - r[k - 1]) / (times[k + 1] - times[k - 1])
        curv = geom.compute_curvature(m, validate=False)
        r_s = m.d_ds(r[k], kind="even")
        ric = curv.ricci_rad
        base = r_t + r[k] / (t - t0)
        x_val = np.zeros_like(base) if x_field is None else \
            np.broadcast_to(np.asarray(x_field, dtype=float), base.shape)
        h_sup = base + 2.0 * r_s * x_val + 2.0 * ric * x_val**2
        # quadratic in X: minimum is base - R_s^2 / (2 Ric) where Ric > 0
        ric_floor = 1e-12 * max(float(np.max(np.abs(ric))), 1.0)
        h_min = np.where(ric > ric_floor,
                         base - r_s**2 / (2.0 * np.maximum(ric, ric_floor)),
                         base)
        worst_sup = min(worst_sup, float(h_sup.min()))
        worst_min = min(worst_min, float(h_min.min()))
        details.append({"t": float(t - t0),
                        "min_H_supplied": float(h_sup.min()),
                        "min_H_optimized": float(h_min.min())})
    return {
        "check": "trace_harnack",
        "worst_margin": worst_min,
        "worst_supplied": worst_sup,
        "worst_node": None,
        "pass": bool(worst_min >= -1e-6),
        "details": details,
    }


def integrated_harnack(state_series, x1, t1, x2, t2, hyp_tol=1e-6,
                       advisory=False):
    """Two-point bound R(x2, t2) >= exp(-d^2 / (2 (t2 - t1))) R(x1, t1),
    with d the arclength distance between the nodes at time t1."""
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    pairs = _as_series(state_series)
    _check_nonneg_op(pairs, hyp_tol)

    def slice_at(t):
        ts = np.array([p[0] for p in pairs])
        return pairs[int(np.argmin(np.abs(ts - t)))][1]

    m1, m2 = slice_at(t1), slice_at(t2)
    s1 = m1.arclength()
    d = abs(s1[x2] - s1[x1])
    if m1.topology is Topology.CYLINDER_PERIODIC:
        d = min(d, m1.total_arclength() - d)
    r1 = geom.compute_curvature(m1, validate=False).scalar[x1]
    r2 = geom.compute_curvature(m2, validate=False).scalar[x2]
    rhs = np.exp(-d * d / (2.0 * (t2 - t1))) * r1
    return {
        "check": "integrated_harnack",
        "lhs": float(r2),
        "rhs": float(rhs),
        "worst_margin": float(r2 - rhs),
        "worst_node": int(x2),
        "advisory": bool(advisory),
        "pass": bool(r2 >= rhs - 1e-9 * max(abs(rhs), 1.0)),
    }


# ---------------------------------------------------------------------------
# solitons


def soliton_residual(metric, f, kind="shrinking", t=-1.0):
    """Per-node norm of the soliton equation residual for a radial
    potential f: 2 Ric + 2 Hess f (+ g/t for shrinking t < 0 or expanding
    t > 0), reduced to its radial and spherical components.
    """
    if kind == "steady":
        lam = 0.0
    elif kind == "shrinking":
        if not t < 0:
            raise ValueError("shrinking soliton needs t < 0")
        lam = 1.0 / t
    elif kind == "expanding":
        if not t > 0:
            raise ValueError("expanding soliton needs t > 0")
        lam = 1.0 / t
    else:
        raise ValueError(f"unknown soliton kind: {kind!r}")
    curv = geom.compute_curvature(metric, validate=False)
    f = np.asarray(f, dtype=float)
    f_s = metric.d_ds(f, kind="even")
    f_ss = metric.d_ds(f_s, kind="odd")
    psi_s = metric.psi_derivatives()[0]
    hess_rad = f_ss
    with np.errstate(divide="ignore", invalid="ignore"):
        hess_sph = np.where(metric.psi > 0, psi_s * f_s / metric.psi, f_ss)
    res_rad = 2.0 * curv.ricci_rad + 2.0 * hess_rad + lam
    res_sph = 2.0 * curv.ricci_sph + 2.0 * hess_sph + lam
    return np.sqrt(res_rad**2 + 2.0 * res_sph**2)


# ---------------------------------------------------------------------------
# intrinsic scale


@dataclass
class ScaleField:
    rho: np.ndarray        # per-node intrinsic scale, +inf where Rm >= 0
    thin_mask: np.ndarray  # vol(B(x, rho)) < w rho^3
    w: float


def _ball_inf_rm(sec_min, s, center, rho, topology, total):
    if topology is Topology.CYLINDER_PERIODIC:
        d = np.abs((s - s[center] + total / 2) % total - total / 2)
    else:
        d = np.abs(s - s[center])
    return float(np.min(sec_min[d <= rho]))


def intrinsic_scale(state, w=0.1):
    """Per-node scale rho with inf over B(x, rho) of the lowest sectional
    curvature equal to -rho^-2, found by bisection on the monotone map
    rho -> inf_B Rm + rho^-2; rho = +inf where no ball ever dips that low.
    The thin mask marks nodes with vol(B(x, rho)) < w rho^3.
    """
    curv = geom.compute_curvature(state, validate=False)
    sec_min = np.minimum(curv.k_rad, curv.k_sph)
    s = state.arclength()
    total = state.total_arclength()
    diam = total if state.topology is Topology.CYLINDER_PERIODIC else s[-1]
    n = s.size
    rho = np.full(n, np.inf)
    thin = np.zeros(n, dtype=bool)
    for i in range(n):
        def crit(r):
            return _ball_inf_rm(sec_min, s, i, r, state.topology, total) \
                + 1.0 / (r * r)
        if crit(diam) > 0:
            continue
        lo = 1e-6 * diam
        while crit(lo) <= 0:
            lo *= 0.5
            if lo < 1e-300:
                break
        rho[i] = brentq(crit, lo, diam, xtol=1e-10 * diam)
        vol = geom.ball_volume(state, i, rho[i]).value
        thin[i] = vol < w * rho[i] ** 3
    return ScaleField(rho=rho, thin_mask=thin, w=float(w))
