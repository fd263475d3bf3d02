"""Backward spacetime geodesics on a stored flow leg, their normalized
length field, and the monotone weighted volume built from them.

Everything here works in the regularized variable s = sqrt(tau) with
tau = t0 - t measured backward from a chosen center time, so the shooting
ODE is smooth at tau = 0.  Basepoints sit at a pole (or any node of the
symmetry profile), which keeps every shoot one-dimensional.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import geom, grid
from .errors import (BlowupOnPath, CoverageGap, HypothesisFailed,
                     JacobianIllConditioned, LeftDomain)
from .geom import Topology

N_DIM = 3


class _FieldCache:
    """Per-time interpolable fields along a leg, cached by time value."""

    def __init__(self, leg):
        self.leg = leg
        self._cache = {}

    def at(self, t):
        key = round(float(t), 14)
        if key not in self._cache:
            m = self.leg.metric_at(t)
            curv = geom.compute_curvature(m, validate=False)
            s = m.arclength()
            self._cache[key] = {
                "x": m.x,
                "s": CubicSpline(m.x, s),
                "phi": CubicSpline(m.x, m.phi),
                "psi": m.psi,
                "scalar": CubicSpline(m.x, curv.scalar),
                "r_s": CubicSpline(m.x, m.d_ds(curv.scalar, kind="even")),
                "ric_rad": CubicSpline(m.x, curv.ricci_rad),
                "op_max": np.max(np.abs(curv.op_eigs), axis=1),
                "length": s[-1],
            }
        return self._cache[key]


def _interp(fields, name, x):
    f = fields[name]
    if callable(f):
        return f(x)
    return np.interp(x, fields["x"], f)


def _reflect(x, xdot, periodic):
    """Fold coordinates back into [0, 1]; radial paths pass straight
    through a pole, which in profile coordinates is a reflection."""
    if periodic:
        return x % 1.0, xdot
    over = x > 1.0
    x = np.where(over, 2.0 - x, x)
    xdot = np.where(over, -xdot, xdot)
    under = x < 0.0
    x = np.where(under, -x, x)
    xdot = np.where(under, -xdot, xdot)
    return np.clip(x, 0.0, 1.0), xdot


@dataclass
class LShoot:
    """One family of shoots from a common basepoint (vectorized over v)."""

    v: np.ndarray
    tau: np.ndarray
    x: np.ndarray        # (n_tau, n_v) profile coordinate along each path
    s_arc: np.ndarray    # (n_tau, n_v) arclength position at each tau
    L: np.ndarray        # (n_tau, n_v) length functional along each path
    l: np.ndarray        # (n_tau, n_v) L / (2 sqrt(tau))
    chi: np.ndarray      # (n_tau, n_v) validity (sticky fold cutoff)
    t0: float

    @property
    def Llen(self):
        return self.L[-1]


def shoot(leg, basepoint, v, tau_max, t0=None, n_steps=256, op_bound=None,
          record_taus=None):
    """Integrate the backward-geodesic shooting ODE for velocities v.

    The state is (x, w) with w = phi dx/ds the speed measured in the
    current metric, all fields evaluated at time t = t0 - s^2:

        dx/ds = w / phi,   dw/ds = 2 s^2 dR/ds - 2 s Ric_rad w,

    with x(0) = basepoint and w(0) = 2 v; the drag coefficient is 2s (not
    the 4s of the covariant acceleration) because the metric's own time
    dependence feeds d|Y|/ds an extra +2s Ric(Y,Y)/|Y|.  The length
    functional accumulates dL/ds = 2 s^2 R + w^2 / 2.  Returns an LShoot
    sampled at record_taus (default: n_steps points up to tau_max).
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    t0 = leg.t1 if t0 is None else float(t0)
    if t0 - tau_max < leg.t0 - 1e-12:
        raise LeftDomain(
            f"tau_max={tau_max} reaches before the leg start {leg.t0}")
    fields = _FieldCache(leg)
    periodic = leg.metrics[0].topology is Topology.CYLINDER_PERIODIC

    s_max = np.sqrt(tau_max)
    base = np.linspace(0.0, s_max, n_steps + 1)
    if record_taus is None:
        record_taus = (base[1:] ** 2)
    record_taus = np.asarray(record_taus, dtype=float)
    rec_s = np.sqrt(record_taus)
    # integration points pass exactly through every requested sample
    s_grid = np.unique(np.concatenate([base, rec_s]))
    n_steps = s_grid.size - 1

    x0 = leg.metrics[0].x[basepoint]
    x = np.full(v.shape, float(x0))
    u = 2.0 * v
    length = np.zeros_like(v)

    def rhs(s, x, w):
        # stage points can poke outside the chart mid-step; fold them back
        # before sampling so spline extrapolation never enters
        if periodic:
            x = x % 1.0
        else:
            x = np.abs(x)
            x = np.clip(np.where(x > 1.0, 2.0 - x, x), 0.0, 1.0)
        f = fields.at(t0 - s * s)
        dx = w / _interp(f, "phi", x)
        dw = (2.0 * s * s * _interp(f, "r_s", x)
              - 2.0 * s * _interp(f, "ric_rad", x) * w)
        dl = 2.0 * s * s * _interp(f, "scalar", x) + 0.5 * w * w
        return dx, dw, dl

    n_rec = record_taus.size
    out_x = np.empty((n_rec, v.size))
    out_s = np.empty_like(out_x)
    out_L = np.empty_like(out_x)
    alive = np.ones(v.size, dtype=bool)
    dead_from = np.full(v.size, n_rec)
    k_rec = 0
    for i in range(n_steps):
        s, h = s_grid[i], s_grid[i + 1] - s_grid[i]
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = rhs(s, x, u)
            k2 = rhs(s + h / 2, x + h / 2 * k1[0], u + h / 2 * k1[1])
            k3 = rhs(s + h / 2, x + h / 2 * k2[0], u + h / 2 * k2[1])
            k4 = rhs(s + h, x + h * k3[0], u + h * k3[1])
            x_n = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            u_n = u + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            L_n = length + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        # freeze shoots that diverge (stiff high-curvature forcing); they
        # drop out of the valid set instead of poisoning the family
        good = np.isfinite(x_n) & np.isfinite(u_n) & np.isfinite(L_n)
        died = alive & ~good
        dead_from[died] = np.minimum(dead_from[died], k_rec)
        alive &= good
        if not alive.any():
            raise BlowupOnPath(
                f"all shoots diverged by s={s_grid[i+1]:.4g}")
        x = np.where(alive, x_n, x)
        u = np.where(alive, u_n, u)
        length = np.where(alive, L_n, length)
        x, u = _reflect(x, u, periodic)
        f = fields.at(t0 - s_grid[i + 1] ** 2)
        if op_bound is not None:
            if np.max(np.interp(x[alive], f["x"], f["op_max"])) > op_bound:
                raise BlowupOnPath(
                    f"path entered |op| > {op_bound} at s={s_grid[i+1]:.4g}")
        while k_rec < n_rec and rec_s[k_rec] <= s_grid[i + 1] + 1e-14:
            out_x[k_rec] = x
            out_s[k_rec] = f["s"](x)
            out_L[k_rec] = length
            k_rec += 1

    taus = record_taus
    l_red = out_L / (2.0 * np.sqrt(taus)[:, None])
    chi = _fold_mask(out_s)
    for j in np.where(dead_from < n_rec)[0]:
        chi[dead_from[j]:, j] = False
    return LShoot(v=v, tau=taus, x=out_x, s_arc=out_s, L=out_L, l=l_red,
                  chi=chi, t0=t0)


def _fold_mask(s_arc):
    """Validity by the first fold of the endpoint map: once the arclength
    endpoint stops increasing with v, everything beyond (and later in tau,
    sticky) is past the cut locus."""
    n_tau, n_v = s_arc.shape
    chi = np.ones((n_tau, n_v), dtype=bool)
    dead = np.zeros(n_v, dtype=bool)
    for k in range(n_tau):
        ds = np.diff(s_arc[k])
        bad = np.concatenate(([False], ds <= 0.0))
        first = np.argmax(bad) if bad.any() else n_v
        fold = np.arange(n_v) >= first
        dead |= fold
        chi[k] = ~dead
    return chi


@dataclass
class ReducedField:
    basepoint: int
    t0: float
    tau: np.ndarray
    s_nodes: np.ndarray          # arclength of the field's spatial grid
    L: np.ndarray                # (n_tau, n_nodes), +inf where uncovered
    l: np.ndarray
    Lbar: np.ndarray
    min_l: np.ndarray            # per tau
    coverage_gaps: list = field(default_factory=list)
    barrier_margins: np.ndarray = None


def reduced_field(leg, basepoint, tau_grid, v_grid=None, t0=None,
                  n_steps=256, strict_coverage=False):
    """Normalized-length field L(q, tau) over the leg's spatial grid.

    Shoots the whole v family once, then transfers (endpoint, L) pairs onto
    the grid nodes by interpolation in arclength, keeping only pre-fold
    shoots.  Uncovered nodes get +inf and are reported (raised only with
    strict_coverage).
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if v_grid is None:
        v_grid = np.linspace(0.0, 4.0, 129)
    sh = shoot(leg, basepoint, v_grid, float(tau_grid.max()), t0=t0,
               n_steps=n_steps, record_taus=tau_grid)
    t0 = sh.t0

    m_nodes = leg.metric_at(t0 - tau_grid.min())
    s_nodes = m_nodes.arclength()
    n_tau = tau_grid.size
    L = np.full((n_tau, s_nodes.size), np.inf)
    gaps = []
    for k in range(n_tau):
        valid = sh.chi[k]
        se, Le = sh.s_arc[k][valid], sh.L[k][valid]
        order = np.argsort(se)
        se, Le = se[order], Le[order]
        m_k = leg.metric_at(t0 - tau_grid[k])
        s_k = m_k.arclength()
        inside = (s_k >= se.min() - 1e-12) & (s_k <= se.max() + 1e-12)
        # cubic transfer keeps the field C^2, so the barrier check's second
        # differences see the geometry rather than interpolation kinks
        su, iu = np.unique(se, return_index=True)
        L[k, inside] = CubicSpline(su, Le[iu])(s_k[inside])
        if not inside.all():
            gaps.append((float(tau_grid[k]), int(np.sum(~inside))))
    if gaps and strict_coverage:
        raise CoverageGap(f"unreached nodes at {len(gaps)} tau values")

    sqrt_tau = np.sqrt(tau_grid)[:, None]
    with np.errstate(invalid="ignore"):
        l_field = L / (2.0 * sqrt_tau)
        lbar = 2.0 * sqrt_tau * L
    min_l = np.array([np.min(l_field[k][np.isfinite(l_field[k])])
                      for k in range(n_tau)])
    data_gap = float(np.max(np.diff(np.sort(sh.s_arc[-1][sh.chi[-1]]))))
    barrier = _barrier_margins(leg, t0, tau_grid, lbar, data_gap)
    return ReducedField(basepoint=basepoint, t0=t0, tau=tau_grid,
                        s_nodes=s_nodes, L=L, l=l_field, Lbar=lbar,
                        min_l=min_l, coverage_gaps=gaps,
                        barrier_margins=barrier)


def _barrier_margins(leg, t0, tau_grid, lbar, data_gap):
    """Per-tau minimum of 2n - (dLbar/dtau + Lap Lbar) over the covered
    region away from the poles; the comparison-principle barrier says this
    stays >= 0.

    Derivatives are taken on a uniform arclength grid whose spacing matches
    the field's actual resolution (a few shoot-data spacings): the field
    carries grid-scale noise from the shoots, and differencing it finer
    than its resolution only amplifies that noise.
    """
    n_tau = tau_grid.size
    out = np.full(n_tau, np.nan)
    for k in range(1, n_tau - 1):
        row = lbar[k]
        finite = (np.isfinite(row) & np.isfinite(lbar[k - 1])
                  & np.isfinite(lbar[k + 1]))
        if finite.sum() < 9:
            continue
        m_k = leg.metric_at(t0 - tau_grid[k])
        s = m_k.arclength()
        idx = np.where(finite)[0]
        lo, hi = s[idx[0]], s[idx[-1]]
        if m_k.topology is Topology.SPHERE:
            lo = max(lo, 5.0 * data_gap)
            hi = min(hi, s[-1] - 5.0 * data_gap)
        h = max(3.0 * data_gap, (hi - lo) / 400.0)
        if hi - lo < 8.0 * h:
            continue
        sb = np.arange(lo + h, hi - h + 1e-12, h)
        cur = CubicSpline(s[idx], row[idx])(sb)
        prv = CubicSpline(s[idx], lbar[k - 1][idx])(sb)
        nxt = CubicSpline(s[idx], lbar[k + 1][idx])(sb)
        d1 = (np.roll(cur, -1) - np.roll(cur, 1))[1:-1] / (2.0 * h)
        d2 = (np.roll(cur, -1) - 2.0 * cur + np.roll(cur, 1))[1:-1] / h**2
        psi_b = np.interp(sb, s, m_k.psi)[1:-1]
        psi_s_b = np.interp(sb, s, m_k.psi_derivatives()[0])[1:-1]
        dlb_dtau = ((nxt - prv)[1:-1]
                    / (tau_grid[k + 1] - tau_grid[k - 1]))
        lap = d2 + 2.0 * (psi_s_b / psi_b) * d1
        out[k] = np.min(2.0 * N_DIM - (dlb_dtau + lap))
    return out


def reduced_volume(leg, basepoint, tau, v_grid=None, t0=None, n_steps=256,
                   excise_fraction=0.1, details=False):
    """Weighted backward volume at one tau (or a decreasing-monotone series
    when tau is an array), from a single shoot family.

        V(tau) = int tau^{-3/2} e^{-l} J(v, tau) 4 pi v^2 dv

    with J the endpoint-map Jacobian (radial stretch times the squared
    angular spreading ratio).  Shoots past the first fold of the endpoint
    map are excluded (sticky in tau), as is a neighborhood of the far pole
    where the angular factor degenerates; the excised fraction is reported
    when details is requested.
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if v_grid is None:
        v_grid = np.linspace(0.0, 4.0, 161)
    sh = shoot(leg, basepoint, v_grid, float(taus.max()), t0=t0,
               n_steps=n_steps, record_taus=taus)

    vals = np.empty(taus.size)
    integrands = np.zeros((taus.size, v_grid.size))
    excised = np.zeros(taus.size)
    for k in range(taus.size):
        f_len = leg.metric_at(sh.t0 - taus[k]).total_arclength()
        m_k = leg.metric_at(sh.t0 - taus[k])
        psi_end = np.interp(sh.x[k], m_k.x, m_k.psi)
        ds_dv = np.gradient(sh.s_arc[k], v_grid)
        keep = sh.chi[k] & (ds_dv > 0.0)
        if m_k.topology is Topology.SPHERE:
            keep &= sh.s_arc[k] < (1.0 - excise_fraction) * f_len
        with np.errstate(divide="ignore", invalid="ignore"):
            angular = np.where(v_grid > 0, (psi_end / np.maximum(v_grid, 1e-300)) ** 2,
                               (2.0 * np.sqrt(taus[k])) ** 2)
        jac = ds_dv * angular
        if np.any(jac[keep] <= 0.0):
            raise JacobianIllConditioned("nonpositive Jacobian on kept shoots")
        w = taus[k] ** (-1.5) * np.exp(-sh.l[k]) * jac * 4.0 * np.pi * v_grid**2
        integrands[k] = np.where(keep, taus[k] ** (-1.5) * np.exp(-sh.l[k]) * jac, 0.0)
        w = np.where(keep, w, 0.0)
        vals[k] = np.trapz(w, v_grid)
        dropped = ~keep
        excised[k] = np.trapz(np.where(dropped, 8.0 * np.exp(-v_grid**2)
                                       * 4.0 * np.pi * v_grid**2, 0.0), v_grid)
    if details:
        return vals if taus.size > 1 else float(vals[0]), {
            "integrand": integrands, "v_grid": v_grid,
            "excised_flat_weight": excised, "chi": sh.chi, "shoot": sh}
    return vals if np.ndim(tau) else float(vals[0])


def noncollapse_certificate(leg, point, r, t=None, samples=5, slack=1e-3):
    """kappa = vol(B(point, r)) / r^3 under the curvature hypothesis.

    Checks sup |sectional| <= r^-2 on the ball at time t (ball variant) and
    on the ball across t in [t - r^2, t] (parabolic variant); raises
    HypothesisFailed if the slice hypothesis is violated.  The bound gets
    a relative slack (grid-accuracy level) so model geometries sitting
    exactly at the threshold are admitted despite discretization noise.
    """
    t = leg.t1 if t is None else float(t)
    if t - r * r < leg.t0 - 1e-12:
        raise LeftDomain("parabolic window reaches before the leg start")

    def sup_sectional(time):
        m = leg.metric_at(time)
        curv = geom.compute_curvature(m, validate=False)
        s = m.arclength()
        sc = s[point]
        if m.topology is Topology.CYLINDER_PERIODIC:
            lam = m.total_arclength()
            d = np.abs((s - sc + lam / 2) % lam - lam / 2)
        else:
            d = np.abs(s - sc)
        sec = np.maximum(np.abs(curv.k_rad), np.abs(curv.k_sph))
        return float(np.max(sec[d <= r]))

    bound = (1.0 / (r * r)) * (1.0 + slack)
    ball_sup = sup_sectional(t)
    if ball_sup > bound:
        raise HypothesisFailed(
            f"sup |sec| = {ball_sup:.4g} exceeds r^-2 = {bound:.4g}")
    parabolic_sup = max(sup_sectional(tt)
                        for tt in np.linspace(t - r * r, t, samples))
    vol = geom.ball_volume(leg.metric_at(t), point, r).value
    return {
        "kappa": vol / r**3,
        "ball_ok": True,
        "parabolic_ok": bool(parabolic_sup <= bound),
        "sup_sectional_ball": ball_sup,
        "sup_sectional_parabolic": parabolic_sup,
    }


def export_reduced_field_csv(rf, path):
    """CSV dump (tau, s, L, l) of every finite entry of a reduced field."""
    with open(path, "w") as fh:
        fh.write("tau,s,L,l\n")
        for k, tau in enumerate(rf.tau):
            for j, s in enumerate(rf.s_nodes):
                if np.isfinite(rf.L[k, j]):
                    fh.write(f"{tau:.12g},{s:.12g},{rf.L[k, j]:.12g},"
                             f"{rf.l[k, j]:.12g}\n")


def export_reduced_volume_csv(taus, values, path):
    with open(path, "w") as fh:
        fh.write("tau,v_tilde\n")
        for tau, val in zip(np.atleast_1d(taus), np.atleast_1d(values)):
            fh.write(f"{tau:.12g},{val:.12g}\n")
