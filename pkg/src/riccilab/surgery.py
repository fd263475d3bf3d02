"""Neck detection, the standard capped metric, and the surgery pipeline.

A neck is certified by rescaling so the scalar curvature at the candidate
center equals 1 and measuring the C^2 distance of the fiber-radius profile
to the exact product model psi = sqrt(2) over a span of rescaled length
2/eps.  Surgery cuts a certified neck at its narrowest sphere, discards a
collar on each side, and closes each cut end with a capped profile: a
conformal metric e^{2F} g_cyl whose exponent F interpolates between the
cylinder (F = 0) and a constant-curvature closure, blended into the
pre-surgery data by a partition of unity.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline, PchipInterpolator

from . import flow, geom, monitors
from .errors import (HypothesisFailed, NeckTooCoarse, ParameterInfeasible,
                     ResolutionLoss)
from .geom import Topology, WarpedMetric

SQRT2 = float(np.sqrt(2.0))
CYLINDER_PSI = SQRT2  # fiber radius of the scalar-curvature-1 cylinder


def model_exponent(z, k=1.0):
    """Conformal exponent of the constant-curvature-k^2 closure model.

    e^{2 F_k} g_cyl is the round metric of sectional curvature k^2; shifting
    z slides the model along the cylinder.
    """
    z = np.asarray(z, dtype=float)
    return np.log(SQRT2 / k) + z / SQRT2 - np.log1p(np.exp(SQRT2 * z))


def model_slope(z):
    """d/dz of model_exponent; independent of k and decreasing in z."""
    z = np.asarray(z, dtype=float)
    return 1.0 / SQRT2 - SQRT2 / (1.0 + np.exp(-SQRT2 * z))


def _smoothstep(u):
    """Quintic smoothstep: 0 -> 1 on [0, 1] with two flat derivatives."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


@dataclass
class StandardCapProfile:
    """Tabulated cap exponent F on (-B, 0] plus its round closure.

    F = 0 for z >= 0 (exact cylinder); on (-A, 0] F equals a flat-to-all-
    orders perturbation f; on (-B, -A] the slope interpolates down to the
    constant-curvature model, which closes the profile as a round disk of
    curvature k^2.
    """

    A: float
    B: float
    k: float
    z: np.ndarray        # grid on [-B, 0]
    F: np.ndarray
    F_prime: np.ndarray
    c1: float            # perturbation f = c1 * exp(c2 / z)
    c2: float
    ball_radius: float   # 1/k, radius of the closing round disk
    ball_angle: float    # polar angle spanned by the disk

    def __post_init__(self):
        self._F_spline = CubicSpline(self.z, self.F)
        self._Fp_spline = CubicSpline(self.z, self.F_prime)

    def exponent(self, z):
        """F(z), zero on the cylinder side z >= 0."""
        z = np.asarray(z, dtype=float)
        out = np.where(z >= 0.0, 0.0, self._F_spline(np.minimum(z, 0.0)))
        return out if out.ndim else float(out)

    def slope(self, z):
        z = np.asarray(z, dtype=float)
        out = np.where(z >= 0.0, 0.0, self._Fp_spline(np.minimum(z, 0.0)))
        return out if out.ndim else float(out)

    def psi_hat(self, z):
        """Rescaled fiber radius sqrt(2) e^{F} of the cap metric."""
        return CYLINDER_PSI * np.exp(self.exponent(z))

    @property
    def ball_arc(self):
        """Arclength of the closing disk from its pole to the junction."""
        return self.ball_radius * self.ball_angle

    def half_arrays(self, tail=8.0, resolution=None):
        """(s, psi) of the capped half-profile, s = 0 at the new pole.

        The tail extends the exact cylinder for `tail` units past z = 0.
        """
        dz = resolution if resolution is not None else float(self.z[1] - self.z[0])
        n_ball = max(int(np.ceil(self.ball_arc / dz)), 32)
        s_ball = np.linspace(0.0, self.ball_arc, n_ball + 1)
        psi_ball = self.ball_radius * np.sin(s_ball / self.ball_radius)

        # conformal region: ds = e^F dz from z = -B up to 0
        eF = np.exp(self.F)
        s_conf = self.ball_arc + cumulative_trapezoid(eF, self.z, initial=0.0)
        s_mid, psi_mid = s_conf[1:], CYLINDER_PSI * eF[1:]

        n_tail = max(int(np.ceil(tail / dz)), 8)
        s_tail = s_conf[-1] + np.linspace(0.0, tail, n_tail + 1)[1:]
        psi_tail = np.full(s_tail.shape, CYLINDER_PSI)

        s = np.concatenate([s_ball, s_mid, s_tail])
        psi = np.concatenate([psi_ball, psi_mid, psi_tail])
        return s, psi

    @property
    def cap_arc(self):
        """Arclength from the new pole to the z = 0 matching circle."""
        eF = np.exp(self.F)
        return float(self.ball_arc + np.trapz(eF, self.z))

    def metric(self, n=2049, tail=8.0):
        """Doubled profile: two caps joined by a cylinder, sphere topology."""
        s_half, psi_half = self.half_arrays(tail=tail)
        length = 2.0 * s_half[-1]
        s = np.concatenate([s_half, length - s_half[-2::-1]])
        psi = np.concatenate([psi_half, psi_half[-2::-1]])
        s_u = np.linspace(0.0, length, n)
        psi_u = CubicSpline(s, psi)(s_u)
        psi_u[0] = psi_u[-1] = 0.0
        x = s_u / length
        phi = np.full(n, length)
        m = WarpedMetric(Topology.SPHERE, x, phi, psi_u)
        m.validate()
        return m

    def invariant_report(self, n=2049, tail=8.0):
        """Min curvature-operator eigenvalue and min R over the doubled profile."""
        m = self.metric(n=n, tail=tail)
        curv = geom.compute_curvature(m)
        return {
            "min_op_eig": float(np.min(curv.op_eigs)),
            "min_scalar": float(np.min(curv.scalar)),
            "metric": m,
        }


def standard_initial_metric(A=10.0, delta_resolution=0.01,
                            transition=3.0, coincide=0.5):
    """Build the capped reference profile used on each side of a surgery.

    The exponent is f = c1 e^{c2/z} on (-A, 0] (flat to all orders at 0,
    negative, increasing, concave), and on (-B, -A] the slope descends
    along a smoothstep blend onto the slope of the constant-curvature
    model anchored with its equator at z = -A, so the closure happens at
    an O(1) radius and the scalar curvature never drops below 1.
    """
    if A <= 0:
        raise ParameterInfeasible("cap parameter A must be positive")
    if transition <= 2.0 * coincide:
        raise ParameterInfeasible("transition window too short for the closure")
    B = A + transition

    n = int(np.ceil((B / delta_resolution))) + 1
    z = np.linspace(-B, 0.0, n)

    # perturbation on (-A, 0]: pick c2 so f'' < 0 with comfortable ratio
    # bounds, then scale the C^2 norm down to a fixed small size.
    c2 = 2.0 * A + 2.0 * A**2
    with np.errstate(under="ignore"):
        zf = np.minimum(z, -1e-12)
        u = np.exp(c2 / zf)
        u_p = u * (-c2 / zf**2)
        u_pp = u * c2 * (c2 + 2.0 * zf) / zf**4
    scale = max(np.max(u), np.max(u_p), np.max(np.abs(u_pp)))
    c1 = -1e-5 / scale

    in_f = z >= -A
    f_prime = np.where(in_f, c1 * u_p, 0.0)

    # slope interpolation on [-B, -A]: blend of the shifted model slope
    # (equator at z0 = -A) and the perturbation's endpoint slope.
    z0 = -A
    d_model = model_slope(z - z0)
    fp_end = float(c1 * u_p[np.searchsorted(z, -A)])
    w = _smoothstep((-A - z) / (transition - coincide))
    d_tilde = d_model * w + fp_end * (1.0 - w)

    trans = ~in_f
    if np.any(d_tilde[trans] <= 0.0) or np.any(d_tilde[trans] >= 1.0 / SQRT2):
        raise ParameterInfeasible("interpolated slope left (0, 1/sqrt(2))")
    if np.any(np.diff(d_tilde[trans]) >= 0.0):
        raise ParameterInfeasible("interpolated slope is not decreasing")

    F_prime = np.where(in_f, f_prime, d_tilde)
    F = cumulative_trapezoid(F_prime, z, initial=0.0)
    F -= F[-1]  # F(0) = 0

    # the matching constant fixes the closure curvature k^2
    k = float(np.exp(model_exponent(-B - z0, 1.0) - F[0]))

    slope_b = float(F_prime[0])
    sin_th = float(np.sqrt(1.0 - 2.0 * slope_b**2))
    psi_b = CYLINDER_PSI * float(np.exp(F[0]))
    ball_radius = psi_b / sin_th
    ball_angle = float(np.arcsin(np.clip(sin_th, -1.0, 1.0)))

    if abs(ball_radius * k - 1.0) > 1e-2:
        raise ParameterInfeasible(
            f"closure radius {ball_radius:.4f} inconsistent with 1/k = {1.0 / k:.4f}")
    if 6.0 * k**2 < 1.0:
        raise ParameterInfeasible(
            f"closure curvature too weak: R at the tip = {6.0 * k**2:.4f} < 1")

    return StandardCapProfile(A=A, B=B, k=k, z=z, F=F, F_prime=F_prime,
                              c1=c1, c2=c2, ball_radius=ball_radius,
                              ball_angle=ball_angle)


def round_off_check(h0, f, eps=5.0, cylinder_tol=0.3):
    """Verify the conformal rounding-off inequalities for h1 = e^{2f} h0.

    h0 must be a metric C^2-close to the unit cylinder; f is an array on
    its nodes (or a callable of arclength) that vanishes to second order
    at the right end and is negative, increasing, and concave.  The check
    evaluates the conformal change of the scalar curvature,

        R_h1 = e^{-2f} (R_h0 - 4 lap f - 2 |grad f|^2),

    and confirms pointwise R_h1 >= R_h0 - f'' together with the same
    lower bound for the smallest curvature-operator eigenvalue.
    Raises HypothesisFailed naming the first violated hypothesis.
    """
    s = h0.arclength()
    f = np.asarray(f(s), dtype=float) if callable(f) else np.asarray(f, dtype=float)
    if f.shape != s.shape:
        raise ValueError("f must be tabulated on the h0 grid")

    f_s = h0.d_ds(f, kind="even")
    f_ss = h0.d_ds(f_s, kind="odd")

    scale = max(np.max(np.abs(f)), np.max(np.abs(f_s)), np.max(np.abs(f_ss)))
    tol = 1e-9 * max(scale, 1e-30)
    if np.any(f > tol):
        raise HypothesisFailed("f must be nonpositive")
    if np.any(f_s < -tol):
        raise HypothesisFailed("f' must be nonnegative")
    if np.any(f_ss > tol):
        raise HypothesisFailed("f'' must be nonpositive")
    if scale >= eps:
        raise HypothesisFailed(f"C^2 norm of f is {scale:.3g}, not below {eps}")
    active = np.abs(f_ss) > tol
    ratio = np.maximum(np.abs(f), np.abs(f_s))
    if np.any(ratio[active] > eps * np.abs(f_ss[active])) or np.any(ratio[~active] > tol):
        raise HypothesisFailed("max(|f|, |f'|) must be bounded by eps |f''|")

    psi_s, psi_ss = h0.psi_derivatives()
    cyl_dist = max(np.max(np.abs(h0.psi - CYLINDER_PSI)),
                   np.max(np.abs(psi_s)), np.max(np.abs(psi_ss)))
    if cyl_dist > cylinder_tol:
        raise HypothesisFailed(
            f"h0 is not C^2-close to the unit cylinder (distance {cyl_dist:.3g})")

    curv0 = geom.compute_curvature(h0, validate=False)
    lap_f = f_ss + 2.0 * (psi_s / h0.psi) * f_s
    r1 = np.exp(-2.0 * f) * (curv0.scalar - 4.0 * lap_f - 2.0 * f_s**2)
    r_margin = r1 - (curv0.scalar - f_ss)

    h1 = WarpedMetric(h0.topology, h0.x, np.exp(f) * h0.phi, np.exp(f) * h0.psi)
    curv1 = geom.compute_curvature(h1, validate=False)
    lam0 = np.min(curv0.op_eigs, axis=1)
    lam1 = np.min(curv1.op_eigs, axis=1)
    lam_margin = lam1 - (lam0 - f_ss)

    slack = 1e-9 * max(np.max(np.abs(curv0.scalar)), 1.0)
    return {
        "r_margin_min": float(np.min(r_margin)),
        "lambda_margin_min": float(np.min(lam_margin)),
        "cylinder_distance": float(cyl_dist),
        "f_norm": float(scale),
        "pass": bool(np.min(r_margin) >= -slack and np.min(lam_margin) >= -slack),
    }


@dataclass
class NeckCertificate:
    """A certified cylindrical region of the profile.

    `span` is the arclength interval used for certification; its rescaled
    length is 2/eps where eps is the achieved closeness.
    """

    center: int
    radius: float
    eps: float
    span: tuple
    strong: bool = False


def _neck_distance(s, psi, psi_s, psi_ss, lam, i, half_width):
    """C^2 distance to the product model over |s - s_i| <= half_width.

    `lam` is the rescaling factor sqrt(R(center)); returns inf when the
    window leaves the data (or crosses a pole, where psi -> 0 blows the
    distance up anyway).
    """
    lo = s[i] - half_width
    hi = s[i] + half_width
    if lo < s[0] - 1e-12 or hi > s[-1] + 1e-12:
        return np.inf
    a = np.searchsorted(s, lo, side="left")
    b = np.searchsorted(s, hi, side="right")
    d0 = np.max(np.abs(lam * psi[a:b] - CYLINDER_PSI))
    d1 = np.max(np.abs(psi_s[a:b]))
    d2 = np.max(np.abs(psi_ss[a:b])) / lam
    return max(d0, d1, d2)


def achieved_eps(metric, node, eps_min=1e-8, eps_max=1.0, iters=60, _fields=None):
    """Smallest e with C^2-distance <= e over a rescaled span of length 2/e.

    Found by bisection: shrinking e lengthens the required span, so the
    distance-minus-e gap is monotone.  Returns inf if even the loosest
    span fails.
    """
    if _fields is None:
        _fields = _neck_fields(metric)
    s, psi, psi_s, psi_ss, scalar = _fields
    if scalar[node] <= 0.0:
        return np.inf
    lam = np.sqrt(scalar[node])

    def gap(e):
        return _neck_distance(s, psi, psi_s, psi_ss, lam, node, (1.0 / e) / lam) - e

    if gap(eps_max) > 0.0:
        return np.inf
    if gap(eps_min) <= 0.0:
        return eps_min
    lo, hi = eps_min, eps_max
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        if gap(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def _neck_fields(metric):
    s = metric.arclength()
    psi_s, psi_ss = metric.psi_derivatives()
    curv = geom.compute_curvature(metric, validate=False)
    return s, metric.psi, psi_s, psi_ss, curv.scalar


def detect_necks(metric, eps, history=None):
    """Maximal disjoint list of necks certified at closeness <= eps.

    Every node is screened at the requested eps; surviving candidates are
    kept greedily by quality, their achieved closeness refined by
    bisection.  With `history` (a list of (t, metric) snapshots ending at
    the present slice) the strong flag marks necks whose bound also holds
    over one rescaled backward time unit.
    """
    fields = _neck_fields(metric)
    s, psi, psi_s, psi_ss, scalar = fields

    cands = []
    for i in range(s.size):
        if scalar[i] <= 0.0:
            continue
        lam = np.sqrt(scalar[i])
        d = _neck_distance(s, psi, psi_s, psi_ss, lam, i, (1.0 / eps) / lam)
        if d <= eps:
            cands.append((d, i, lam))
    cands.sort()

    necks = []
    taken = []
    for d, i, lam in cands:
        half = (1.0 / eps) / lam
        if any(abs(s[i] - s[j]) < (1.0 / eps) / mu + half for j, mu in taken):
            continue
        e_star = achieved_eps(metric, i, eps_max=eps, _fields=fields)
        half_star = (1.0 / e_star) / lam
        strong = _strong_flag(metric, history, i, e_star, lam) if history else False
        necks.append(NeckCertificate(
            center=i, radius=float(psi[i]), eps=float(e_star),
            span=(float(s[i] - half_star), float(s[i] + half_star)),
            strong=strong))
        taken.append((i, lam))
    necks.sort(key=lambda nc: nc.center)
    return necks


def _strong_flag(metric, history, node, eps, lam):
    """Whether the closeness bound also holds one rescaled time unit back."""
    if not history:
        return False
    t_now = history[-1][0]
    t_back = t_now - 1.0 / lam**2
    if history[0][0] > t_back + 1e-12:
        return False
    x_c = metric.x[node]
    for t, m in history:
        if t < t_back - 1e-12:
            continue
        j = int(np.argmin(np.abs(m.x - x_c)))
        f = _neck_fields(m)
        if f[4][j] <= 0.0:
            return False
        mu = np.sqrt(f[4][j])
        if _neck_distance(f[0], f[1], f[2], f[3], mu, j, (1.0 / eps) / mu) > eps:
            return False
    return True


@dataclass
class SurgeryReport:
    cut_node: int
    h: float
    vol_before: float
    vol_after: float
    pinching_pass: bool
    cap_distance: float
    h0_deviation: float = np.nan
    alternatives: tuple = ()

    def to_json_dict(self):
        return {
            "cut_node": int(self.cut_node), "h": float(self.h),
            "vol_before": float(self.vol_before), "vol_after": float(self.vol_after),
            "pinching_pass": bool(self.pinching_pass),
            "cap_distance": float(self.cap_distance),
            "h0_deviation": float(self.h0_deviation),
            "alternatives": [int(a) for a in self.alternatives],
        }


_default_cap = None


def default_cap():
    """Shared cap profile with the reference parameter A = 10."""
    global _default_cap
    if _default_cap is None:
        _default_cap = standard_initial_metric(A=10.0)
    return _default_cap


def _blend_weights(z, A):
    """Partition of unity: alpha1 = 1 on the cap side, 0 past z = -A/2."""
    a1 = 1.0 - _smoothstep((z + A) / (A / 2.0))
    return a1, 1.0 - a1


def _capped_side(metric, s_cut, sign, cap, sq_r, scalar):
    """Replace the collar on one side of the cut by the blended cap.

    `sign` is +1 when the kept data lies at s > s_cut.  The cap term is
    scaled by the local scalar curvature (the R(x)^{-1} g_0 factor of the
    gluing formula), so the two blended terms agree wherever the data is
    locally neck-like, even if its radius drifts from the cut scale.
    Returns (s_new, psi_new, cap_distance, h0_deviation) with ascending s.
    """
    s = metric.arclength()
    psi = metric.psi
    L_cap = cap.cap_arc          # rescaled arclength of the replacement
    s0 = s_cut + sign * L_cap / sq_r   # anchor: blend coordinate z = 0

    if not s[0] < s0 < s[-1]:
        raise ResolutionLoss("cap does not fit inside the kept side")
    kept = s > s0 if sign > 0 else s < s0
    if np.count_nonzero(kept) < 8:
        raise ResolutionLoss("too few nodes survive on the kept side")

    # sample the pre-surgery profile in rescaled blend coordinates
    near = np.abs(s - s0) <= 1.2 * L_cap / sq_r
    if np.count_nonzero(near) < 4:
        raise ResolutionLoss("pre-surgery data too coarse across the cap region")
    ds_local = float(np.median(np.diff(s[near])))
    dz = min(sq_r * ds_local, (cap.B + cap.ball_arc) / 64.0)
    dz = max(dz, (cap.B + cap.ball_arc) / 4096.0)

    z = np.arange(-cap.B, 0.0 + 0.5 * dz, dz)
    z[-1] = 0.0
    s_data = s0 + sign * z / sq_r
    psi0_hat = sq_r * np.interp(s_data, s, psi)
    r_hat = np.maximum(np.interp(s_data, s, scalar), 1e-12) / sq_r**2
    # Floor the pointwise curvature by its neck-consistent value 2/psi^2:
    # on an exact cylinder both agree, and away from the neck (where the
    # profile bulges and the scalar can vanish or go negative) the floor
    # keeps the cap term bounded by the data profile instead of blowing up.
    r_hat = np.maximum(r_hat, 2.0 / psi0_hat**2)
    F = cap.exponent(z)
    eF = np.exp(F)
    a1, a2 = _blend_weights(z, cap.A)
    psi_hat = eF * np.sqrt(a1 * 2.0 / r_hat + a2 * psi0_hat**2)
    ds_hat = np.sqrt(a1 * eF**2 / r_hat + a2)
    s_hat = cumulative_trapezoid(ds_hat, z, initial=0.0)
    s_hat -= s_hat[-1]           # s_hat(0) = 0 at the junction with kept data

    # round closure below z = -B (pure cap there up to the local scale, so
    # it attaches with the reference opening angle)
    a_ball = float(psi_hat[0]) / np.sin(cap.ball_angle)
    ball_arc = a_ball * cap.ball_angle
    n_ball = max(int(np.ceil(ball_arc / dz)), 32)
    arc = np.linspace(0.0, ball_arc, n_ball + 1)[:-1]
    s_ball = s_hat[0] - ball_arc + arc
    psi_ball = a_ball * np.sin(arc / a_ball)

    s_cap_hat = np.concatenate([s_ball, s_hat])
    psi_cap_hat = np.concatenate([psi_ball, psi_hat])

    # C^2 distance of the glued region to the reference cap profile
    target = CYLINDER_PSI * eF
    diff = psi_hat - target
    d1 = np.gradient(diff, s_hat)
    d2 = np.gradient(d1, s_hat)
    cap_distance = max(np.max(np.abs(diff)), np.max(np.abs(d1)), np.max(np.abs(d2)))
    h0_dev = float(np.max(np.abs(psi0_hat - CYLINDER_PSI)))

    s_cap = s0 + sign * s_cap_hat / sq_r
    psi_cap = psi_cap_hat / sq_r
    gap = 0.25 * dz / sq_r
    if sign > 0:
        keep_idx = np.flatnonzero(s > s0 + gap)
        s_new = np.concatenate([s_cap, s[keep_idx]])
        psi_new = np.concatenate([psi_cap, psi[keep_idx]])
    else:
        keep_idx = np.flatnonzero(s < s0 - gap)
        s_new = np.concatenate([s[keep_idx], (s0 + sign * s_cap_hat / sq_r)[::-1]])
        psi_new = np.concatenate([psi[keep_idx], psi_cap[::-1]])
    psi_new = psi_new.copy()
    psi_new[0 if sign < 0 else -1] = psi[-1] if sign > 0 else psi[0]
    return s_new, psi_new, float(cap_distance), h0_dev


def _metric_from_profile(s, psi, topology=Topology.SPHERE):
    """Arclength-gauge metric (x proportional to s, phi constant)."""
    length = s[-1] - s[0]
    x = (s - s[0]) / length
    m = WarpedMetric(topology, x, np.full(s.size, length), np.asarray(psi, float))
    m.validate()
    return m


def perform_surgery(state, neck, delta, t=None, cap=None, horn_threshold=None):
    """Cut a certified neck and cap both ends; returns (components, report).

    The cut is placed at the locally minimal fiber radius inside the
    certificate span; the surgery scale is h = R(cut)^{-1/2}.  On each
    side a collar of rescaled length equal to the cap arclength is
    replaced by the blended cap, and everything beyond the collar is kept
    with its fiber radius bit-identical.  Components whose scalar
    curvature everywhere exceeds `horn_threshold` are discarded.
    """
    metric = state.metric if hasattr(state, "metric") else state
    t = t if t is not None else getattr(state, "t", None)
    if metric.topology is not Topology.SPHERE:
        raise ValueError("surgery is implemented for sphere-topology profiles")
    if neck.eps > delta:
        raise NeckTooCoarse(f"neck closeness {neck.eps:.3g} exceeds delta {delta:.3g}")
    cap = cap if cap is not None else default_cap()

    s = metric.arclength()
    curv = geom.compute_curvature(metric, validate=False)
    lo = np.searchsorted(s, neck.span[0])
    hi = np.searchsorted(s, neck.span[1], side="right")
    window = slice(max(lo, 1), min(hi, s.size - 1))
    cut = int(window.start + np.argmin(metric.psi[window]))
    minima = [i for i in flow.find_necks(metric, guard=0.0)
              if window.start <= i < window.stop]
    r_cut = float(curv.scalar[cut])
    if r_cut <= 0.0:
        raise NeckTooCoarse("cut point has nonpositive scalar curvature")
    sq_r = np.sqrt(r_cut)
    h = 1.0 / sq_r

    sides = []
    cap_dist = 0.0
    h0_dev = 0.0
    for sign in (-1, +1):
        s_new, psi_new, d_cap, d_h0 = _capped_side(metric, s[cut], sign, cap,
                                                   sq_r, curv.scalar)
        cap_dist = max(cap_dist, d_cap)
        h0_dev = max(h0_dev, d_h0)
        sides.append(_metric_from_profile(s_new, psi_new))

    if horn_threshold is not None:
        kept_sides = [m for m in sides
                      if np.min(geom.compute_curvature(m, validate=False).scalar)
                      <= horn_threshold]
    else:
        kept_sides = sides

    vol_before = geom.volume(metric)
    vol_after = sum(geom.volume(m) for m in kept_sides)

    t_audit = t if t is not None and t > 0 else 1.0
    pre = monitors.hamilton_ivey_check(metric, t_audit)
    posts = [monitors.hamilton_ivey_check(m, t_audit) for m in kept_sides]
    pinching_pass = (not pre["pass"]) or all(p["pass"] for p in posts)

    report = SurgeryReport(
        cut_node=cut, h=h, vol_before=float(vol_before),
        vol_after=float(vol_after), pinching_pass=bool(pinching_pass),
        cap_distance=float(cap_dist), h0_deviation=h0_dev,
        alternatives=tuple(m for m in minima if m != cut))
    return kept_sides, report


def coarsen_component(metric, n_base=512, nodes_per_scale=6.0):
    """Regrid a post-surgery component for the next flow leg.

    Target spacing is uniform at length/(n_base - 1) but refined to keep
    ~nodes_per_scale nodes per local curvature length 1/sqrt(|R|).  The
    surgery output itself is left untouched; this is a separate remesh
    recorded by the caller.
    """
    s = metric.arclength()
    length = s[-1] - s[0]
    curv = geom.compute_curvature(metric, validate=False)
    d_base = length / (n_base - 1)
    d_curv = 1.0 / (nodes_per_scale * np.sqrt(np.abs(curv.scalar) + 1.0))
    target = np.minimum(d_base, np.maximum(d_curv, 1e-4 * d_base))

    density = 1.0 / target
    mass = cumulative_trapezoid(density, s, initial=0.0)
    n_new = int(np.ceil(mass[-1])) + 1
    s_new = np.interp(np.linspace(0.0, mass[-1], n_new), mass, s)
    s_new[0], s_new[-1] = s[0], s[-1]
    psi_new = PchipInterpolator(s, metric.psi)(s_new)
    if metric.topology is Topology.SPHERE:
        psi_new[0] = psi_new[-1] = 0.0
    return _metric_from_profile(s_new, psi_new, metric.topology)
