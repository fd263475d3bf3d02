"""Discrete warped-product geometry.

A rotationally symmetric 3-metric is represented as

    g = phi(x)^2 dx^2 + psi(x)^2 g_{S^2}

on a coordinate grid x_0 < ... < x_N in [0, 1], where g_{S^2} is the unit
round 2-sphere (Gaussian curvature 1, area 4*pi).  psi is therefore the
literal radius of the fiber sphere; the cylinder of scalar curvature 1 has
psi = sqrt(2).

Sectional curvatures with respect to arclength s (ds = phi dx):

    k_rad = -psi_ss / psi          (planes containing the radial direction)
    k_sph = (1 - psi_s^2) / psi^2  (the fiber plane)

Scalar curvature R = 4 k_rad + 2 k_sph; Ricci eigenvalues are
(2 k_rad) radially and (k_rad + k_sph) on the fiber; the curvature operator
acts on 2-forms with eigenvalues (2 k_rad, 2 k_rad, 2 k_sph) -- a constant
curvature k metric has operator eigenvalues (2k, 2k, 2k).
"""

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import grid
from .errors import CurvatureHypothesisFailed, DegenerateWarp, NonSmoothPole


class Topology(str, Enum):
    SPHERE = "sphere"
    CYLINDER_PERIODIC = "cylinder_periodic"
    CYLINDER_OPEN = "cylinder_open"


# interior psi below this fraction of the total arclength is unresolvable
DEGENERATE_PSI_FRACTION = 1e-8
# tolerance on |psi_s| = 1 at sphere poles
POLE_SLOPE_TOL = 0.05


@dataclass
class WarpedMetric:
    """Discretized rotationally symmetric metric g = phi^2 dx^2 + psi^2 g_{S^2}."""

    topology: Topology
    x: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.topology = Topology(self.topology)
        self.x = np.asarray(self.x, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.psi = np.asarray(self.psi, dtype=float)

    @property
    def n_nodes(self):
        return self.x.size

    def arclength(self):
        """Arclength coordinate s with s[0] = 0."""
        return grid.cumulative_trapezoid(self.phi, self.x)

    def total_arclength(self):
        s = self.arclength()
        if self.topology is Topology.CYLINDER_PERIODIC:
            # closing segment from the last node back to the first
            return s[-1] + 0.5 * (self.phi[-1] + self.phi[0]) * (1.0 - self.x[-1] + self.x[0])
        return s[-1]

    def quadrature_weights(self):
        """Weights w with sum(f * w) ~ integral of f ds."""
        s = self.arclength()
        if self.topology is Topology.CYLINDER_PERIODIC:
            return grid.periodic_weights(s, self.total_arclength())
        return grid.trapezoid_weights(s)

    def derivative_kind(self):
        if self.topology is Topology.CYLINDER_PERIODIC:
            return "periodic"
        if self.topology is Topology.SPHERE:
            return "odd"
        return "open"

    def psi_derivatives(self):
        """(psi_s, psi_ss) with respect to arclength."""
        s = self.arclength()
        kind = self.derivative_kind()
        period = self.total_arclength() if kind == "periodic" else None
        return grid.derivatives(s, self.psi, kind, period=period)

    def d_ds(self, f, kind="even"):
        """Arclength derivative of a scalar field on the grid."""
        s = self.arclength()
        k = self.derivative_kind()
        if k == "odd":
            k = kind  # generic fields reflect evenly through a pole
        period = self.total_arclength() if k == "periodic" else None
        return grid.derivatives(s, f, k, period=period)[0]

    def validate(self):
        """Raise if the structural invariants fail."""
        if self.x.ndim != 1 or self.x.size < 4:
            raise ValueError("need at least 4 grid nodes")
        if not (np.all(np.diff(self.x) > 0) and self.x[0] >= 0.0 and self.x[-1] <= 1.0):
            raise ValueError("x must be strictly increasing within [0, 1]")
        if self.phi.shape != self.x.shape or self.psi.shape != self.x.shape:
            raise ValueError("phi/psi must match the grid shape")
        if not np.all(self.phi > 0):
            raise ValueError("phi must be positive")
        lam = self.total_arclength()
        if not np.isfinite(lam) or lam <= 0:
            raise ValueError("total arclength must be finite and positive")
        interior = slice(1, -1) if self.topology is Topology.SPHERE else slice(None)
        if np.any(self.psi[interior] <= DEGENERATE_PSI_FRACTION * lam):
            raise DegenerateWarp("interior psi below resolvable scale")
        if self.topology is Topology.SPHERE:
            if abs(self.psi[0]) > 1e-12 * lam or abs(self.psi[-1]) > 1e-12 * lam:
                raise NonSmoothPole("sphere topology requires psi = 0 at both ends")
            psi_s, _ = self.psi_derivatives()
            if abs(abs(psi_s[0]) - 1.0) > POLE_SLOPE_TOL or abs(abs(psi_s[-1]) - 1.0) > POLE_SLOPE_TOL:
                raise NonSmoothPole(
                    f"pole slopes |psi_s| = curve {abs(psi_s[0]):.4f}, {abs(psi_s[-1]):.4f} differ from 1"
                )
        elif self.topology is not Topology.SPHERE:
            if np.any(self.psi <= 0):
                raise DegenerateWarp("psi must be positive away from sphere poles")
        return self

    def copy(self):
        return WarpedMetric(self.topology, self.x.copy(), self.phi.copy(), self.psi.copy())

    def rescaled(self, c):
        """Uniform rescale g -> c^2 g (lengths scale by c)."""
        return WarpedMetric(self.topology, self.x.copy(), c * self.phi, c * self.psi)

    # -- serialization -----------------------------------------------------

    def to_json_dict(self):
        return {
            "topology": self.topology.value,
            "x": self.x.tolist(),
            "phi": self.phi.tolist(),
            "psi": self.psi.tolist(),
        }

    def to_json(self, path=None):
        doc = json.dumps(self.to_json_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(doc)
        return doc

    @classmethod
    def from_json_dict(cls, doc):
        for key in ("topology", "x", "phi", "psi"):
            if key not in doc:
                raise ValueError(f"metric document missing field {key!r}")
        return cls(Topology(doc["topology"]), np.array(doc["x"], dtype=float),
                   np.array(doc["phi"], dtype=float), np.array(doc["psi"], dtype=float))

    @classmethod
    def from_json(cls, text_or_path):
        text = text_or_path
        if "\n" not in text and text.strip().endswith(".json"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_json_dict(json.loads(text))


@dataclass
class CurvatureField:
    """Per-node curvature data of a warped metric."""

    k_rad: np.ndarray
    k_sph: np.ndarray
    scalar: np.ndarray = field(default=None)
    ricci_eigs: np.ndarray = field(default=None)  # columns (radial, spherical)
    op_eigs: np.ndarray = field(default=None)     # sorted ascending, 3 columns

    def __post_init__(self):
        if self.scalar is None:
            self.scalar = 4.0 * self.k_rad + 2.0 * self.k_sph
        if self.ricci_eigs is None:
            self.ricci_eigs = np.column_stack((2.0 * self.k_rad, self.k_rad + self.k_sph))
        if self.op_eigs is None:
            self.op_eigs = np.sort(
                np.column_stack((2.0 * self.k_rad, 2.0 * self.k_rad, 2.0 * self.k_sph)), axis=1
            )

    @property
    def ricci_rad(self):
        return self.ricci_eigs[:, 0]

    @property
    def ricci_sph(self):
        return self.ricci_eigs[:, 1]

    @property
    def sectional_min(self):
        return np.minimum(self.k_rad, self.k_sph)

    @property
    def op_max_abs(self):
        return np.abs(self.op_eigs).max()


def curvature_arrays(s, psi, kind, period=None):
    """(k_rad, k_sph) from raw arrays; the fast path used by the integrator.

    For kind 'odd' (sphere topology) two regularizations apply near the
    poles where the direct fiber-curvature formula divides an O(h^2)
    stencil error by psi^2 ~ s^2:

      * 1 - psi_s^2 is recovered from the exact identity
        d(1 - psi_s^2)/ds = 2 psi psi_s k_rad integrated out of each pole
        (where it vanishes), blended into the direct expression away from
        the poles;
      * the pole nodes themselves take the smooth L'Hopital limit
        k_rad = k_sph, filled by quadratic extrapolation in s.
    """
    psi_s, psi_ss = grid.derivatives(s, psi, kind, period=period)
    if kind == "odd":
        k_rad = np.empty_like(psi)
        k_sph = np.empty_like(psi)
        inner = slice(1, -1)
        k_rad[inner] = -psi_ss[inner] / psi[inner]
        k_rad[0] = _quad_extrapolate(s[1:4], k_rad[1:4], s[0])
        k_rad[-1] = _quad_extrapolate(s[-4:-1], k_rad[-4:-1], s[-1])

        e_direct = 1.0 - psi_s**2
        g = 2.0 * psi * psi_s * k_rad
        cum = grid.cumulative_trapezoid(g, s)
        e_lo = cum            # anchored at the left pole
        e_hi = cum - cum[-1]  # anchored at the right pole
        lam = s[-1] - s[0]
        d_lo = (s - s[0]) / lam
        d_hi = (s[-1] - s) / lam
        w_lo = np.clip((0.10 - d_lo) / 0.05, 0.0, 1.0)
        w_hi = np.clip((0.10 - d_hi) / 0.05, 0.0, 1.0)
        tot = np.minimum(w_lo + w_hi, 1.0)
        e = w_lo * e_lo + w_hi * e_hi + (1.0 - tot) * e_direct
        k_sph[inner] = e[inner] / psi[inner] ** 2
        k_sph[0] = _quad_extrapolate(s[1:4], k_sph[1:4], s[0])
        k_sph[-1] = _quad_extrapolate(s[-4:-1], k_sph[-4:-1], s[-1])
        # smooth closure: both sectional curvatures share the pole limit
        pole_lo = 0.5 * (k_rad[0] + k_sph[0])
        pole_hi = 0.5 * (k_rad[-1] + k_sph[-1])
        k_rad[0] = k_sph[0] = pole_lo
        k_rad[-1] = k_sph[-1] = pole_hi
        return k_rad, k_sph
    k_rad = -psi_ss / psi
    k_sph = (1.0 - psi_s**2) / psi**2
    return k_rad, k_sph


def _quad_extrapolate(xs, ys, x0):
    # Lagrange quadratic through three points, evaluated at x0
    x1, x2, x3 = xs[0], xs[1], xs[2]
    l1 = (x0 - x2) * (x0 - x3) / ((x1 - x2) * (x1 - x3))
    l2 = (x0 - x1) * (x0 - x3) / ((x2 - x1) * (x2 - x3))
    l3 = (x0 - x1) * (x0 - x2) / ((x3 - x1) * (x3 - x2))
    return float(ys[0] * l1 + ys[1] * l2 + ys[2] * l3)


def compute_curvature(metric, validate=True):
    """Per-node sectional curvatures, Ricci eigenvalues, scalar and operator eigenvalues."""
    if validate:
        metric.validate()
    elif metric.n_nodes < 4:
        raise ValueError("need at least 4 grid nodes")
    kind = metric.derivative_kind()
    period = metric.total_arclength() if kind == "periodic" else None
    k_rad, k_sph = curvature_arrays(metric.arclength(), metric.psi, kind, period=period)
    return CurvatureField(k_rad=k_rad, k_sph=k_sph)


def fiber_area(metric):
    """Per-node area of the fiber 2-sphere, 4*pi*psi^2."""
    return 4.0 * np.pi * metric.psi**2


def volume(metric):
    """Total volume V = integral of 4*pi*psi^2 ds."""
    return float(np.sum(fiber_area(metric) * metric.quadrature_weights()))


def volume_cumulative(metric):
    """Cumulative volume C(s) = integral_0^s 4*pi*psi^2 ds on the node grid."""
    return grid.cumulative_trapezoid(fiber_area(metric), metric.arclength())


@dataclass
class BallVolume:
    value: float
    radius_exceeds_diameter: bool


def ball_volume(metric, center, r):
    """Volume of the radius-r ball about the given node.

    Balls are coordinate intervals in arclength (exact for pole centers and
    an upper-bounding convention for interior ones).  If r exceeds the
    available extent the total volume is returned with a flag set.
    """
    if r <= 0:
        raise ValueError("ball radius must be positive")
    s = metric.arclength()
    sc = s[center]
    total = volume(metric)
    if metric.topology is Topology.CYLINDER_PERIODIC:
        lam = metric.total_arclength()
        if 2 * r >= lam:
            return BallVolume(total, True)
        # unwrap about the center
        ss = np.concatenate((s - lam, s, s + lam))
        area = np.tile(fiber_area(metric), 3)
        cum = grid.cumulative_trapezoid(area, ss)
        lo, hi = sc - r, sc + r
        val = float(np.interp(hi, ss, cum) - np.interp(lo, ss, cum))
        return BallVolume(val, False)
    cum = volume_cumulative(metric)
    lo, hi = sc - r, sc + r
    exceeded = lo < s[0] - 1e-14 or hi > s[-1] + 1e-14
    lo = max(lo, s[0])
    hi = min(hi, s[-1])
    val = float(np.interp(hi, s, cum) - np.interp(lo, s, cum))
    return BallVolume(val, bool(exceeded))


def _model_volume_ratio(r1, r2, K):
    """Comparison-space ratio vol(r2)/vol(r1) for n = 3 and curvature bound K."""
    def integral(r, K):
        t = np.linspace(0.0, r, 4097)
        if K > 0:
            k = np.sqrt(K)
            f = np.sin(np.minimum(k * t, np.pi)) ** 2
        elif K < 0:
            k = np.sqrt(-K)
            f = np.sinh(k * t) ** 2
        else:
            f = t**2
        return np.trapz(f, t)

    if K > 0:
        r_cap = np.pi / np.sqrt(K)
        r1, r2 = min(r1, r_cap), min(r2, r_cap)
    return integral(r2, K) / integral(r1, K)


def bishop_gromov_ratio(metric, center, r1, r2, K, tol=1e-4):
    """(measured ratio, model ratio) for the volume comparison inequality.

    The contract is lhs <= rhs + tolerance whenever the sectional curvature
    on the larger ball is >= K.
    """
    if not (0 < r1 <= r2):
        raise ValueError("need 0 < r1 <= r2")
    curv = compute_curvature(metric)
    s = metric.arclength()
    in_ball = np.abs(s - s[center]) <= r2 + 1e-12
    if metric.topology is Topology.CYLINDER_PERIODIC:
        lam = metric.total_arclength()
        d = np.abs(s - s[center])
        in_ball = np.minimum(d, lam - d) <= r2 + 1e-12
    inf_sec = float(curv.sectional_min[in_ball].min())
    if inf_sec < K - tol - 1e-9:
        raise CurvatureHypothesisFailed(
            f"sectional curvature infimum {inf_sec:.6g} on the ball is below K = {K:.6g}"
        )
    lhs = ball_volume(metric, center, r2).value / ball_volume(metric, center, r1).value
    rhs = _model_volume_ratio(r1, r2, K)
    return lhs, rhs
