"""Ricci flow integrator for warped-product metrics.

The flow is run in the fixed-coordinate gauge: x never moves, phi and psi
evolve by minus their Ricci eigenvalues,

    d phi / dt = -Ric_rad * phi,      Ric_rad = 2 k_rad,
    d psi / dt = -Ric_sph * psi,      Ric_sph = k_rad + k_sph,

which is exactly dg/dt = -2 Ric written on the two metric coefficients.
Explicit Heun (RK2) stepping under a parabolic CFL bound; remeshing
re-interpolates onto a neck-graded arclength grid when resolution degrades.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import _kernels as kernels
from . import geom, grid
from .errors import NonConvergence, StepRejected
from .geom import Topology, WarpedMetric

EXTINCTION_FRACTION = 1e-6
BLOWUP_FACTOR = 1e3


@dataclass
class FlowConfig:
    cfl: float = 0.5
    t_max: float = 1.0
    surgery_trigger: float | None = None  # default: 1e4 * initial max R
    record_every: int = 50
    remesh_check_every: int = 25
    max_spacing_ratio: float = 8.0
    nodes_per_neck: int = 32
    reaction_cap: float = 0.1  # dt <= reaction_cap / max|op_eigs|
    extinction_fraction: float = EXTINCTION_FRACTION

    def __post_init__(self):
        if not 0.0 < self.cfl < 1.0:
            raise ValueError("cfl must lie in (0, 1)")
        if self.surgery_trigger is not None and self.surgery_trigger <= 0:
            raise ValueError("surgery trigger must be positive")


@dataclass
class FlowEvent:
    time: float
    kind: str  # SurgeryTriggered | ComponentExtinct | Remeshed | Blowup
    step_index: int
    info: dict = field(default_factory=dict)


@dataclass
class FlowState:
    metric: WarpedMetric
    t: float = 0.0
    step_index: int = 0
    r_min_history: list = field(default_factory=list)   # (t, R_min)
    volume_history: list = field(default_factory=list)  # (t, V)
    events: list = field(default_factory=list)


class ScalarHistory:
    """Per-step scalar record of a flow run (one row per step)."""

    FIELDS = ("t", "volume", "r_min", "r_max", "psi_min",
              "int_r_dv", "int_abs_r_dv", "op_max")

    def __init__(self):
        self._blocks = []
        self._matrix = None

    def append(self, *row):
        self.append_block(np.array([row], dtype=float))

    def append_block(self, block):
        if block.size:
            self._blocks.append(np.asarray(block, dtype=float))
            self._matrix = None

    def matrix(self):
        if self._matrix is None:
            self._matrix = (np.concatenate(self._blocks, axis=0) if self._blocks
                            else np.empty((0, len(self.FIELDS))))
        return self._matrix

    def __len__(self):
        return self.matrix().shape[0]

    def __getattr__(self, name):
        if name in self.FIELDS:
            return self.matrix()[:, self.FIELDS.index(name)]
        raise AttributeError(name)

    def column(self, name):
        return getattr(self, name)


@dataclass
class FlowLeg:
    """Snapshots of one smooth flow segment on a single fixed grid."""

    times: list
    metrics: list
    static: bool = False

    @property
    def t0(self):
        return self.times[0]

    @property
    def t1(self):
        return self.times[-1]

    def metric_at(self, t):
        """Metric at time t by linear interpolation between snapshots."""
        ts = self.times
        if self.static or len(ts) == 1:
            return self.metrics[0].copy()
        if not ts[0] - 1e-12 <= t <= ts[-1] + 1e-12:
            raise ValueError(f"t={t} outside leg [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t, side="right")) - 1
        j = min(max(j, 0), len(ts) - 2)
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        a, b = self.metrics[j], self.metrics[j + 1]
        return WarpedMetric(a.topology, a.x,
                            (1 - w) * a.phi + w * b.phi,
                            (1 - w) * a.psi + w * b.psi)

    @classmethod
    def from_static(cls, metric, t0, t1, samples=2):
        """A leg whose metric does not move (e.g. a near-flat background)."""
        ts = list(np.linspace(t0, t1, samples))
        return cls(times=ts, metrics=[metric.copy() for _ in ts], static=True)


@dataclass
class FlowResult:
    state: FlowState
    history: ScalarHistory
    legs: list
    events: list
    stop_reason: str

    @property
    def trajectory(self):
        return [(t, m) for leg in self.legs for t, m in zip(leg.times, leg.metrics)]


def _rates(metric):
    """Time derivatives (dphi, dpsi) of the warp coefficients."""
    s = metric.arclength()
    period = metric.total_arclength() if metric.topology is Topology.CYLINDER_PERIODIC else None
    k_rad, k_sph = geom.curvature_arrays(s, metric.psi, metric.derivative_kind(), period=period)
    dphi = -2.0 * k_rad * metric.phi
    dpsi = -(k_rad + k_sph) * metric.psi
    return dphi, dpsi


def _check_arrays(metric):
    phi, psi = metric.phi, metric.psi
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
        raise StepRejected("non-finite metric coefficients after step")
    if np.any(phi <= 0.0):
        raise StepRejected("phi lost positivity")
    interior = psi[1:-1] if metric.topology is Topology.SPHERE else psi
    if np.any(interior <= 0.0):
        raise StepRejected("psi lost positivity")


def ricci_step(state, dt, rates=None):
    """One Heun (RK2) step of the flow; returns a new FlowState.

    `rates` may carry precomputed first-stage (dphi, dpsi) to avoid a
    redundant curvature evaluation when the caller already has them.
    """
    m = state.metric
    dphi1, dpsi1 = rates if rates is not None else _rates(m)
    mid = WarpedMetric(m.topology, m.x, m.phi + dt * dphi1, m.psi + dt * dpsi1)
    _check_arrays(mid)
    dphi2, dpsi2 = _rates(mid)
    new = WarpedMetric(
        m.topology, m.x,
        m.phi + 0.5 * dt * (dphi1 + dphi2),
        m.psi + 0.5 * dt * (dpsi1 + dpsi2),
    )
    _check_arrays(new)
    return FlowState(
        metric=new, t=state.t + dt, step_index=state.step_index + 1,
        r_min_history=state.r_min_history, volume_history=state.volume_history,
        events=state.events,
    )


def _stable_dt(metric, curv, config):
    s = metric.arclength()
    ds_min = np.min(np.diff(s))
    op_max = max(curv.op_max_abs, 1e-300)
    return config.cfl * min(0.5 * ds_min**2, config.reaction_cap / op_max)


def find_necks(metric, guard=0.05):
    """Indices of interior local minima of psi, away from the poles.

    `guard` is the excluded arclength fraction at each pole end.
    """
    psi = metric.psi
    s = metric.arclength()
    lam = s[-1] - s[0]
    idx = []
    lo = np.searchsorted(s, s[0] + guard * lam)
    hi = np.searchsorted(s, s[-1] - guard * lam)
    for i in range(max(lo, 1), min(hi, psi.size - 1)):
        if psi[i] <= psi[i - 1] and psi[i] < psi[i + 1]:
            idx.append(i)
    return idx


def _needs_remesh(metric, config):
    if metric.topology is not Topology.SPHERE:
        return False
    s = metric.arclength()
    ds = np.diff(s)
    if ds.max() / ds.min() > config.max_spacing_ratio:
        return True
    for i in find_necks(metric):
        half = metric.psi[i]
        inside = np.abs(s - s[i]) <= half
        if np.count_nonzero(inside) < config.nodes_per_neck:
            return True
    return False


def remesh(metric, config):
    """Re-interpolate onto an arclength grid graded toward any necks.

    Target spacing  D(s) = min(D_base, max_k(psi_k / npp, |s - s_k| / 3))
    keeps ~npp nodes per neck radius while relaxing linearly away from it.
    """
    s = metric.arclength()
    lam = s[-1] - s[0]
    n0 = metric.n_nodes
    d_base = lam / (n0 - 1)

    necks = find_necks(metric)
    fine = np.linspace(s[0], s[-1], 8 * n0)
    target = np.full(fine.size, d_base)
    for i in necks:
        local = np.maximum(metric.psi[i] / config.nodes_per_neck,
                           np.abs(fine - s[i]) / 3.0)
        target = np.minimum(target, local)
    if metric.topology is Topology.SPHERE:
        # never coarsen a pole neighborhood past the spacing that already
        # resolves it (a fresh surgery cap turns on a very small radius)
        for ds_pole, s_pole in ((s[1] - s[0], s[0]), (s[-1] - s[-2], s[-1])):
            if ds_pole < d_base:
                local = np.maximum(ds_pole, np.abs(fine - s_pole) / 3.0)
                target = np.minimum(target, local)

    density = 1.0 / target
    mass = grid.cumulative_trapezoid(density, fine)
    n_new = int(np.ceil(mass[-1])) + 1
    s_new = np.interp(np.linspace(0.0, mass[-1], n_new), mass, fine)
    s_new[0], s_new[-1] = s[0], s[-1]

    x_new = np.linspace(0.0, 1.0, n_new)
    phi_new = PchipInterpolator(x_new, s_new).derivative()(x_new)
    psi_new = PchipInterpolator(s, metric.psi)(s_new)
    psi_new[0] = psi_new[-1] = 0.0
    if metric.topology is Topology.SPHERE:
        _repair_pole(s_new, psi_new, left=True)
        _repair_pole(s_new, psi_new, left=False)
    out = WarpedMetric(metric.topology, x_new, phi_new, psi_new)
    out.validate()
    return out


def _repair_pole(s, psi, left, anchor=5):
    """Refit the nodes nearest a pole onto the round arc through an anchor.

    Interpolation drift slowly flattens the discrete pole slope of a
    shrinking component; matching psi = a sin(d/a) through a nearby anchor
    node restores |psi_s| = 1 without touching the rest of the profile.
    """
    from scipy.optimize import brentq

    n = psi.size
    j = min(anchor, n // 4)
    if j < 2:
        return
    if left:
        d_j, psi_j = s[j] - s[0], psi[j]
        sl = slice(1, j)
        d = s[sl] - s[0]
    else:
        d_j, psi_j = s[-1] - s[-1 - j], psi[-1 - j]
        sl = slice(n - j, n - 1)
        d = s[-1] - s[sl]
    if psi_j <= 0.0 or d_j <= 0.0:
        return
    q = psi_j / d_j
    if q >= 1.0 - 1e-12:
        psi[sl] = d  # flat limit: unit-slope cone through the anchor
        return
    try:
        x = brentq(lambda u: np.sin(u) / u - q, 1e-9, np.pi * 0.999)
    except ValueError:
        return
    a = d_j / x
    psi[sl] = a * np.sin(d / a)


def _scalar_row(metric, curv):
    w = metric.quadrature_weights()
    dv = geom.fiber_area(metric)
    r = curv.scalar
    return (float(np.sum(w * dv)), float(r.min()), float(r.max()),
            _psi_floor(metric),
            float(np.sum(w * r * dv)), float(np.sum(w * np.abs(r) * dv)),
            curv.op_max_abs)


def _chunk_py(metric, t, config, r_trig, eps_v, max_steps, rows):
    """Reference chunk stepper: advance up to max_steps, appending scalar rows.

    Same contract as _kernels.flow_chunk; works for every topology.
    """
    steps = 0
    while True:
        curv = geom.compute_curvature(metric, validate=False)
        row = (t,) + _scalar_row(metric, curv)
        rows.append(row)
        vol, _, r_max = row[1], row[2], row[3]
        if vol < eps_v:
            return kernels.EXTINCT, steps, t, metric
        if curv.op_max_abs > BLOWUP_FACTOR * r_trig:
            return kernels.BLOWUP, steps, t, metric
        if r_max >= r_trig:
            return kernels.SURGERY, steps, t, metric
        if t >= config.t_max - 1e-15:
            return kernels.T_MAX, steps, t, metric
        if steps >= max_steps:
            del rows[-1]  # the landed state belongs to the next chunk
            return kernels.CHUNK_DONE, steps, t, metric

        rates1 = (-2.0 * curv.k_rad * metric.phi,
                  -(curv.k_rad + curv.k_sph) * metric.psi)
        dt = min(_stable_dt(metric, curv, config), config.t_max - t)
        dt_floor = 1e-15 * max(config.t_max, 1.0)
        state = FlowState(metric, t)
        while True:
            try:
                state = ricci_step(state, dt, rates=rates1)
                break
            except StepRejected:
                dt *= 0.5
                if dt < dt_floor:
                    return kernels.DT_UNDERFLOW, steps, t, metric
        metric, t = state.metric, state.t
        steps += 1


def _chunk_jit(metric, t, config, r_trig, eps_v, max_steps, rows):
    """numba-accelerated chunk stepper for sphere topology."""
    phi = np.ascontiguousarray(metric.phi, dtype=float)
    psi = np.ascontiguousarray(metric.psi, dtype=float)
    x = np.ascontiguousarray(metric.x, dtype=float)
    rec = np.empty((max_steps + 1, 8))
    status, steps, nrows, t_new = kernels.flow_chunk(
        x, phi, psi, t, config.t_max, config.cfl, config.reaction_cap,
        r_trig, eps_v, BLOWUP_FACTOR * r_trig, max_steps, rec)
    rows.append(rec[:nrows].copy())
    out = WarpedMetric(metric.topology, x, phi, psi)
    return status, steps, t_new, out


def run(initial, config):
    """Integrate one smooth flow leg (plus remesh events) to a stopping event.

    Returns a FlowResult; stop_reason is one of t_max, extinct, surgery,
    blowup.  Raises NonConvergence if the time step underflows.
    """
    import math

    initial.validate()
    metric = initial.copy()
    t = 0.0
    step_index = 0
    history = ScalarHistory()
    events = []
    legs = []
    leg_times, leg_metrics = [], []
    eps_v = config.extinction_fraction * geom.volume(initial)

    r_trig = config.surgery_trigger
    if r_trig is None:
        curv0 = geom.compute_curvature(initial, validate=False)
        r_trig = 1e4 * float(np.max(curv0.scalar))
        if r_trig <= 0:
            r_trig = np.inf

    chunk = math.gcd(config.record_every, config.remesh_check_every)
    use_jit = kernels.HAVE_NUMBA and metric.topology is Topology.SPHERE and np.isfinite(r_trig)
    advance = _chunk_jit if use_jit else _chunk_py

    stop_map = {kernels.EXTINCT: ("ComponentExtinct", "extinct"),
                kernels.SURGERY: ("SurgeryTriggered", "surgery"),
                kernels.BLOWUP: ("Blowup", "blowup")}
    stop = "t_max"
    while True:
        if step_index % config.record_every == 0:
            leg_times.append(t)
            leg_metrics.append(metric.copy())

        rows = []
        status, steps, t, metric = advance(metric, t, config, r_trig, eps_v, chunk, rows)
        if rows:
            if isinstance(rows[0], np.ndarray):
                history.append_block(rows[0])
            else:
                history.append_block(np.array(rows, dtype=float))
        step_index += steps

        if status == kernels.DT_UNDERFLOW:
            raise NonConvergence("time step underflow during flow")
        if status in stop_map:
            kind, stop = stop_map[status]
            events.append(FlowEvent(t, kind, step_index, {}))
            break
        if status == kernels.T_MAX:
            break

        if step_index % config.remesh_check_every == 0 and _needs_remesh(metric, config):
            new_metric = remesh(metric, config)
            events.append(FlowEvent(t, "Remeshed", step_index,
                                    {"n_old": metric.n_nodes, "n_new": new_metric.n_nodes}))
            if not leg_times or leg_times[-1] < t:
                leg_times.append(t)
                leg_metrics.append(metric.copy())
            legs.append(FlowLeg(leg_times, leg_metrics))
            leg_times, leg_metrics = [t], [new_metric.copy()]
            metric = new_metric

    if not leg_times or leg_times[-1] < t:
        leg_times.append(t)
        leg_metrics.append(metric.copy())
    legs.append(FlowLeg(leg_times, leg_metrics))

    state = FlowState(metric=metric, t=t, step_index=step_index, events=events)
    state.r_min_history = list(zip(history.t.tolist(), history.r_min.tolist()))
    state.volume_history = list(zip(history.t.tolist(), history.volume.tolist()))
    return FlowResult(state=state, history=history, legs=legs,
                      events=events, stop_reason=stop)


def _psi_floor(metric):
    """Smallest fiber radius away from poles (poles are structurally 0)."""
    psi = metric.psi
    if metric.topology is Topology.SPHERE:
        interior = psi[1:-1]
        return float(interior.min()) if interior.size else 0.0
    return float(psi.min())


def check_rmin_bound(history, rel_tol=0.01, volume_tol=1e-3):
    """Audit a smooth leg's scalar record against the comparison ODE bound.

    Checks (inf R)(t) >= R0 / (1 - (2/3) t R0) with relative slack, the
    step-to-step version of the same bound, and the volume identity
    dV/dt = -int R dV against the recorded integrands.
    """
    t = history.t
    r_min = history.r_min
    vol = history.volume
    int_r = history.int_r_dv
    int_abs_r = history.int_abs_r_dv

    r0 = r_min[0]
    violations = []
    worst_margin = np.inf
    for i in range(t.size):
        denom = 1.0 - (2.0 / 3.0) * (t[i] - t[0]) * r0
        if r0 > 0 and denom <= 1e-12:
            continue  # comparison solution has escaped to +infinity
        bound = r0 / denom
        margin = r_min[i] - (bound - rel_tol * abs(bound))
        worst_margin = min(worst_margin, margin)
        if margin < 0:
            violations.append({"t": float(t[i]), "r_min": float(r_min[i]),
                               "bound": float(bound)})

    # discrete maximum principle: between consecutive records the drop of
    # min R may not beat dR/dt = (2/3) R^2
    step_violations = 0
    for i in range(t.size - 1):
        dt = t[i + 1] - t[i]
        denom = 1.0 - (2.0 / 3.0) * dt * r_min[i]
        if r_min[i] > 0 and denom <= 1e-12:
            continue
        bound = r_min[i] / denom
        if r_min[i + 1] < bound - 1e-3 * abs(r_min[i]) - 1e-12:
            step_violations += 1

    # volume identity on centered differences of the recorded series
    vol_worst = 0.0
    vol_violations = 0
    for i in range(t.size - 1):
        dt = t[i + 1] - t[i]
        if dt <= 0:
            continue
        dvdt = (vol[i + 1] - vol[i]) / dt
        rhs = -0.5 * (int_r[i] + int_r[i + 1])
        scale = max(0.5 * (int_abs_r[i] + int_abs_r[i + 1]), 1e-300)
        err = abs(dvdt - rhs) / scale
        vol_worst = max(vol_worst, err)
        if err > volume_tol:
            vol_violations += 1

    return {
        "r_min_bound_ok": not violations,
        "r_min_violations": violations,
        "worst_margin": float(worst_margin) if np.isfinite(worst_margin) else None,
        "step_bound_ok": step_violations == 0,
        "step_violations": step_violations,
        "volume_identity_ok": vol_violations == 0,
        "volume_identity_worst": float(vol_worst),
        "nonnegative_preserved": bool(r_min[0] < 0 or np.all(r_min >= -1e-12)),
    }


def export_trajectory_csv(history, events, path):
    """Write the per-step scalar record with an event_flag column."""
    flags = {}
    # events carry step indices; history rows are one per step
    for ev in events:
        flags[ev.step_index] = ev.kind
    with open(path, "w") as fh:
        fh.write("t,V,R_min,R_max,psi_min,event_flag\n")
        t, v = history.t, history.volume
        rmin, rmax, pmin = history.r_min, history.r_max, history.psi_min
        for i in range(t.size):
            fh.write(f"{t[i]:.12g},{v[i]:.12g},{rmin[i]:.12g},"
                     f"{rmax[i]:.12g},{pmin[i]:.12g},{flags.get(i, '')}\n")
