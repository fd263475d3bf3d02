"""Jitted inner loop for sphere-topology flow legs.

Mirrors the numpy reference path (grid.derivatives 'odd' + curvature pole
regularization + Heun stepping) in plain loops so numba can compile it.
The agreement of the two implementations is covered by tests.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


# status codes returned by flow_chunk
CHUNK_DONE = 0
EXTINCT = 1
SURGERY = 2
BLOWUP = 3
T_MAX = 4
DT_UNDERFLOW = 5


@njit(cache=True)
def _lagrange3(x1, x2, x3, y1, y2, y3, x0):
    l1 = (x0 - x2) * (x0 - x3) / ((x1 - x2) * (x1 - x3))
    l2 = (x0 - x1) * (x0 - x3) / ((x2 - x1) * (x2 - x3))
    l3 = (x0 - x1) * (x0 - x2) / ((x3 - x1) * (x3 - x2))
    return y1 * l1 + y2 * l2 + y3 * l3


@njit(cache=True)
def curvature_odd(s, psi, k_rad, k_sph):
    """Sectional curvatures for a sphere-topology profile (psi = 0 at ends)."""
    n = s.size
    psi_s = np.empty(n)
    for i in range(1, n - 1):
        a = s[i] - s[i - 1]
        b = s[i + 1] - s[i]
        den = a * b * (a + b)
        psi_s[i] = (psi[i + 1] * a * a - psi[i - 1] * b * b
                    + psi[i] * (b * b - a * a)) / den
        pss = 2.0 * (psi[i - 1] * b - psi[i] * (a + b) + psi[i + 1] * a) / den
        k_rad[i] = -pss / psi[i]
    psi_s[0] = (psi[1] - psi[0]) / (s[1] - s[0])
    psi_s[n - 1] = (psi[n - 1] - psi[n - 2]) / (s[n - 1] - s[n - 2])
    k_rad[0] = _lagrange3(s[1], s[2], s[3], k_rad[1], k_rad[2], k_rad[3], s[0])
    k_rad[n - 1] = _lagrange3(s[n - 4], s[n - 3], s[n - 2],
                              k_rad[n - 4], k_rad[n - 3], k_rad[n - 2], s[n - 1])

    # 1 - psi_s^2 integrated out of the poles, blended with the direct form
    cum = np.empty(n)
    cum[0] = 0.0
    g_prev = 2.0 * psi[0] * psi_s[0] * k_rad[0]
    for i in range(1, n):
        g_i = 2.0 * psi[i] * psi_s[i] * k_rad[i]
        cum[i] = cum[i - 1] + 0.5 * (g_i + g_prev) * (s[i] - s[i - 1])
        g_prev = g_i
    cum_last = cum[n - 1]
    lam = s[n - 1] - s[0]
    for i in range(1, n - 1):
        d_lo = (s[i] - s[0]) / lam
        d_hi = (s[n - 1] - s[i]) / lam
        w_lo = min(max((0.10 - d_lo) / 0.05, 0.0), 1.0)
        w_hi = min(max((0.10 - d_hi) / 0.05, 0.0), 1.0)
        e_direct = 1.0 - psi_s[i] * psi_s[i]
        e = (w_lo * cum[i] + w_hi * (cum[i] - cum_last)
             + (1.0 - w_lo - w_hi) * e_direct)
        k_sph[i] = e / (psi[i] * psi[i])
    k_sph[0] = _lagrange3(s[1], s[2], s[3], k_sph[1], k_sph[2], k_sph[3], s[0])
    k_sph[n - 1] = _lagrange3(s[n - 4], s[n - 3], s[n - 2],
                              k_sph[n - 4], k_sph[n - 3], k_sph[n - 2], s[n - 1])
    pole_lo = 0.5 * (k_rad[0] + k_sph[0])
    pole_hi = 0.5 * (k_rad[n - 1] + k_sph[n - 1])
    k_rad[0] = pole_lo
    k_sph[0] = pole_lo
    k_rad[n - 1] = pole_hi
    k_sph[n - 1] = pole_hi


@njit(cache=True)
def _arclength(x, phi, s):
    s[0] = 0.0
    for i in range(1, x.size):
        s[i] = s[i - 1] + 0.5 * (phi[i] + phi[i - 1]) * (x[i] - x[i - 1])


@njit(cache=True)
def _bad_state(phi, psi):
    n = phi.size
    for i in range(n):
        if not (np.isfinite(phi[i]) and np.isfinite(psi[i])):
            return True
        if phi[i] <= 0.0:
            return True
    for i in range(1, n - 1):
        if psi[i] <= 0.0:
            return True
    return False


@njit(cache=True)
def flow_chunk(x, phi, psi, t0, t_max, cfl, reaction_cap,
               r_trig, eps_v, blowup_op, max_steps, rec):
    """Advance up to max_steps Heun steps in place.

    Records one scalar row per visited state.  On a stopping condition the
    final state's row is also recorded.  Returns (status, steps, rows, t).
    """
    n = x.size
    s = np.empty(n)
    s_mid = np.empty(n)
    k_rad = np.empty(n)
    k_sph = np.empty(n)
    k_rad2 = np.empty(n)
    k_sph2 = np.empty(n)
    phi_mid = np.empty(n)
    psi_mid = np.empty(n)
    t = t0
    steps = 0
    rows = 0
    while True:
        _arclength(x, phi, s)
        curvature_odd(s, psi, k_rad, k_sph)

        vol = 0.0
        int_r = 0.0
        int_abs = 0.0
        ds_min = 1e300
        prev_a = 4.0 * np.pi * psi[0] * psi[0]
        prev_r = 4.0 * k_rad[0] + 2.0 * k_sph[0]
        r_min = prev_r
        r_max = prev_r
        op_max = max(abs(2.0 * k_rad[0]), abs(2.0 * k_sph[0]))
        psi_min = 1e300
        for i in range(1, n):
            a_i = 4.0 * np.pi * psi[i] * psi[i]
            r_i = 4.0 * k_rad[i] + 2.0 * k_sph[i]
            ds = s[i] - s[i - 1]
            vol += 0.5 * (a_i + prev_a) * ds
            int_r += 0.5 * (a_i * r_i + prev_a * prev_r) * ds
            int_abs += 0.5 * (a_i * abs(r_i) + prev_a * abs(prev_r)) * ds
            if ds < ds_min:
                ds_min = ds
            if r_i < r_min:
                r_min = r_i
            if r_i > r_max:
                r_max = r_i
            op_i = max(abs(2.0 * k_rad[i]), abs(2.0 * k_sph[i]))
            if op_i > op_max:
                op_max = op_i
            if i < n - 1 and psi[i] < psi_min:
                psi_min = psi[i]
            prev_a = a_i
            prev_r = r_i

        rec[rows, 0] = t
        rec[rows, 1] = vol
        rec[rows, 2] = r_min
        rec[rows, 3] = r_max
        rec[rows, 4] = psi_min
        rec[rows, 5] = int_r
        rec[rows, 6] = int_abs
        rec[rows, 7] = op_max
        rows += 1

        if vol < eps_v:
            return EXTINCT, steps, rows, t
        if op_max > blowup_op:
            return BLOWUP, steps, rows, t
        if r_max >= r_trig:
            return SURGERY, steps, rows, t
        if t >= t_max - 1e-15:
            return T_MAX, steps, rows, t
        if steps >= max_steps:
            return CHUNK_DONE, steps, rows - 1, t  # caller re-records this state

        dt_stable = cfl * min(0.5 * ds_min * ds_min, reaction_cap / max(op_max, 1e-300))
        dt = min(dt_stable, t_max - t)
        dt_floor = 1e-15 * max(t_max, 1.0)
        while True:
            ok = True
            for i in range(n):
                phi_mid[i] = phi[i] - dt * 2.0 * k_rad[i] * phi[i]
                psi_mid[i] = psi[i] - dt * (k_rad[i] + k_sph[i]) * psi[i]
            if _bad_state(phi_mid, psi_mid):
                ok = False
            if ok:
                _arclength(x, phi_mid, s_mid)
                curvature_odd(s_mid, psi_mid, k_rad2, k_sph2)
                for i in range(n):
                    d1p = -2.0 * k_rad[i] * phi[i]
                    d1q = -(k_rad[i] + k_sph[i]) * psi[i]
                    d2p = -2.0 * k_rad2[i] * phi_mid[i]
                    d2q = -(k_rad2[i] + k_sph2[i]) * psi_mid[i]
                    phi_mid[i] = phi[i] + 0.5 * dt * (d1p + d2p)
                    psi_mid[i] = psi[i] + 0.5 * dt * (d1q + d2q)
                if _bad_state(phi_mid, psi_mid):
                    ok = False
            if ok:
                for i in range(n):
                    phi[i] = phi_mid[i]
                    psi[i] = psi_mid[i]
                break
            dt *= 0.5
            if dt < dt_floor:
                return DT_UNDERFLOW, steps, rows, t
        t += dt
        steps += 1
