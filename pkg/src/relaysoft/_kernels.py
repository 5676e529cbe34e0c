"""Compiled scalar kernels shared by the public API and the operation loop.

Everything here works on plain floats and flat float64 arrays so numba can
compile it. Out-of-domain inputs produce ``inf``/``nan`` instead of raising;
the typed wrappers in :mod:`relaysoft.relay_core` check domains first.

Model array layout (``P``), used both for the plant and for the
feedforward's internal model::

    0 g_c0   1 lambda_sat   2 g_g0   3 g_g0_slope   4 kappa1   5 kappa2
    6 J      7 k1           8 k2     9 k3           10 c
    11 theta_max  12 theta_nc  13 theta_no  14 R

Trajectory array layout (``T``)::

    0 t0  1 tc  2 tf  3..8 segment-1 coeffs  9..14 segment-2 coeffs

Coefficients are in normalised time s = (t - t_start) / (t_end - t_start).
"""
import math

import numpy as np
from numba import njit

GC0, LSAT, GG0, GSLOPE, KAP1, KAP2 = 0, 1, 2, 3, 4, 5
J, K1, K2, K3, C = 6, 7, 8, 9, 10
THMAX, THNC, THNO, RES = 11, 12, 13, 14
N_MODEL = 15

# below this the theta*ln(kappa2/theta) product is replaced by its limit
THETA_EPS = 1e-12

EV_STOP_LOW, EV_STOP_HIGH, EV_TOUCH_NO, EV_TOUCH_NC = 0, 1, 2, 3

MODE_FLUX, MODE_VOLTAGE, MODE_STANDARD, MODE_IDEAL = 0, 1, 2, 3

STATUS_OK, STATUS_SATURATED, STATUS_EVENT_OVERFLOW = 0, 1, 2

# control array layout (``Q``)
Q_FLOOR, Q_HOLD_GAIN, Q_HOLD_RAMP, Q_KP, Q_KI = 0, 1, 2, 3, 4
Q_UMIN, Q_UMAX, Q_RHAT, Q_SUPPLY, Q_DTDIFF = 5, 6, 7, 8, 9
Q_PREVIEW = 10
N_CTRL = 11


# --------------------------------------------------------------------------
# constitutive relations
# --------------------------------------------------------------------------

@njit(cache=True)
def core_rel(lam, g_c0, lam_sat):
    den = 1.0 - abs(lam) / lam_sat
    if den <= 0.0:
        return math.inf
    return g_c0 / den


@njit(cache=True)
def fringe_den(theta, kappa1, kappa2):
    if theta < THETA_EPS:
        return 1.0
    return 1.0 + kappa1 * theta * math.log(kappa2 / theta)


@njit(cache=True)
def gap_rel(theta, g_g0, slope, kappa1, kappa2):
    return g_g0 + slope * theta / fringe_den(theta, kappa1, kappa2)


@njit(cache=True)
def gap_grad(theta, slope, kappa1, kappa2):
    d = fringe_den(theta, kappa1, kappa2)
    return slope * (1.0 + kappa1 * theta) / (d * d)


@njit(cache=True)
def elastic(theta, k1, k2, k3, th_max, th_nc, th_no):
    if theta > th_nc:
        return k1 * (th_max - theta)
    if theta >= th_no:
        return k1 * (th_max - theta) + k2 * (th_nc - theta)
    return k1 * (th_max - theta) + k2 * (th_nc - th_no) + k3 * (th_no - theta)


@njit(cache=True)
def elastic_energy(theta, k1, k2, k3, th_max, th_nc, th_no):
    """Potential stored in the springs, zero at theta_max (dV/dtheta = -torque)."""
    v = 0.5 * k1 * (th_max - theta) ** 2
    if theta < th_nc:
        lo = max(theta, th_no)
        v += 0.5 * k2 * (th_nc - lo) ** 2
        if theta < th_no:
            v += k2 * (th_nc - th_no) * (th_no - theta)
    if theta < th_no:
        v += 0.5 * k3 * (th_no - theta) ** 2
    return v


@njit(cache=True)
def current(theta, lam, P):
    g = core_rel(lam, P[GC0], P[LSAT]) + gap_rel(theta, P[GG0], P[GSLOPE], P[KAP1], P[KAP2])
    return g * lam


@njit(cache=True)
def mag_torque(theta, lam, P):
    return -0.5 * gap_grad(theta, P[GSLOPE], P[KAP1], P[KAP2]) * lam * lam


@njit(cache=True)
def accel(theta, omega, lam, P):
    tq = (mag_torque(theta, lam, P)
          + elastic(theta, P[K1], P[K2], P[K3], P[THMAX], P[THNC], P[THNO])
          - P[C] * omega)
    return tq / P[J]


@njit(cache=True)
def mech_energy(theta, omega, P):
    return 0.5 * P[J] * omega * omega + elastic_energy(
        theta, P[K1], P[K2], P[K3], P[THMAX], P[THNC], P[THNO])


# --------------------------------------------------------------------------
# trajectory
# --------------------------------------------------------------------------

@njit(cache=True)
def _poly(c0, c1, c2, c3, c4, c5, s, span):
    pos = c0 + s * (c1 + s * (c2 + s * (c3 + s * (c4 + s * c5))))
    vel = c1 + s * (2.0 * c2 + s * (3.0 * c3 + s * (4.0 * c4 + s * 5.0 * c5)))
    acc = 2.0 * c2 + s * (6.0 * c3 + s * (12.0 * c4 + s * 20.0 * c5))
    return pos, vel / span, acc / (span * span)


@njit(cache=True)
def eval_ref(T, t):
    t0, tc, tf = T[0], T[1], T[2]
    if t <= t0:
        return T[3], 0.0, 0.0
    if t >= tf:
        return T[9] + T[10] + T[11] + T[12] + T[13] + T[14], 0.0, 0.0
    if t < tc:
        span = tc - t0
        x, v, a = _poly(T[3], T[4], T[5], T[6], T[7], T[8], (t - t0) / span, span)
    else:
        span = tf - tc
        x, v, a = _poly(T[9], T[10], T[11], T[12], T[13], T[14], (t - tc) / span, span)
    return x, v, a


# --------------------------------------------------------------------------
# feedforward
# --------------------------------------------------------------------------

@njit(cache=True)
def flux_ref(theta, dtheta, ddtheta, M, floor):
    """Returns (lambda_d, clamped)."""
    rad = (elastic(theta, M[K1], M[K2], M[K3], M[THMAX], M[THNC], M[THNO])
           - M[C] * dtheta - M[J] * ddtheta)
    clamped = False
    if rad < 0.0:
        rad = floor
        clamped = True
    g = gap_grad(theta, M[GSLOPE], M[KAP1], M[KAP2])
    return math.sqrt(2.0 * rad / g), clamped


@njit(cache=True)
def flux_demand(t, T, M, Q):
    """Flux reference along the trajectory, with the post-trajectory hold ramp."""
    th, dth, ddth = eval_ref(T, t)
    lam, clamped = flux_ref(th, dth, ddth, M, Q[Q_FLOOR])
    tf = T[2]
    if t > tf and Q[Q_HOLD_GAIN] != 1.0:
        if Q[Q_HOLD_RAMP] > 0.0:
            frac = min(1.0, (t - tf) / Q[Q_HOLD_RAMP])
        else:
            frac = 1.0
        lam *= 1.0 + (Q[Q_HOLD_GAIN] - 1.0) * frac
    return lam, clamped, th


@njit(cache=True)
def voltage_demand(t, T, M, Q):
    dt = Q[Q_DTDIFF]
    lp, _, _ = flux_demand(t + dt, T, M, Q)
    lm, _, _ = flux_demand(t - dt, T, M, Q)
    lam, _, th = flux_demand(t, T, M, Q)
    i_d = current(th, lam, M)
    return (lp - lm) / (2.0 * dt) + Q[Q_RHAT] * i_d


# --------------------------------------------------------------------------
# flux loop
# --------------------------------------------------------------------------

@njit(cache=True)
def est_update(lam_hat, v, i_now, i_prev, r_hat, dt):
    return lam_hat + (v - r_hat * 0.5 * (i_now + i_prev)) * dt


@njit(cache=True)
def pi_update(e, sigma, kp, ki, dt, u_min, u_max):
    """Parallel-form PI with conditional integration. Returns (u, sigma)."""
    u = kp * e + ki * sigma
    if u > u_max:
        return u_max, sigma
    if u < u_min:
        return u_min, sigma
    return u, sigma + e * dt


# --------------------------------------------------------------------------
# plant integration
# --------------------------------------------------------------------------

@njit(cache=True)
def _deriv(th, om, lam, u, P):
    dlam = u - P[RES] * current(th, lam, P)
    tm = mag_torque(th, lam, P)
    dom = (tm + elastic(th, P[K1], P[K2], P[K3], P[THMAX], P[THNC], P[THNO])
           - P[C] * om) / P[J]
    return om, dom, dlam, tm * om, P[C] * om * om


@njit(cache=True)
def rk4(th, om, lam, t, h, u, P, forced, T, M, Q):
    """One classical RK4 step of (theta, omega, lambda) plus the two work integrals.

    With ``forced`` the flux is not integrated but imposed as the flux demand.
    """
    if forced:
        l1 = flux_demand(t, T, M, Q)[0]
        l2 = flux_demand(t + 0.5 * h, T, M, Q)[0]
        l4 = flux_demand(t + h, T, M, Q)[0]
    else:
        l1 = l2 = l4 = 0.0
    a1, b1, c1, d1, e1 = _deriv(th, om, l1 if forced else lam, u, P)
    a2, b2, c2, d2, e2 = _deriv(th + 0.5 * h * a1, om + 0.5 * h * b1,
                                l2 if forced else lam + 0.5 * h * c1, u, P)
    a3, b3, c3, d3, e3 = _deriv(th + 0.5 * h * a2, om + 0.5 * h * b2,
                                l2 if forced else lam + 0.5 * h * c2, u, P)
    a4, b4, c4, d4, e4 = _deriv(th + h * a3, om + h * b3,
                                l4 if forced else lam + h * c3, u, P)
    w = h / 6.0
    th1 = th + w * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    om1 = om + w * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    if forced:
        lam1 = l4
    else:
        lam1 = lam + w * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
    wm = w * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    wd = w * (e1 + 2.0 * e2 + 2.0 * e3 + e4)
    return th1, om1, lam1, wm, wd


@njit(cache=True)
def rk4_flux_only(th, lam, h, u, P):
    k1 = u - P[RES] * current(th, lam, P)
    k2 = u - P[RES] * current(th, lam + 0.5 * h * k1, P)
    k3 = u - P[RES] * current(th, lam + 0.5 * h * k2, P)
    k4 = u - P[RES] * current(th, lam + h * k3, P)
    return lam + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _crossings(th0, th1, P):
    mask = 0
    if th1 < 0.0:
        mask |= 1 << EV_STOP_LOW
    if th1 > P[THMAX]:
        mask |= 1 << EV_STOP_HIGH
    if (th0 < P[THNO]) != (th1 < P[THNO]):
        mask |= 1 << EV_TOUCH_NO
    if (th0 > P[THNC]) != (th1 > P[THNC]):
        mask |= 1 << EV_TOUCH_NC
    return mask


@njit(cache=True)
def advance(y, t, h, u, P, restitution, v_stick, forced, T, M, Q,
            ev_t, ev_k, ev_v, n_ev, audit, bisect_tol):
    """Advance ``y = [theta, omega, lambda]`` in place over one sub-step ``h``.

    Hard stops clamp theta and apply Newtonian restitution; contact crossings
    only log an event. ``audit`` accumulates [W_mag, W_damp, impact_loss,
    energy_increase_at_impacts]. Returns (n_ev, status).
    """
    th_max = P[THMAX]
    remaining = h
    tt = t
    guard = 0
    while remaining > 0.0:
        guard += 1
        if guard > 64 and y[1] != 0.0:
            # chattering against a stop: settle it and book the kinetic energy as impact loss
            audit[2] += 0.5 * P[J] * y[1] * y[1]
            y[1] = 0.0
        th, om, lam = y[0], y[1], y[2]
        lam_now = flux_demand(tt, T, M, Q)[0] if forced else lam
        a_rest = accel(th, 0.0, lam_now, P)
        if (th <= 0.0 and om <= 0.0 and a_rest <= 0.0) or (
                th >= th_max and om >= 0.0 and a_rest >= 0.0):
            # resting on a stop: only the flux evolves
            y[1] = 0.0
            if forced:
                y[2] = flux_demand(tt + remaining, T, M, Q)[0]
            else:
                y[2] = rk4_flux_only(th, lam, remaining, u, P)
            if not math.isfinite(y[2]):
                return n_ev, STATUS_SATURATED
            return n_ev, STATUS_OK
        th1, om1, lam1, wm, wd = rk4(th, om, lam, tt, remaining, u, P, forced, T, M, Q)
        if not (math.isfinite(th1) and math.isfinite(om1) and math.isfinite(lam1)):
            return n_ev, STATUS_SATURATED
        mask = _crossings(th, th1, P)
        if mask == 0:
            y[0], y[1], y[2] = th1, om1, lam1
            audit[0] += wm
            audit[1] += wd
            return n_ev, STATUS_OK
        lo, hi = 0.0, remaining
        while hi - lo > bisect_tol:
            mid = 0.5 * (lo + hi)
            thm = rk4(th, om, lam, tt, mid, u, P, forced, T, M, Q)[0]
            if _crossings(th, thm, P) != 0:
                hi = mid
            else:
                lo = mid
        th1, om1, lam1, wm, wd = rk4(th, om, lam, tt, hi, u, P, forced, T, M, Q)
        if not (math.isfinite(th1) and math.isfinite(om1) and math.isfinite(lam1)):
            return n_ev, STATUS_SATURATED
        mask = _crossings(th, th1, P)
        audit[0] += wm
        audit[1] += wd
        tt += hi
        remaining -= hi
        for kind in range(4):
            if not (mask >> kind) & 1:
                continue
            if n_ev >= ev_t.shape[0]:
                return n_ev, STATUS_EVENT_OVERFLOW
            ev_t[n_ev] = tt
            ev_k[n_ev] = kind
            ev_v[n_ev] = abs(om1)
            n_ev += 1
        if mask & ((1 << EV_STOP_LOW) | (1 << EV_STOP_HIGH)):
            e_before = mech_energy(th1, om1, P)
            th1 = 0.0 if mask & (1 << EV_STOP_LOW) else th_max
            om_after = -restitution * om1
            if abs(om1) < v_stick:
                om_after = 0.0
            e_after = mech_energy(th1, om_after, P)
            audit[2] += e_before - e_after
            if e_after > e_before:
                audit[3] += e_after - e_before
            om1 = om_after
        y[0], y[1], y[2] = th1, om1, lam1
    return n_ev, STATUS_OK


@njit(cache=True)
def simulate(P, mode, T, M, Q, y0, n_ctrl, n_sub, t_ctrl, restitution, v_stick,
             bisect_tol, i_noise, v_noise, out, ev_t, ev_k, ev_v, audit, y_final):
    """Run one operation at the control rate.

    ``out`` receives one row per control sample:
    [t, u, i, lambda, lambda_hat, theta, omega, lambda_d, clamped];
    ``y_final`` receives the state reached at the end.
    Returns (n_rows, n_events, status).
    """
    y = y0.copy()
    h = t_ctrl / n_sub
    forced = mode == MODE_IDEAL
    kp, ki = Q[Q_KP], Q[Q_KI]
    u_min, u_max = Q[Q_UMIN], Q[Q_UMAX]
    r_hat = Q[Q_RHAT]
    sigma = 0.0
    # the estimator starts from the known initial flux (zero for a de-energised coil)
    lam_hat = y0[2]
    u_prev = 0.0
    i_prev = 0.0
    n_ev = 0
    for k in range(n_ctrl):
        t = k * t_ctrl
        if forced:
            y[2] = flux_demand(t, T, M, Q)[0]
        i_true = current(y[0], y[2], P)
        i_meas = i_true + i_noise[k]
        if k > 0:
            lam_hat = est_update(lam_hat, u_prev + v_noise[k - 1], i_meas, i_prev, r_hat, t_ctrl)
        lam_d, clamped, _ = flux_demand(t, T, M, Q)
        if mode == MODE_FLUX:
            # the reference is known in advance: aim ahead by a fraction of the period
            lam_next = flux_demand(t + Q[Q_PREVIEW] * t_ctrl, T, M, Q)[0]
            u, sigma = pi_update(lam_next - lam_hat, sigma, kp, ki, t_ctrl, u_min, u_max)
        elif mode == MODE_VOLTAGE:
            u = min(max(voltage_demand(t, T, M, Q), u_min), u_max)
        elif mode == MODE_STANDARD:
            u = min(max(Q[Q_SUPPLY], u_min), u_max)
        else:
            u = math.nan
        out[k, 0] = t
        out[k, 1] = u
        out[k, 2] = i_true
        out[k, 3] = y[2]
        out[k, 4] = lam_hat
        out[k, 5] = y[0]
        out[k, 6] = y[1]
        out[k, 7] = lam_d
        out[k, 8] = 1.0 if clamped else 0.0
        u_apply = 0.0 if forced else u
        for j in range(n_sub):
            n_ev, status = advance(y, t + j * h, h, u_apply, P, restitution, v_stick,
                                   forced, T, M, Q, ev_t, ev_k, ev_v, n_ev, audit,
                                   bisect_tol)
            if status != STATUS_OK:
                y_final[:] = y
                return k + 1, n_ev, status
        u_prev = u_apply
        i_prev = i_meas
    y_final[:] = y
    return n_ctrl, n_ev, STATUS_OK


def empty_traj():
    return np.zeros(15)


def default_ctrl():
    q = np.zeros(N_CTRL)
    q[Q_HOLD_GAIN] = 1.0
    q[Q_UMAX] = math.inf
    q[Q_DTDIFF] = 1e-5
    return q


@njit(cache=True)
def settle_current(theta, u, P, h, n):
    """Current after ``n`` flux-only RK4 steps from a de-energised coil at fixed ``theta``."""
    lam = 0.0
    for _ in range(n):
        lam = rk4_flux_only(theta, lam, h, u, P)
    return current(theta, lam, P), lam
