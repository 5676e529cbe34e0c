import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relaysoft import _kernels as K
from relaysoft.feedforward import FeedforwardConfig
from relaysoft.flux_loop import (ControllerState, PIGains, ProbeError, ProbeResult,
                                 closed_loop_eigenvalues, closed_loop_matrix, estimate_resistance,
                                 flux_estimate_step, linear_step_response, pi_step, settling_time)
from relaysoft.plant import ControlStack, run_operation

TUNED = PIGains()
positive = st.floats(1e-3, 1e6)


def test_resistance_from_ohms_law():
    assert estimate_resistance(ProbeResult(1.0, 1 / 360)) == pytest.approx(360.0)


def test_probe_failure():
    with pytest.raises(ProbeError):
        estimate_resistance(ProbeResult(1.0, 0.0))


@given(st.floats(-0.01, 0.01))
def test_noisy_current_propagates_one_to_one(rel):
    r = estimate_resistance(ProbeResult(1.0, (1 + rel) / 360))
    assert abs(r / 360 - 1) <= abs(rel) / (1 - abs(rel)) + 1e-12


def test_estimator_equilibrium():
    s = ControllerState()
    s.reset(360.0)
    for _ in range(100):
        flux_estimate_step(3.6, 0.01, s, 1e-5)
    assert s.lambda_hat == 0.0


def test_estimator_requires_resistance():
    with pytest.raises(ValueError):
        flux_estimate_step(1.0, 0.0, ControllerState(), 1e-5)


def _matched_flux_run(relay, quiet_cfg, r_hat=None):
    stack = ControlStack("FluxTracking", FeedforwardConfig.from_relay(relay),
                         r_hat or relay.resistance)
    return run_operation(stack, relay, "making", quiet_cfg)


def test_estimator_tracks_true_flux(relay, quiet_cfg):
    rec = _matched_flux_run(relay, quiet_cfg)
    n = 800
    lam, lam_hat = rec.column("lambda")[:n], rec.column("lambda_hat")[:n]
    assert np.max(np.abs(lam_hat - lam)) < 1e-4 * np.max(np.abs(lam))


def test_python_estimator_matches_compiled_loop(relay, quiet_cfg):
    rec = _matched_flux_run(relay, quiet_cfg)
    u, i = rec.column("u"), rec.column("i")
    s = ControllerState()
    s.reset(relay.resistance)
    s.last_current = i[0]
    for k in range(1, 500):
        flux_estimate_step(u[k - 1], i[k], s, 1e-5, method="trapezoid")
        assert s.lambda_hat == pytest.approx(rec.column("lambda_hat")[k], rel=1e-12, abs=1e-15)


def test_resistance_error_bias(relay, quiet_cfg):
    """A +1 % resistance estimate biases the flux estimate by -1 % of the integrated Ohmic drop."""
    rec = _matched_flux_run(relay, quiet_cfg)
    u, i = rec.column("u"), rec.column("i")
    dt, n = 1e-5, 800
    exact, biased = ControllerState(), ControllerState()
    exact.reset(relay.resistance)
    biased.reset(1.01 * relay.resistance)
    for s in (exact, biased):
        s.last_current = i[0]
    ohmic = 0.0
    for k in range(1, n):
        flux_estimate_step(u[k - 1], i[k], exact, dt, "trapezoid")
        flux_estimate_step(u[k - 1], i[k], biased, dt, "trapezoid")
        ohmic += relay.resistance * 0.5 * (i[k] + i[k - 1]) * dt
    bias = biased.lambda_hat - exact.lambda_hat
    assert bias == pytest.approx(-0.01 * ohmic, rel=0.05)


def test_pi_zero_error():
    s = ControllerState()
    assert pi_step(0.0, 0.0, s, TUNED, 1e-5) == 0.0
    assert s.sigma == 0.0


def test_pi_parallel_form():
    s = ControllerState(sigma=1e-7)
    u = pi_step(1e-4, 0.0, s, TUNED, 1e-5)
    assert u == pytest.approx(TUNED.kp * 1e-4 + TUNED.ki * 1e-7)
    assert s.sigma == pytest.approx(1e-7 + 1e-9)


def test_pi_anti_windup_pins_command():
    s = ControllerState()
    for _ in range(1000):
        assert pi_step(1.0, 0.0, s, TUNED, 1e-5) == 35.0
    assert s.sigma == 0.0


@given(st.lists(st.tuples(st.floats(-1e-2, 1e-2), st.floats(-1e-2, 1e-2)), min_size=1, max_size=50))
def test_sigma_frozen_whenever_clamped(steps):
    s = ControllerState()
    for lam_d, lam_hat in steps:
        before = s.sigma
        u = pi_step(lam_d, lam_hat, s, TUNED, 1e-5)
        raw = TUNED.kp * (lam_d - lam_hat) + TUNED.ki * before
        if raw > 35.0 or raw < 0.0:
            assert s.sigma == before and u in (0.0, 35.0)
        assert 0.0 <= u <= 35.0


def test_gains_must_be_positive():
    with pytest.raises(ValueError):
        PIGains(kp=0.0)


def test_critically_damped_boundary():
    e1, e2 = closed_loop_eigenvalues(1.0, PIGains(1.0, 1.0))
    assert e1 == pytest.approx(-1.0) and e2 == pytest.approx(-1.0)


@given(positive, positive, positive)
def test_eigenvalues_match_numeric_solver(a, kp, ki):
    g = PIGains(kp, ki)
    analytic = sorted(closed_loop_eigenvalues(a, g), key=lambda z: (z.real, z.imag))
    numeric = sorted(np.linalg.eigvals(closed_loop_matrix(a, g)), key=lambda z: (z.real, z.imag))
    scale = a + kp + math.sqrt(ki)
    for x, y in zip(analytic, numeric):
        assert abs(x - y) <= 1e-9 * scale
    assert all(z.real < 0 for z in analytic)


def test_small_integral_gain_limit():
    e1, e2 = closed_loop_eigenvalues(10.0, PIGains(5.0, 1e-9))
    assert e2 == pytest.approx(-15.0)
    assert -1e-9 < e1.real < 0


def test_nonpositive_plant_rejected():
    with pytest.raises(ValueError):
        closed_loop_eigenvalues(0.0, TUNED)


def test_linear_loop_reaches_reference():
    a = 200.0
    t = np.linspace(0, 10e-3, 20001)
    y = linear_step_response(a, TUNED, t, lam_d=0.02)
    ts = settling_time(t, y, 0.02)
    assert ts < 2e-3
    assert abs(y[-1] - 0.02) < 1e-3 * 0.02


def test_settling_time_helper():
    t = np.linspace(0, 1, 11)
    y = np.where(t < 0.45, 0.0, 1.0)
    assert settling_time(t, y, 1.0) == pytest.approx(0.5)
    assert settling_time(t, np.ones(11), 1.0) == 0.0
    assert settling_time(t, np.zeros(11), 1.0) == math.inf


def test_tracking_error_outside_saturation(relay, quiet_cfg):
    rec = _matched_flux_run(relay, quiet_cfg)
    n = 800
    u = rec.column("u")[:n]
    lam, lam_d = rec.column("lambda")[:n], rec.column("lambda_d")[:n]
    free = (u > 0.0) & (u < 35.0)
    assert np.max(np.abs(lam - lam_d)[free]) < 0.03 * np.max(lam_d)


def test_kernel_pi_matches_contract():
    u, sigma = K.pi_update(1e-5, 2e-8, 100.0, 1e3, 1e-5, 0.0, 35.0)
    assert u == pytest.approx(100 * 1e-5 + 1e3 * 2e-8)
    assert sigma == pytest.approx(2e-8 + 1e-10)
