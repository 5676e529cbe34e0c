"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

The campaign criteria share one paired flux/voltage desk campaign
(20 units x 300 operations each); expect a few minutes of runtime.
"""
import dataclasses
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from relaysoft.campaign import CampaignConfig, run_campaign, run_compare
from relaysoft.feedforward import FeedforwardConfig, flux_reference
from relaysoft.flux_loop import (PIGains, closed_loop_eigenvalues, closed_loop_matrix,
                                 linear_step_response, plant_coefficient, settling_time)
from relaysoft.plant import AudioModel, ControlMode, SimConfig, run_operation, standard_stack
from relaysoft.r2r import encode, nm_init, nm_next_candidate, nm_update
from relaysoft.relay_core import default_relay, gap_reluctance, gap_reluctance_grad, mech_derivatives
from relaysoft.trajectory import BoundarySpec, Direction, eval_reference, make_reference

RELAY = default_relay()
QUIET = SimConfig(audio=AudioModel(noise_sigma=0.0))


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    t = time.perf_counter()
    flux, volt = run_compare(CampaignConfig(), workers=1, output_dir=out)
    return flux, volt, out, time.perf_counter() - t


def _pooled_median(result, first, last):
    return float(np.median([o.cost_norm for t in result.trials
                            for o in t.operations if first <= o.operation <= last]))


def test_1_trajectory_boundary_conditions(report):
    t = time.perf_counter()
    worst = 0.0
    stroke = RELAY.geometry.theta_max
    for d in Direction:
        b = BoundarySpec.for_operation(RELAY.geometry, d, 6.5e-3, 8e-3)
        traj = make_reference(b)
        for coeffs, (start, stop) in ((traj.segment1, (b.theta0, b.thetac)),
                                      (traj.segment2, (b.thetac, b.thetaf))):
            # position, velocity and acceleration in normalised time at both segment ends
            poly = np.polynomial.Polynomial(coeffs)
            residuals = [poly(0.0) - start, poly(1.0) - stop,
                         poly.deriv(1)(0.0), poly.deriv(1)(1.0),
                         poly.deriv(2)(0.0), poly.deriv(2)(1.0)]
            worst = max(worst, max(abs(r) for r in residuals) / stroke)
        # the evaluator holds the endpoints outside [t0, tf]
        for when, pos in ((b.t0 - 1e-3, b.theta0), (b.tf + 1e-3, b.thetaf)):
            th, dth, ddth = eval_reference(traj, when)
            worst = max(worst, abs(th - pos) / stroke, abs(dth), abs(ddth))
    elapsed = time.perf_counter() - t
    report(1, worst < 1e-12 and elapsed < 1.0,
           f"worst boundary residual {worst:.2e} of stroke, {elapsed * 1e3:.1f} ms")


def test_2_flatness_round_trip(report):
    t0 = time.perf_counter()
    cfg = FeedforwardConfig.from_relay(RELAY)
    traj = make_reference(BoundarySpec.for_operation(RELAY.geometry, Direction.MAKING))
    ts = np.linspace(0.0, 8e-3, 801)
    clamped = any(flux_reference(eval_reference(traj, t), cfg)[1] for t in ts)

    def rhs(t, y):
        lam, _ = flux_reference(eval_reference(traj, t), cfg)
        return mech_derivatives(max(y[0], 0.0), y[1], lam, RELAY.mech, RELAY.geometry,
                                RELAY.magnetic)

    sol = solve_ivp(rhs, (0.0, 8e-3), [RELAY.geometry.theta_max, 0.0], method="DOP853",
                    rtol=1e-10, atol=1e-14, t_eval=ts, max_step=2e-5)
    theta_d = np.array([eval_reference(traj, t)[0] for t in ts])
    err = np.max(np.abs(sol.y[0] - theta_d)) / RELAY.geometry.theta_max
    slam = run_operation(standard_stack(RELAY), RELAY, "making", QUIET).first_impact_speed()
    terminal = abs(sol.y[1][-1]) / slam
    elapsed = time.perf_counter() - t0
    report(2, (not clamped) and err < 1e-3 and terminal < 0.02 and elapsed < 10,
           f"max tracking error {err:.2e} of stroke, terminal speed {terminal:.2e} of the "
           f"{slam:.2f} rad/s uncontrolled impact, {elapsed:.2f} s")


def test_3_closed_loop_eigenvalues(report):
    rng = np.random.default_rng(2024)
    worst, stable = 0.0, True
    for a, kp, ki in np.exp(rng.uniform(np.log(1e-2), np.log(1e6), size=(1000, 3))):
        g = PIGains(kp, ki)
        analytic = sorted(closed_loop_eigenvalues(a, g), key=lambda z: (z.real, z.imag))
        numeric = sorted(np.linalg.eigvals(closed_loop_matrix(a, g)),
                         key=lambda z: (z.real, z.imag))
        scale = max(abs(z) for z in numeric)
        worst = max(worst, max(abs(x - y) for x, y in zip(analytic, numeric)) / scale)
        stable &= all(z.real < 0 for z in analytic)
    t = np.linspace(0, 10e-3, 20001)
    y = linear_step_response(600.0, PIGains(), t, lam_d=0.02)
    ss = abs(y[-1] - 0.02) / 0.02
    report(3, worst < 1e-9 and stable and ss < 1e-3,
           f"eigenvalue mismatch {worst:.1e} (relative), all stable={stable}, "
           f"steady-state error {ss:.1e}")


def test_4_pi_settling(report):
    traj = make_reference(BoundarySpec.for_operation(RELAY.geometry, Direction.MAKING))
    cfg = FeedforwardConfig.from_relay(RELAY)
    P = RELAY.as_array()
    t = np.linspace(0, 10e-3, 20001)
    settle = []
    for when in np.linspace(0, 8e-3, 9):
        ref = eval_reference(traj, when)
        a = plant_coefficient(ref[0], flux_reference(ref, cfg)[0], P)
        settle.append(settling_time(t, linear_step_response(a, PIGains(), t, 1.0), 1.0))
    report(4, max(settle) < 2e-3,
           f"5% settling {min(settle) * 1e3:.3f}-{max(settle) * 1e3:.3f} ms over plant "
           f"coefficients along the making stroke")


def test_5_gradient_check(report):
    m = RELAY.magnetic
    worst = 0.0
    for th in np.linspace(1e-4, RELAY.geometry.theta_max, 100):
        h = 1e-6 * th
        fd = (gap_reluctance(th + h, m) - gap_reluctance(th - h, m)) / (2 * h)
        worst = max(worst, abs(gap_reluctance_grad(th, m) - fd) / abs(fd))
    report(5, worst < 1e-6, f"worst relative error {worst:.1e} over 100 points")


def test_6_simulator_convergence(report):
    stack = standard_stack(RELAY)
    a = run_operation(stack, RELAY, "making", QUIET)
    b = run_operation(stack, RELAY, "making", dataclasses.replace(QUIET, integration_step=5e-7))
    ya, yb = np.array(a.audit["final_state"]), np.array(b.audit["final_state"])
    scales = np.array([RELAY.geometry.theta_max, a.first_impact_speed(), abs(ya[2])])
    change = float(np.max(np.abs(ya - yb) / scales))
    audits = [a.energy_residual(), b.energy_residual()]
    for mode in ControlMode:
        stack_m = dataclasses.replace(stack, mode=mode)
        for d in Direction:
            audits.append(run_operation(stack_m, RELAY, d, QUIET).energy_residual())
    report(6, change < 1e-4 and max(audits) < 1e-6,
           f"terminal state change {change:.1e} on halving the step, worst energy "
           f"residual {max(audits):.1e} over {len(audits)} operations")


def test_7_campaign_learning(report, desk):
    flux, _, _, elapsed = desk
    med, p90 = flux.stats.median_curve(), flux.stats.level_curve(90)
    first_med = int(np.argmax(med < 1.0)) + 1 if (med < 1.0).any() else None
    first_p90 = int(np.argmax(p90 < 1.0)) + 1 if (p90 < 1.0).any() else None
    learn = np.median(med[90:100]) / np.median(med[:10])
    ok = first_med is not None and first_med <= 100 and first_p90 is not None and first_p90 <= 200
    report(7, ok, f"median below 1 from operation {first_med}, p90 from {first_p90}; "
                  f"median ops 91-100 is {learn:.2f}x ops 1-10 "
                  f"(start {med[0]:.3f}, end {med[-1]:.3f}); paired campaigns {elapsed:.0f} s")


def test_8_resistance_step_robustness(report, desk):
    flux, volt, _, _ = desk
    f_before, f_after = _pooled_median(flux, 201, 250), _pooled_median(flux, 251, 300)
    v_before, v_after = _pooled_median(volt, 201, 250), _pooled_median(volt, 251, 300)
    f_change = abs(f_after / f_before - 1)
    v_change = v_after / v_before - 1
    vmed = volt.stats.median_curve()
    ok = f_change < 0.15 and v_change > f_change and vmed[250] > vmed[249]
    report(8, ok, f"flux median {f_before:.4f} -> {f_after:.4f} ({f_change:+.1%}), voltage "
                  f"{v_before:.4f} -> {v_after:.4f} ({v_change:+.1%}), voltage op 250 "
                  f"{vmed[249]:.4f} vs op 251 {vmed[250]:.4f}")


def test_9_optimizer_sanity(report):
    p0 = RELAY.param_vector()
    # optimum one initial simplex step away in every log coordinate
    target = encode(p0) + 0.15

    def run(seed, noise):
        rng = np.random.default_rng(seed)
        st = nm_init(p0)
        for _ in range(300):
            x = encode(nm_next_candidate(st))
            f = float(np.sum((x - target) ** 2))
            nm_update(st, f * (1 + noise * rng.standard_normal()) if noise else f)
        return np.array(st.best_history)

    det = run(0, 0.0)
    reduction = det[8] / det[-1]
    noisy = np.array([run(seed, 0.1) for seed in range(50)])
    windows = [float(np.median(noisy[:, k:k + 50])) for k in range(0, 300, 50)]
    monotone = all(b < a for a, b in zip(windows, windows[1:]))
    report(9, reduction >= 100 and monotone,
           f"deterministic reduction {reduction:.1e}x; noisy windowed medians "
           + ", ".join(f"{w:.1e}" for w in windows))


def test_10_determinism(report, desk, tmp_path):
    flux, _, out, _ = desk
    run_campaign(flux.config, workers=2, output_dir=tmp_path)
    first = sorted(p.relative_to(out / "flux") for p in (out / "flux").rglob("*.csv"))
    second = sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*.csv"))
    same = first == second and all((out / "flux" / f).read_bytes() == (tmp_path / f).read_bytes()
                                   for f in first)
    report(10, same and len(first) > 0,
           f"{len(first)} CSV files byte-identical between 1 and 2 workers")
