"""Hybrid simulation of one relay operation, synthetic microphone and unit variability."""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _kernels as K
from .feedforward import FeedforwardConfig
from .flux_loop import PIGains, ProbeError, ProbeResult
from .relay_core import Geometry, MagneticParams, MechParams, RelayParams
from .trajectory import BoundarySpec, Direction, TrajectorySpec, make_reference


class SimulationError(RuntimeError):
    """Raised when an operation cannot be completed; ``record`` holds what was simulated."""

    def __init__(self, message: str, record: OperationRecord | None = None):
        super().__init__(message)
        self.record = record


class Stage(str, enum.Enum):
    FREE = "Free"
    CONTACT_PUSHED = "ContactPushed"
    CONTACT_DEFORMING = "ContactDeforming"


def stage_of(theta: float, geo: Geometry) -> Stage:
    if theta > geo.theta_nc:
        return Stage.FREE
    if theta >= geo.theta_no:
        return Stage.CONTACT_PUSHED
    return Stage.CONTACT_DEFORMING


class EventKind(str, enum.Enum):
    STOP_LOW = "ArmatureStopLow"
    STOP_HIGH = "ArmatureStopHigh"
    TOUCH_NO = "ContactTouchNO"
    TOUCH_NC = "ContactTouchNC"

    @property
    def is_stop(self) -> bool:
        return self in (EventKind.STOP_LOW, EventKind.STOP_HIGH)


_KIND_FROM_CODE = {
    K.EV_STOP_LOW: EventKind.STOP_LOW,
    K.EV_STOP_HIGH: EventKind.STOP_HIGH,
    K.EV_TOUCH_NO: EventKind.TOUCH_NO,
    K.EV_TOUCH_NC: EventKind.TOUCH_NC,
}


@dataclass(frozen=True)
class PlantState:
    theta: float
    omega: float
    lam: float
    time: float = 0.0
    stage: Stage | None = None

    def with_stage(self, geo: Geometry) -> PlantState:
        return replace(self, stage=stage_of(self.theta, geo))


@dataclass(frozen=True)
class ImpactEvent:
    time: float
    kind: EventKind
    impact_speed: float


@dataclass(frozen=True)
class AudioModel:
    burst_gain: float = 1.0
    burst_frequency: float = 5e3
    burst_decay: float = 1e-3
    contact_gain: float = 0.3
    noise_sigma: float = 0.05
    sample_rate: float = 50e3

    def __post_init__(self):
        if not (self.burst_decay > 0 and self.sample_rate > 0 and self.noise_sigma >= 0):
            raise ValueError(f"invalid audio model {self}")


@dataclass(frozen=True)
class SimConfig:
    integration_step: float = 1e-6
    control_period: float = 1e-5
    duration: float = 15e-3
    restitution_armature: float = 0.3
    stick_speed: float = 1e-4       # rebounds slower than this end in contact, rad/s
    event_tolerance: float = 1e-9
    supply_voltage: float = 24.0
    current_noise: float = 0.0      # additive current measurement noise, A
    voltage_noise: float = 0.0      # additive actuator voltage noise, V
    probe_voltage: float = 1.0
    probe_current_noise: float = 0.0
    max_events: int = 256
    audio: AudioModel = field(default_factory=AudioModel)
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.integration_step > 0 and self.supply_voltage > 0 and self.duration > 0):
            raise ValueError(f"invalid sim config {self}")
        if not 0 <= self.restitution_armature < 1:
            raise ValueError("restitution_armature must be in [0, 1)")
        if abs(self.n_sub * self.integration_step - self.control_period) > 1e-9 * self.control_period:
            raise ValueError("control_period must be an integer multiple of integration_step")

    @property
    def n_sub(self) -> int:
        return max(1, int(round(self.control_period / self.integration_step)))

    @property
    def n_ctrl(self) -> int:
        return int(round(self.duration / self.control_period))


@dataclass(frozen=True)
class AudioRecord:
    sample_rate: float
    samples: np.ndarray
    start_time: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.samples)) / self.sample_rate


# --------------------------------------------------------------------------
# continuous dynamics
# --------------------------------------------------------------------------

def _events_from(ev_t, ev_k, ev_v, n) -> list[ImpactEvent]:
    return [ImpactEvent(float(ev_t[j]), _KIND_FROM_CODE[int(ev_k[j])], float(ev_v[j]))
            for j in range(n)]


def step(state: PlantState, u: float, dt: float, params: RelayParams,
         cfg: SimConfig = SimConfig()) -> tuple[PlantState, list[ImpactEvent]]:
    """Advance the plant by ``dt`` at constant voltage ``u``, sub-stepping at the integration step."""
    n_sub = int(round(dt / cfg.integration_step))
    if n_sub < 1 or abs(n_sub * cfg.integration_step - dt) > 1e-9 * dt:
        raise ValueError(f"dt={dt} is not a multiple of the integration step")
    P = params.as_array()
    y = np.array([state.theta, state.omega, state.lam], dtype=float)
    h = dt / n_sub
    ev_t, ev_k, ev_v = np.zeros(cfg.max_events), np.zeros(cfg.max_events, np.int64), np.zeros(cfg.max_events)
    audit = np.zeros(4)
    n_ev = 0
    dummy_T, dummy_Q = K.empty_traj(), K.default_ctrl()
    for j in range(n_sub):
        n_ev, status = K.advance(y, state.time + j * h, h, float(u), P, cfg.restitution_armature,
                                 cfg.stick_speed, False, dummy_T, P, dummy_Q,
                                 ev_t, ev_k, ev_v, n_ev, audit, cfg.event_tolerance)
        if status != K.STATUS_OK:
            raise SimulationError(f"integration failed at t={state.time + j * h:.6g} s "
                                  f"(status {status}); flux reached saturation?")
    new = PlantState(float(y[0]), float(y[1]), float(y[2]), state.time + dt)
    return new.with_stage(params.geometry), _events_from(ev_t, ev_k, ev_v, n_ev)


# --------------------------------------------------------------------------
# microphone
# --------------------------------------------------------------------------

def burst_amplitude(event: ImpactEvent, model: AudioModel) -> float:
    gain = model.burst_gain if event.kind.is_stop else model.contact_gain
    return gain * event.impact_speed


def synth_audio(events, window: tuple[float, float], cfg: SimConfig | AudioModel,
                rng: np.random.Generator | None = None) -> AudioRecord:
    """Damped-sinusoid bursts at each event plus white noise, sampled over ``window = (t0, length)``."""
    model = cfg.audio if isinstance(cfg, SimConfig) else cfg
    t0, length = window
    if not length > 0:
        raise ValueError("audio window length must be > 0")
    n = int(round(length * model.sample_rate))
    t = t0 + np.arange(n) / model.sample_rate
    x = np.zeros(n)
    for ev in events:
        tau = t - ev.time
        on = tau >= 0
        x[on] += (burst_amplitude(ev, model) * np.exp(-tau[on] / model.burst_decay)
                  * np.sin(2 * np.pi * model.burst_frequency * tau[on]))
    if model.noise_sigma > 0:
        if rng is None:
            raise ValueError("a generator is required when noise_sigma > 0")
        x += model.noise_sigma * rng.standard_normal(n)
    return AudioRecord(model.sample_rate, x, t0)


def audio_energy(audio: AudioRecord, t0: float, length: float) -> float:
    """Riemann sum of ``u_audio**2`` over ``[t0, t0 + length)`` at the audio sample rate."""
    fs = audio.sample_rate
    first = int(round((t0 - audio.start_time) * fs))
    n = int(round(length * fs))
    if first < 0 or first + n > len(audio.samples):
        raise ValueError(f"audio [{audio.start_time}, +{len(audio.samples) / fs}] s "
                         f"does not cover the window [{t0}, +{length}] s")
    seg = audio.samples[first:first + n]
    return float(np.dot(seg, seg) / fs)


# --------------------------------------------------------------------------
# resistance probe and variability
# --------------------------------------------------------------------------

def probe_resistance(params: RelayParams, probe_voltage: float, cfg: SimConfig = SimConfig(),
                     rng: np.random.Generator | None = None) -> ProbeResult:
    """Apply a small constant voltage at rest and read the settled current.

    The armature counts as unmoved when the settled magnetic torque stays
    below the spring torque at the first contact, ``k1 * (theta_max - theta_nc)``.
    """
    if not probe_voltage > 0:
        raise ProbeError("probe voltage must be positive")
    P = params.as_array()
    geo = params.geometry
    # the slowest electrical time constant of the open relay bounds the settling
    a = params.resistance * (params.magnetic.g_c0 + K.gap_rel(
        geo.theta_max, params.magnetic.g_g0, params.magnetic.g_g0_slope,
        params.magnetic.kappa1, params.magnetic.kappa2))
    h = 0.05 / a
    i_ss, lam = K.settle_current(geo.theta_max, probe_voltage, P, h, 800)
    torque = abs(K.mag_torque(geo.theta_max, lam, P))
    margin = params.mech.k1 * (geo.theta_max - geo.theta_nc)
    if not math.isfinite(i_ss) or torque >= margin:
        raise ProbeError(f"probe of {probe_voltage} V would move the armature "
                         f"(torque {torque:.3g} N m >= margin {margin:.3g} N m)")
    if cfg.probe_current_noise > 0:
        if rng is None:
            raise ValueError("a generator is required for noisy probing")
        i_ss += cfg.probe_current_noise * rng.standard_normal()
    return ProbeResult(probe_voltage, float(i_ss))


_FIELD_GROUPS = (("magnetic", MagneticParams), ("mech", MechParams), ("geometry", Geometry))


def param_field_names() -> tuple[str, ...]:
    names = [f.name for _, cls in _FIELD_GROUPS for f in fields(cls)]
    return (*names, "resistance")


def perturb_params(nominal: RelayParams, spread: float | Mapping[str, float],
                   rng_seed: int | np.random.SeedSequence | np.random.Generator) -> RelayParams:
    """Multiply every parameter by ``exp(sigma * z)``; ``spread`` is one sigma or one per field.

    Geometry draws that break ``theta_no < theta_nc < theta_max`` are redrawn.
    """
    names = param_field_names()
    if isinstance(spread, Mapping):
        unknown = set(spread) - set(names)
        if unknown:
            raise ValueError(f"unknown parameter names in spread: {sorted(unknown)}")
        sig = {n: float(spread.get(n, 0.0)) for n in names}
    else:
        sig = {n: float(spread) for n in names}
    if any(s < 0 for s in sig.values()):
        raise ValueError("spreads must be >= 0")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    def draw(group, cls):
        obj = getattr(nominal, group)
        return {f.name: getattr(obj, f.name) * math.exp(sig[f.name] * rng.standard_normal())
                for f in fields(cls)}

    mag = MagneticParams(**draw("magnetic", MagneticParams))
    mech = MechParams(**draw("mech", MechParams))
    while True:
        g = draw("geometry", Geometry)
        if 0 < g["theta_no"] < g["theta_nc"] < g["theta_max"]:
            break
    r = nominal.resistance * math.exp(sig["resistance"] * rng.standard_normal())
    return RelayParams(mag, mech, Geometry(**g), r)


# --------------------------------------------------------------------------
# control stack and full operations
# --------------------------------------------------------------------------

class ControlMode(str, enum.Enum):
    FLUX_TRACKING = "FluxTracking"
    VOLTAGE_FEEDFORWARD = "VoltageFeedforward"
    STANDARD = "Standard"
    IDEAL_TRACKING = "IdealTracking"


_MODE_CODE = {
    ControlMode.FLUX_TRACKING: K.MODE_FLUX,
    ControlMode.VOLTAGE_FEEDFORWARD: K.MODE_VOLTAGE,
    ControlMode.STANDARD: K.MODE_STANDARD,
    ControlMode.IDEAL_TRACKING: K.MODE_IDEAL,
}


@dataclass(frozen=True)
class ControlStack:
    """Everything the controller knows during one operation.

    ``r_hat`` is the resistance used by the flux estimator (flux mode) or by
    the Ohmic term of the voltage demand (voltage mode). After ``tf`` the
    flux demand is raised linearly by ``hold_gain`` over ``hold_ramp`` to
    keep the armature firmly closed.
    """

    mode: ControlMode
    feedforward: FeedforwardConfig
    r_hat: float
    gains: PIGains = PIGains()
    v_limits: tuple[float, float] = (0.0, 35.0)
    tc: float = 6.5e-3
    tf: float = 8e-3
    hold_gain: float = 1.2
    hold_ramp: float = 3e-3
    estimator: str = "trapezoid"

    def __post_init__(self):
        object.__setattr__(self, "mode", ControlMode(self.mode))
        if not self.r_hat > 0:
            raise ValueError(f"r_hat must be positive, got {self.r_hat}")
        if self.estimator != "trapezoid":
            raise ValueError("the compiled loop implements the trapezoidal estimator only")

    def trajectory(self, direction: Direction | str) -> TrajectorySpec:
        return make_reference(BoundarySpec.for_operation(
            self.feedforward.geometry, direction, self.tc, self.tf))

    def ctrl_array(self, supply: float) -> np.ndarray:
        q = K.default_ctrl()
        q[K.Q_FLOOR] = self.feedforward.radicand_floor
        q[K.Q_HOLD_GAIN] = self.hold_gain
        q[K.Q_HOLD_RAMP] = self.hold_ramp
        q[K.Q_KP] = self.gains.kp
        q[K.Q_KI] = self.gains.ki
        q[K.Q_UMIN], q[K.Q_UMAX] = self.v_limits
        q[K.Q_RHAT] = self.r_hat
        q[K.Q_SUPPLY] = supply
        return q

    def model_array(self) -> np.ndarray:
        m = self.feedforward.model_array()
        m[K.RES] = self.r_hat
        return m


SERIES_COLUMNS = ("t", "u", "i", "lambda", "lambda_hat", "theta", "omega", "lambda_d", "clamped")


@dataclass
class OperationRecord:
    series: np.ndarray                  # one row per control sample, SERIES_COLUMNS
    events: list[ImpactEvent]
    audio: AudioRecord | None
    cost: float
    resistance_true: float
    operation_index: int = 0
    mode: ControlMode = ControlMode.STANDARD
    direction: Direction = Direction.MAKING
    audit: dict = field(default_factory=dict)
    status: str = "ok"

    def column(self, name: str) -> np.ndarray:
        return self.series[:, SERIES_COLUMNS.index(name)]

    @property
    def stages(self) -> list[Stage]:
        geo = Geometry(*self.audit["geometry"])
        return [stage_of(th, geo) for th in self.column("theta")]

    @property
    def final_state(self) -> PlantState:
        y = self.audit["final_state"]
        return PlantState(y[0], y[1], y[2], self.audit["final_time"])

    def stop_events(self) -> list[ImpactEvent]:
        return [e for e in self.events if e.kind.is_stop]

    def first_impact_speed(self) -> float:
        stops = self.stop_events()
        return stops[0].impact_speed if stops else 0.0

    def energy_residual(self) -> float:
        """Mechanical energy change minus the booked work and losses, relative to the work scale."""
        a = self.audit
        change = a["E_final"] - a["E_initial"]
        booked = a["W_mag"] - a["W_damp"] - a["impact_loss"]
        scale = max(abs(a["W_mag"]), abs(a["E_initial"]), abs(a["E_final"]), 1e-300)
        return abs(change - booked) / scale

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            for row in self.series:
                w.writerow([repr(float(v)) for v in row])
        return path

    def audio_to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u_audio"])
            for v in (self.audio.samples if self.audio is not None else []):
                w.writerow([repr(float(v))])
        return path

    def summary(self) -> dict:
        return {
            "operation_index": self.operation_index,
            "mode": self.mode.value,
            "direction": self.direction.value,
            "status": self.status,
            "cost": self.cost,
            "resistance_true": self.resistance_true,
            "events": [{"time": e.time, "kind": e.kind.value, "impact_speed": e.impact_speed}
                       for e in self.events],
            "energy": {k: self.audit[k] for k in ("W_mag", "W_damp", "impact_loss",
                                                  "E_initial", "E_final")},
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(), indent=2))
        return path


def initial_state(plant: RelayParams, stack: ControlStack, direction: Direction,
                  traj: TrajectorySpec) -> np.ndarray:
    """Making starts open and de-energised; breaking starts closed, held by the demanded flux."""
    if direction is Direction.MAKING:
        return np.array([plant.geometry.theta_max, 0.0, 0.0])
    lam0 = K.flux_demand(traj.boundary.t0, traj.as_array(), stack.model_array(),
                         stack.ctrl_array(0.0))[0]
    return np.array([0.0, 0.0, lam0])


def run_operation(stack: ControlStack, plant: RelayParams, direction: Direction | str = "making",
                  cfg: SimConfig = SimConfig(), rng: np.random.Generator | None = None,
                  operation_index: int = 0, cost_window: tuple[float, float] | None = None,
                  with_audio: bool = True) -> OperationRecord:
    """Simulate one switching operation at the control rate and score its audio.

    Standard making applies the supply voltage throughout; standard breaking
    applies zero volts.
    """
    direction = Direction(direction)
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    traj = stack.trajectory(direction)
    P = plant.as_array()
    M = stack.model_array()
    supply = cfg.supply_voltage if direction is Direction.MAKING else 0.0
    Q = stack.ctrl_array(supply)
    n = cfg.n_ctrl
    i_noise = cfg.current_noise * rng.standard_normal(n) if cfg.current_noise > 0 else np.zeros(n)
    v_noise = cfg.voltage_noise * rng.standard_normal(n) if cfg.voltage_noise > 0 else np.zeros(n)
    y0 = initial_state(plant, stack, direction, traj)
    out = np.full((n, len(SERIES_COLUMNS)), np.nan)
    ev_t, ev_k, ev_v = np.zeros(cfg.max_events), np.zeros(cfg.max_events, np.int64), np.zeros(cfg.max_events)
    work = np.zeros(4)
    y_final = y0.copy()
    n_rows, n_ev, status = K.simulate(
        P, _MODE_CODE[stack.mode], traj.as_array(), M, Q, y0, n, cfg.n_sub, cfg.control_period,
        cfg.restitution_armature, cfg.stick_speed, cfg.event_tolerance,
        i_noise, v_noise, out, ev_t, ev_k, ev_v, work, y_final)
    events = _events_from(ev_t, ev_k, ev_v, n_ev)
    audit = {
        "W_mag": float(work[0]), "W_damp": float(work[1]), "impact_loss": float(work[2]),
        "E_initial": float(K.mech_energy(y0[0], y0[1], P)),
        "E_final": float(K.mech_energy(y_final[0], y_final[1], P)),
        "final_state": [float(v) for v in y_final],
        "final_time": n_rows * cfg.control_period,
        "geometry": [plant.geometry.theta_max, plant.geometry.theta_nc, plant.geometry.theta_no],
    }
    record = OperationRecord(out[:n_rows], events, None, math.nan, plant.resistance,
                             operation_index, stack.mode, direction, audit)
    if status != K.STATUS_OK:
        record.status = {K.STATUS_SATURATED: "saturated",
                         K.STATUS_EVENT_OVERFLOW: "event_overflow"}.get(status, "failed")
        raise SimulationError(
            f"operation {operation_index} failed at t={n_rows * cfg.control_period:.6g} s "
            f"({record.status})", record)
    if with_audio:
        t0, length = cost_window if cost_window is not None else (0.0, cfg.duration)
        record.audio = synth_audio(events, (t0, length), cfg, rng)
        record.cost = audio_energy(record.audio, t0, length)
    return record


def standard_stack(relay: RelayParams, r_hat: float | None = None) -> ControlStack:
    """A constant-voltage stack; the feedforward is carried along but unused."""
    ff = FeedforwardConfig.from_relay(relay)
    return ControlStack(ControlMode.STANDARD, ff, r_hat if r_hat is not None else relay.resistance)
