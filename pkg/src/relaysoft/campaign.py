"""Campaign orchestration: standard baselines, adaptive trials, percentile statistics.

Seeding: every random stream is derived from ``seed`` and the trial's
(relay, repetition) coordinates through ``numpy.random.SeedSequence``, so a
trial's output does not depend on which worker ran it or in which order.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
import types
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .feedforward import FeedforwardConfig
from .flux_loop import PIGains, estimate_resistance
from .plant import (ControlMode, ControlStack, SimConfig, SimulationError, perturb_params,
                    param_field_names, probe_resistance, run_operation)
from .r2r import (CostConfig, TraceRow, cost_from_audio, decode, encode, nm_init,
                  nm_next_candidate, nm_update, normalize_cost, write_trace)
from .relay_core import ParamVector, RelayParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ResistanceStep:
    ohms: float = 150.0
    at_operation: int = 251     # 1-based index of the first operation with the extra resistor


_FIXED_BETWEEN_OPERATIONS = ("theta_max", "theta_nc", "theta_no", "resistance")


@dataclass(frozen=True)
class Spreads:
    """Relative log-normal sigmas of unit-to-unit variability.

    ``default`` covers fields not listed in ``per_field``. ``within`` is a
    further per-operation jitter on the magnetic and mechanical parameters of
    a unit (wear, friction and temperature effects between switchings).
    """

    default: float = 0.1
    per_field: dict[str, float] = field(default_factory=lambda: {
        "theta_max": 0.0, "theta_nc": 0.0, "theta_no": 0.0, "resistance": 0.05})
    within: float = 0.005

    def __post_init__(self):
        if self.default < 0 or self.within < 0 or any(v < 0 for v in self.per_field.values()):
            raise ConfigError("spreads must be >= 0")

    def as_mapping(self) -> dict[str, float]:
        names = param_field_names()
        unknown = set(self.per_field) - set(names)
        if unknown:
            raise ConfigError(f"unknown parameter names in spreads.per_field: {sorted(unknown)}")
        return {n: float(self.per_field.get(n, self.default)) for n in names}

    def within_mapping(self) -> dict[str, float]:
        return {n: (0.0 if n in _FIXED_BETWEEN_OPERATIONS else self.within)
                for n in param_field_names()}


@dataclass(frozen=True)
class TrajectoryTiming:
    tc: float = 6.5e-3
    tf: float = 8e-3


@dataclass(frozen=True)
class ControlOptions:
    v_min: float = 0.0
    v_max: float = 35.0
    hold_gain: float = 1.2
    hold_ramp: float = 3e-3
    radicand_floor: float = 0.0


@dataclass(frozen=True)
class OptimizerConfig:
    relative_step: float = 0.15
    reeval_every: int = 25
    divergence_factor: float = 1e3   # abort when a proposal leaves [1/f, f] x nominal
    failure_cost: float = 10.0       # normalized cost charged for an operation that fails


@dataclass(frozen=True)
class CampaignConfig:
    n_relays: int = 20
    n_repetitions: int = 1
    n_operations: int = 300
    resistance_step: ResistanceStep = ResistanceStep()
    controller_mode: ControlMode = ControlMode.FLUX_TRACKING
    nominal: RelayParams = RelayParams()
    spreads: Spreads = Spreads()
    trajectory: TrajectoryTiming = TrajectoryTiming()
    gains: PIGains = PIGains()
    control: ControlOptions = ControlOptions()
    sim: SimConfig = SimConfig()
    cost: CostConfig = CostConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    baseline_operations: int = 5
    seed: int = 2024
    output_dir: str = "runs/campaign"

    def __post_init__(self):
        object.__setattr__(self, "controller_mode", ControlMode(self.controller_mode))
        if self.n_operations < 1 or self.n_relays < 1 or self.n_repetitions < 1:
            raise ConfigError("n_relays, n_repetitions and n_operations must be >= 1")
        if self.resistance_step.ohms != 0 and not (
                1 <= self.resistance_step.at_operation <= self.n_operations):
            raise ConfigError("resistance_step.at_operation must lie in [1, n_operations]")
        if self.baseline_operations < 1:
            raise ConfigError("baseline_operations must be >= 1")

    def replace(self, **kw) -> CampaignConfig:
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return _to_plain(self)


# --------------------------------------------------------------------------
# config (de)serialisation
# --------------------------------------------------------------------------

def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


def _build(tp, value, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(value).__name__}")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        unknown = sorted(set(value) - names)
        if unknown:
            raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
        kwargs = {k: _build(hints[k], v, f"{path}.{k}" if path else k) for k, v in value.items()}
        try:
            return tp(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path or 'config'}: {exc}") from exc
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _build(args[0], value, path)
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        _, vt = typing.get_args(tp)
        return {str(k): _build(vt, v, f"{path}.{k}") for k, v in value.items()}
    if origin is tuple:
        return tuple(_build(a, v, path) for a, v in zip(typing.get_args(tp), value))
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is str:
        return str(value)
    return value


def config_from_dict(data: dict) -> CampaignConfig:
    return _build(CampaignConfig, data, "")


def load_config(path) -> CampaignConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    return config_from_dict(data)


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------

LEVELS = (10, 25, 50, 75, 90)


def percentiles(values, levels=LEVELS) -> list[float]:
    """Nearest-rank percentiles: the smallest value with at least p% of the data at or below it."""
    xs = sorted(float(v) for v in values)
    if not xs:
        raise ValueError("percentiles of an empty multiset")
    n = len(xs)
    out = []
    for p in levels:
        if not 0 <= p <= 100:
            raise ValueError(f"percentile level {p} outside [0, 100]")
        rank = max(1, math.ceil(p / 100 * n))
        out.append(xs[rank - 1])
    return out


# --------------------------------------------------------------------------
# seeding and single operations
# --------------------------------------------------------------------------

def relay_seed(cfg: CampaignConfig, relay: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, 0, relay])


def repetition_seed(cfg: CampaignConfig, relay: int, repetition: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, 1, relay, repetition])


def baseline_seed(cfg: CampaignConfig, relay: int, condition: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, 2, relay, condition])


def sample_relay(cfg: CampaignConfig, relay: int) -> RelayParams:
    return perturb_params(cfg.nominal, cfg.spreads.as_mapping(), relay_seed(cfg, relay))


def make_stack(cfg: CampaignConfig, p: ParamVector, r_hat: float,
               mode: ControlMode | None = None) -> ControlStack:
    ff = FeedforwardConfig.from_relay(cfg.nominal, p, resistance_estimate=r_hat,
                                      radicand_floor=cfg.control.radicand_floor)
    c = cfg.control
    return ControlStack(mode or cfg.controller_mode, ff, r_hat, cfg.gains, (c.v_min, c.v_max),
                        cfg.trajectory.tc, cfg.trajectory.tf, c.hold_gain, c.hold_ramp)


def _plant_at(plant: RelayParams, cfg: CampaignConfig, operation: int) -> RelayParams:
    step = cfg.resistance_step
    if step.ohms != 0 and operation >= step.at_operation:
        return plant.with_resistance(plant.resistance + step.ohms)
    return plant


# --------------------------------------------------------------------------
# baseline
# --------------------------------------------------------------------------

@dataclass
class BaselineResult:
    costs_nominal: list[float]      # ordered by (relay, operation)
    costs_stepped: list[float]
    median: float
    failures: list[str] = field(default_factory=list)

    def percentiles(self) -> dict[str, list[float]]:
        out = {"nominal": percentiles(self.costs_nominal)}
        if self.costs_stepped:
            out["stepped"] = percentiles(self.costs_stepped)
        return out


def _baseline_relay(cfg: CampaignConfig, relay: int) -> tuple[list[float], list[float], list[str]]:
    plant = sample_relay(cfg, relay)
    conditions = [plant]
    if cfg.resistance_step.ohms != 0:
        conditions.append(plant.with_resistance(plant.resistance + cfg.resistance_step.ohms))
    stack = make_stack(cfg, cfg.nominal.param_vector(), cfg.nominal.resistance, ControlMode.STANDARD)
    costs: list[list[float]] = [[], []]
    failures = []
    for ci, pl in enumerate(conditions):
        rng = np.random.default_rng(baseline_seed(cfg, relay, ci))
        for k in range(cfg.baseline_operations):
            try:
                rec = run_operation(stack, pl, "making", cfg.sim, rng, k + 1,
                                    (cfg.cost.window_start, cfg.cost.window_length))
                costs[ci].append(rec.cost)
            except SimulationError as exc:
                failures.append(f"relay {relay} condition {ci} op {k + 1}: {exc}")
    return costs[0], costs[1], failures


def run_baseline(cfg: CampaignConfig, workers: int = 1) -> BaselineResult:
    """Constant-supply makings of every virtual relay, with and without the series resistor."""
    parts = _map(_baseline_job, [(cfg, r) for r in range(cfg.n_relays)], workers)
    nominal = [c for p in parts for c in p[0]]
    stepped = [c for p in parts for c in p[1]]
    failures = [f for p in parts for f in p[2]]
    if not nominal:
        raise SimulationError("every baseline operation failed")
    return BaselineResult(nominal, stepped, float(np.median(nominal)), failures)


# --------------------------------------------------------------------------
# trials
# --------------------------------------------------------------------------

TRIAL_COLUMNS = ("operation", "resistance_true", "r_hat", "cost", "cost_norm", "n_stops",
                 "first_stop_speed", "max_stop_speed", "phase", "status",
                 *ParamVector.names())


@dataclass(frozen=True)
class OperationSummary:
    operation: int
    resistance_true: float
    r_hat: float
    cost: float
    cost_norm: float
    n_stops: int
    first_stop_speed: float
    max_stop_speed: float
    phase: str
    status: str
    p: tuple[float, ...]

    def as_row(self) -> list:
        return [self.operation, repr(self.resistance_true), repr(self.r_hat), repr(self.cost),
                repr(self.cost_norm), self.n_stops, repr(self.first_stop_speed),
                repr(self.max_stop_speed), self.phase, self.status, *(repr(v) for v in self.p)]


@dataclass
class TrialResult:
    relay: int
    repetition: int
    operations: list[OperationSummary]
    trace: list[TraceRow]
    aborted: bool = False
    diagnostic: str = ""

    @property
    def costs(self) -> list[float]:
        return [o.cost_norm for o in self.operations]


def run_trial(cfg: CampaignConfig, relay: int, repetition: int, baseline_median: float,
              plant: RelayParams | None = None) -> TrialResult:
    """One adaptive run of ``n_operations`` makings on one virtual relay, starting from nominal p."""
    plant = plant if plant is not None else sample_relay(cfg, relay)
    rng = np.random.default_rng(repetition_seed(cfg, relay, repetition))
    cost_cfg = dataclasses.replace(cfg.cost, baseline_median=baseline_median)
    p_nom = cfg.nominal.param_vector()
    x_nom = encode(p_nom)
    bound = math.log(cfg.optimizer.divergence_factor)
    adapt = cfg.controller_mode in (ControlMode.FLUX_TRACKING, ControlMode.VOLTAGE_FEEDFORWARD)
    simplex = nm_init(p_nom, cfg.optimizer.relative_step, cfg.optimizer.reeval_every) if adapt else None
    result = TrialResult(relay, repetition, [], [])
    window = (cfg.cost.window_start, cfg.cost.window_length)
    within = cfg.spreads.within_mapping() if cfg.spreads.within > 0 else None
    for n in range(1, cfg.n_operations + 1):
        pl = _plant_at(plant, cfg, n)
        if within is not None:
            pl = perturb_params(pl, within, rng)
        r_hat = estimate_resistance(probe_resistance(pl, cfg.sim.probe_voltage, cfg.sim, rng))
        if simplex is not None:
            phase = simplex.phase.value
            p = nm_next_candidate(simplex)
            x = encode(p)
            if np.any(np.abs(x - x_nom) > bound):
                result.aborted = True
                result.diagnostic = (f"operation {n}: proposal left the divergence bounds: "
                                     f"{dict(zip(ParamVector.names(), p.as_array().tolist()))}")
                break
        else:
            phase, p, x = "none", p_nom, x_nom
        stack = make_stack(cfg, p, r_hat)
        try:
            rec = run_operation(stack, pl, "making", cfg.sim, rng, n, window)
            cost = cost_from_audio(rec.audio, cost_cfg)
            j = normalize_cost(cost, cost_cfg)
            status = "ok"
            stops = rec.stop_events()
        except SimulationError as exc:
            cost = cfg.optimizer.failure_cost * baseline_median
            j = cfg.optimizer.failure_cost
            status = exc.record.status if exc.record is not None else "failed"
            stops = exc.record.stop_events() if exc.record is not None else []
        speeds = [e.impact_speed for e in stops]
        result.operations.append(OperationSummary(
            n, pl.resistance, r_hat, cost, j, len(stops), speeds[0] if speeds else 0.0,
            max(speeds) if speeds else 0.0, phase, status, tuple(p.as_array().tolist())))
        result.trace.append(TraceRow(n, tuple(x.tolist()), cost, j, phase))
        if simplex is not None:
            nm_update(simplex, j)
    return result


def write_trial_csv(trial: TrialResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIAL_COLUMNS)
        for o in trial.operations:
            w.writerow(o.as_row())
    return path


# --------------------------------------------------------------------------
# campaigns
# --------------------------------------------------------------------------

STATS_COLUMNS = ("operation", "n", *(f"cost_p{q}" for q in LEVELS), *(f"r_hat_p{q}" for q in LEVELS))


@dataclass
class CampaignStats:
    operations: list[int]
    counts: list[int]
    cost: list[list[float]]        # per operation: p10, p25, p50, p75, p90
    r_hat: list[list[float]]
    baseline: dict[str, list[float]]

    def median_curve(self) -> np.ndarray:
        return np.array([row[2] for row in self.cost])

    def level_curve(self, level: int) -> np.ndarray:
        return np.array([row[LEVELS.index(level)] for row in self.cost])

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(STATS_COLUMNS)
            for n, c, cs, rs in zip(self.operations, self.counts, self.cost, self.r_hat):
                w.writerow([n, c, *(repr(v) for v in cs), *(repr(v) for v in rs)])
        return path


def aggregate(trials: list[TrialResult], baseline: BaselineResult) -> CampaignStats:
    n_max = max((len(t.operations) for t in trials), default=0)
    ops, counts, cost, rh = [], [], [], []
    for k in range(n_max):
        rows = [t.operations[k] for t in trials if len(t.operations) > k]
        ops.append(k + 1)
        counts.append(len(rows))
        cost.append(percentiles([r.cost_norm for r in rows]))
        rh.append(percentiles([r.r_hat for r in rows]))
    return CampaignStats(ops, counts, cost, rh, baseline.percentiles())


@dataclass
class CampaignResult:
    config: CampaignConfig
    baseline: BaselineResult
    trials: list[TrialResult]
    stats: CampaignStats

    @property
    def aborted(self) -> list[TrialResult]:
        return [t for t in self.trials if t.aborted]


def _trial_job(args) -> TrialResult:
    cfg, relay, rep, median = args
    return run_trial(cfg, relay, rep, median)


def _baseline_job(args):
    return _baseline_relay(*args)


def _map(job, arg_list, workers: int):
    if workers <= 1 or len(arg_list) <= 1:
        return [job(a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves input order, so the reduction is independent of scheduling
        return list(pool.map(job, arg_list))


def run_campaign(cfg: CampaignConfig, workers: int = 1, output_dir=None,
                 baseline: BaselineResult | None = None) -> CampaignResult:
    baseline = baseline if baseline is not None else run_baseline(cfg, workers)
    jobs = [(cfg, r, k, baseline.median)
            for r in range(cfg.n_relays) for k in range(cfg.n_repetitions)]
    trials = _map(_trial_job, jobs, workers)
    result = CampaignResult(cfg, baseline, trials, aggregate(trials, baseline))
    out = output_dir if output_dir is not None else cfg.output_dir
    if out:
        write_campaign(result, out)
    return result


def write_campaign(result: CampaignResult, out_dir) -> Path:
    out = Path(out_dir)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    for t in result.trials:
        stem = f"relay{t.relay:03d}_rep{t.repetition:03d}"
        write_trial_csv(t, out / "trials" / f"{stem}.csv")
        write_trace(t.trace, out / "trials" / f"{stem}_trace.csv")
    result.stats.write_csv(out / "stats.csv")
    with (out / "baseline.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "cost"])
        for c in result.baseline.costs_nominal:
            w.writerow(["nominal", repr(c)])
        for c in result.baseline.costs_stepped:
            w.writerow(["stepped", repr(c)])
    med = result.stats.median_curve()
    manifest = {
        "config": result.config.to_dict(),
        "seeds": {"campaign": result.config.seed,
                  "relay": "SeedSequence([seed, 0, relay])",
                  "repetition": "SeedSequence([seed, 1, relay, repetition])",
                  "baseline": "SeedSequence([seed, 2, relay, condition])"},
        "baseline_median": result.baseline.median,
        "baseline_percentiles": result.baseline.percentiles(),
        "baseline_failures": result.baseline.failures,
        "aborted_trials": [{"relay": t.relay, "repetition": t.repetition,
                            "diagnostic": t.diagnostic} for t in result.aborted],
        "summary": {
            "median_first": float(med[0]) if len(med) else None,
            "median_last": float(med[-1]) if len(med) else None,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def run_compare(cfg: CampaignConfig, workers: int = 1, output_dir=None
                ) -> tuple[CampaignResult, CampaignResult]:
    """Flux tracking and voltage feedforward on the same relays, seeds and baseline."""
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    flux_cfg = cfg.replace(controller_mode=ControlMode.FLUX_TRACKING)
    volt_cfg = cfg.replace(controller_mode=ControlMode.VOLTAGE_FEEDFORWARD)
    baseline = run_baseline(cfg, workers)
    flux = run_campaign(flux_cfg, workers, out / "flux", baseline)
    volt = run_campaign(volt_cfg, workers, out / "voltage", baseline)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "compare.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["operation", "flux_median", "voltage_median"])
        for n, a, b in zip(flux.stats.operations, flux.stats.median_curve(),
                           volt.stats.median_curve()):
            w.writerow([n, repr(float(a)), repr(float(b))])
    return flux, volt
