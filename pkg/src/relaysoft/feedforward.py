"""Flatness-based feedforward: desired flux (and current / voltage) from the trajectory."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .relay_core import (DomainError, Geometry, MagneticParams, ParamVector,
                         RelayParams, _check_gap)
from .trajectory import TrajectorySpec


@dataclass(frozen=True)
class ExtendedParams:
    """The three extra magnetic parameters needed for current and voltage demands."""

    g_c0: float
    lambda_sat: float
    g_g0: float


@dataclass(frozen=True)
class FeedforwardConfig:
    p: ParamVector
    geometry: Geometry
    extended: ExtendedParams
    resistance_estimate: float = 1000.0
    radicand_floor: float = 0.0

    def __post_init__(self):
        if self.radicand_floor < 0:
            raise ValueError("radicand_floor must be >= 0")

    @classmethod
    def from_relay(cls, relay: RelayParams, p: ParamVector | None = None, **kw) -> FeedforwardConfig:
        m = relay.magnetic
        return cls(p=p if p is not None else relay.param_vector(), geometry=relay.geometry,
                   extended=ExtendedParams(m.g_c0, m.lambda_sat, m.g_g0),
                   resistance_estimate=kw.pop("resistance_estimate", relay.resistance), **kw)

    def model(self) -> RelayParams:
        """The relay model the feedforward believes in."""
        e = self.extended
        base = RelayParams(
            magnetic=MagneticParams(e.g_c0, e.lambda_sat, e.g_g0, self.p.g_g0_slope,
                                    self.p.kappa1, self.p.kappa2),
            geometry=self.geometry, resistance=self.resistance_estimate)
        return base.with_param_vector(self.p)

    def model_array(self) -> np.ndarray:
        return self.model().as_array()


def flux_reference(ref_point, cfg: FeedforwardConfig) -> tuple[float, bool]:
    """Desired flux for (theta_d, dtheta_d, ddtheta_d).

    A negative radicand (deceleration the springs cannot provide) is replaced
    by ``radicand_floor`` and reported through the flag.
    """
    theta, dtheta, ddtheta = ref_point
    _check_gap(theta, cfg.model().magnetic)
    lam, clamped = K.flux_ref(float(theta), float(dtheta), float(ddtheta),
                              cfg.model_array(), cfg.radicand_floor)
    return lam, bool(clamped)


def current_reference(ref_point, cfg: FeedforwardConfig) -> float:
    lam, _ = flux_reference(ref_point, cfg)
    if lam >= cfg.extended.lambda_sat:
        raise DomainError(f"desired flux {lam:.6g} Wb exceeds saturation")
    return K.current(float(ref_point[0]), lam, cfg.model_array())


def _ctrl_array(cfg: FeedforwardConfig, dt_diff: float) -> np.ndarray:
    q = K.default_ctrl()
    q[K.Q_FLOOR] = cfg.radicand_floor
    q[K.Q_RHAT] = cfg.resistance_estimate
    q[K.Q_DTDIFF] = dt_diff
    return q


def voltage_reference(traj: TrajectorySpec, t: float, cfg: FeedforwardConfig,
                      dt_diff: float = 1e-5) -> float:
    """v_d = d(lambda_d)/dt + R_hat * i_d, derivative by central difference."""
    if dt_diff <= 0:
        raise ValueError("dt_diff must be > 0")
    return K.voltage_demand(float(t), traj.as_array(), cfg.model_array(), _ctrl_array(cfg, dt_diff))
