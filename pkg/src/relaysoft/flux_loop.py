"""Discrete flux-tracking loop: resistance probe, flux estimator and PI with saturation.

Also holds the linear closed-loop analysis: with ``i = g * lambda`` the
electrical dynamics read ``dlambda/dt = -a * lambda + u`` where
``a = R * g > 0``. Closing it with the PI gives the state matrix
``[[-a - kp, ki], [-1, 0]]`` on ``(lambda, sigma)``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from . import _kernels as K


class ProbeError(RuntimeError):
    pass


@dataclass(frozen=True)
class PIGains:
    kp: float = 37500.0     # V/Wb
    ki: float = 1.15e8      # V/(Wb s)

    def __post_init__(self):
        if not (self.kp > 0 and self.ki > 0):
            raise ValueError(f"PI gains must be positive, got kp={self.kp}, ki={self.ki}")


@dataclass(frozen=True)
class ProbeResult:
    voltage: float
    current: float


@dataclass
class ControllerState:
    """Mutable per-operation state of the flux loop."""

    sigma: float = 0.0
    last_command: float = 0.0
    r_hat: float = math.nan
    lambda_hat: float = 0.0
    last_current: float = 0.0

    def reset(self, r_hat: float) -> None:
        """Start of an operation: coil de-energised, fresh resistance estimate."""
        self.sigma = 0.0
        self.last_command = 0.0
        self.lambda_hat = 0.0
        self.last_current = 0.0
        self.r_hat = r_hat


def estimate_resistance(probe: ProbeResult) -> float:
    if not probe.current > 0:
        raise ProbeError(f"probe current must be positive, got {probe.current}")
    return probe.voltage / probe.current


def flux_estimate_step(v: float, i: float, state: ControllerState, dt: float,
                       method: str = "euler") -> float:
    """Integrate ``v - r_hat * i`` over one period and store the result.

    ``trapezoid`` averages the current with the previous sample, which is
    what the compiled operation loop does.
    """
    if not math.isfinite(state.r_hat):
        raise ValueError("r_hat is not set; call reset() with a probe result first")
    if method == "euler":
        i_prev = i
    elif method == "trapezoid":
        i_prev = state.last_current
    else:
        raise ValueError(f"unknown estimator method {method!r}")
    state.lambda_hat = K.est_update(state.lambda_hat, v, i, i_prev, state.r_hat, dt)
    state.last_current = i
    return state.lambda_hat


def pi_step(lam_d: float, lam_hat: float, state: ControllerState, gains: PIGains,
            dt: float, v_limits: tuple[float, float] = (0.0, 35.0)) -> float:
    """Parallel PI; the integral only advances while the command is inside the limits."""
    lo, hi = v_limits
    if lo >= hi:
        raise ValueError(f"bad voltage limits {v_limits}")
    u, state.sigma = K.pi_update(lam_d - lam_hat, state.sigma, gains.kp, gains.ki, dt, lo, hi)
    state.last_command = u
    return u


# --------------------------------------------------------------------------
# linear analysis
# --------------------------------------------------------------------------

def closed_loop_matrix(a: float, gains: PIGains) -> np.ndarray:
    return np.array([[-a - gains.kp, gains.ki], [-1.0, 0.0]])


def closed_loop_eigenvalues(a: float, gains: PIGains) -> tuple[complex, complex]:
    if not a > 0:
        raise ValueError(f"plant coefficient must be positive, got {a}")
    b = a + gains.kp
    root = cmath.sqrt(b * b - 4.0 * gains.ki)
    return (-b + root) / 2.0, (-b - root) / 2.0


def plant_coefficient(theta: float, lam: float, P: np.ndarray) -> float:
    """``a = R * (g_c + g_g)`` at one operating point of a model array."""
    g = (K.core_rel(lam, P[K.GC0], P[K.LSAT])
         + K.gap_rel(theta, P[K.GG0], P[K.GSLOPE], P[K.KAP1], P[K.KAP2]))
    return P[K.RES] * g


def linear_step_response(a: float, gains: PIGains, t: np.ndarray,
                         lam_d: float = 1.0) -> np.ndarray:
    """Flux response of the linear loop to a constant reference ``lam_d``."""
    sys = signal.StateSpace(closed_loop_matrix(a, gains),
                            [[gains.kp], [1.0]], [[1.0, 0.0]], [[0.0]])
    _, y = signal.step(sys, T=t)
    return lam_d * np.asarray(y)


def settling_time(t: np.ndarray, y: np.ndarray, target: float, band: float = 0.05) -> float:
    """Last instant the response is outside ``target * (1 +- band)``; 0 if never."""
    outside = np.abs(y - target) > band * abs(target)
    if not outside.any():
        return 0.0
    last = int(np.nonzero(outside)[0][-1])
    if last == len(t) - 1:
        return math.inf
    return float(t[last + 1])
