"""Parameter types and constitutive relations of the relay model.

Reluctances are scaled by the squared turn count, so they are expressed as
inverse inductances (1/H) and the coil current is ``(g_c + g_g) * lambda``.

Sign convention: ``J * theta'' = torque_mag + torque_elastic - c * omega``
with ``c > 0``. The magnetic torque is attractive (drives theta toward 0) and
the springs restore toward ``theta_max``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import _kernels as K


class DomainError(ValueError):
    """Input outside the domain on which a model relation is defined."""


def _require_positive(obj):
    for f in fields(obj):
        v = getattr(obj, f.name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ValueError(f"{type(obj).__name__}.{f.name} must be finite and > 0, got {v!r}")


@dataclass(frozen=True)
class MagneticParams:
    g_c0: float = 0.0478        # core reluctance scale, 1/H
    lambda_sat: float = 0.0686  # saturation flux linkage, Wb
    g_g0: float = 0.0687        # zero-gap reluctance, 1/H
    g_g0_slope: float = 124.15  # gap reluctance slope, 1/(H rad)
    kappa1: float = 1.69        # fringing shape, 1/rad
    kappa2: float = 0.158       # fringing shape, rad

    def __post_init__(self):
        _require_positive(self)


@dataclass(frozen=True)
class MechParams:
    inertia: float = 3.911e-7   # kg m^2
    k1: float = 0.8557          # N m / rad
    k2: float = 5.4748
    k3: float = 4.229
    damping: float = 8.59e-4    # N m s / rad

    def __post_init__(self):
        _require_positive(self)


@dataclass(frozen=True)
class Geometry:
    theta_max: float = 0.012    # rest position, rad
    theta_nc: float = 0.008     # plastic part meets the moving contact
    theta_no: float = 0.004     # moving contact meets the NO terminal

    def __post_init__(self):
        if not 0 < self.theta_no < self.theta_nc < self.theta_max:
            raise ValueError(
                f"geometry must satisfy 0 < theta_no < theta_nc < theta_max, got {self}")

    @property
    def stroke(self) -> float:
        return self.theta_max


@dataclass(frozen=True)
class RelayParams:
    magnetic: MagneticParams = MagneticParams()
    mech: MechParams = MechParams()
    geometry: Geometry = Geometry()
    resistance: float = 1000.0  # coil resistance, ohm

    def __post_init__(self):
        if not (math.isfinite(self.resistance) and self.resistance > 0):
            raise ValueError(f"resistance must be > 0, got {self.resistance}")

    def as_array(self) -> np.ndarray:
        m, k, g = self.magnetic, self.mech, self.geometry
        return np.array([
            m.g_c0, m.lambda_sat, m.g_g0, m.g_g0_slope, m.kappa1, m.kappa2,
            k.inertia, k.k1, k.k2, k.k3, k.damping,
            g.theta_max, g.theta_nc, g.theta_no, self.resistance,
        ], dtype=float)

    def param_vector(self) -> ParamVector:
        m, k = self.magnetic, self.mech
        return ParamVector(k.inertia, k.k1, k.k2, k.k3, k.damping,
                           m.g_g0_slope, m.kappa1, m.kappa2)

    def with_param_vector(self, p: ParamVector) -> RelayParams:
        mech = MechParams(p.inertia, p.k1, p.k2, p.k3, p.damping)
        mag = replace(self.magnetic, g_g0_slope=p.g_g0_slope, kappa1=p.kappa1, kappa2=p.kappa2)
        return replace(self, magnetic=mag, mech=mech)

    def with_resistance(self, r: float) -> RelayParams:
        return replace(self, resistance=r)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ParamVector:
    """The eight model parameters adapted run to run, in this fixed order."""

    inertia: float
    k1: float
    k2: float
    k3: float
    damping: float
    g_g0_slope: float
    kappa1: float
    kappa2: float

    def __post_init__(self):
        _require_positive(self)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    @classmethod
    def from_array(cls, values) -> ParamVector:
        values = [float(v) for v in values]
        if len(values) != 8:
            raise ValueError(f"ParamVector needs 8 entries, got {len(values)}")
        return cls(*values)

    @staticmethod
    def names() -> tuple[str, ...]:
        return tuple(f.name for f in fields(ParamVector))


# --------------------------------------------------------------------------
# constitutive relations
# --------------------------------------------------------------------------

def core_reluctance(lam: float, m: MagneticParams) -> float:
    if abs(lam) >= m.lambda_sat:
        raise DomainError(f"|lambda|={abs(lam):.6g} Wb reaches saturation {m.lambda_sat:.6g} Wb")
    return K.core_rel(lam, m.g_c0, m.lambda_sat)


def _check_gap(theta: float, m: MagneticParams) -> None:
    if theta < 0:
        raise DomainError(f"theta must be >= 0, got {theta}")
    if K.fringe_den(theta, m.kappa1, m.kappa2) <= 0:
        raise DomainError(
            f"fringing denominator is not positive at theta={theta} "
            f"(kappa1={m.kappa1}, kappa2={m.kappa2})")


def gap_reluctance(theta: float, m: MagneticParams) -> float:
    _check_gap(theta, m)
    return K.gap_rel(theta, m.g_g0, m.g_g0_slope, m.kappa1, m.kappa2)


def gap_reluctance_grad(theta: float, m: MagneticParams) -> float:
    """Analytic d(gap_reluctance)/d(theta)."""
    _check_gap(theta, m)
    return K.gap_grad(theta, m.g_g0_slope, m.kappa1, m.kappa2)


def magnetic_torque(theta: float, lam: float, m: MagneticParams) -> float:
    return -0.5 * gap_reluctance_grad(theta, m) * lam * lam


def elastic_torque(theta: float, mech: MechParams, geo: Geometry) -> float:
    return K.elastic(theta, mech.k1, mech.k2, mech.k3,
                     geo.theta_max, geo.theta_nc, geo.theta_no)


def elastic_energy(theta: float, mech: MechParams, geo: Geometry) -> float:
    return K.elastic_energy(theta, mech.k1, mech.k2, mech.k3,
                            geo.theta_max, geo.theta_nc, geo.theta_no)


def coil_current(theta: float, lam: float, m: MagneticParams) -> float:
    return (core_reluctance(lam, m) + gap_reluctance(theta, m)) * lam


def flux_derivative(theta: float, lam: float, u: float, R: float, m: MagneticParams) -> float:
    return -R * (core_reluctance(lam, m) + gap_reluctance(theta, m)) * lam + u


def mech_derivatives(theta: float, omega: float, lam: float,
                     mech: MechParams, geo: Geometry, m: MagneticParams) -> tuple[float, float]:
    torque = magnetic_torque(theta, lam, m) + elastic_torque(theta, mech, geo) - mech.damping * omega
    return omega, torque / mech.inertia


def default_relay() -> RelayParams:
    """Nominal plant used as configuration default (not identified values)."""
    return RelayParams()
