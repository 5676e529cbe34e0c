"""Desired armature trajectory: two rest-to-rest quintic segments joined at contact."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .relay_core import Geometry

# s -> 10 s^3 - 15 s^4 + 6 s^5 is the unique rest-to-rest quintic on [0, 1]
_SMOOTHSTEP = np.array([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])


class Direction(str, enum.Enum):
    MAKING = "making"
    BREAKING = "breaking"


@dataclass(frozen=True)
class BoundarySpec:
    t0: float
    tc: float
    tf: float
    theta0: float
    thetac: float
    thetaf: float
    direction: Direction = Direction.MAKING

    def __post_init__(self):
        if not self.t0 < self.tc < self.tf:
            raise ValueError(f"need t0 < tc < tf, got {self.t0}, {self.tc}, {self.tf}")

    @classmethod
    def for_operation(cls, geo: Geometry, direction: Direction | str,
                      tc: float = 6.5e-3, tf: float = 8e-3, t0: float = 0.0) -> BoundarySpec:
        direction = Direction(direction)
        if direction is Direction.MAKING:
            positions = (geo.theta_max, geo.theta_no, 0.0)
        else:
            positions = (0.0, geo.theta_nc, geo.theta_max)
        return cls(t0, tc, tf, *positions, direction=direction)


@dataclass(frozen=True)
class TrajectorySpec:
    """``segment1``/``segment2`` hold coefficients in normalised time of their interval."""

    segment1: tuple[float, ...]
    segment2: tuple[float, ...]
    boundary: BoundarySpec

    def as_array(self) -> np.ndarray:
        b = self.boundary
        return np.array([b.t0, b.tc, b.tf, *self.segment1, *self.segment2], dtype=float)


def solve_quintic(t_start: float, t_end: float, pos_start: float, pos_end: float) -> tuple[float, ...]:
    """Rest-to-rest quintic coefficients in s = (t - t_start) / (t_end - t_start)."""
    if not t_end > t_start:
        raise ValueError(f"degenerate interval [{t_start}, {t_end}]")
    coeffs = (pos_end - pos_start) * _SMOOTHSTEP
    coeffs[0] += pos_start
    return tuple(float(c) for c in coeffs)


def make_reference(boundary: BoundarySpec) -> TrajectorySpec:
    b = boundary
    return TrajectorySpec(
        segment1=solve_quintic(b.t0, b.tc, b.theta0, b.thetac),
        segment2=solve_quintic(b.tc, b.tf, b.thetac, b.thetaf),
        boundary=b,
    )


def eval_reference(traj: TrajectorySpec, t: float) -> tuple[float, float, float]:
    """Position, velocity and acceleration at ``t``; endpoints are held outside [t0, tf].

    Both segments are monotone, so the position is clipped to the boundary
    range; this only removes coefficient roundoff (a closed gap of -7e-18).
    """
    th, dth, ddth = K.eval_ref(traj.as_array(), float(t))
    b = traj.boundary
    lo, hi = min(b.theta0, b.thetac, b.thetaf), max(b.theta0, b.thetac, b.thetaf)
    return min(max(th, lo), hi), dth, ddth


def dump_trajectory(traj: TrajectorySpec, path, n: int = 801) -> Path:
    b = traj.boundary
    path = Path(path)
    arr = traj.as_array()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "theta_d", "dtheta_d", "ddtheta_d"])
        for t in np.linspace(b.t0, b.tf, n):
            w.writerow([repr(float(t)), *(repr(v) for v in K.eval_ref(arr, float(t)))])
    return path
