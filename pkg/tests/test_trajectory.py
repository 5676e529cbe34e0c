import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relaysoft.relay_core import Geometry
from relaysoft.trajectory import (BoundarySpec, Direction, dump_trajectory, eval_reference,
                                  make_reference, solve_quintic)


def _conditions(t0, t1):
    """Rows of the 6x6 system: position, velocity, acceleration at both ends (physical time)."""
    rows = []
    for t in (t0, t1):
        rows.append([t ** k for k in range(6)])
        rows.append([k * t ** (k - 1) if k >= 1 else 0.0 for k in range(6)])
        rows.append([k * (k - 1) * t ** (k - 2) if k >= 2 else 0.0 for k in range(6)])
    return np.array(rows)


def test_unit_quintic_matches_linear_solve():
    coeffs = solve_quintic(0.0, 1.0, 0.0, 1.0)
    oracle = np.linalg.solve(_conditions(0.0, 1.0), [0, 0, 0, 1, 0, 0])
    np.testing.assert_allclose(coeffs, oracle, atol=1e-12)
    np.testing.assert_allclose(coeffs, [0, 0, 0, 10, -15, 6])


def test_zero_displacement_is_constant():
    assert solve_quintic(0.0, 2.0, 0.3, 0.3) == (0.3, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_degenerate_interval():
    with pytest.raises(ValueError):
        solve_quintic(1.0, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        BoundarySpec(0.0, 2e-3, 1e-3, 1.0, 0.5, 0.0)


@given(st.floats(-1, 1), st.floats(1e-4, 1.0), st.floats(-0.02, 0.02), st.floats(-0.02, 0.02))
def test_quintic_boundary_residuals(t0, span, a, b):
    t1 = t0 + span
    c = solve_quintic(t0, t1, a, b)
    traj = make_reference(BoundarySpec(t0, t1, t1 + 1.0, a, b, b))
    scale = max(abs(b - a), 1e-300)
    for t, pos in ((t0, a), (t1, b)):
        th, dth, ddth = eval_reference(traj, t)
        assert abs(th - pos) <= 1e-12 * max(scale, abs(pos))
        assert abs(dth) * span <= 1e-12 * scale + 1e-300
        assert abs(ddth) * span ** 2 <= 1e-11 * scale + 1e-300
    assert len(c) == 6


@pytest.mark.parametrize("direction", list(Direction))
def test_operation_boundaries(direction):
    geo = Geometry()
    traj = make_reference(BoundarySpec.for_operation(geo, direction))
    b = traj.boundary
    expected = ((geo.theta_max, geo.theta_no, 0.0) if direction is Direction.MAKING
                else (0.0, geo.theta_nc, geo.theta_max))
    assert (b.theta0, b.thetac, b.thetaf) == expected
    for t, pos in zip((b.t0, b.tc, b.tf), expected):
        th, dth, ddth = eval_reference(traj, t)
        assert th == pytest.approx(pos, abs=1e-12 * geo.stroke)
        assert abs(dth) < 1e-9 and abs(ddth) < 1e-6


def test_continuity_at_contact_instant():
    traj = make_reference(BoundarySpec.for_operation(Geometry(), "making"))
    tc = traj.boundary.tc
    left = np.array(eval_reference(traj, tc - 1e-12))
    right = np.array(eval_reference(traj, tc + 1e-12))
    # position, velocity and acceleration scales of the second segment
    span, dpos = 1.5e-3, Geometry().theta_no
    scale = np.array([dpos, dpos / span, dpos / span ** 2])
    assert np.all(np.abs(left - right) <= 1e-6 * scale)


def test_making_is_monotone():
    traj = make_reference(BoundarySpec.for_operation(Geometry(), "making"))
    th = [eval_reference(traj, t)[0] for t in np.linspace(0, 8e-3, 400)]
    assert np.all(np.diff(th) <= 1e-15)


def test_held_outside_window():
    traj = make_reference(BoundarySpec.for_operation(Geometry(), "making"))
    assert eval_reference(traj, -1.0) == (Geometry().theta_max, 0.0, 0.0)
    assert eval_reference(traj, 1.0)[1:] == (0.0, 0.0)


def test_dump_trajectory(tmp_path):
    traj = make_reference(BoundarySpec.for_operation(Geometry(), "breaking"))
    path = dump_trajectory(traj, tmp_path / "t.csv", n=11)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "theta_d", "dtheta_d", "ddtheta_d"]
    assert len(rows) == 12
    assert float(rows[-1][1]) == pytest.approx(Geometry().theta_max)
