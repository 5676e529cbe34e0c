"""Closed-loop poles and 5% settling of the linearised flux loop along the making stroke."""
import argparse
import csv

import numpy as np

from relaysoft.feedforward import FeedforwardConfig, flux_reference
from relaysoft.flux_loop import (PIGains, closed_loop_eigenvalues, linear_step_response,
                                 plant_coefficient, settling_time)
from relaysoft.relay_core import default_relay
from relaysoft.trajectory import BoundarySpec, eval_reference, make_reference


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kp", type=float, default=PIGains().kp)
    ap.add_argument("--ki", type=float, default=PIGains().ki)
    ap.add_argument("--points", type=int, default=17)
    ap.add_argument("-o", "--output", default="pi_tuning.csv")
    args = ap.parse_args()

    relay = default_relay()
    gains = PIGains(args.kp, args.ki)
    cfg = FeedforwardConfig.from_relay(relay)
    traj = make_reference(BoundarySpec.for_operation(relay.geometry, "making"))
    t = np.linspace(0, 10e-3, 20001)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "theta_d", "lambda_d", "a", "pole1_re", "pole1_im", "pole2_re",
                    "pole2_im", "settling_5pct"])
        for when in np.linspace(0, traj.boundary.tf, args.points):
            ref = eval_reference(traj, when)
            lam = flux_reference(ref, cfg)[0]
            a = plant_coefficient(ref[0], lam, relay.as_array())
            e1, e2 = closed_loop_eigenvalues(a, gains)
            ts = settling_time(t, linear_step_response(a, gains, t, 1.0), 1.0)
            w.writerow([when, ref[0], lam, a, e1.real, e1.imag, e2.real, e2.imag, ts])
            print(f"t={when * 1e3:5.2f} ms  a={a:8.1f} 1/s  poles {e1:.4g}, {e2:.4g}  "
                  f"settling {ts * 1e3:.3f} ms")


if __name__ == "__main__":
    main()
