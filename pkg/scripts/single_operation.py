"""Simulate one making or breaking and dump its time series, audio and event summary."""
import argparse
from pathlib import Path

import numpy as np

from relaysoft.feedforward import FeedforwardConfig
from relaysoft.plant import ControlMode, ControlStack, SimConfig, run_operation
from relaysoft.relay_core import default_relay


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", default="FluxTracking", choices=[m.value for m in ControlMode])
    ap.add_argument("--direction", default="making", choices=["making", "breaking"])
    ap.add_argument("--r-hat-error", type=float, default=0.0,
                    help="relative error of the resistance known to the controller")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-o", "--output-dir", default="runs/operation")
    args = ap.parse_args()

    relay = default_relay()
    stack = ControlStack(args.mode, FeedforwardConfig.from_relay(relay),
                         relay.resistance * (1 + args.r_hat_error))
    rec = run_operation(stack, relay, args.direction, SimConfig(), np.random.default_rng(args.seed))
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec.to_csv(out / "series.csv")
    rec.audio_to_csv(out / "audio.csv")
    rec.to_json(out / "summary.json")
    for e in rec.events:
        print(f"{e.time * 1e3:8.4f} ms  {e.kind.value:<18} {e.impact_speed:.4f} rad/s")
    print(f"audio cost {rec.cost:.4g}, energy residual {rec.energy_residual():.1e}; "
          f"written to {out}")


if __name__ == "__main__":
    main()
