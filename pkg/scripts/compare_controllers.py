"""Flux tracking against voltage feedforward on paired relays, across the resistor step."""
import argparse

import numpy as np

from relaysoft.campaign import CampaignConfig, load_config, run_compare


def pooled(result, first, last):
    return float(np.median([o.cost_norm for t in result.trials for o in t.operations
                            if first <= o.operation <= last]))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-c", "--config")
    ap.add_argument("-j", "--workers", type=int, default=1)
    ap.add_argument("-o", "--output-dir", default="runs/compare")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else CampaignConfig()
    flux, volt = run_compare(cfg, args.workers, args.output_dir)
    at = cfg.resistance_step.at_operation
    width = min(50, at - 1, cfg.n_operations - at + 1)
    print(f"resistor +{cfg.resistance_step.ohms:g} ohm at operation {at}; pooled medians over "
          f"{width} operations either side")
    for name, r in (("flux", flux), ("voltage", volt)):
        before = pooled(r, at - width, at - 1)
        after = pooled(r, at, at + width - 1)
        med = r.stats.median_curve()
        print(f"{name:>8}: first {med[0]:.4f}  before {before:.4f}  after {after:.4f}  "
              f"change {after / before - 1:+.1%}")
    print(f"per-operation medians written to {args.output_dir}/compare.csv")


if __name__ == "__main__":
    main()
