"""Run one desk campaign and print a windowed learning table.

    python3 scripts/run_campaign.py --mode FluxTracking --relays 20 --ops 300 -o runs/flux
"""
import argparse
import time

import numpy as np

from relaysoft.campaign import CampaignConfig, load_config, run_campaign
from relaysoft.plant import ControlMode


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-c", "--config")
    ap.add_argument("--mode", choices=[m.value for m in ControlMode])
    ap.add_argument("--relays", type=int)
    ap.add_argument("--ops", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--window", type=int, default=25)
    ap.add_argument("-j", "--workers", type=int, default=1)
    ap.add_argument("-o", "--output-dir", default="runs/campaign")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else CampaignConfig()
    over = {"output_dir": args.output_dir}
    if args.mode:
        over["controller_mode"] = ControlMode(args.mode)
    if args.relays:
        over["n_relays"] = args.relays
    if args.ops:
        over["n_operations"] = args.ops
        if cfg.resistance_step.at_operation > args.ops:
            over["resistance_step"] = type(cfg.resistance_step)(0.0, 1)
    if args.seed is not None:
        over["seed"] = args.seed
    cfg = cfg.replace(**over)

    t = time.perf_counter()
    res = run_campaign(cfg, args.workers)
    print(f"{cfg.controller_mode.value}: {cfg.n_relays} relays x {cfg.n_operations} operations "
          f"in {time.perf_counter() - t:.1f} s, baseline median {res.baseline.median:.4g}")
    med, p90 = res.stats.median_curve(), res.stats.level_curve(90)
    print(f"{'ops':>9} {'median':>8} {'p90':>8}")
    for k in range(0, len(med), args.window):
        sl = slice(k, k + args.window)
        print(f"{k + 1:>4}-{min(k + args.window, len(med)):<4} {np.median(med[sl]):8.4f} "
              f"{np.median(p90[sl]):8.4f}")
    for t_ in res.aborted:
        print(f"aborted relay {t_.relay} rep {t_.repetition}: {t_.diagnostic}")


if __name__ == "__main__":
    main()
