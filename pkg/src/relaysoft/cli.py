"""Command line entry point: ``relaysoft <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .campaign import (CampaignConfig, ConfigError, load_config, run_baseline, run_campaign,
                       run_compare, run_trial, sample_relay, write_trial_csv)
from .r2r import write_trace
from .trajectory import BoundarySpec, Direction, dump_trajectory, make_reference

log = logging.getLogger("relaysoft")


def _config(args) -> CampaignConfig:
    cfg = load_config(args.config) if args.config else CampaignConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.output_dir is not None:
        cfg = cfg.replace(output_dir=args.output_dir)
    return cfg


def _out_dir(cfg: CampaignConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_baseline(args) -> int:
    cfg = _config(args)
    b = run_baseline(cfg, args.workers)
    out = _out_dir(cfg)
    summary = {"median": b.median, "percentiles": b.percentiles(), "failures": b.failures,
               "costs_nominal": b.costs_nominal, "costs_stepped": b.costs_stepped}
    (out / "baseline.json").write_text(json.dumps(summary, indent=2))
    print(f"baseline median cost {b.median:.6g} over {len(b.costs_nominal)} operations")
    for f in b.failures:
        log.warning(f)
    return 0


def cmd_trial(args) -> int:
    cfg = _config(args)
    b = run_baseline(cfg, 1)
    t = run_trial(cfg, args.relay, args.repetition, b.median, sample_relay(cfg, args.relay))
    out = _out_dir(cfg)
    stem = f"relay{args.relay:03d}_rep{args.repetition:03d}"
    write_trial_csv(t, out / f"{stem}.csv")
    write_trace(t.trace, out / f"{stem}_trace.csv")
    costs = t.costs
    print(f"trial relay={args.relay} rep={args.repetition}: {len(costs)} operations, "
          f"first J_norm {costs[0]:.4g}, last J_norm {costs[-1]:.4g}")
    if t.aborted:
        log.error(t.diagnostic)
        return 0 if args.allow_partial else 2
    return 0


def _report_aborts(result, allow_partial: bool) -> int:
    for t in result.aborted:
        log.error("relay %d rep %d aborted: %s", t.relay, t.repetition, t.diagnostic)
    return 0 if (allow_partial or not result.aborted) else 2


def cmd_campaign(args) -> int:
    cfg = _config(args)
    res = run_campaign(cfg, args.workers)
    med = res.stats.median_curve()
    print(f"campaign {cfg.controller_mode.value}: {len(res.trials)} trials, "
          f"median J_norm first {med[0]:.4g}, last {med[-1]:.4g}; written to {cfg.output_dir}")
    return _report_aborts(res, args.allow_partial)


def cmd_compare(args) -> int:
    cfg = _config(args)
    flux, volt = run_compare(cfg, args.workers)
    for name, r in (("flux", flux), ("voltage", volt)):
        med = r.stats.median_curve()
        print(f"{name}: median J_norm first {med[0]:.4g}, last {med[-1]:.4g}")
    return max(_report_aborts(flux, args.allow_partial), _report_aborts(volt, args.allow_partial))


def cmd_trajectory_dump(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    for d in Direction:
        b = BoundarySpec.for_operation(cfg.nominal.geometry, d, cfg.trajectory.tc, cfg.trajectory.tf)
        path = dump_trajectory(make_reference(b), out / f"trajectory_{d.value}.csv", args.points)
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="JSON or YAML file mirroring CampaignConfig")
    common.add_argument("--seed", type=int, help="override the campaign seed")
    common.add_argument("-j", "--workers", type=int, default=1, help="parallel worker processes")
    common.add_argument("-o", "--output-dir", help="override the output directory")
    common.add_argument("--allow-partial", action="store_true",
                        help="exit 0 even when some trials were aborted")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="relaysoft", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("baseline", parents=[common], help="standard constant-voltage operations")
    p = sub.add_parser("trial", parents=[common], help="one adaptive trial")
    p.add_argument("--relay", type=int, default=0)
    p.add_argument("--repetition", type=int, default=0)
    sub.add_parser("campaign", parents=[common], help="all trials plus percentile statistics")
    sub.add_parser("compare", parents=[common], help="flux tracking vs voltage feedforward")
    p = sub.add_parser("trajectory-dump", parents=[common], help="write reference trajectories")
    p.add_argument("--points", type=int, default=801)
    return ap


COMMANDS = {
    "baseline": cmd_baseline,
    "trial": cmd_trial,
    "campaign": cmd_campaign,
    "compare": cmd_compare,
    "trajectory-dump": cmd_trajectory_dump,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
