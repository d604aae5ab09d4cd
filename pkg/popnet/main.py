# main.py
"""
Main entry point for the population / contact-network pipeline.
"""
import argparse
import logging
import os
import sys
import traceback
from typing import Dict, List, Optional

from popnet.config.settings import ConfigError, RunConfig, setup_logging
from popnet.data.fixture import FixtureSpec, generate_fixture
from popnet.data.inputs import InputDataError
from popnet.pipeline import SYNTHETIC, PopulationPipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4

# CLI flag -> RunConfig override key
_SIM_FLAGS = {
    "p_transmit": "sim.p_transmit",
    "replicates": "sim.replicates",
    "n_seeds": "sim.n_seeds",
    "horizon_days": "sim.horizon_days",
    "boundary_mode": "sim.boundary_mode",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="popnet", description="Synthetic population and contact-network pipeline")
    parser.add_argument("--config", type=str, help="Path to config file (default: $POPNET_CONFIG)")
    parser.add_argument("--log-level", type=str, default="INFO", help="Logging level")
    parser.add_argument("--input-dir", type=str, help="Region input directory")
    parser.add_argument("--out-dir", type=str, help="Output directory")
    parser.add_argument("--master-seed", type=int, help="Run-level random seed")
    parser.add_argument("--threads", type=int, help="Worker processes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="Generate a desk-scale fixture region")
    p.add_argument("--out", type=str, required=True, help="Fixture directory (inputs/ and truth/ are created)")
    p.add_argument("--n-cbgs", type=int, default=50)
    p.add_argument("--households-per-cbg", type=int, default=150)
    p.add_argument("--schema-width", type=int, default=40)
    p.add_argument("--n-offtarget", type=int, default=12)
    p.add_argument("--n-schools", type=int, default=15)
    p.add_argument("--gq-fraction", type=float, default=0.1)
    p.add_argument("--industries", type=str, help="Comma-separated industry codes (default: all)")
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("synthesize", help="Fit households per CBG and place every person")
    p.add_argument("--ipf-dump", action="store_true", help="Write fitted IPF matrices under <out_dir>/ipf/")

    p = sub.add_parser("network", help="Assemble the contact network and reference graphs")
    p.add_argument("--no-reference", action="store_true", help="Skip the reference random graphs")

    p = sub.add_parser("stats", help="Topology statistics of indexed networks")
    p.add_argument("--network", action="append", help="Network name (repeatable; default: all)")

    for name, text in (("simulate", "SEIR replicates on one network"),
                       ("compare", "SEIR replicates on every indexed network")):
        p = sub.add_parser(name, help=text)
        if name == "simulate":
            p.add_argument("--network", type=str, default=SYNTHETIC, help="Network name")
        p.add_argument("--p-transmit", type=float)
        p.add_argument("--replicates", type=int)
        p.add_argument("--n-seeds", type=int)
        p.add_argument("--horizon-days", type=int)
        p.add_argument("--boundary-mode", choices=["all_cause", "home_only"])
    return parser


def load_run_config(args) -> RunConfig:
    """
    Resolve the configuration: file from --config or $POPNET_CONFIG, then flags.

    Args:
        args: parsed arguments

    Returns:
        RunConfig
    """
    config_path = args.config or os.environ.get("POPNET_CONFIG")
    config = RunConfig(config_path)
    overrides: Dict[str, object] = {
        "input_dir": args.input_dir,
        "out_dir": args.out_dir,
        "master_seed": args.master_seed,
        "threads": args.threads,
    }
    for attr, key in _SIM_FLAGS.items():
        overrides[key] = getattr(args, attr, None)
    config.apply_overrides(overrides)
    return config


def run_fixture(args) -> int:
    industries = args.industries.split(",") if args.industries else None
    spec = FixtureSpec(n_cbgs=args.n_cbgs, households_per_cbg=args.households_per_cbg,
                       schema_width=args.schema_width, n_offtarget=args.n_offtarget, n_schools=args.n_schools,
                       gq_fraction=args.gq_fraction, industries=industries, seed=args.seed)
    inputs, truth = generate_fixture(spec, args.out)
    print(f"Fixture inputs: {inputs}")
    print(f"Fixture truth:  {truth}")
    return EXIT_OK


def run_command(args, config: RunConfig) -> int:
    pipeline = PopulationPipeline(config)
    if args.command == "synthesize":
        summary = pipeline.synthesize(ipf_dump=args.ipf_dump)
        print("\n== Synthesis ==")
        print(f"CBGs synthesized: {summary.n_cbgs} (dropped {summary.n_dropped})")
        print(f"Below cost cutoff: {summary.n_below_cutoff}")
        print(f"Persons: {summary.n_persons} ({summary.n_placeholders} placeholders), places: {summary.n_places}")
        if summary.failures:
            print(f"No microdata for {len(summary.failures)} CBGs: {', '.join(sorted(summary.failures))}")
            return EXIT_INFEASIBLE
    elif args.command == "network":
        graphs = pipeline.network(with_reference=not args.no_reference)
        print("\n== Networks ==")
        for name, g in graphs.items():
            print(f"{name}: {g.n_vertices} vertices, {g.n_edges} edges")
    elif args.command == "stats":
        df = pipeline.stats(args.network)
        print(df.to_string(index=False))
    elif args.command == "simulate":
        summary = pipeline.simulate(args.network)
        final = summary.iloc[-1]
        print(f"{args.network}: mean cumulative infections on day {int(final['day'])}: "
              f"{final['mean']:.1f} [{final['ci_low']:.1f}, {final['ci_high']:.1f}]")
    elif args.command == "compare":
        _, takeoff = pipeline.compare()
        print("\n== Takeoff day (25% infected) ==")
        for name, df in takeoff.groupby("network", sort=False):
            days = df["takeoff_day"].dropna()
            median = f"{days.median():.1f}" if len(days) else "never"
            print(f"{name}: median {median} over {len(df)} replicates")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main function: parse arguments, run one command, map errors to exit codes.
    """
    args = build_parser().parse_args(argv)
    try:
        setup_logging(args.log_level)
        if args.command == "fixture":
            return run_fixture(args)
        config = load_run_config(args)
        return run_command(args, config)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InputDataError as e:
        print(f"Input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except KeyboardInterrupt:
        print("\nStopped by user.")
        return 130
    except Exception as e:
        print(f"Unexpected error: {e}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
