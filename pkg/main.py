# /// script
# dependencies = [
#   "numpy",
#   "scipy",
#   "pydantic>=2",
# ]
# ///
"""
Main entry point for the engineered-bath toolkit.

Subcommands: chain-example, verify, design, rates, steady-state.
Exit codes: 0 success, 1 verification failure, 2 configuration error.
"""
import argparse
import asyncio
import logging
import sys

from config import ConfigError, apply_overrides, load_config
from experiments import run_chain_example, run_design, run_rates, run_steady_state, run_verify
from dispersive import DispersiveRegimeError
from lindblad import LindbladError
from operators import BathCannotActError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

COMMANDS = {
    "chain-example": run_chain_example,
    "verify": run_verify,
    "design": run_design,
    "rates": run_rates,
    "steady-state": run_steady_state,
}


def build_parser():
    parser = argparse.ArgumentParser(description="Engineered thermal baths for few-qubit systems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON experiment config (defaults: chain example)")
        p.add_argument("--seed", type=int, default=None, help="Base RNG seed; member i uses seed + i")
        p.add_argument("--jobs", type=int, default=None, help="Concurrent ensemble members / optimizer starts")
        p.add_argument("--out", type=str, default=None, help="Output directory")
        p.add_argument("--objective", choices=["minimax", "integral"], default=None)
        p.add_argument("--grid", type=int, default=None, help="Objective grid points per window side")
        p.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def print_checks(checks):
    """Pass/fail table of verification checks."""
    print(f"{'check':<22}{'member':>8}  {'result':<6}  value")
    for c in checks:
        value = "-" if c.value is None else f"{c.value:.3e}"
        print(f"{c.name:<22}{c.member:>8}  {'PASS' if c.passed else 'FAIL':<6}  {value}  {c.detail}")


async def main(argv=None):
    """Parse arguments, run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )

    try:
        config = apply_overrides(
            load_config(args.config),
            seed=args.seed,
            jobs=args.jobs,
            out=args.out,
            objective=args.objective,
            grid=args.grid,
        )
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG

    print(f"=== Running {args.command} ===")
    try:
        report = await COMMANDS[args.command](config)
    except (LindbladError, BathCannotActError, DispersiveRegimeError) as exc:
        print(f"Run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    if args.command == "verify":
        print_checks(report.members)
        failing = report.summary["failing"]
        if failing:
            print(f"Failing checks: {', '.join(failing)}")
            return EXIT_FAILURE
        print("All checks passed")
    elif args.command == "chain-example":
        mean = report.summary["mean_fidelity"]
        print(f"Ensemble of {report.summary['ensemble_size']}: mean Gibbs fidelity "
              + ("n/a" if mean is None else f"{mean:.4f}"))
    elif args.command == "design":
        result = report.members[0]
        print(f"Objective {result.objective_value:.6g} ({result.objective}), converged: {result.converged}")

    print(f"Results written to {report.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
