"""
CLI module for ark_toolkit.

Provides command-line interface and orchestration logic.
"""

import argparse
import logging
import sys
from typing import List, Optional

from .bench import bench_vectors
from .brusselator import run, run_batch
from .butcher import get_tableau, verify_tableau_order
from .config import RunConfig, apply_overrides, load_config
from .errors import ArkToolkitError
from .report import create_report_writer, write_solution
from .utils import format_bytes, format_seconds

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False) -> None:
    """Set up logging configuration."""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def build_config(args: argparse.Namespace) -> RunConfig:
    """Load the configuration file (if any) and apply command-line overrides."""
    config = load_config(args.config) if args.config else RunConfig()
    problem = {
        "nx": args.nx,
        "ranks": args.ranks,
        "domain": args.domain,
        "tf": args.tf,
        "rtol": args.rtol,
        "atol": args.atol,
        "solver": args.solver,
        "backend": args.backend,
        "workers": args.workers,
        "policy": args.policy,
        "batch": args.batch,
        "instances": args.instances,
    }
    if args.unified:
        problem["unified"] = True
    if args.no_advection:
        problem["advection"] = False
    if args.no_reactions:
        problem["reactions"] = False
    return apply_overrides(config, problem=problem)


def run_toolkit(args: argparse.Namespace) -> None:
    """
    Main orchestration function of the ``run`` command.

    Args:
        args: Parsed command-line arguments
    """
    config = build_config(args)
    fmt = args.format or config.output_format
    output = args.csv or f"ark_report.{fmt}"
    writer = create_report_writer(fmt, output)

    if args.bench:
        if args.workers:
            config.bench.workers = args.workers
        report = bench_vectors(config.bench)
        writer.write("bench", report.to_rows())
        writer.write("crossover", report.crossover_rows())
    else:
        batch_mode = args.batch is not None or args.instances is not None
        report = run_batch(config.problem, config.integrator) if batch_mode else run(config.problem, config.integrator)
        writer.write("run", report.to_rows())
        writer.write("transfers", report.transfers.to_rows())
        for name, seconds in report.category_seconds.items():
            logger.info(f"{name}: {format_seconds(seconds)}")
        for row in report.transfers.to_rows():
            if row["dst"]:
                logger.info(f"{row['src']} -> {row['dst']}: {row['copies']} copies, {format_bytes(row['bytes'])}")
        logger.info(f"Solution checksum: {report.checksum}")
        if args.dump_solution:
            write_solution(args.dump_solution, report.solution_rows())

    writer.finalize()
    logger.info("Run completed successfully")


def verify_tableau(name: str) -> bool:
    """Print the order-condition residuals of a tableau; True if it has its claimed order."""
    report = verify_tableau_order(get_tableau(name))
    for row in report.to_rows():
        print(f"{row['weights']:>4}  {row['condition']:<16} {row['residual']: .3e}")
    print(f"{report.name}: claimed order {report.claimed_order}, achieved order {report.achieved_order}")
    for violation in report.violations:
        print(f"violated: {violation}")
    return report.ok


def main(argv: Optional[List[str]] = None) -> None:
    """Main CLI entry point."""
    parser = argparse.ArgumentParser(
        description="Adaptive IMEX Runge-Kutta toolkit with an advection-reaction demonstration",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  ark-toolkit run --nx 256 --tf 1 --solver task-local
  ark-toolkit run --ranks 4 --backend pooled --csv out/run.csv --dump-solution out/solution.txt
  ark-toolkit run --batch 16 --instances 4
  ark-toolkit run --bench --csv out/bench.csv
  ark-toolkit verify-tableau ark324
        """
    )

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    # Run command
    run_parser = subparsers.add_parser('run', help='Run the brusselator or the vector benchmark')
    run_parser.add_argument('--config', help='Path to JSON configuration file')
    run_parser.add_argument('--nx', type=int, help='Number of mesh cells')
    run_parser.add_argument('--ranks', type=int, help='Number of in-process ranks')
    run_parser.add_argument('--domain', type=float, help='Domain length')
    run_parser.add_argument('--tf', type=float, help='Final time')
    run_parser.add_argument('--rtol', type=float, help='Relative tolerance')
    run_parser.add_argument('--atol', type=float, help='Absolute tolerance')
    run_parser.add_argument('--solver', choices=['task-local', 'global'], help='Nonlinear solver configuration')
    run_parser.add_argument('--backend', choices=['serial', 'pooled', 'devsim'], help='Vector backend')
    run_parser.add_argument('--unified', action='store_true', help='Use unified memory for devsim vectors')
    run_parser.add_argument('--workers', type=int, help='Worker threads of the parallel backends')
    run_parser.add_argument('--policy', choices=['thread-direct', 'grid-stride'], help='Streaming execution policy')
    run_parser.add_argument('--batch', type=int, help='Cells per group; selects the reaction-only batch run')
    run_parser.add_argument('--instances', type=int, help='Concurrent integrator instances in the batch run')
    run_parser.add_argument('--no-advection', action='store_true', help='Disable the advection terms')
    run_parser.add_argument('--no-reactions', action='store_true', help='Disable the reaction terms')
    run_parser.add_argument('--bench', action='store_true', help='Run the vector benchmark instead')
    run_parser.add_argument('--csv', help='Report output path')
    run_parser.add_argument('--format', choices=['csv', 'json'], help='Report format')
    run_parser.add_argument('--dump-solution', help='Write the final solution as x,u,v,w rows')
    run_parser.add_argument('--verbose', '-v', action='store_true',
                            help='Enable verbose logging')

    # Tableau check command
    tableau_parser = subparsers.add_parser('verify-tableau', help='Check the order conditions of a tableau')
    tableau_parser.add_argument('name', nargs='?', default='ark324', help='Tableau name (ark324 or euler)')
    tableau_parser.add_argument('--verbose', '-v', action='store_true',
                                help='Enable verbose logging')

    args = parser.parse_args(argv)

    if args.command == 'run':
        setup_logging(args.verbose)
        try:
            run_toolkit(args)
        except (ArkToolkitError, FileNotFoundError) as e:
            logger.error(f"Run failed: {e}")
            sys.exit(1)
    elif args.command == 'verify-tableau':
        setup_logging(args.verbose)
        try:
            ok = verify_tableau(args.name)
        except (ArkToolkitError, ValueError) as e:
            logger.error(f"Tableau check failed: {e}")
            sys.exit(1)
        if not ok:
            sys.exit(1)
    else:
        parser.print_help()
        sys.exit(1)


if __name__ == '__main__':
    main()
