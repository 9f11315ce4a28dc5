#!/usr/bin/env python
"""Command-line tool for running detector experiments."""

import sys
import argparse
from pathlib import Path
from tabulate import tabulate

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from experiments.config import ConfigError, load_config, serialize_config
from experiments.runner import EXIT_CONFIG, record_config_error, run_experiment, run_sweep
from storage.results import ResultStore


def _fmt(value, digits=6):
    if value is None:
        return 'N/A'
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return value


def print_config_errors(path, error: ConfigError):
    print(f"\n✗ {path}: {len(error.errors)} configuration error(s)")
    for message in error.errors:
        print(f"  - {message}")


def print_summary(summary: dict):
    rows = [
        ['Model', summary['model']],
        ['Detected mass', _fmt(summary['detected_mass'])],
        ['P(never detected)', _fmt(summary['p_never'])],
        ['Truncation remainder', _fmt(summary['truncation_remainder'], 3)],
        ['Mean detection time', _fmt(summary['mean_detection_time'])],
    ]
    rows += [[key, _fmt(value)] for key, value in sorted(summary['extras'].items())]
    print(tabulate(rows, tablefmt='simple'))


def validate(path: str) -> int:
    """Validate a configuration file and show the resolved values."""
    try:
        config = load_config(path)
    except ConfigError as e:
        print_config_errors(path, e)
        return EXIT_CONFIG

    print(f"\n✓ {path} is valid\n")
    rows = [line.split('=', 1) for line in serialize_config(config).splitlines()]
    print(tabulate(rows, headers=['Key', 'Value'], tablefmt='simple'))
    return 0


def run(path: str) -> int:
    """Run one experiment."""
    try:
        config = load_config(path)
    except ConfigError as e:
        print_config_errors(path, e)
        written = record_config_error(path, e, ResultStore())
        print(f"  error record: {written}")
        return EXIT_CONFIG

    print(f"\nRunning {config.run_name} ({config.model})...")
    outcome = run_experiment(config)
    if not outcome.ok:
        print(f"✗ {outcome.error}")
        print(f"  error record: {outcome.run_dir / 'error.json'}")
        return outcome.exit_code

    print(f"✓ Results in {outcome.run_dir}")
    for file in outcome.files:
        print(f"  - {file.name}")
    print()
    print_summary(outcome.summary)
    return 0


def sweep(path: str, param: str, values, workers: int = 1) -> int:
    """Run one experiment per value of a single key."""
    try:
        config = load_config(path)
        results = run_sweep(config, param, values, workers=workers)
    except ConfigError as e:
        print_config_errors(path, e)
        return EXIT_CONFIG

    table = [
        [
            value,
            '✓' if outcome.ok else '✗',
            _fmt(outcome.summary['detected_mass']) if outcome.ok else 'N/A',
            _fmt(outcome.summary['p_never']) if outcome.ok else 'N/A',
            _fmt(outcome.summary['mean_detection_time']) if outcome.ok else outcome.error,
        ]
        for value, outcome in results
    ]
    print(f"\nSweep of {param} over {len(results)} values:\n")
    print(tabulate(table, headers=[param, 'OK', 'Detected', 'P(never)', 'Mean T'], tablefmt='grid'))
    return max((outcome.exit_code for _, outcome in results), default=0)


def _split_values(raw):
    values = []
    for item in raw:
        values.extend(v for v in item.split(',') if v)
    return values


def main():
    """Main CLI entry point."""
    parser = argparse.ArgumentParser(
        description='Run detection-time experiments',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s validate config/abr.cfg                           # Check a config file
  %(prog)s run config/abr.cfg                                # Run one experiment
  %(prog)s sweep config/abr.cfg --param kappa_right --values 0.5,1,2,4
  ABR_OUTPUT_DIR=/tmp/out %(prog)s run config/limit_study.cfg

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
        """
    )

    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    run_parser = subparsers.add_parser('run', help='Run an experiment')
    run_parser.add_argument('config', help='Experiment configuration file')

    validate_parser = subparsers.add_parser('validate', help='Validate a configuration file')
    validate_parser.add_argument('config', help='Experiment configuration file')

    sweep_parser = subparsers.add_parser('sweep', help='Run a parameter sweep')
    sweep_parser.add_argument('config', help='Experiment configuration file')
    sweep_parser.add_argument('--param', required=True, help='Configuration key to vary')
    sweep_parser.add_argument('--values', required=True, nargs='+',
                              help='Values, comma- or space-separated')
    sweep_parser.add_argument('--workers', type=int, default=1,
                              help='Sweep points run concurrently')

    args = parser.parse_args()

    if not args.command:
        parser.print_help()
        return 0

    if args.command == 'run':
        return run(args.config)
    if args.command == 'validate':
        return validate(args.config)
    return sweep(args.config, args.param, _split_values(args.values), args.workers)


if __name__ == '__main__':
    sys.exit(main())
