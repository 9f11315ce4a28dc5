#!/usr/bin/env python
"""Command-line tool for browsing stored experiment runs."""

import sys
import argparse
from pathlib import Path
from tabulate import tabulate

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from storage.results import store


def list_runs(model=None, status=None, limit=20):
    """List logged runs, newest first."""
    runs = store.load_runs()
    if model:
        runs = runs[runs['model'] == model]
    if status:
        runs = runs[runs['status'] == status]

    if runs.empty:
        print(f"\nNo runs logged under {store.root}.")
        return

    runs = runs.iloc[::-1].head(limit)
    table = [
        [
            r['finished_at'],
            r['run_name'],
            r['model'] if isinstance(r['model'], str) else 'N/A',
            '✓' if r['status'] == 'ok' else '✗',
            f"{r['detected_mass']:.6f}" if r['detected_mass'] == r['detected_mass'] else 'N/A',
            f"{r['p_never']:.6f}" if r['p_never'] == r['p_never'] else 'N/A',
            f"{r['wall_time_s']:.1f}s" if r['wall_time_s'] == r['wall_time_s'] else 'N/A',
        ]
        for _, r in runs.iterrows()
    ]
    headers = ['Finished', 'Run', 'Model', 'OK', 'Detected', 'P(never)', 'Wall time']

    print(f"\n{len(table)} runs:\n")
    print(tabulate(table, headers=headers, tablefmt='grid'))


def show_run(run_name):
    """Show the stored summaries of one run."""
    error = store.load_error(run_name)
    if error:
        print(f"\n✗ {run_name} failed ({error['error_type']}, exit code {error['exit_code']}):")
        for message in error['errors']:
            print(f"  - {message}")
        return

    summaries = store.load_summaries(run_name)
    if not summaries:
        print(f"\nNo summaries stored for {run_name}.")
        return

    for summary in summaries:
        print(f"\n=== {run_name} (seed {summary['seed']}, config {summary['config_hash'][:12]}) ===\n")
        rows = [[key, summary[key]] for key in
                ('model', 'detected_mass', 'p_never', 'truncation_remainder', 'mean_detection_time')]
        rows += [[key, value] for key, value in sorted(summary['extras'].items())]
        print(tabulate(rows, tablefmt='simple'))


def stats():
    """Show run log statistics."""
    runs = store.load_runs()
    print("\n=== Run Log Statistics ===\n")
    print(f"Output root: {store.root}")
    print(f"Total runs: {len(runs)}")
    if runs.empty:
        return
    print(f"Failed runs: {int((runs['status'] != 'ok').sum())}")

    by_model = runs.groupby('model').agg(
        runs=('run_name', 'count'),
        mean_detected=('detected_mass', 'mean'),
        mean_wall_time=('wall_time_s', 'mean'),
    ).reset_index()
    print("\n=== Runs by Model ===\n")
    print(tabulate(by_model.values.tolist(),
                   headers=['Model', 'Runs', 'Mean detected', 'Mean wall time (s)'],
                   tablefmt='simple', floatfmt='.4f'))


def main():
    """Main CLI entry point."""
    parser = argparse.ArgumentParser(
        description='Browse stored experiment runs',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s stats                          # Run log statistics
  %(prog)s list                           # Most recent runs
  %(prog)s list --model limit_study       # Runs of one model
  %(prog)s list --status failed           # Failed runs only
  %(prog)s show abr_matched               # Summaries of one run
        """
    )

    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    subparsers.add_parser('stats', help='Show run log statistics')

    list_parser = subparsers.add_parser('list', help='List logged runs')
    list_parser.add_argument('--model', help='Filter by model')
    list_parser.add_argument('--status', choices=['ok', 'failed'], help='Filter by status')
    list_parser.add_argument('--limit', type=int, default=20, help='Maximum rows')

    show_parser = subparsers.add_parser('show', help='Show the summaries of a run')
    show_parser.add_argument('run_name', help='Run name (directory under the output root)')

    args = parser.parse_args()

    if not args.command:
        parser.print_help()
        return

    try:
        if args.command == 'stats':
            stats()
        elif args.command == 'list':
            list_runs(model=args.model, status=args.status, limit=args.limit)
        elif args.command == 'show':
            show_run(args.run_name)
    except Exception as e:
        print(f"\nError: {e}")
        sys.exit(1)


if __name__ == '__main__':
    main()
