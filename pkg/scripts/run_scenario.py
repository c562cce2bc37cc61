"""
Scenario Runner Script

Runs a consensus scenario (or a seed sweep over one) from the command line.

Exit codes: 0 all checks passed, 1 property violation or unmet stop
condition, 2 scenario could not be parsed or validated.
"""

import argparse
import sys
from pathlib import Path

# Add project root to path
sys.path.append(str(Path(__file__).parent.parent))

from src.consensus.errors import ScenarioError
from src.simulation.runner import EXIT_OK, EXIT_PROPERTY_VIOLATION, EXIT_SCENARIO_ERROR, ScenarioRunner, sweep
from src.utils.config import load_simulation_config
from src.utils.logging_config import setup_logging
from src.utils.monitoring import PerformanceMonitor


def parse_seed_range(value: str) -> range:
    """LO..HI (inclusive) as a range; HI < LO gives an empty range."""
    try:
        lo, hi = value.split('..')
        return range(int(lo), int(hi) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected LO..HI, got {value!r}")


def build_overrides(args) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.allow_overload:
        overrides['allow_overload'] = True
    if args.fast_forward:
        overrides['fast_forward_enabled'] = True
    if args.proposer_mode:
        overrides['proposer_mode'] = args.proposer_mode
    return overrides


def main(argv=None):
    """Main entry point."""
    parser = argparse.ArgumentParser(
        description='Block finalisation protocol simulator',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    parser.add_argument('--scenario', required=True, help='Scenario file (JSON, or YAML)')
    parser.add_argument('--seed', type=int, default=None, help="Override the scenario's seed")
    parser.add_argument('--out', default=None, help='Output directory')
    parser.add_argument(
        '--sweep',
        type=parse_seed_range,
        default=None,
        help='Run every seed in LO..HI and write an aggregate report'
    )
    parser.add_argument(
        '--allow-overload',
        action='store_true',
        help='Accept more Byzantine validators than the protocol tolerates'
    )
    parser.add_argument('--fast-forward', action='store_true', help='Enable round fast-forward')
    parser.add_argument(
        '--proposer-mode',
        choices=['sticky', 'round_robin', 'sticky_fair', 'round_robin_fair'],
        default=None,
        help='Proposer selection mode'
    )
    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
        default=None,
        help='Logging level'
    )
    parser.add_argument('--config', default=None, help='Path to simulation configuration file')

    args = parser.parse_args(argv)

    config = load_simulation_config(args.config)
    log_config = config.get('logging', {})
    setup_logging(
        log_level=args.log_level or log_config.get('level', 'INFO'),
        log_dir=log_config.get('log_dir', 'logs'),
        enable_console=log_config.get('enable_console', True),
        enable_file=log_config.get('enable_file', True),
        enable_structured=log_config.get('enable_structured', False)
    )
    monitor = PerformanceMonitor(config.get('monitoring', {}).get('metrics_dir', 'results/metrics'))

    print("="*70)
    print("Block Finalisation Simulator")
    print("="*70)
    print()
    print(f"Configuration:")
    print(f"  Scenario: {args.scenario}")
    print(f"  Seed: {args.seed if args.seed is not None else 'from scenario'}")
    print(f"  Sweep: {f'{args.sweep.start}..{args.sweep.stop - 1}' if args.sweep is not None else 'no'}")
    print(f"  Output: {args.out or 'from config'}")
    print()

    overrides = build_overrides(args)

    if args.sweep is not None:
        metric = monitor.start_monitoring('sweep', {'seeds': len(args.sweep)})
        try:
            result = sweep(args.scenario, args.sweep, overrides, args.out, args.config)
        except ScenarioError as e:
            monitor.stop_monitoring(metric, status='failed', error=str(e))
            print(f"Scenario error: {e}")
            return EXIT_SCENARIO_ERROR
        monitor.stop_monitoring(metric, status='success')

        summary = result['summary']
        print("="*70)
        print("SWEEP SUMMARY")
        print("="*70)
        print(f"Runs: {summary['runs']}")
        print(f"Safety violations: {summary['violations']}")
        print(f"Failed runs: {summary['failed_runs']}")
        print("Rounds per height:")
        for rnd, count in summary['rounds_per_height'].items():
            print(f"  round {rnd}: {count}")
        print("="*70)
        monitor.save_metrics()
        return EXIT_OK if summary['failed_runs'] == 0 else EXIT_PROPERTY_VIOLATION

    runner = ScenarioRunner(args.scenario, overrides, args.out, args.config)
    metric = monitor.start_monitoring('scenario_run')
    exit_code = runner.run()
    events = runner.result.events if runner.result else 0
    metric['details']['events'] = events
    monitor.stop_monitoring(metric, status='success' if exit_code == EXIT_OK else 'failed')

    print()
    print("="*70)
    print("RUN SUMMARY")
    print("="*70)
    if exit_code == EXIT_SCENARIO_ERROR:
        print("Scenario rejected (see errors.log)")
    else:
        summary = runner.summary
        print(f"Stop reason: {summary['stop_reason']}")
        print(f"Heights finalised: {summary['heights_finalised']}")
        print(f"Max round: {summary['max_round']}")
        print(f"Safety violations: {len(summary['safety_violations'])}")
        print(f"Chains digest: {summary['chains_digest']}")
        for name, path in runner.output_paths.items():
            print(f"  {name}: {path}")
    print(f"Exit code: {exit_code}")
    print("="*70)

    monitor.save_metrics()
    return exit_code


if __name__ == '__main__':
    sys.exit(main())
