"""
Scenario Runner

Orchestrates one simulation run:
- Load and validate the scenario
- Run the simulated network until the stop condition
- Check safety, chain consistency and the stop condition
- Write trace, summary and chain files

and seed sweeps over a scenario template.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd
from tqdm import tqdm

from ..analysis.checks import RunValidator
from ..analysis.timing import finalisation_rounds
from ..consensus.chain import chains_digest, dump_chain
from ..consensus.errors import ScenarioError
from ..utils.config import load_simulation_config
from ..utils.logging_config import (
    log_property_violation,
    log_run_complete,
    log_run_start,
    log_scenario_error,
)
from ..utils.monitoring import PerformanceMonitor, monitor_performance
from .network import RunResult, SimWorld
from .scenario import Scenario, load_scenario, with_seed


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY_VIOLATION = 1
EXIT_SCENARIO_ERROR = 2


def dumps_record(record: Dict[str, Any]) -> str:
    """Canonical JSON line for trace and chain files."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def render_trace(trace: Iterable[Dict[str, Any]]) -> str:
    return "".join(dumps_record(record) + "\n" for record in trace)


def render_summary(summary: Dict[str, Any]) -> str:
    return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def resolve_output_dir(
    config: Dict[str, Any],
    scenario: Scenario,
    out_dir: Optional[Union[str, Path]] = None,
) -> Path:
    """Explicit directory, else ${SIM_OUTPUT_DIR}, else the configured default plus the run name."""
    if out_dir is not None:
        return Path(out_dir)
    output = config.get("output", {})
    directory = output.get("directory")
    if not directory or str(directory).startswith("${"):
        directory = output.get("default_directory", "results/runs")
    pattern = output.get("run_name_pattern", "{scenario}_seed{seed}")
    return Path(directory) / pattern.format(scenario=scenario.name, seed=scenario.seed)


class ScenarioRunner:
    """
    Runs one scenario end to end.

    Args:
        scenario_path: Scenario file (ignored when `scenario` is given)
        overrides: Top-level scenario keys replacing the file's values
        out_dir: Output directory; derived from config/simulation.yml when None
        config_path: Simulator defaults file
        scenario: Already parsed scenario
        write_outputs: Write trace/summary/chain files
        record_steps: Keep per-step records in the trace
    """

    def __init__(
        self,
        scenario_path: Optional[Union[str, Path]] = None,
        overrides: Optional[Dict[str, Any]] = None,
        out_dir: Optional[Union[str, Path]] = None,
        config_path: Optional[Union[str, Path]] = None,
        scenario: Optional[Scenario] = None,
        write_outputs: bool = True,
        record_steps: bool = True,
    ):
        self.scenario_path = scenario_path
        self.overrides = overrides or {}
        self.out_dir = out_dir
        self.config_path = config_path
        self.config = load_simulation_config(config_path)
        self.scenario = scenario
        self.write_outputs = write_outputs
        self.record_steps = record_steps

        self.run_id = datetime.now().strftime('%Y%m%d_%H%M%S')
        self.execution_log: List[Dict[str, Any]] = []
        self.world: Optional[SimWorld] = None
        self.result: Optional[RunResult] = None
        self.validator: Optional[RunValidator] = None
        self.summary: Dict[str, Any] = {}
        self.output_paths: Dict[str, str] = {}

    # -- phases ----------------------------------------------------------------------

    def load(self) -> Scenario:
        start_time = datetime.now()
        try:
            if self.scenario is None:
                if self.scenario_path is None:
                    raise ScenarioError("No scenario file given")
                self.scenario = load_scenario(self.scenario_path, self.overrides, self.config_path)
            probability = self.scenario.network.delivery_prob_within_base3(self.scenario.base_timeout)
            if probability == 0:
                logger.warning(
                    f"No post-GST message can arrive within base_timeout/3 "
                    f"(delta={self.scenario.network.delta}, base_timeout={self.scenario.base_timeout}); "
                    f"liveness after GST is not expected"
                )
            self._log_execution('load', 'success', start_time, {'scenario': self.scenario.name})
            return self.scenario
        except Exception as e:
            logger.error(f"Scenario load failed: {str(e)}")
            self._log_execution('load', 'failed', start_time, error=str(e))
            raise

    def simulate(self) -> RunResult:
        start_time = datetime.now()
        scenario = self.scenario
        try:
            log_run_start(scenario.name, scenario.to_dict())
            self.world = scenario.build_world(record_steps=self.record_steps)
            self.result = self.world.run(scenario.stop)
            self._log_execution('simulate', 'success', start_time, {
                'stop_reason': self.result.stop_reason,
                'events': self.result.events,
                'time': self.result.time,
            })
            return self.result
        except Exception as e:
            logger.error(f"Simulation failed: {str(e)}")
            self._log_execution('simulate', 'failed', start_time, error=str(e))
            raise

    def analyse(self) -> Dict[str, Any]:
        """Run the property checks and build the deterministic summary."""
        start_time = datetime.now()
        try:
            world, result, scenario = self.world, self.result, self.scenario
            chains = world.honest_chains()
            stop_met = scenario.stop.met_by(result.stop_reason)

            self.validator = RunValidator(result.trace, chains, result.stop_reason, stop_met)
            self.validator.validate_all()

            rounds = finalisation_rounds(result.trace)
            exit_code = EXIT_OK if self.validator.all_passed() else EXIT_PROPERTY_VIOLATION
            self.summary = {
                "scenario": scenario.to_dict(),
                "stop_reason": result.stop_reason,
                "stop_met": stop_met,
                "events": result.events,
                "time": result.time,
                "heights_finalised": min((c.height for c in chains), default=0),
                "node_heights": {world.label(a): world.nodes[a].chain.height for a in world.honest},
                "rounds_per_height": {str(h): r for h, r in rounds.items()},
                "max_round": max(rounds.values(), default=0),
                "safety_violations": [v.to_dict() for v in self.validator.violations],
                "chains_digest": chains_digest(chains),
                "checks": self.validator.get_validation_summary()["checks"],
                "exit_code": exit_code,
            }

            for check in self.validator.validation_results:
                if not check.passed:
                    log_property_violation(scenario.name, check.check_name, check.details)

            self._log_execution('analyse', 'success', start_time, {'exit_code': exit_code})
            return self.summary
        except Exception as e:
            logger.error(f"Analysis failed: {str(e)}")
            self._log_execution('analyse', 'failed', start_time, error=str(e))
            raise

    def write(self) -> Dict[str, str]:
        start_time = datetime.now()
        try:
            output = self.config.get("output", {})
            out_dir = resolve_output_dir(self.config, self.scenario, self.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)

            trace_path = out_dir / output.get("trace_file", "trace.jsonl")
            summary_path = out_dir / output.get("summary_file", "summary.json")
            chain_path = out_dir / output.get("chain_file", "chain.jsonl")

            with open(trace_path, 'w') as f:
                f.write(render_trace(self.result.trace))
            with open(summary_path, 'w') as f:
                f.write(render_summary(self.summary))
            chains = self.world.honest_chains()
            if chains:
                dump_chain(max(chains, key=lambda c: c.height), chain_path)

            self.output_paths = {
                'trace': str(trace_path),
                'summary': str(summary_path),
                'chain': str(chain_path),
            }
            self._log_execution('write', 'success', start_time, self.output_paths)
            self._save_execution_log(out_dir)
            logger.info(f"Run outputs written to: {out_dir}")
            return self.output_paths
        except Exception as e:
            logger.error(f"Writing outputs failed: {str(e)}")
            self._log_execution('write', 'failed', start_time, error=str(e))
            raise

    # -- orchestration ---------------------------------------------------------------

    def run(self) -> int:
        """
        Load, simulate, analyse and write.

        Returns:
            0 when every check passed, 1 on a property violation or unmet
            stop condition, 2 when the scenario cannot be loaded
        """
        run_start = datetime.now()
        try:
            self.load()
        except ScenarioError as e:
            log_scenario_error(str(self.scenario_path), str(e))
            logger.error(f"Scenario rejected: {str(e)}")
            return EXIT_SCENARIO_ERROR

        logger.info(f"{'='*70}")
        logger.info(f"SCENARIO RUN STARTED - {self.scenario.name} seed={self.scenario.seed} (Run ID: {self.run_id})")
        logger.info(f"{'='*70}")

        self.simulate()
        summary = self.analyse()
        # the summary record is the last line of the trace
        self.result.trace.append({"type": "summary", **summary})
        if self.write_outputs:
            self.write()

        duration = (datetime.now() - run_start).total_seconds()
        log_run_complete(self.scenario.name, summary["heights_finalised"], duration)
        logger.info(
            f"Run finished: exit={summary['exit_code']}, heights={summary['heights_finalised']}, "
            f"max round={summary['max_round']}, {duration:.2f}s"
        )
        return summary["exit_code"]

    def _log_execution(
        self,
        phase: str,
        status: str,
        start_time: datetime,
        details: Optional[Dict] = None,
        error: Optional[str] = None
    ):
        self.execution_log.append({
            'timestamp': datetime.now().isoformat(),
            'phase': phase,
            'status': status,
            'duration_seconds': round((datetime.now() - start_time).total_seconds(), 2),
            'details': details or {},
            'error': error
        })

    def _save_execution_log(self, out_dir: Path):
        """Wall-clock run log, kept apart from the deterministic outputs."""
        output_file = out_dir / f"execution_log_{self.run_id}.json"
        with open(output_file, 'w') as f:
            json.dump({'run_id': self.run_id, 'execution_log': self.execution_log}, f, indent=2, default=str)


@monitor_performance("run_scenario")
def run_scenario(
    path: Union[str, Path],
    overrides: Optional[Dict[str, Any]] = None,
    out_dir: Optional[Union[str, Path]] = None,
    config_path: Optional[Union[str, Path]] = None,
) -> int:
    """Run one scenario file and return its exit code."""
    return ScenarioRunner(path, overrides, out_dir, config_path).run()


SWEEP_COLUMNS = ["seed", "heights_finalised", "max_round", "violations", "stop_reason", "exit_code"]


def sweep(
    path: Union[str, Path],
    seeds: Iterable[int],
    overrides: Optional[Dict[str, Any]] = None,
    out_dir: Optional[Union[str, Path]] = None,
    config_path: Optional[Union[str, Path]] = None,
    show_progress: bool = True,
) -> Dict[str, Any]:
    """
    Run a scenario template once per seed and aggregate the results.

    Args:
        path: Scenario template
        seeds: Seeds to run (an empty range gives an empty report)
        overrides: Scenario overrides applied before seeding
        out_dir: Where sweep_report.csv and sweep_summary.json go (not written when None)
        config_path: Simulator defaults file
        show_progress: Show a tqdm progress bar

    Returns:
        Dictionary with the per-seed `report` DataFrame and the aggregate summary

    Raises:
        ScenarioError: the template cannot be loaded
    """
    seeds = list(seeds)
    monitor = PerformanceMonitor()
    metric = monitor.start_monitoring('sweep', {'scenario': str(path), 'seeds': len(seeds)})

    template = load_scenario(path, overrides, config_path)
    rows = []
    rounds: List[int] = []
    for seed in tqdm(seeds, desc=f"Sweeping {template.name}", disable=not show_progress):
        runner = ScenarioRunner(
            scenario=with_seed(template, seed),
            config_path=config_path,
            write_outputs=False,
            record_steps=False,
        )
        exit_code = runner.run()
        summary = runner.summary
        rounds.extend(summary["rounds_per_height"].values())
        rows.append({
            "seed": seed,
            "heights_finalised": summary["heights_finalised"],
            "max_round": summary["max_round"],
            "violations": len(summary["safety_violations"]),
            "stop_reason": summary["stop_reason"],
            "exit_code": exit_code,
        })

    report = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    distribution = pd.Series(rounds, dtype="int64").value_counts().sort_index()
    aggregate = {
        "scenario": template.name,
        "runs": len(report),
        "violations": int(report["violations"].sum()) if len(report) else 0,
        "failed_runs": int((report["exit_code"] != EXIT_OK).sum()) if len(report) else 0,
        "rounds_per_height": {str(int(r)): int(c) for r, c in distribution.items()},
    }

    if out_dir is not None:
        output = load_simulation_config(config_path).get("output", {})
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.to_csv(out_dir / output.get("sweep_report", "sweep_report.csv"), index=False)
        with open(out_dir / output.get("sweep_summary", "sweep_summary.json"), 'w') as f:
            f.write(render_summary(aggregate))
        logger.info(f"Sweep report written to: {out_dir}")

    monitor.stop_monitoring(metric, status='success')
    logger.info(
        f"Sweep of {template.name}: {aggregate['runs']} runs, "
        f"{aggregate['violations']} violations, {aggregate['failed_runs']} failed"
    )
    return {"report": report, "summary": aggregate}


__all__ = [
    "EXIT_OK",
    "EXIT_PROPERTY_VIOLATION",
    "EXIT_SCENARIO_ERROR",
    "ScenarioRunner",
    "dumps_record",
    "render_summary",
    "render_trace",
    "resolve_output_dir",
    "run_scenario",
    "sweep",
]
