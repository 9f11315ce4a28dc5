"""Run experiments end to end and map failures to exit codes."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from experiments import __version__
from experiments.config import ConfigError, ExperimentConfig, config_hash, override
from experiments.detector_experiments import create_experiment
from models.errors import SimulationError
from storage.results import ResultStore, distribution_frame


logger = logging.getLogger("experiment.runner")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


@dataclass
class RunOutcome:
    run_name: str
    exit_code: int
    run_dir: Path
    files: List[Path] = field(default_factory=list)
    summary: Optional[dict] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.exit_code == EXIT_OK


def exit_code_for(error: Exception) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if not isinstance(error, (SimulationError, ArithmeticError, ValueError)):
        logger.exception(f"unexpected failure: {error}")
    return EXIT_NUMERICAL


def file_names(config: ExperimentConfig) -> dict:
    """Output file name per artifact, each naming the config hash and seed."""
    tag = f"{config_hash(config)[:12]}_s{config.base_seed}"
    return {
        'distribution': f"distribution_{tag}.csv",
        'summary': f"summary_{tag}.json",
        'outcomes': f"outcomes_{tag}.csv",
        'convergence': f"convergence_{tag}.csv",
        'manifest': f"manifest_{tag}.json",
    }


def run_experiment(config: ExperimentConfig, store: Optional[ResultStore] = None) -> RunOutcome:
    """
    Run one configured experiment and write its artifacts.

    Results are written before the manifest; a failed run leaves an
    error.json record instead of a manifest. Both outcomes are appended to
    the run log.

    Returns:
        RunOutcome with exit code 0, 1 (configuration) or 2 (numerical failure)
    """
    store = store or ResultStore(config.output_dir)
    chash = config_hash(config)
    names = file_names(config)
    run_dir = store.run_dir(config.run_name)
    started = time.perf_counter()
    log_row = dict(run_name=config.run_name, model=config.model, config_hash=chash,
                   seed=config.base_seed, run_dir=str(run_dir))

    try:
        with store.open_run(config.run_name) as run_dir:
            result = create_experiment(config).run()
            files = []
            if result.distribution is not None:
                files.append(store.write_table(run_dir, names['distribution'],
                                               distribution_frame(result.distribution)))
            if result.outcomes is not None:
                files.append(store.write_table(run_dir, names['outcomes'], result.outcomes))
            if result.convergence is not None:
                files.append(store.write_table(run_dir, names['convergence'], result.convergence))
            summary = asdict(result.summary)
            summary.update(config_hash=chash, seed=config.base_seed)
            files.append(store.write_json(run_dir, names['summary'], summary))

            wall_time = time.perf_counter() - started
            manifest = {
                'run_name': config.run_name,
                'config': config.model_dump(),
                'config_hash': chash,
                'seed': config.base_seed,
                'code_version': __version__,
                'wall_time_s': wall_time,
                'created_at': datetime.now().isoformat(timespec='seconds'),
                'files': [p.name for p in files],
            }
            files.append(store.write_json(run_dir, names['manifest'], manifest))
    except Exception as e:
        code = exit_code_for(e)
        store.write_error(run_dir, code, e)
        store.log_run(status='failed', exit_code=code,
                      wall_time_s=time.perf_counter() - started, **log_row)
        return RunOutcome(config.run_name, code, run_dir, error=f"{type(e).__name__}: {e}")

    store.log_run(status='ok', exit_code=EXIT_OK, detected_mass=summary['detected_mass'],
                  p_never=summary['p_never'], wall_time_s=wall_time, **log_row)
    logger.info(f"run {config.run_name} finished in {wall_time:.2f}s ({len(files)} files)")
    return RunOutcome(config.run_name, EXIT_OK, run_dir, files=files, summary=summary)


def record_config_error(path: str, error: ConfigError, store: Optional[ResultStore] = None) -> Path:
    """error.json for a configuration file that never produced a config."""
    store = store or ResultStore()
    run_name = Path(path).stem
    run_dir = store.run_dir(run_name)
    written = store.write_error(run_dir, EXIT_CONFIG, error)
    store.log_run(run_name=run_name, status='failed', exit_code=EXIT_CONFIG, run_dir=str(run_dir))
    return written


def run_sweep(
    config: ExperimentConfig,
    key: str,
    values: Sequence[str],
    store: Optional[ResultStore] = None,
    workers: int = 1,
) -> List[Tuple[str, RunOutcome]]:
    """
    Re-run `config` once per value of `key`, each under <run_name>/<key>=<value>.

    Every point is validated before any runs.

    Raises:
        ConfigError: listing the problems of every invalid point
    """
    points, errors = [], []
    for value in values:
        try:
            points.append((value, override(config, key, value,
                                           run_name=f"{config.run_name}/{key}={value}")))
        except ConfigError as e:
            errors.extend(f"{key}={value}: {message}" for message in e.errors)
    if errors:
        raise ConfigError(errors)

    store = store or ResultStore(config.output_dir)

    def run(point):
        value, point_config = point
        return value, run_experiment(point_config, store)

    if workers <= 1:
        return [run(point) for point in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, points))
