"""Result directories, file writers and the run log."""

import json
import logging
import math
import os
import threading
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from models.domain import DetectionDistribution

load_dotenv()

logger = logging.getLogger("storage.results")

RUNS_LOG = 'runs_log.csv'
ERROR_FILE = 'error.json'
LOG_COLUMNS = [
    'finished_at', 'run_name', 'model', 'config_hash', 'seed', 'status', 'exit_code',
    'detected_mass', 'p_never', 'wall_time_s', 'run_dir',
]


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _clean(value):
    """NaN and infinities become null so the JSON stays standard."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (float, np.floating)) and not math.isfinite(value):
        return None
    return value


def distribution_frame(dist: DetectionDistribution) -> pd.DataFrame:
    """One row per time bin; mass_bulk only when the model books bulk detections."""
    frame = pd.DataFrame({
        't_bin_start': dist.time_edges[:-1],
        't_bin_end': dist.time_edges[1:],
        'mass_left': dist.mass_left,
        'mass_right': dist.mass_right,
    })
    if dist.mass_bulk is not None:
        frame['mass_bulk'] = dist.mass_bulk
    return frame


class ResultStore:
    """
    Owns the output root: one directory per run plus a shared run log.

    ABR_OUTPUT_DIR, when set, wins over the root passed in.
    """

    def __init__(self, root: Optional[Union[str, Path]] = None):
        self.root = Path(os.getenv('ABR_OUTPUT_DIR') or root or 'results')
        self._log_lock = threading.Lock()

    def run_dir(self, run_name: str) -> Path:
        return self.root / run_name

    @contextmanager
    def open_run(self, run_name: str):
        """Context manager for a run directory; clears a stale error record."""
        path = self.run_dir(run_name)
        path.mkdir(parents=True, exist_ok=True)
        stale = path / ERROR_FILE
        if stale.exists():
            stale.unlink()
        try:
            yield path
        except Exception as e:
            logger.error(f"run {run_name} failed: {e}")
            raise

    def write_table(self, run_dir: Path, name: str, frame: pd.DataFrame) -> Path:
        path = run_dir / name
        frame.to_csv(path, index=False, float_format='%.17g')
        logger.debug(f"wrote {len(frame)} rows to {path}")
        return path

    def write_json(self, run_dir: Path, name: str, data: Dict[str, Any]) -> Path:
        path = run_dir / name
        path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True, default=_json_default) + "\n")
        return path

    def write_error(self, run_dir: Path, exit_code: int, error: Exception) -> Path:
        """Machine-readable failure record."""
        errors = getattr(error, 'errors', None)
        record = {
            'status': 'failed',
            'exit_code': exit_code,
            'error_type': type(error).__name__,
            'errors': list(errors) if isinstance(errors, list) else [str(error)],
        }
        run_dir.mkdir(parents=True, exist_ok=True)
        return self.write_json(run_dir, ERROR_FILE, record)

    def log_run(self, **row):
        """Append one row to the run log."""
        row.setdefault('finished_at', datetime.now().isoformat(timespec='seconds'))
        frame = pd.DataFrame([{column: row.get(column) for column in LOG_COLUMNS}])
        path = self.root / RUNS_LOG
        with self._log_lock:
            self.root.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, mode='a', header=not path.exists(), index=False)

    def load_runs(self) -> pd.DataFrame:
        path = self.root / RUNS_LOG
        if not path.exists():
            return pd.DataFrame(columns=LOG_COLUMNS)
        return pd.read_csv(path)

    def load_summaries(self, run_name: str) -> List[Dict[str, Any]]:
        """Every summary file stored for a run, newest seed last."""
        paths = sorted(self.run_dir(run_name).glob('summary_*.json'))
        return [json.loads(p.read_text()) for p in paths]

    def load_error(self, run_name: str) -> Optional[Dict[str, Any]]:
        path = self.run_dir(run_name) / ERROR_FILE
        if not path.exists():
            return None
        return json.loads(path.read_text())


store = ResultStore()
