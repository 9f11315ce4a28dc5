"""
Experiment configuration files.

An experiment is described by a KEY=value file in the dotenv format:
comments start with '#', values may be quoted. parse_config validates the
whole file and reports every problem it finds in one ConfigError.
"""

import hashlib
import io
import math
import re
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from dotenv.parser import parse_stream
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from models.domain import PhysicalConstants
from simulators.propagator import default_resolution


MODELS = ('abr', 'soft', 'grw_constant', 'grw_first_detection', 'limit_study')

# packet momentum spreads added to k0 when sizing a default grid
MOMENTUM_SPREADS = 3.0

_PLAIN_VALUE = re.compile(r'^[A-Za-z0-9_.+\-/=:]*$')


class ConfigError(Exception):
    """Invalid experiment configuration; `errors` lists every problem found."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ExperimentConfig(BaseModel):
    """Resolved experiment parameters. Field order is the serialization order."""

    model_config = ConfigDict(extra='forbid')

    model: Literal['abr', 'soft', 'grw_constant', 'grw_first_detection', 'limit_study']
    run_name: Optional[str] = Field(None, pattern=r'^[A-Za-z0-9_.=\-]+(/[A-Za-z0-9_.=\-]+)*$')
    geometry: Literal['line', 'radial'] = 'line'

    # grid
    x_min: float = 0.0
    x_max: float
    n_points: Optional[int] = Field(None, ge=3)
    hbar: float = Field(1.0, gt=0)
    mass: float = Field(1.0, gt=0)

    # initial state
    packet_center: Optional[float] = None
    packet_width: Optional[float] = Field(None, gt=0)
    packet_momentum: Optional[float] = None
    initial_state_file: Optional[str] = None

    # potential
    barrier_height: float = 0.0
    barrier_left: float = 0.0
    barrier_right: float = 0.0

    # boundaries
    bc_left: Literal['dirichlet', 'neumann', 'robin', 'absorbing'] = 'neumann'
    bc_right: Literal['dirichlet', 'neumann', 'robin', 'absorbing'] = 'absorbing'
    kappa_left: Optional[float] = Field(None, gt=0)
    kappa_right: Optional[float] = Field(None, gt=0)
    robin_alpha_left: float = 0.0
    robin_alpha_right: float = 0.0

    # time stepping and bookkeeping
    dt: Optional[float] = Field(None, gt=0)
    t_max: float = Field(gt=0)
    n_bins: int = Field(200, ge=1)
    eps_tol: float = Field(1e-8, gt=0)

    # collapse process
    sigma: Optional[float] = Field(None, gt=0)
    lambda0: float = Field(0.0, ge=0)
    rate_value: float = Field(0.0, ge=0)
    rate_left: Optional[float] = None
    rate_right: Optional[float] = None
    jump_mode: Literal['gaussian_root', 'rate_operator'] = 'gaussian_root'
    smeared_absorption: bool = False

    # soft layer and limit study
    layer_length: Optional[float] = Field(None, gt=0)
    layer_rate: Optional[float] = Field(None, ge=0)
    layer_kappa: Optional[float] = Field(None, gt=0)
    layer_levels: int = Field(6, ge=1)
    outer_bc: Literal['neumann', 'robin'] = 'neumann'
    outer_alpha: float = 0.0
    tv_target: float = Field(0.05, gt=0, le=1)

    # ensembles and output
    ensemble_size: int = Field(1000, ge=1)
    base_seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    output_dir: str = 'results'

    @model_validator(mode='after')
    def check_consistency(self) -> 'ExperimentConfig':
        errors = fill_default_resolution(self) + consistency_errors(self)
        if errors:
            raise ValueError("\n".join(errors))
        if self.run_name is None:
            object.__setattr__(self, 'run_name', self.model)
        return self

    @property
    def is_stochastic(self) -> bool:
        return self.model in ('grw_constant', 'grw_first_detection')


def fill_default_resolution(config: ExperimentConfig) -> List[str]:
    """
    Fill an omitted n_points from the packet's fastest momentum and an
    omitted dt from the grid spacing, dt = dx^2 m / hbar.
    """
    errors = []
    if not config.x_max > config.x_min:
        return errors
    if config.n_points is None:
        if config.packet_width is None or config.packet_momentum is None:
            errors.append("n_points: required unless packet_momentum and packet_width are given")
            return errors
        k_max = abs(config.packet_momentum) + MOMENTUM_SPREADS / (2.0 * config.packet_width)
        dx, _ = default_resolution(k_max, PhysicalConstants(hbar=config.hbar, mass=config.mass))
        object.__setattr__(config, 'n_points', max(math.ceil((config.x_max - config.x_min) / dx) + 1, 3))
    if config.dt is None:
        dx = (config.x_max - config.x_min) / (config.n_points - 1)
        object.__setattr__(config, 'dt', dx ** 2 * config.mass / config.hbar)
    return errors


def consistency_errors(config: ExperimentConfig) -> List[str]:
    """Cross-field rules; each message names the fields involved."""
    errors = []
    if not config.x_max > config.x_min:
        errors.append(f"x_max: must exceed x_min ({config.x_max} <= {config.x_min})")
    if config.dt is not None and config.t_max < config.dt:
        errors.append(f"t_max: must be at least dt ({config.t_max} < {config.dt})")
    if config.initial_state_file is not None and not Path(config.initial_state_file).is_file():
        errors.append(f"initial_state_file: no such file {config.initial_state_file!r}")
    if config.initial_state_file is None:
        for name in ('packet_center', 'packet_width', 'packet_momentum'):
            if getattr(config, name) is None:
                errors.append(f"{name}: required unless initial_state_file is given")
    if config.barrier_right < config.barrier_left:
        errors.append("barrier_right: must not lie left of barrier_left")
    # the layer's outer wall replaces bc_right for the layered models
    sides = ('left',) if config.model in ('soft', 'limit_study') else ('left', 'right')
    absorbing = [s for s in sides if getattr(config, f'bc_{s}') == 'absorbing']
    for side in absorbing:
        if getattr(config, f'kappa_{side}') is None:
            errors.append(f"kappa_{side}: required when bc_{side}=absorbing")
    if config.model == 'abr' and not absorbing:
        errors.append("bc_left/bc_right: the abr model needs at least one absorbing side")
    if config.model == 'soft':
        for name in ('layer_length', 'layer_rate'):
            if getattr(config, name) is None:
                errors.append(f"{name}: required for model=soft")
    if config.model == 'limit_study':
        for name in ('layer_length', 'layer_kappa'):
            if getattr(config, name) is None:
                errors.append(f"{name}: required for model=limit_study")
    if config.model in ('soft', 'limit_study') and config.bc_left == 'absorbing':
        errors.append(f"bc_left: must be reflecting for model={config.model}")
    if config.model == 'grw_constant' and config.lambda0 <= 0:
        errors.append("lambda0: must be positive for model=grw_constant")
    if config.model == 'grw_first_detection' and config.rate_value <= 0:
        errors.append("rate_value: must be positive for model=grw_first_detection")
    if config.is_stochastic:
        for side in absorbing:
            errors.append(f"bc_{side}: collapse models need reflecting walls, not absorbing")
    rate_left = config.x_min if config.rate_left is None else config.rate_left
    rate_right = config.x_max if config.rate_right is None else config.rate_right
    if rate_right <= rate_left:
        errors.append("rate_right: must exceed rate_left")
    if config.geometry == 'radial':
        if config.model != 'abr':
            errors.append(f"geometry: radial is only supported for model=abr, not {config.model}")
        if config.x_min != 0:
            errors.append("x_min: must be 0 for geometry=radial")
        if config.bc_left != 'dirichlet':
            errors.append("bc_left: must be dirichlet for geometry=radial")
    return errors


def _format_error(error: Dict[str, Any]) -> List[str]:
    loc = ".".join(str(part) for part in error['loc'])
    if error['type'] == 'extra_forbidden':
        return [f"{loc}: unknown key"]
    if error['type'] == 'missing':
        return [f"{loc}: missing required field"]
    if not loc:
        message = error['msg']
        if message.startswith('Value error, '):
            message = message[len('Value error, '):]
        return message.split("\n")
    return [f"{loc}: {error['msg']} (got {error.get('input')!r})"]


def _validate(values: Dict[str, str], errors: List[str]) -> ExperimentConfig:
    try:
        config = ExperimentConfig(**values)
    except ValidationError as e:
        for error in e.errors():
            errors.extend(_format_error(error))
        raise ConfigError(errors) from None
    if errors:
        raise ConfigError(errors)
    return config


def read_bindings(text: str) -> Dict[str, str]:
    """
    Collect KEY=value bindings from `text`.

    Raises:
        ConfigError: malformed lines, keys without values or duplicate keys
    """
    values, errors = _read_bindings(text)
    if errors:
        raise ConfigError(errors)
    return values


def _read_bindings(text: str):
    values: Dict[str, str] = {}
    seen = defaultdict(list)
    errors = []
    for binding in parse_stream(io.StringIO(text)):
        line = binding.original.line
        if binding.error:
            errors.append(f"line {line}: cannot parse {binding.original.string.strip()!r}")
            continue
        if binding.key is None:
            continue
        seen[binding.key].append(line)
        if binding.value is None:
            errors.append(f"{binding.key}: no value given (line {line})")
            continue
        if binding.value == '':
            continue
        values[binding.key] = binding.value
    for key, lines in seen.items():
        if len(lines) > 1:
            where = ", ".join(f"line {n}" for n in lines)
            errors.append(f"{key}: duplicate key ({where})")
    return values, errors


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate an experiment configuration.

    Args:
        text: KEY=value lines

    Returns:
        Fully validated ExperimentConfig with defaults filled in

    Raises:
        ConfigError: carrying every duplicate, unknown key, range error,
            missing field and cross-field violation found
    """
    values, errors = _read_bindings(text)
    return _validate(values, errors)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError([f"cannot read {path}: {e.strerror or e}"]) from e
    return parse_config(text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if _PLAIN_VALUE.match(text):
        return text
    return "'" + text.replace("'", "\\'") + "'"


def serialize_config(config: ExperimentConfig) -> str:
    """KEY=value lines for every set field, in declaration order."""
    lines = []
    for name in ExperimentConfig.model_fields:
        value = getattr(config, name)
        if value is None:
            continue
        lines.append(f"{name}={_format_value(value)}")
    return "\n".join(lines) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the serialized configuration."""
    return hashlib.sha256(serialize_config(config).encode('utf-8')).hexdigest()


def override(config: ExperimentConfig, key: str, value: str, run_name: Optional[str] = None) -> ExperimentConfig:
    """Copy of `config` with one key re-parsed from text, fully revalidated."""
    values, errors = _read_bindings(serialize_config(config))
    if key not in ExperimentConfig.model_fields:
        raise ConfigError([f"{key}: unknown key"])
    values[key] = value
    if run_name is not None:
        values['run_name'] = run_name
    return _validate(values, errors)
