"""
Configuration for the calibration toolkit
Environment defaults (Config) plus the JSON run configuration (RunConfig)
"""

import os
import json
import logging
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from exceptions import ConfigError
from kernels import KernelFamily, NoiseSpec

logger = logging.getLogger(__name__)


class Config:
    """Process-wide defaults"""

    # File Storage
    OUTPUT_DIR = os.getenv('GPCAL_OUTPUT_DIR', str(Path(__file__).parent.parent / 'output'))
    LOG_DIR = os.getenv('GPCAL_LOG_DIR', str(Path(__file__).parent.parent / 'logs'))
    LOG_LEVEL = os.getenv('GPCAL_LOG_LEVEL', 'INFO')

    # Execution
    N_JOBS = int(os.getenv('GPCAL_N_JOBS', 1))
    DEFAULT_SEED = int(os.getenv('GPCAL_SEED', 0))

    # Report file names
    FIT_REPORT = 'fit.json'
    CALIBRATION_REPORT = 'calibration.json'
    PREDICTION_REPORT = 'predictions.json'
    PREDICTION_TABLE = 'predictions.csv'
    CV_REPORT = 'cv_report.json'
    CV_TABLE = 'cv_predictions.csv'


@dataclass(frozen=True)
class OptimizerConfig:
    """Multi-start Nelder-Mead settings for REML estimation"""

    n_starts: int = 10
    max_iters: int = 400
    tolerance: float = 1e-6
    seed: int = Config.DEFAULT_SEED
    estimate_lengths: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_starts < 1:
            raise ConfigError(f"optimizer.n_starts must be >= 1, got {self.n_starts}")
        if self.max_iters < 1:
            raise ConfigError(f"optimizer.max_iters must be >= 1, got {self.max_iters}")
        if not self.tolerance > 0:
            raise ConfigError(f"optimizer.tolerance must be > 0, got {self.tolerance}")


@dataclass(frozen=True)
class CvConfig:
    """K-fold cross-validation settings"""

    folds: int = 10
    seed: int = Config.DEFAULT_SEED
    mode: str = 'refit'
    partitioner: str = 'principal'
    noise_in_interval: bool = True

    def __post_init__(self):
        if self.mode not in ('refit', 'fixed'):
            raise ConfigError(f"cv.mode must be 'refit' or 'fixed', got '{self.mode}'")
        if self.partitioner not in ('principal', 'shuffle'):
            raise ConfigError(f"cv.partitioner must be 'principal' or 'shuffle', got '{self.partitioner}'")


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement-noise covariance: sigma_mes or a full matrix"""

    sigma_mes: float = 0.0
    matrix: Optional[List[List[float]]] = None

    def to_spec(self) -> NoiseSpec:
        if self.matrix is not None:
            return NoiseSpec.full_matrix(np.asarray(self.matrix, dtype=float))
        return NoiseSpec.homoscedastic(float(self.sigma_mes))


@dataclass(frozen=True)
class PriorConfig:
    """Gaussian prior on the model parameters (unshifted coordinates)"""

    mean: List[float]
    covariance: List[List[float]]

    def to_prior(self):
        from gpmodel import Prior
        return Prior(np.asarray(self.mean, dtype=float), np.asarray(self.covariance, dtype=float))


@dataclass(frozen=True)
class HyperparameterConfig:
    """Fixed covariance hyper-parameters (skips REML estimation when given)"""

    sigma2: float
    lengths: List[float]


@dataclass(frozen=True)
class IoConfig:
    data: Optional[str] = None
    new_points: Optional[str] = None
    out_dir: str = Config.OUTPUT_DIR


@dataclass(frozen=True)
class SchemaConfig:
    """Column layout of the input data file"""

    conditions: List[str] = field(default_factory=list)
    output: str = 'y'
    h_columns: List[str] = field(default_factory=list)
    nominal: Optional[str] = None
    delimiter: str = ','


@dataclass(frozen=True)
class RunConfig:
    """Complete configuration of one CLI run"""

    kernel: KernelFamily = KernelFamily.MATERN32
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    prior: Optional[PriorConfig] = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    cv: CvConfig = field(default_factory=CvConfig)
    io: IoConfig = field(default_factory=IoConfig)
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    hyperparameters: Optional[HyperparameterConfig] = None
    beta_nominal: Optional[List[float]] = None
    level: str = 'P95'

    def __post_init__(self):
        if self.level not in ('P90', 'P95'):
            raise ConfigError(f"level must be 'P90' or 'P95', got '{self.level}'")


_SECTIONS = {
    'noise': NoiseConfig,
    'prior': PriorConfig,
    'optimizer': OptimizerConfig,
    'cv': CvConfig,
    'io': IoConfig,
    'schema': SchemaConfig,
    'hyperparameters': HyperparameterConfig,
}


def _build_section(cls, raw: Any, section: str):
    """Instantiate a config dataclass, rejecting unknown keys"""
    if not isinstance(raw, dict):
        raise ConfigError(f"Section '{section}' must be an object, got {type(raw).__name__}")

    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{section}': {', '.join(unknown)}")

    try:
        return cls(**raw)
    except TypeError as e:
        raise ConfigError(f"Invalid section '{section}': {e}") from e


def parse_run_config(raw: Dict[str, Any]) -> RunConfig:
    """
    Build a RunConfig from a decoded JSON object.

    Args:
        raw: Mapping decoded from the config file

    Returns:
        Validated RunConfig
    """
    if not isinstance(raw, dict):
        raise ConfigError("Config root must be a JSON object")

    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"Unknown top-level key(s): {', '.join(unknown)}")

    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            values[key] = None if value is None else _build_section(_SECTIONS[key], value, key)
        elif key == 'kernel':
            try:
                values[key] = KernelFamily.from_name(value)
            except ValueError as e:
                raise ConfigError(str(e)) from e
        else:
            values[key] = value

    return RunConfig(**values)


def load_run_config(config_path: Optional[str] = None) -> RunConfig:
    """
    Load the run configuration from a JSON file.

    Args:
        config_path: Path to the JSON config (defaults when None)

    Returns:
        RunConfig
    """
    if config_path is None:
        logger.info("No config file given, using defaults")
        return RunConfig()

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {config_path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Error parsing config {config_path}: {e}") from e

    run_config = parse_run_config(raw)
    logger.info(f"✓ Loaded config: {config_path} (kernel={run_config.kernel.value})")
    return run_config


def config_to_dict(value: Any) -> Any:
    """Plain-JSON view of a config object, used in report headers"""
    if is_dataclass(value):
        return {f.name: config_to_dict(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, KernelFamily):
        return value.value
    if isinstance(value, (list, tuple)):
        return [config_to_dict(v) for v in value]
    return value


def with_overrides(run_config: RunConfig, **overrides) -> RunConfig:
    """
    Apply command-line overrides to a RunConfig.

    Recognized keys: data, new_points, out_dir, seed, kernel, folds, mode, n_jobs.
    None values are ignored.
    """
    from dataclasses import replace

    updates = {k: v for k, v in overrides.items() if v is not None}
    io = run_config.io
    optimizer = run_config.optimizer
    cv = run_config.cv
    kernel = run_config.kernel

    io_updates = {k: updates[k] for k in ('data', 'new_points', 'out_dir') if k in updates}
    if io_updates:
        io = replace(io, **io_updates)
    if 'seed' in updates:
        optimizer = replace(optimizer, seed=int(updates['seed']))
        cv = replace(cv, seed=int(updates['seed']))
    if 'n_jobs' in updates:
        optimizer = replace(optimizer, n_jobs=int(updates['n_jobs']))
    if 'folds' in updates:
        cv = replace(cv, folds=int(updates['folds']))
    if 'mode' in updates:
        cv = replace(cv, mode=updates['mode'])
    if 'kernel' in updates:
        try:
            kernel = KernelFamily.from_name(updates['kernel'])
        except ValueError as e:
            raise ConfigError(str(e)) from e

    return replace(run_config, io=io, optimizer=optimizer, cv=cv, kernel=kernel)
