"""
K-fold cross-validation of the estimate / calibrate / predict pipeline
Reports the RMSE and IC (interval coverage) criteria, plus the RMSE of the
calibrated computer model alone on the same folds
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from sklearn.decomposition import PCA
from sklearn.model_selection import KFold

from config import OptimizerConfig
from exceptions import EstimationFailedError, FoldTooSmallError, UsageError
from gpmodel import Design, LinearModel, Observations, Prior, assemble, svd_column_space
from infer import CalibrationResult, ConfidenceLevel, calibrate, predict_batch
from kernels import CovarianceSpec, KernelFamily, NoiseSpec, initial_spec
from pool import map_ordered
from reml import estimate_hyperparameters

logger = logging.getLogger(__name__)


class CvMode(str, Enum):
    REFIT = 'refit'
    FIXED = 'fixed'


@dataclass(frozen=True, eq=False)
class FoldPartition:
    """Fold index in [0, K) for every observation"""

    assignments: np.ndarray
    K: int

    def __post_init__(self):
        assignments = np.asarray(self.assignments, dtype=int).reshape(-1)
        if self.K < 2:
            raise UsageError(f"Need at least 2 folds, got {self.K}")
        if assignments.min() < 0 or assignments.max() >= self.K:
            raise UsageError(f"Fold assignments must lie in [0, {self.K})")
        empty = [k for k in range(self.K) if not np.any(assignments == k)]
        if empty:
            raise UsageError(f"Empty folds: {empty}")
        assignments.setflags(write=False)
        object.__setattr__(self, 'assignments', assignments)

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> List[int]:
        return [int(np.count_nonzero(self.assignments == k)) for k in range(self.K)]


def partition(design: Design, K: int, seed: int = 0, method: str = 'principal') -> FoldPartition:
    """
    Split the design into K folds spread over the experimental domain.

    'principal' sorts the normalized points along their first principal
    direction (seeded random tie-break) and deals them round-robin; 'shuffle'
    is a seeded shuffled KFold. Fold sizes differ by at most one.

    Args:
        design: Design to split
        K: Number of folds, 2 <= K <= n
        seed: Random seed
        method: 'principal' or 'shuffle'

    Returns:
        FoldPartition
    """
    n = design.n
    if not 2 <= K <= n:
        raise UsageError(f"Number of folds must satisfy 2 <= K <= n = {n}, got {K}")

    assignments = np.empty(n, dtype=int)
    if method == 'shuffle':
        splitter = KFold(n_splits=K, shuffle=True, random_state=seed)
        for fold, (_, test) in enumerate(splitter.split(design.points)):
            assignments[test] = fold
        return FoldPartition(assignments, K)
    if method != 'principal':
        raise UsageError(f"Unknown partition method: '{method}'")

    z = design.normalized
    if z.shape[1] == 0 or np.ptp(z, axis=0).max() == 0:
        score = np.zeros(n)
    else:
        score = PCA(n_components=1).fit_transform(z)[:, 0]

    tie_break = np.random.default_rng(seed).permutation(n)
    order = np.lexsort((tie_break, score))
    assignments[order] = np.arange(n) % K
    return FoldPartition(assignments, K)


@dataclass(frozen=True, eq=False)
class FoldResult:
    fold: int
    test_rows: np.ndarray
    spec: CovarianceSpec
    calibration: CalibrationResult
    means: np.ndarray
    variances: np.ndarray
    interval_variances: np.ndarray
    residuals: np.ndarray
    baseline_residuals: np.ndarray
    covered: np.ndarray

    @property
    def n_test(self) -> int:
        return self.test_rows.shape[0]

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean(self.residuals ** 2)))

    @property
    def coverage(self) -> float:
        return float(np.count_nonzero(self.covered)) / self.n_test

    def to_dict(self) -> dict:
        return {
            'fold': self.fold,
            'n_test': self.n_test,
            'rmse': self.rmse,
            'coverage': self.coverage,
            'spec': self.spec.to_dict(),
            'calibration': self.calibration.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class CvReport:
    """
    Cross-validation criteria.

    rmse and baseline_rmse are computed over the held-out residuals taken in
    fold order; ic is the covered count over n.
    """

    rmse: float
    ic: float
    baseline_rmse: float
    per_fold: Tuple[FoldResult, ...]
    mode: CvMode
    kernel: KernelFamily
    level: ConfidenceLevel
    n: int

    def residuals(self) -> np.ndarray:
        """Held-out residuals (prediction - observation) by original row"""
        out = np.empty(self.n)
        for fold in self.per_fold:
            out[fold.test_rows] = fold.residuals
        return out

    def to_dict(self) -> dict:
        return {
            'kernel': self.kernel.value,
            'mode': self.mode.value,
            'level': self.level.value,
            'n': self.n,
            'folds': len(self.per_fold),
            'rmse': self.rmse,
            'ic': self.ic,
            'baseline_rmse': self.baseline_rmse,
            'per_fold': [fold.to_dict() for fold in self.per_fold],
        }


def _check_fold_sizes(linmodel: LinearModel, folds: FoldPartition):
    for fold in range(folds.K):
        train = folds.train_rows(fold)
        _, _, rank = svd_column_space(linmodel.H[train])
        if train.shape[0] <= rank:
            raise FoldTooSmallError(
                f"Fold {fold}: training set has {train.shape[0]} observations, rank(H_train) = {rank}",
                fold=fold
            )


def _run_fold(job) -> FoldResult:
    """Estimate (refit mode), calibrate and predict one held-out fold"""
    (fold, train, test, design, obs, linmodel, noise, prior, start_spec, fixed_spec,
     optimizer_config, noise_in_interval, level) = job

    train_noise = noise.subset(train)
    model = assemble(
        design.subset(train), obs.subset(train), linmodel.subset(train), start_spec, train_noise, prior
    )

    spec = fixed_spec
    if spec is None:
        try:
            spec = estimate_hyperparameters(model, optimizer_config).spec
        except EstimationFailedError as e:
            raise EstimationFailedError(f"Fold {fold}: {e}", trace=e.trace) from e
    model = model.with_covariance(spec)

    calib = calibrate(model)
    H_test = linmodel.H[test]
    predictions = predict_batch(model, calib, design.points[test], H_new=H_test)

    y_test = obs.y[test]
    means = np.array([p.mean for p in predictions])
    variances = np.array([p.variance for p in predictions])
    interval_variances = variances.copy()
    if noise_in_interval:
        interval_variances = interval_variances + noise.variances(obs.n)[test]

    residuals = means - y_test
    covered = np.abs(residuals) <= level.multiplier * np.sqrt(interval_variances)

    return FoldResult(
        fold=fold,
        test_rows=test,
        spec=spec,
        calibration=calib,
        means=means,
        variances=variances,
        interval_variances=interval_variances,
        residuals=residuals,
        baseline_residuals=H_test @ calib.beta - y_test,
        covered=covered
    )


def run_cv(
    design: Design,
    obs: Observations,
    linmodel: LinearModel,
    noise: NoiseSpec,
    kernel: KernelFamily,
    folds: FoldPartition,
    mode: CvMode = CvMode.REFIT,
    optimizer_config: Optional[OptimizerConfig] = None,
    prior: Optional[Prior] = None,
    hyperparameters: Optional[CovarianceSpec] = None,
    noise_in_interval: bool = True,
    level: ConfidenceLevel = ConfidenceLevel.P90,
    n_jobs: int = 1
) -> CvReport:
    """
    K-fold cross-validation.

    Held-out observations never enter estimation, calibration or prediction of
    their own fold. In REFIT mode hyper-parameters are re-estimated on every
    training set; in FIXED mode they are estimated once on all data (or taken
    from hyperparameters when given).

    Args:
        design: Design (raw points)
        obs: Observations in shifted coordinates
        linmodel: Linear model with cached H
        noise: Measurement noise
        kernel: Correlation family
        folds: Fold partition
        mode: CvMode.REFIT or CvMode.FIXED
        optimizer_config: REML optimizer settings
        prior: Optional prior on beta (selects the Bayesian regime)
        hyperparameters: Fixed hyper-parameters for FIXED mode
        noise_in_interval: Add the held-out measurement-noise variance to the IC interval
        level: Interval level of the IC criterion (P90 by default)
        n_jobs: Worker processes for the folds

    Returns:
        CvReport
    """
    mode = CvMode(mode)
    kernel = KernelFamily.from_name(kernel)
    optimizer_config = optimizer_config or OptimizerConfig()
    if folds.n != design.n:
        raise UsageError(f"Partition covers {folds.n} observations, design has {design.n}")
    _check_fold_sizes(linmodel, folds)

    start_spec = initial_spec(kernel, design.d_active)
    fixed_spec = None
    if mode is CvMode.FIXED:
        if hyperparameters is not None:
            fixed_spec = hyperparameters
        else:
            logger.warning("⚠ FIXED mode without hyper-parameters: estimating on all data, "
                           "held-out points inform the hyper-parameters")
            full = assemble(design, obs, linmodel, start_spec, noise, prior)
            fixed_spec = estimate_hyperparameters(full, optimizer_config).spec
        logger.info(f"Fixed hyper-parameters for all folds: {fixed_spec.to_dict()}")

    if n_jobs is not None and n_jobs != 1:
        # Fold workers run their REML starts inline
        optimizer_config = replace(optimizer_config, n_jobs=1)

    jobs = [
        (fold, folds.train_rows(fold), folds.test_rows(fold), design, obs, linmodel, noise, prior,
         start_spec, fixed_spec, optimizer_config, noise_in_interval, level)
        for fold in range(folds.K)
    ]
    results = tuple(map_ordered(_run_fold, jobs, n_jobs))

    residuals = np.concatenate([r.residuals for r in results])
    baseline = np.concatenate([r.baseline_residuals for r in results])
    covered = sum(int(np.count_nonzero(r.covered)) for r in results)
    n = design.n

    report = CvReport(
        rmse=float(np.sqrt(np.sum(residuals ** 2) / n)),
        ic=covered / n,
        baseline_rmse=float(np.sqrt(np.sum(baseline ** 2) / n)),
        per_fold=results,
        mode=mode,
        kernel=kernel,
        level=level,
        n=n
    )
    logger.info(
        f"✓ CV ({kernel.value}, {mode.value}, K={folds.K}): RMSE={report.rmse:.6g}, "
        f"IC={report.ic:.3f}, calibrated model alone RMSE={report.baseline_rmse:.6g}"
    )
    return report


def rmse_baseline_calibrated_model(
    design: Design,
    obs: Observations,
    linmodel: LinearModel,
    noise: NoiseSpec,
    kernel: KernelFamily,
    folds: FoldPartition,
    **kwargs
) -> float:
    """CV RMSE of the calibrated computer model h(x)^t beta alone, on the same folds as run_cv"""
    return run_cv(design, obs, linmodel, noise, kernel, folds, **kwargs).baseline_rmse
