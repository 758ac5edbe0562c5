"""
Built-in demonstration problems
Parabola: a straight-line computer model calibrated against x -> x^2 from
three noiseless observations, with known hyper-parameters
Friction: synthetic pressure-drop campaigns, cross-validated for the four
correlation families
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import OptimizerConfig, SchemaConfig
from crossval import CvMode, CvReport, partition, run_cv
from dataset import Dataset, load_dataset, write_dataset
from exceptions import ContractViolation
from friction import (
    BETA_NOMINAL,
    CONDITION_LABELS,
    PRIOR_SD,
    SIGMA_MES,
    FrictionModel,
    generate_campaigns,
)
from gpmodel import (
    Design,
    GpModel,
    LinearModel,
    Observations,
    PolynomialBasis,
    Prior,
    assemble,
    finite_difference_jacobian,
)
from infer import (
    CalibrationResult,
    ConfidenceLevel,
    Prediction,
    Regime,
    calibrate,
    generalized_misfit,
    predict_batch,
)
from kernels import CovarianceSpec, KernelFamily, NoiseSpec
from reports import cv_table, prediction_table, write_json, write_table

logger = logging.getLogger(__name__)

PARABOLA_POINTS = (0.2, 0.5, 0.8)
PARABOLA_SIGMA = 0.3
PARABOLA_LENGTH = 0.5
PARABOLA_PRIOR_MEAN = (0.2, 1.0)
PARABOLA_PRIOR_COVARIANCE = ((0.09, 0.0), (0.0, 0.09))

FRICTION_SCHEMA = SchemaConfig(
    conditions=list(CONDITION_LABELS),
    output='dp',
    h_columns=['h_a_t', 'h_b_t'],
    nominal='dp_nominal'
)
FRICTION_DATASET = 'friction_dataset.csv'
FRICTION_COMPARISON = 'friction_comparison.csv'


def parabola_prior() -> Prior:
    return Prior(np.array(PARABOLA_PRIOR_MEAN), np.array(PARABOLA_PRIOR_COVARIANCE))


def parabola_model(regime=Regime.NO_PRIOR, prior: Optional[Prior] = None) -> GpModel:
    """Line model h(x) = (1, x) against three noiseless observations of x^2, Gaussian kernel sigma=0.3, l=0.5"""
    regime = Regime.from_name(regime)
    x = np.array(PARABOLA_POINTS)
    design = Design.from_points(x.reshape(-1, 1), labels=('x',), bounds=[(0.0, 1.0)])
    linmodel = LinearModel.from_basis(PolynomialBasis(1), design)
    cov = CovarianceSpec(KernelFamily.GAUSSIAN, PARABOLA_SIGMA ** 2, (PARABOLA_LENGTH,))
    if regime is Regime.PRIOR and prior is None:
        prior = parabola_prior()
    if regime is Regime.NO_PRIOR:
        prior = None
    return assemble(design, Observations(x ** 2), linmodel, cov, NoiseSpec(), prior)


@dataclass(frozen=True, eq=False)
class ParabolaResult:
    regime: Regime
    model: GpModel
    calibration: CalibrationResult
    grid: np.ndarray
    predictions: List[Prediction]
    table: pd.DataFrame


def demo_parabola(
    regime=Regime.NO_PRIOR,
    grid_size: int = 101,
    out_dir: Optional[str] = None,
    prior: Optional[Prior] = None
) -> ParabolaResult:
    """
    Calibrate and predict the parabola case with fixed hyper-parameters.

    Args:
        regime: Regime.NO_PRIOR or Regime.PRIOR
        grid_size: Number of prediction points on [0, 1], at least 2
        out_dir: Write the calibration report and the grid table here when given
        prior: Prior for the prior regime (beta_prior = (0.2, 1), Q = 0.09 I when None)

    Returns:
        ParabolaResult
    """
    regime = Regime.from_name(regime)
    if grid_size < 2:
        raise ContractViolation(f"grid_size must be at least 2, got {grid_size}")

    model = parabola_model(regime, prior)
    calib = calibrate(model)
    grid = np.linspace(0.0, 1.0, grid_size)
    predictions = predict_batch(model, calib, grid.reshape(-1, 1))
    table = prediction_table(grid.reshape(-1, 1), ['x'], predictions, ConfidenceLevel.P95, truth=grid ** 2)

    result = ParabolaResult(regime, model, calib, grid, predictions, table)
    if out_dir is not None:
        out = Path(out_dir)
        write_json(out / f'parabola_{regime.value}_calibration.json', {
            'regime': regime.value,
            'hyperparameters': model.cov.to_dict(),
            'calibration': calib.to_dict(),
            'generalized_misfit': generalized_misfit(model, calib.beta),
            'prior': model.prior.to_dict() if model.prior is not None else None,
            'observations': {'x': list(PARABOLA_POINTS), 'y': model.y.tolist()},
        })
        write_table(out / f'parabola_{regime.value}_grid.csv', table)
    return result


@dataclass(frozen=True, eq=False)
class FrictionDemoResult:
    dataset: Dataset
    folds: np.ndarray
    reports: Dict[str, CvReport]
    comparison: pd.DataFrame


def friction_prior() -> Prior:
    return Prior(np.array(BETA_NOMINAL), np.diag(np.square(PRIOR_SD)))


def build_friction_dataset(seed: int, n_iso: int, n_heated: int) -> Dataset:
    """Synthetic experiments with their finite-difference H and nominal outputs"""
    experiments = generate_campaigns(seed, n_iso, n_heated)
    design = Design.from_points(experiments.conditions, labels=experiments.labels)
    linmodel = finite_difference_jacobian(FrictionModel(), design, BETA_NOMINAL, prior=friction_prior())
    return Dataset(
        condition_names=tuple(FRICTION_SCHEMA.conditions),
        conditions=experiments.conditions,
        output_name=FRICTION_SCHEMA.output,
        y=experiments.y,
        h_names=tuple(FRICTION_SCHEMA.h_columns),
        H=linmodel.H,
        nominal_name=FRICTION_SCHEMA.nominal,
        nominal=linmodel.nominal_outputs
    )


def demo_friction(
    seed: int = 0,
    n_iso: int = 60,
    n_heated: int = 60,
    out_dir: Optional[str] = None,
    kernels: Sequence = tuple(KernelFamily),
    folds: int = 10,
    mode: CvMode = CvMode.REFIT,
    optimizer_config: Optional[OptimizerConfig] = None,
    isothermal_only: bool = False,
    partitioner: str = 'principal',
    n_jobs: int = 1
) -> FrictionDemoResult:
    """
    Cross-validate the synthetic friction campaigns for several correlation families.

    The dataset is written to out_dir and read back before use, so the CV runs
    on exactly what the file holds.

    Args:
        seed: Seed for data generation, fold partition and optimizer
        n_iso: Isothermal experiments
        n_heated: Heated experiments (ignored when isothermal_only)
        out_dir: Output directory for the dataset, CV reports and comparison table
        kernels: Correlation families to compare
        folds: Number of CV folds
        mode: CvMode.REFIT or CvMode.FIXED
        optimizer_config: REML settings (seeded with seed when None)
        isothermal_only: Keep only isothermal experiments (phi_w is then dropped from the kernel)
        partitioner: 'principal' or 'shuffle'
        n_jobs: Worker processes for the folds

    Returns:
        FrictionDemoResult
    """
    optimizer_config = optimizer_config or OptimizerConfig(seed=seed)
    dataset = build_friction_dataset(seed, n_iso, 0 if isothermal_only else n_heated)

    if out_dir is not None:
        path = write_dataset(dataset, Path(out_dir) / FRICTION_DATASET)
        dataset = load_dataset(path, FRICTION_SCHEMA)

    design = dataset.design()
    linmodel = dataset.linear_model(design, BETA_NOMINAL)
    obs = dataset.observations(linmodel)
    noise = NoiseSpec.homoscedastic(SIGMA_MES)
    prior = friction_prior()
    split = partition(design, folds, seed, partitioner)

    reports: Dict[str, CvReport] = {}
    rows = []
    for kernel in kernels:
        kernel = KernelFamily.from_name(kernel)
        logger.info(f"Friction demo: {kernel.value}, K={folds}, mode={CvMode(mode).value}")
        report = run_cv(
            design, obs, linmodel, noise, kernel, split,
            mode=mode,
            optimizer_config=optimizer_config,
            prior=prior,
            level=ConfidenceLevel.P90,
            n_jobs=n_jobs
        )
        reports[kernel.value] = report
        rows.append({
            'kernel': kernel.value,
            'rmse': report.rmse,
            'baseline_rmse': report.baseline_rmse,
            'ratio': report.rmse / report.baseline_rmse,
            'ic': report.ic,
        })

        if out_dir is not None:
            out = Path(out_dir)
            write_json(out / f'friction_cv_{kernel.value}.json', report.to_dict())
            write_table(
                out / f'friction_cv_{kernel.value}.csv',
                cv_table(report, dataset.conditions, dataset.condition_names, obs.y)
            )

    comparison = pd.DataFrame(rows, columns=['kernel', 'rmse', 'baseline_rmse', 'ratio', 'ic'])
    if out_dir is not None:
        write_table(Path(out_dir) / FRICTION_COMPARISON, comparison)
    for row in rows:
        logger.info(
            f"  {row['kernel']:<12} RMSE={row['rmse']:9.2f}  calibrated model alone={row['baseline_rmse']:9.2f}  "
            f"IC={row['ic']:.2f}"
        )
    return FrictionDemoResult(dataset, split.assignments, reports, comparison)
