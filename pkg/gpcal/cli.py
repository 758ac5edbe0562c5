"""
Command-line front end
Subcommands: fit, calibrate, predict, cv, demo-parabola, demo-friction
Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure
"""

import argparse
import logging
from pathlib import Path
from typing import List, Optional, Tuple

from config import Config, RunConfig, config_to_dict, load_run_config, with_overrides
from crossval import CvMode, partition, run_cv
from dataset import Dataset, load_dataset, load_points
from demos import demo_friction, demo_parabola
from exceptions import ConfigError, GpCalError, NonIdentifiableError, UsageError, exit_code_for
from gpmodel import GpModel, assemble
from infer import ConfidenceLevel, calibrate, calibrate_gls, generalized_misfit, predict_batch
from kernels import CovarianceSpec, KernelFamily, initial_spec
from reml import estimate_hyperparameters
from reports import cv_table, prediction_table, write_json, write_table

logger = logging.getLogger(__name__)


def _config_header(run_config: RunConfig) -> dict:
    """Config echoed in reports (paths excluded so reruns elsewhere stay identical)"""
    header = config_to_dict(run_config)
    header.pop('io', None)
    return header


def _load_dataset(run_config: RunConfig) -> Dataset:
    if not run_config.io.data:
        raise UsageError("No data file: pass --data or set io.data in the config")
    return load_dataset(run_config.io.data, run_config.schema)


def _assemble(run_config: RunConfig, dataset: Dataset, spec: Optional[CovarianceSpec] = None) -> GpModel:
    design = dataset.design()
    linmodel = dataset.linear_model(design, run_config.beta_nominal)
    prior = run_config.prior.to_prior() if run_config.prior is not None else None
    spec = spec or initial_spec(run_config.kernel, design.d_active)
    return assemble(design, dataset.observations(linmodel), linmodel, spec, run_config.noise.to_spec(), prior)


def _configured_spec(run_config: RunConfig, d_active: int) -> Optional[CovarianceSpec]:
    fixed = run_config.hyperparameters
    if fixed is None:
        return None
    if len(fixed.lengths) != d_active:
        raise ConfigError(
            f"hyperparameters.lengths has {len(fixed.lengths)} entries, data has {d_active} active dimensions"
        )
    return CovarianceSpec(run_config.kernel, fixed.sigma2, tuple(fixed.lengths))


def _fitted_model(run_config: RunConfig, dataset: Dataset) -> Tuple[GpModel, Optional[dict]]:
    """Model with configured hyper-parameters, or REML estimates when none are configured"""
    model = _assemble(run_config, dataset)
    spec = _configured_spec(run_config, model.design.d_active)
    if spec is not None:
        return model.with_covariance(spec), None
    estimate = estimate_hyperparameters(model, run_config.optimizer)
    return model.with_covariance(estimate.spec), estimate.to_dict()


def cmd_fit(run_config: RunConfig) -> List[Path]:
    dataset = _load_dataset(run_config)
    model = _assemble(run_config, dataset)
    estimate = estimate_hyperparameters(model, run_config.optimizer)
    out = Path(run_config.io.out_dir)
    return [write_json(out / Config.FIT_REPORT, {'config': _config_header(run_config), 'estimate': estimate.to_dict()})]


def cmd_calibrate(run_config: RunConfig) -> List[Path]:
    dataset = _load_dataset(run_config)
    model, estimate = _fitted_model(run_config, dataset)
    calib = calibrate(model)

    calibrations = {calib.regime.value: calib.to_dict()}
    if model.prior is not None:
        try:
            calibrations['no_prior'] = calibrate_gls(model).to_dict()
        except NonIdentifiableError as e:
            logger.warning(f"No-prior calibration skipped: {e}")
            calibrations['no_prior'] = None

    out = Path(run_config.io.out_dir)
    return [write_json(out / Config.CALIBRATION_REPORT, {
        'config': _config_header(run_config),
        'estimate': estimate,
        'hyperparameters': model.cov.to_dict(),
        'calibration': calibrations,
        'generalized_misfit': generalized_misfit(model, calib.beta),
    })]


def cmd_predict(run_config: RunConfig) -> List[Path]:
    if not run_config.io.new_points:
        raise UsageError("No new points: pass --new-points or set io.new_points in the config")
    dataset = _load_dataset(run_config)
    points, H_new, nominal = load_points(
        run_config.io.new_points,
        dataset.condition_names,
        dataset.h_names,
        dataset.nominal_name,
        run_config.schema.delimiter
    )

    model, estimate = _fitted_model(run_config, dataset)
    calib = calibrate(model)
    predictions = predict_batch(model, calib, points, H_new=H_new, nominal=nominal)
    level = ConfidenceLevel(run_config.level)

    out = Path(run_config.io.out_dir)
    table = prediction_table(points, dataset.condition_names, predictions, level)
    return [
        write_json(out / Config.PREDICTION_REPORT, {
            'config': _config_header(run_config),
            'estimate': estimate,
            'hyperparameters': model.cov.to_dict(),
            'calibration': calib.to_dict(),
            'level': level.value,
            'predictions': [p.to_dict() for p in predictions],
        }),
        write_table(out / Config.PREDICTION_TABLE, table),
    ]


def cmd_cv(run_config: RunConfig) -> List[Path]:
    dataset = _load_dataset(run_config)
    design = dataset.design()
    cv = run_config.cv
    folds = partition(design, cv.folds, cv.seed, cv.partitioner)
    linmodel = dataset.linear_model(design, run_config.beta_nominal)
    obs = dataset.observations(linmodel)

    report = run_cv(
        design,
        obs,
        linmodel,
        run_config.noise.to_spec(),
        run_config.kernel,
        folds,
        mode=CvMode(cv.mode),
        optimizer_config=run_config.optimizer,
        prior=run_config.prior.to_prior() if run_config.prior is not None else None,
        hyperparameters=_configured_spec(run_config, design.d_active),
        noise_in_interval=cv.noise_in_interval,
        level=ConfidenceLevel.P90,
        n_jobs=run_config.optimizer.n_jobs
    )

    out = Path(run_config.io.out_dir)
    return [
        write_json(out / Config.CV_REPORT, {'config': _config_header(run_config), 'report': report.to_dict()}),
        write_table(out / Config.CV_TABLE, cv_table(report, dataset.conditions, dataset.condition_names, obs.y)),
    ]


def cmd_demo_parabola(run_config: RunConfig, regime: str, grid_size: int) -> List[Path]:
    regimes = ['no_prior', 'prior'] if regime == 'both' else [regime]
    for name in regimes:
        demo_parabola(name, grid_size, run_config.io.out_dir)
    return [Path(run_config.io.out_dir)]


def cmd_demo_friction(run_config: RunConfig, args: argparse.Namespace) -> List[Path]:
    kernels = [args.kernel] if args.kernel else list(KernelFamily)
    demo_friction(
        seed=run_config.cv.seed,
        n_iso=args.n_iso,
        n_heated=args.n_heated,
        out_dir=run_config.io.out_dir,
        kernels=kernels,
        folds=run_config.cv.folds,
        mode=CvMode(run_config.cv.mode),
        optimizer_config=run_config.optimizer,
        isothermal_only=args.isothermal_only,
        partitioner=run_config.cv.partitioner,
        n_jobs=run_config.optimizer.n_jobs
    )
    return [Path(run_config.io.out_dir)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run configuration')
    common.add_argument('--data', help='Input data file')
    common.add_argument('--out', dest='out_dir', help='Output directory')
    common.add_argument('--seed', type=int, help='Seed for the optimizer and the fold partition')
    common.add_argument('--kernel', help='exponential | matern32 | matern52 | gaussian')
    common.add_argument('--folds', type=int, help='Number of cross-validation folds')
    common.add_argument('--mode', choices=[m.value for m in CvMode], help='Cross-validation mode')
    common.add_argument('--new-points', dest='new_points', help='Points to predict (predict)')
    common.add_argument('--n-jobs', dest='n_jobs', type=int, help='Worker processes')

    parser = argparse.ArgumentParser(
        prog='gpcal',
        description='Calibration and prediction of linearized computer models with Gaussian-process model error'
    )
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('fit', parents=[common], help='Estimate the model-error hyper-parameters (REML)')
    sub.add_parser('calibrate', parents=[common], help='Calibrate the computer-model parameters')
    sub.add_parser('predict', parents=[common], help='Predict the physical system at new points')
    sub.add_parser('cv', parents=[common], help='K-fold cross-validation (RMSE and IC)')

    parabola = sub.add_parser('demo-parabola', parents=[common], help='Line model against x^2')
    parabola.add_argument('--regime', choices=['no_prior', 'prior', 'both'], default='both')
    parabola.add_argument('--grid-size', dest='grid_size', type=int, default=101)

    friction = sub.add_parser('demo-friction', parents=[common], help='Synthetic friction campaigns')
    friction.add_argument('--n-iso', dest='n_iso', type=int, default=60)
    friction.add_argument('--n-heated', dest='n_heated', type=int, default=60)
    friction.add_argument('--isothermal-only', dest='isothermal_only', action='store_true')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run one subcommand.

    Args:
        argv: Argument list (sys.argv[1:] when None)

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        run_config = with_overrides(
            load_run_config(args.config),
            data=args.data,
            new_points=args.new_points,
            out_dir=args.out_dir,
            seed=args.seed,
            kernel=args.kernel,
            folds=args.folds,
            mode=args.mode,
            n_jobs=args.n_jobs
        )

        if args.command == 'fit':
            written = cmd_fit(run_config)
        elif args.command == 'calibrate':
            written = cmd_calibrate(run_config)
        elif args.command == 'predict':
            written = cmd_predict(run_config)
        elif args.command == 'cv':
            written = cmd_cv(run_config)
        elif args.command == 'demo-parabola':
            if args.grid_size < 2:
                raise UsageError(f"--grid-size must be at least 2, got {args.grid_size}")
            written = cmd_demo_parabola(run_config, args.regime, args.grid_size)
        else:
            written = cmd_demo_friction(run_config, args)
    except GpCalError as e:
        logger.error(f"{args.command} failed: {e}")
        return exit_code_for(e)

    for path in written:
        logger.info(f"✓ {args.command}: {path}")
    return 0
