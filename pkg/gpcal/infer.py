"""
Calibration and prediction with fixed hyper-parameters
No-prior regime: generalized least squares and the BLUP
Prior regime: Gaussian posterior of beta and the posterior predictive
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from exceptions import ContractViolation, NegativeVarianceError, NonIdentifiableError
from gpmodel import GpModel, svd_column_space
from kernels import covariance_vector

logger = logging.getLogger(__name__)

# Negative variances down to -NEGATIVE_VARIANCE_RTOL * sigma2 are round-off and clamped to 0
NEGATIVE_VARIANCE_RTOL = 1e-8


class Regime(str, Enum):
    NO_PRIOR = 'no_prior'
    PRIOR = 'prior'

    @classmethod
    def from_name(cls, name) -> 'Regime':
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace('-', '_')
        aliases = {'no_prior': cls.NO_PRIOR, 'noprior': cls.NO_PRIOR, 'gls': cls.NO_PRIOR,
                   'prior': cls.PRIOR, 'bayes': cls.PRIOR}
        if key not in aliases:
            raise ContractViolation(f"Unknown regime: '{name}'")
        return aliases[key]


class ConfidenceLevel(str, Enum):
    P90 = 'P90'
    P95 = 'P95'

    @property
    def multiplier(self) -> float:
        return {ConfidenceLevel.P90: 1.64, ConfidenceLevel.P95: 1.96}[self]


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Calibrated parameters in shifted coordinates with their covariance"""

    regime: Regime
    beta: np.ndarray
    covariance: np.ndarray
    beta_nominal: np.ndarray

    @property
    def m(self) -> int:
        return self.beta.shape[0]

    @property
    def beta_unshifted(self) -> np.ndarray:
        return self.beta + self.beta_nominal

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def correlation(self) -> np.ndarray:
        std = self.std
        scale = np.outer(std, std)
        with np.errstate(divide='ignore', invalid='ignore'):
            corr = np.where(scale > 0, self.covariance / scale, 0.0)
        np.fill_diagonal(corr, np.where(std > 0, 1.0, 0.0))
        return np.clip(corr, -1.0, 1.0)

    def to_dict(self) -> dict:
        return {
            'regime': self.regime.value,
            'beta': self.beta.tolist(),
            'beta_unshifted': self.beta_unshifted.tolist(),
            'beta_nominal': self.beta_nominal.tolist(),
            'covariance': self.covariance.tolist(),
            'std': self.std.tolist(),
            'correlation': self.correlation.tolist(),
        }


@dataclass(frozen=True)
class Prediction:
    """
    Predictive mean and variance of the physical system at one point.

    mean = calibrated_model_term + inferred_model_error_term, in shifted
    coordinates; nominal is f(x_new, beta_nom) when known.
    """

    mean: float
    variance: float
    calibrated_model_term: float
    inferred_model_error_term: float
    clamped: bool = False
    nominal: float = 0.0

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def mean_unshifted(self) -> float:
        return self.mean + self.nominal

    def to_dict(self) -> dict:
        return {
            'mean': self.mean,
            'variance': self.variance,
            'std': self.std,
            'calibrated_model_term': self.calibrated_model_term,
            'inferred_model_error_term': self.inferred_model_error_term,
            'clamped': self.clamped,
            'nominal': self.nominal,
            'mean_unshifted': self.mean_unshifted,
        }


def _normal_equations(model: GpModel) -> Tuple[np.ndarray, np.ndarray]:
    """(H^t R^-1 H, H^t R^-1 y)"""
    H = model.H
    Ri_H = model.solve(H)
    A = H.T @ Ri_H
    return 0.5 * (A + A.T), Ri_H.T @ model.y


def _symmetric_inverse(factor: tuple, m: int) -> np.ndarray:
    inverse = cho_solve(factor, np.eye(m))
    return 0.5 * (inverse + inverse.T)


def calibrate_gls(model: GpModel) -> CalibrationResult:
    """
    Generalized least squares: beta = (H^t R^-1 H)^-1 H^t R^-1 y, cov = (H^t R^-1 H)^-1.

    Args:
        model: Assembled model

    Returns:
        CalibrationResult in the no-prior regime
    """
    m = model.m
    _, _, rank = svd_column_space(model.H)
    if rank < m:
        raise NonIdentifiableError(
            f"Parameters are not identifiable: rank(H) = {rank} < m = {m} (null space of dimension {m - rank})",
            null_space_dim=m - rank
        )

    A, b = _normal_equations(model)
    try:
        factor = cho_factor(A, lower=True)
    except LinAlgError as e:
        raise NonIdentifiableError(
            "Parameters are not identifiable: H^t R^-1 H is singular (null space of dimension >= 1)",
            null_space_dim=1
        ) from e

    beta = cho_solve(factor, b)
    return CalibrationResult(Regime.NO_PRIOR, beta, _symmetric_inverse(factor, m), model.linmodel.beta_nominal.copy())


def calibrate_bayes(model: GpModel) -> CalibrationResult:
    """
    Gaussian posterior of beta.

    beta_post = mu + (Q^-1 + H^t R^-1 H)^-1 H^t R^-1 (y - H mu), cov = (Q^-1 + H^t R^-1 H)^-1,
    where mu is the prior mean in shifted coordinates.

    Args:
        model: Assembled model carrying a prior

    Returns:
        CalibrationResult in the prior regime
    """
    prior = model.prior
    if prior is None:
        raise ContractViolation("Bayesian calibration needs a prior on beta")

    m = model.m
    beta_nominal = model.linmodel.beta_nominal
    mu = prior.shifted_mean(beta_nominal)

    Q_inverse = _symmetric_inverse(cho_factor(prior.covariance, lower=True), m)
    A, _ = _normal_equations(model)
    innovation = model.y - model.H @ mu
    b = model.H.T @ model.solve(innovation)

    try:
        factor = cho_factor(Q_inverse + A, lower=True)
    except LinAlgError as e:
        raise NonIdentifiableError("Posterior precision Q^-1 + H^t R^-1 H is not positive definite") from e

    beta = mu + cho_solve(factor, b)
    return CalibrationResult(Regime.PRIOR, beta, _symmetric_inverse(factor, m), beta_nominal.copy())


def calibrate(model: GpModel) -> CalibrationResult:
    """Bayesian calibration when the model carries a prior, GLS otherwise"""
    result = calibrate_bayes(model) if model.prior is not None else calibrate_gls(model)
    logger.info(
        f"Calibrated ({result.regime.value}): beta={np.round(result.beta_unshifted, 8).tolist()}"
    )
    return result


def generalized_misfit(model: GpModel, beta) -> float:
    """(y - H beta)^t R^-1 (y - H beta)"""
    residual = model.y - model.H @ np.asarray(beta, dtype=float)
    return float(residual @ model.solve(residual))


def _nominal_outputs(model: GpModel, X: np.ndarray, H_new: np.ndarray, nominal) -> np.ndarray:
    if nominal is not None:
        nominal = np.asarray(nominal, dtype=float).reshape(-1)
        if nominal.shape[0] != X.shape[0]:
            raise ContractViolation(f"Expected {X.shape[0]} nominal outputs, got {nominal.shape[0]}")
        return nominal
    linmodel = model.linmodel
    evaluator = getattr(linmodel.basis_evaluator, 'nominal', None)
    if evaluator is not None:
        return np.array([evaluator(x, i) for i, x in enumerate(X)])
    if linmodel.nominal_outputs is None:
        return np.zeros(X.shape[0])
    return linmodel.nominal_at(H_new)


def predict_batch(
    model: GpModel,
    calib: CalibrationResult,
    X_new,
    H_new=None,
    nominal=None
) -> List[Prediction]:
    """
    Predict the physical system at several raw points.

    mean = h^t beta + r^t R^-1 (y - H beta)
    variance = sigma2 - r^t R^-1 r + u^t M u,  u = h - H^t R^-1 r,
    with M = calib.covariance ((H^t R^-1 H)^-1 or (H^t R^-1 H + Q^-1)^-1).

    Args:
        model: Assembled model
        calib: Calibration of that model in the matching regime
        X_new: (p, d) raw points
        H_new: (p, m) derivative rows; evaluated with the model basis when None
        nominal: (p,) nominal outputs f(x_new, beta_nom), for unshifted reporting

    Returns:
        List of p Predictions
    """
    expected = Regime.PRIOR if model.prior is not None else Regime.NO_PRIOR
    if calib.regime is not expected:
        raise ContractViolation(
            f"Calibration regime '{calib.regime.value}' does not match the model ('{expected.value}')"
        )
    if calib.m != model.m:
        raise ContractViolation(f"Calibration has {calib.m} parameters, model has {model.m}")

    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != model.design.d:
        raise ContractViolation(f"New points have dimension {X_new.shape[1]}, design has {model.design.d}")
    if not np.all(np.isfinite(X_new)):
        raise ContractViolation("New points have non-finite entries")

    H_new = model.linmodel.h_rows(X_new) if H_new is None else np.atleast_2d(np.asarray(H_new, dtype=float))
    if H_new.shape != (X_new.shape[0], model.m):
        raise ContractViolation(f"H_new must have shape {(X_new.shape[0], model.m)}, got {H_new.shape}")
    nominal = _nominal_outputs(model, X_new, H_new, nominal)

    sigma2 = model.cov.sigma2
    r = covariance_vector(model.cov, model.design, X_new)
    Ri_r = model.solve(r)
    alpha = model.solve(model.y - model.H @ calib.beta)

    calibrated = H_new @ calib.beta
    inferred = r.T @ alpha
    u = H_new.T - model.H.T @ Ri_r
    variance = sigma2 - np.sum(r * Ri_r, axis=0) + np.sum(u * (calib.covariance @ u), axis=0)

    predictions = []
    for k in range(X_new.shape[0]):
        value = float(variance[k])
        clamped = False
        if value < 0:
            if value < -NEGATIVE_VARIANCE_RTOL * sigma2:
                logger.error(f"Negative predictive variance {value:.3e} at point {k}")
                raise NegativeVarianceError(
                    f"Predictive variance {value:.3e} at point {k} is below -{NEGATIVE_VARIANCE_RTOL:g} * sigma2"
                )
            logger.debug(f"Clamped predictive variance {value:.3e} to 0 at point {k}")
            value, clamped = 0.0, True
        predictions.append(Prediction(
            mean=float(calibrated[k] + inferred[k]),
            variance=value,
            calibrated_model_term=float(calibrated[k]),
            inferred_model_error_term=float(inferred[k]),
            clamped=clamped,
            nominal=float(nominal[k])
        ))
    return predictions


def predict(model: GpModel, calib: CalibrationResult, xnew, h_new=None, nominal=None) -> Prediction:
    """Prediction at one raw point"""
    xnew = np.asarray(xnew, dtype=float).reshape(1, -1)
    H_new = None if h_new is None else np.asarray(h_new, dtype=float).reshape(1, -1)
    nominal = None if nominal is None else [nominal]
    return predict_batch(model, calib, xnew, H_new, nominal)[0]


def confidence_interval(
    pred: Prediction,
    level: Union[ConfidenceLevel, str] = ConfidenceLevel.P95
) -> Tuple[float, float]:
    """(mean - k sd, mean + k sd) with k = 1.96 (P95) or 1.64 (P90)"""
    half = ConfidenceLevel(level).multiplier * pred.std
    return pred.mean - half, pred.mean + half
