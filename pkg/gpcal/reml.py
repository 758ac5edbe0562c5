"""
Restricted maximum likelihood for the model-error hyper-parameters
Objective forms (SVD, explicit contrasts, projection) and the multi-start
Nelder-Mead estimator
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq, null_space, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from config import OptimizerConfig
from exceptions import (
    ContractViolation,
    DegenerateCovarianceError,
    EstimationFailedError,
    InsufficientDegreesOfFreedomError,
    NonIdentifiableError,
)
from gpmodel import RANK_RTOL, GpModel, svd_column_space
from kernels import (
    LENGTH_MAX,
    LENGTH_MIN,
    START_LENGTH,
    CovarianceSpec,
    cholesky_with_jitter,
    covariance_matrix,
    initial_spec,
    log_det_from_cholesky,
    noise_matrix,
)
from pool import map_ordered

logger = logging.getLogger(__name__)

# Objective value handed to the optimizer for invalid candidates
INVALID_Q = 1e300

SIGMA2_SPAN = 1e4
SIMPLEX_STEP = 0.5
FLAT_RTOL = 1e-9


@dataclass(frozen=True)
class RemlObjectiveValue:
    """q (nats, up to an additive constant); valid is False when R could not be factored"""

    q: float
    valid: bool = True

    @classmethod
    def invalid(cls) -> 'RemlObjectiveValue':
        return cls(float('inf'), False)


@dataclass(frozen=True)
class StartRecord:
    """One optimizer start: parameters are (sigma2, lengths...)"""

    index: int
    start: Tuple[float, ...]
    converged: Tuple[float, ...]
    q: float
    valid: bool
    iterations: int

    def to_dict(self) -> dict:
        return {
            'index': self.index,
            'start': list(self.start),
            'converged': list(self.converged),
            'q': self.q if self.valid else None,
            'valid': self.valid,
            'iterations': self.iterations,
        }


@dataclass(frozen=True)
class RemlEstimate:
    spec: CovarianceSpec
    q_min: float
    n_starts: int
    trace: Tuple[StartRecord, ...]
    best_index: int
    non_identified: Tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            'spec': self.spec.to_dict(),
            'q_min': self.q_min,
            'n_starts': self.n_starts,
            'best_index': self.best_index,
            'non_identified_lengths': list(self.non_identified),
            'trace': [record.to_dict() for record in self.trace],
        }


def _check_candidate(model: GpModel, candidate: CovarianceSpec):
    if candidate.dim != model.design.d_active:
        raise ContractViolation(
            f"Candidate has {candidate.dim} lengths, model has {model.design.d_active} active dimensions"
        )


def _candidate_factor(model: GpModel, candidate: CovarianceSpec) -> Optional[tuple]:
    """Cholesky factor of R for a candidate, None when it is degenerate"""
    R = covariance_matrix(candidate, model.design) + noise_matrix(model.noise, model.n)
    try:
        return cholesky_with_jitter(R, 'R', quiet=True)[0]
    except DegenerateCovarianceError:
        return None


def _require_degrees_of_freedom(n: int, rank: int):
    if n <= rank:
        raise InsufficientDegreesOfFreedomError(
            f"REML needs more observations than rank(H): n={n}, rank={rank}"
        )


def _svd_q(model: GpModel, candidate: CovarianceSpec, U: np.ndarray) -> RemlObjectiveValue:
    factor = _candidate_factor(model, candidate)
    if factor is None:
        return RemlObjectiveValue.invalid()

    y = model.y
    Ri_y = cho_solve(factor, y)
    q = log_det_from_cholesky(factor) + float(y @ Ri_y)

    if U.shape[1] > 0:
        Ri_U = cho_solve(factor, U)
        A = U.T @ Ri_U
        A = 0.5 * (A + A.T)
        try:
            A_factor = cho_factor(A, lower=True)
        except LinAlgError:
            return RemlObjectiveValue.invalid()
        b = U.T @ Ri_y
        q += log_det_from_cholesky(A_factor) - float(b @ cho_solve(A_factor, b))

    if not np.isfinite(q):
        return RemlObjectiveValue.invalid()
    return RemlObjectiveValue(float(q))


def reml_objective_svd(model: GpModel, candidate: CovarianceSpec) -> RemlObjectiveValue:
    """
    REML objective through the column space of H.

    q = ln|U^t R^-1 U| + ln|R| + y^t R^-1 y - y^t R^-1 U (U^t R^-1 U)^-1 U^t R^-1 y
    where U (n, r) spans the column space of H, r its numerical rank.

    Args:
        model: Assembled model (its design, observations, H and noise are used)
        candidate: Hyper-parameters to evaluate

    Returns:
        RemlObjectiveValue, invalid when R cannot be factored
    """
    _check_candidate(model, candidate)
    U, _, rank = svd_column_space(model.H)
    _require_degrees_of_freedom(model.n, rank)
    return _svd_q(model, candidate, U)


def contrast_matrix(H: np.ndarray) -> np.ndarray:
    """Orthonormal error contrasts W ((n - r), n) with W W^t = I and W H = 0"""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    return null_space(H.T, rcond=RANK_RTOL).T


def reml_objective_contrast(
    model: GpModel,
    candidate: CovarianceSpec,
    W: Optional[np.ndarray] = None
) -> RemlObjectiveValue:
    """
    REML objective from explicit error contrasts w = W y: ln|W R W^t| + w^t (W R W^t)^-1 w.

    Args:
        model: Assembled model
        candidate: Hyper-parameters to evaluate
        W: Full-rank (n - r, n) matrix with W H = 0; contrast_matrix(H) when None

    Returns:
        RemlObjectiveValue
    """
    _check_candidate(model, candidate)
    H = model.H
    _, _, rank = svd_column_space(H)
    _require_degrees_of_freedom(model.n, rank)

    if W is None:
        W = contrast_matrix(H)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (model.n - rank, model.n):
        raise ContractViolation(f"W must have shape {(model.n - rank, model.n)}, got {W.shape}")
    if np.any(np.all(W == 0, axis=1)):
        raise ContractViolation("W has a zero row")
    if np.linalg.matrix_rank(W) < W.shape[0]:
        raise ContractViolation("W is not of full row rank")
    if np.max(np.abs(W @ H)) > 1e-8 * np.linalg.norm(H):
        raise ContractViolation("W H is not zero")

    R = covariance_matrix(candidate, model.design) + noise_matrix(model.noise, model.n)
    S = W @ R @ W.T
    S = 0.5 * (S + S.T)
    try:
        factor, _ = cholesky_with_jitter(S, 'W R W^t', quiet=True)
    except DegenerateCovarianceError:
        return RemlObjectiveValue.invalid()

    w = W @ model.y
    q = log_det_from_cholesky(factor) + float(w @ cho_solve(factor, w))
    return RemlObjectiveValue(float(q)) if np.isfinite(q) else RemlObjectiveValue.invalid()


def reml_objective_harville(model: GpModel, candidate: CovarianceSpec) -> RemlObjectiveValue:
    """
    Projection form -ln|H^t H| + ln|R| + ln|H^t R^-1 H| + y^t P y,
    P = R^-1 - R^-1 H (H^t R^-1 H)^-1 H^t R^-1. Needs full column rank H.
    """
    _check_candidate(model, candidate)
    H = model.H
    _, _, rank = svd_column_space(H)
    if rank < H.shape[1]:
        raise NonIdentifiableError(
            f"Projection form needs full-rank H: rank {rank} < {H.shape[1]}",
            null_space_dim=H.shape[1] - rank
        )
    _require_degrees_of_freedom(model.n, rank)

    factor = _candidate_factor(model, candidate)
    if factor is None:
        return RemlObjectiveValue.invalid()

    y = model.y
    Ri_H = cho_solve(factor, H)
    Ri_y = cho_solve(factor, y)
    A = H.T @ Ri_H
    G = H.T @ H
    try:
        A_factor = cho_factor(0.5 * (A + A.T), lower=True)
        G_factor = cho_factor(0.5 * (G + G.T), lower=True)
    except LinAlgError:
        return RemlObjectiveValue.invalid()

    b = H.T @ Ri_y
    quad = float(y @ Ri_y) - float(b @ cho_solve(A_factor, b))
    q = -log_det_from_cholesky(G_factor) + log_det_from_cholesky(factor) + log_det_from_cholesky(A_factor) + quad
    return RemlObjectiveValue(float(q)) if np.isfinite(q) else RemlObjectiveValue.invalid()


class _LogObjective:
    """q as a function of log(sigma2) and, when estimated, log(lengths)"""

    def __init__(self, model: GpModel, estimate_lengths: bool):
        self.model = model
        self.estimate_lengths = estimate_lengths
        self.U = svd_column_space(model.H)[0]

    def spec(self, theta: np.ndarray) -> CovarianceSpec:
        theta = np.asarray(theta, dtype=float)
        sigma2 = float(np.exp(theta[0]))
        lengths = np.exp(theta[1:]) if self.estimate_lengths else self.model.cov.lengths
        return self.model.cov.with_params(sigma2, tuple(lengths))

    def value(self, theta: np.ndarray) -> RemlObjectiveValue:
        return _svd_q(self.model, self.spec(theta), self.U)

    def __call__(self, theta: np.ndarray) -> float:
        result = self.value(theta)
        return result.q if result.valid else INVALID_Q


def _initial_simplex(x0: np.ndarray, bounds: Sequence[Tuple[float, float]]) -> np.ndarray:
    simplex = [x0]
    for j, (low, high) in enumerate(bounds):
        vertex = x0.copy()
        vertex[j] = x0[j] + SIMPLEX_STEP if x0[j] + SIMPLEX_STEP <= high else x0[j] - SIMPLEX_STEP
        vertex[j] = min(max(vertex[j], low), high)
        simplex.append(vertex)
    return np.vstack(simplex)


def _run_start(job) -> StartRecord:
    """Local Nelder-Mead search from one start (module level for the process pool)"""
    objective, index, x0, bounds, config = job
    result = minimize(
        objective,
        x0,
        method='Nelder-Mead',
        bounds=bounds,
        options={
            'maxiter': config.max_iters,
            'xatol': config.tolerance,
            'fatol': config.tolerance,
            'initial_simplex': _initial_simplex(x0, bounds),
        }
    )
    q = float(result.fun)
    valid = bool(np.isfinite(q) and q < INVALID_Q)
    return StartRecord(
        index=index,
        start=tuple(float(v) for v in np.exp(x0)),
        converged=tuple(float(v) for v in np.exp(result.x)),
        q=q if valid else float('inf'),
        valid=valid,
        iterations=int(result.nit)
    )


def residual_variance(model: GpModel) -> float:
    """
    Sample variance of the GLS residuals of y on H (1.0 if degenerate).

    The GLS weights are the unit-variance correlation at the start lengths;
    without active dimensions the residuals are ordinary least squares.
    """
    U, _, rank = svd_column_space(model.H)
    dof = model.n - rank
    if dof <= 0:
        return 1.0

    residual = model.y - U @ (U.T @ model.y)
    if model.design.d_active > 0:
        start = initial_spec(model.cov.family, model.design.d_active, 1.0)
        try:
            factor, _ = cholesky_with_jitter(covariance_matrix(start, model.design), 'start correlation', quiet=True)
            L = np.tril(factor[0])
            beta = lstsq(solve_triangular(L, model.H, lower=True), solve_triangular(L, model.y, lower=True))[0]
            residual = model.y - model.H @ beta
        except DegenerateCovarianceError:
            logger.debug("Start correlation is degenerate; using least-squares residuals")

    value = float(residual @ residual) / dof
    return value if np.isfinite(value) and value > 0 else 1.0


def _start_points(config: OptimizerConfig, s0: float, bounds) -> List[np.ndarray]:
    k = len(bounds)
    first = [np.log(s0)]
    if config.estimate_lengths:
        first += [np.log(START_LENGTH)] * (k - 1)
    starts = [np.array(first, dtype=float)]

    sampler = qmc.LatinHypercube(d=k, seed=config.seed)
    low = np.array([b[0] for b in bounds])
    high = np.array([b[1] for b in bounds])
    for row in sampler.random(n=config.n_starts):
        starts.append(low + row * (high - low))
    return starts


def _non_identified_lengths(objective: _LogObjective, theta: np.ndarray, q_best: float) -> List[int]:
    """Lengths along which q does not move between the clamp bounds"""
    flat = []
    tolerance = FLAT_RTOL * max(1.0, abs(q_best))
    for j in range(1, theta.shape[0]):
        values = []
        for edge in (LENGTH_MIN, LENGTH_MAX):
            probe = theta.copy()
            probe[j] = np.log(edge)
            values.append(objective.value(probe))
        if all(v.valid and abs(v.q - q_best) <= tolerance for v in values):
            flat.append(j - 1)
    return flat


def estimate_hyperparameters(model: GpModel, config: Optional[OptimizerConfig] = None) -> RemlEstimate:
    """
    Multi-start REML estimation of (sigma2, lengths).

    The search runs in log-parameters, sigma2 within 1e-4..1e4 times the
    GLS residual variance s0 and lengths within the clamp box. Start 0
    is (s0, lengths 0.3); the other n_starts come from a seeded Latin hypercube.
    The kernel family and, with estimate_lengths=False, the lengths are taken
    from model.cov.

    Args:
        model: Assembled model; its cov gives the family (and fixed lengths)
        config: Optimizer settings

    Returns:
        RemlEstimate with the best start by lowest q (ties: lowest index)
    """
    config = config or OptimizerConfig()
    _, _, rank = svd_column_space(model.H)
    _require_degrees_of_freedom(model.n, rank)

    s0 = residual_variance(model)
    bounds = [(float(np.log(s0 / SIGMA2_SPAN)), float(np.log(s0 * SIGMA2_SPAN)))]
    if config.estimate_lengths:
        bounds += [(float(np.log(LENGTH_MIN)), float(np.log(LENGTH_MAX)))] * model.design.d_active

    objective = _LogObjective(model, config.estimate_lengths)
    starts = _start_points(config, s0, bounds)
    jobs = [(objective, i, x0, bounds, config) for i, x0 in enumerate(starts)]
    trace = tuple(map_ordered(_run_start, jobs, config.n_jobs))

    valid = [record for record in trace if record.valid]
    if not valid:
        logger.error(f"REML estimation failed: all {len(trace)} starts invalid")
        raise EstimationFailedError(f"All {len(trace)} REML starts produced an invalid objective", trace=trace)

    best = min(valid, key=lambda record: (record.q, record.index))
    theta = np.log(np.asarray(best.converged))

    non_identified: List[int] = []
    if config.estimate_lengths:
        non_identified = _non_identified_lengths(objective, theta, best.q)
        for j in non_identified:
            theta[j + 1] = np.log(best.start[j + 1])
            logger.warning(
                f"Correlation length {j} ('{model.design.label(int(np.flatnonzero(model.design.active)[j]))}') "
                f"is not identified; reported at its start value {best.start[j + 1]:.4g}"
            )

    spec = objective.spec(theta)
    logger.info(
        f"✓ REML estimate ({spec.family.value}): sigma2={spec.sigma2:.6g}, "
        f"lengths={[round(v, 6) for v in spec.lengths]}, q={best.q:.6f} (start {best.index} of {len(trace)})"
    )
    return RemlEstimate(
        spec=spec,
        q_min=best.q,
        n_starts=len(trace),
        trace=trace,
        best_index=best.index,
        non_identified=tuple(non_identified)
    )


def fit(model: GpModel, config: Optional[OptimizerConfig] = None) -> Tuple[RemlEstimate, GpModel]:
    """Estimate hyper-parameters and reassemble the model with them"""
    estimate = estimate_hyperparameters(model, config)
    return estimate, model.with_covariance(estimate.spec)
