"""
Experimental design, observations, linearized computer model and prior
Assembles H and R = R_mod + R_mes (with its Cholesky factor) for the
downstream estimation, calibration and prediction steps

The library always works in shifted coordinates: beta_nom = 0 and
f_mod(x, beta_nom) = 0. Nominal outputs are subtracted from the observations
by the caller and beta_nom is added back in reports.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from exceptions import ContractViolation, ModelEvaluationError
from kernels import (
    CovarianceSpec,
    NoiseSpec,
    cholesky_with_jitter,
    covariance_matrix,
    log_det_from_cholesky,
    noise_matrix,
)

logger = logging.getLogger(__name__)

# Singular values below RANK_RTOL * s_max count as zero
RANK_RTOL = 1e-10

# Finite-difference step: FD_RELATIVE_STEP of the prior sd (or of |beta_nom|), floored
FD_RELATIVE_STEP = 1e-2
FD_STEP_FLOOR = 1e-4


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Design:
    """
    Raw experimental conditions plus per-dimension normalization metadata.

    Each dimension is mapped affinely onto [0, 1] with (lower, upper). Constant
    dimensions (lower == upper) are inactive: they never reach the kernel unless
    drop_constant is False, in which case they normalize to 0.
    """

    points: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    labels: Optional[Tuple[str, ...]] = None
    drop_constant: bool = True

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ContractViolation(f"Design needs at least one point, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ContractViolation("Design has non-finite entries")

        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        d = points.shape[1]
        if lower.shape[0] != d or upper.shape[0] != d:
            raise ContractViolation(f"Normalization bounds must have {d} entries")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))) or np.any(upper < lower):
            raise ContractViolation("Normalization bounds must be finite with lower <= upper")
        if self.labels is not None and len(self.labels) != d:
            raise ContractViolation(f"Expected {d} labels, got {len(self.labels)}")

        object.__setattr__(self, 'points', _readonly(points))
        object.__setattr__(self, 'lower', _readonly(lower))
        object.__setattr__(self, 'upper', _readonly(upper))
        if self.labels is not None:
            object.__setattr__(self, 'labels', tuple(str(v) for v in self.labels))
        object.__setattr__(self, '_normalized', _readonly(self.normalize(points)))

    @classmethod
    def from_points(
        cls,
        points,
        labels: Optional[Sequence[str]] = None,
        bounds: Optional[Sequence[Tuple[float, float]]] = None,
        drop_constant: bool = True
    ) -> 'Design':
        """
        Build a design, taking normalization bounds from the data unless given.

        Args:
            points: (n, d) raw conditions (a 1-D array is one column)
            labels: Optional dimension names
            bounds: Optional explicit (lower, upper) per dimension
            drop_constant: Remove constant dimensions from the kernel

        Returns:
            Design
        """
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if bounds is None:
            lower, upper = points.min(axis=0), points.max(axis=0)
        else:
            bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
            lower, upper = bounds[:, 0], bounds[:, 1]

        design = cls(points, lower, upper, tuple(labels) if labels is not None else None, drop_constant)
        for j in np.flatnonzero(~design.active):
            logger.warning(
                f"Dimension '{design.label(j)}' is constant ({design.lower[j]:g}); dropped from the kernel"
            )
        return design

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def active(self) -> np.ndarray:
        if not self.drop_constant:
            return np.ones(self.d, dtype=bool)
        return self.upper > self.lower

    @property
    def d_active(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def normalized(self) -> np.ndarray:
        """(n, d_active) normalized design"""
        return self._normalized

    def label(self, j: int) -> str:
        return self.labels[j] if self.labels is not None else f"x{j}"

    def normalize(self, x) -> np.ndarray:
        """Map raw points (p, d) onto the normalized active coordinates (p, d_active)"""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise ContractViolation(f"Point has dimension {x.shape[1]}, design has {self.d}")
        span = self.upper - self.lower
        span = np.where(span > 0, span, 1.0)
        z = (x - self.lower) / span
        return z[:, self.active]

    def subset(self, rows) -> 'Design':
        """Rows of the design, keeping the same normalization"""
        return Design(self.points[np.asarray(rows)], self.lower, self.upper, self.labels, self.drop_constant)


@dataclass(frozen=True, eq=False)
class Observations:
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.shape[0] < 1 or not np.all(np.isfinite(y)):
            raise ContractViolation("Observations must be a non-empty finite vector")
        object.__setattr__(self, 'y', _readonly(y))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def subset(self, rows) -> 'Observations':
        return Observations(self.y[np.asarray(rows)])


class PolynomialBasis:
    """h(x) = (1, x_1, ..., x_d) in raw coordinates (degree 1) or h(x) = (1,)"""

    def __init__(self, degree: int = 1):
        if degree not in (0, 1):
            raise ContractViolation(f"Polynomial basis degree must be 0 or 1, got {degree}")
        self.degree = degree

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.degree == 0:
            return np.ones(1)
        return np.concatenate(([1.0], x))


class FiniteDifferenceBasis:
    """
    Forward-difference derivatives of a computer model around beta_nom.

    Row j of h(x) is [f(x, beta_nom + step_j e_j) - f(x, beta_nom)] / step_j.
    """

    def __init__(self, model_runner: Callable, beta_nominal, steps):
        self.model_runner = model_runner
        self.beta_nominal = np.asarray(beta_nominal, dtype=float).reshape(-1)
        self.steps = np.asarray(steps, dtype=float).reshape(-1)

    def _run(self, x, beta, i: int, j: Optional[int]) -> float:
        value = float(self.model_runner(x, beta))
        if not np.isfinite(value):
            where = 'nominal run' if j is None else f'parameter {j}'
            raise ModelEvaluationError(
                f"Non-finite model output at point {i}, {where}: {value}",
                point_index=i,
                parameter_index=j
            )
        return value

    def nominal(self, x, index: int = 0) -> float:
        """f(x, beta_nom)"""
        return self._run(x, self.beta_nominal, index, None)

    def row(self, x, index: int = 0) -> Tuple[np.ndarray, float]:
        """(h(x), f(x, beta_nom)) for one raw point"""
        f_nom = self.nominal(x, index)
        h = np.empty(self.beta_nominal.shape[0])
        for j, step in enumerate(self.steps):
            beta = self.beta_nominal.copy()
            beta[j] += step
            h[j] = (self._run(x, beta, index, j) - f_nom) / step
        return h, f_nom

    def __call__(self, x) -> np.ndarray:
        return self.row(x)[0]


@dataclass(frozen=True, eq=False)
class LinearModel:
    """
    Linearized computer model f_mod(x, beta) = h(x)^t beta (shifted coordinates).

    H is cached with H[i, j] = h_j(x_i). basis_evaluator is None when H comes
    from tabulated columns; h(x_new) must then be supplied by the caller.
    """

    H: np.ndarray
    basis_evaluator: Optional[Callable] = None
    beta_nominal: Optional[np.ndarray] = None
    nominal_outputs: Optional[np.ndarray] = None

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        if H.ndim == 1:
            H = H.reshape(-1, 1)
        if H.ndim != 2 or H.shape[1] < 1:
            raise ContractViolation(f"H must be an (n, m) matrix with m >= 1, got shape {H.shape}")
        if not np.all(np.isfinite(H)):
            raise ContractViolation("H has non-finite entries")
        object.__setattr__(self, 'H', _readonly(H))

        beta_nominal = np.zeros(H.shape[1]) if self.beta_nominal is None else self.beta_nominal
        beta_nominal = np.asarray(beta_nominal, dtype=float).reshape(-1)
        if beta_nominal.shape[0] != H.shape[1]:
            raise ContractViolation(f"beta_nominal has {beta_nominal.shape[0]} entries, H has {H.shape[1]} columns")
        object.__setattr__(self, 'beta_nominal', _readonly(beta_nominal))

        if self.nominal_outputs is not None:
            nominal = np.asarray(self.nominal_outputs, dtype=float).reshape(-1)
            if nominal.shape[0] != H.shape[0]:
                raise ContractViolation("nominal_outputs length does not match H")
            object.__setattr__(self, 'nominal_outputs', _readonly(nominal))

    @classmethod
    def from_basis(cls, basis: Callable, design: Design, beta_nominal=None) -> 'LinearModel':
        """
        Evaluate a basis at every design point.

        With a non-zero beta_nom the nominal outputs f(x_i, beta_nom) come from
        the basis' own model run when it has one, else from h(x_i)^t beta_nom.
        """
        H = np.vstack([np.asarray(basis(x), dtype=float).reshape(-1) for x in design.points])
        linmodel = cls(H, basis, beta_nominal)
        runner = getattr(basis, 'nominal', None)
        if runner is None or not np.any(linmodel.beta_nominal):
            return linmodel.with_linear_nominal()
        return replace(linmodel, nominal_outputs=[runner(x, i) for i, x in enumerate(design.points)])

    def with_linear_nominal(self) -> 'LinearModel':
        """Fill missing nominal outputs with h(x_i)^t beta_nom (exact for linear models)"""
        if self.nominal_outputs is not None or not np.any(self.beta_nominal):
            return self
        return replace(self, nominal_outputs=self.H @ self.beta_nominal)

    def nominal_at(self, H_new) -> np.ndarray:
        """h(x_new)^t beta_nom for derivative rows (p, m)"""
        return np.atleast_2d(np.asarray(H_new, dtype=float)) @ self.beta_nominal

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]

    def h(self, x) -> np.ndarray:
        """Derivative row h(x_new) for one raw point"""
        if self.basis_evaluator is None:
            raise ContractViolation("This linear model has tabulated H only; supply h(x_new) explicitly")
        h = np.asarray(self.basis_evaluator(x), dtype=float).reshape(-1)
        if h.shape[0] != self.m:
            raise ContractViolation(f"Basis returned {h.shape[0]} entries, expected {self.m}")
        return h

    def h_rows(self, X) -> np.ndarray:
        """(p, m) derivative rows for raw points (p, d)"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.vstack([self.h(x) for x in X])

    def subset(self, rows) -> 'LinearModel':
        rows = np.asarray(rows)
        nominal = None if self.nominal_outputs is None else self.nominal_outputs[rows]
        return LinearModel(self.H[rows], self.basis_evaluator, self.beta_nominal, nominal)


@dataclass(frozen=True, eq=False)
class Prior:
    """Gaussian prior beta ~ N(mean, covariance), mean in unshifted coordinates"""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        m = mean.shape[0]
        if cov.shape != (m, m):
            raise ContractViolation(f"Prior covariance must be {m}x{m}, got {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ContractViolation("Prior has non-finite entries")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0):
            raise ContractViolation("Prior covariance must be symmetric")
        try:
            cho_factor(cov, lower=True)
        except LinAlgError as e:
            raise ContractViolation("Prior covariance must be positive definite") from e
        object.__setattr__(self, 'mean', _readonly(mean))
        object.__setattr__(self, 'covariance', _readonly(cov))

    @property
    def m(self) -> int:
        return self.mean.shape[0]

    def shifted_mean(self, beta_nominal) -> np.ndarray:
        return self.mean - np.asarray(beta_nominal, dtype=float)

    def to_dict(self) -> dict:
        return {'mean': self.mean.tolist(), 'covariance': self.covariance.tolist()}


@dataclass(frozen=True, eq=False)
class GpModel:
    """
    Universal Kriging model y_obs = H beta + z + eps with R = R_mod + R_mes.

    Immutable once assembled; holds the Cholesky factor of R.
    """

    design: Design
    obs: Observations
    linmodel: LinearModel
    cov: CovarianceSpec
    noise: NoiseSpec
    prior: Optional[Prior]
    R: np.ndarray
    factor: tuple
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.obs.n

    @property
    def m(self) -> int:
        return self.linmodel.m

    @property
    def H(self) -> np.ndarray:
        return self.linmodel.H

    @property
    def y(self) -> np.ndarray:
        return self.obs.y

    @property
    def log_det_R(self) -> float:
        return log_det_from_cholesky(self.factor)

    def solve(self, b) -> np.ndarray:
        """R^-1 b through the Cholesky factor"""
        return cho_solve(self.factor, b)

    def with_covariance(self, cov: CovarianceSpec) -> 'GpModel':
        """Reassemble with other hyper-parameters"""
        return assemble(self.design, self.obs, self.linmodel, cov, self.noise, self.prior)


def assemble(
    design: Design,
    obs: Observations,
    linmodel: LinearModel,
    cov: CovarianceSpec,
    noise: NoiseSpec,
    prior: Optional[Prior] = None
) -> GpModel:
    """
    Check dimensions, build R = R_mod + R_mes and factor it.

    Args:
        design: Experimental conditions
        obs: Observations (shifted by the nominal outputs)
        linmodel: Linearized computer model
        cov: Model-error covariance
        noise: Measurement-noise covariance
        prior: Optional Gaussian prior on beta

    Returns:
        Assembled GpModel
    """
    n = design.n
    if obs.n != n:
        raise ContractViolation(f"Observation count {obs.n} does not match design size {n}")
    if linmodel.n != n:
        raise ContractViolation(f"H has {linmodel.n} rows, design has {n} points")
    if cov.dim != design.d_active:
        raise ContractViolation(
            f"Covariance has {cov.dim} lengths, design has {design.d_active} active dimensions"
        )
    if prior is not None and prior.m != linmodel.m:
        raise ContractViolation(f"Prior has dimension {prior.m}, model has {linmodel.m} parameters")

    R = covariance_matrix(cov, design) + noise_matrix(noise, n)
    factor, jitter = cholesky_with_jitter(R, 'R = R_mod + R_mes')
    R.setflags(write=False)

    return GpModel(design, obs, linmodel, cov, noise, prior, R, factor, jitter)


def svd_column_space(H: np.ndarray, rtol: float = RANK_RTOL) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Orthonormal basis of the column space of H.

    Args:
        H: (n, m) matrix
        rtol: Singular values below rtol * s_max are zero

    Returns:
        Tuple of (U_r (n, r), singular values, numerical rank r)
    """
    U, s, _ = np.linalg.svd(H, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0], s, 0
    rank = int(np.count_nonzero(s >= rtol * s[0]))
    return U[:, :rank], s, rank


def default_fd_steps(beta_nominal, prior: Optional[Prior] = None) -> np.ndarray:
    """
    Heuristic finite-difference steps.

    1e-2 of each prior standard deviation when a prior is given, else 1e-2 of
    |beta_nom|; never below 1e-4.
    """
    beta_nominal = np.asarray(beta_nominal, dtype=float).reshape(-1)
    if prior is not None:
        scale = np.sqrt(np.diag(prior.covariance))
    else:
        scale = np.abs(beta_nominal)
    return np.maximum(FD_RELATIVE_STEP * scale, FD_STEP_FLOOR)


def finite_difference_jacobian(
    model_runner: Callable,
    design: Design,
    beta_nom,
    steps=None,
    prior: Optional[Prior] = None
) -> LinearModel:
    """
    Linearize a computer model by one-sided forward differences.

    Args:
        model_runner: f(point, beta) -> scalar output, deterministic
        design: Design whose raw points are evaluated
        beta_nom: Nominal parameter vector (m,)
        steps: Step per parameter (m,), strictly positive; heuristic default when None
        prior: Used only by the default step heuristic

    Returns:
        LinearModel with H, a finite-difference basis evaluator, beta_nom and
        the nominal outputs f(x_i, beta_nom)
    """
    beta_nom = np.asarray(beta_nom, dtype=float).reshape(-1)
    if steps is None:
        steps = default_fd_steps(beta_nom, prior)
    steps = np.asarray(steps, dtype=float).reshape(-1)
    if steps.shape != beta_nom.shape:
        raise ContractViolation(f"Expected {beta_nom.shape[0]} steps, got {steps.shape[0]}")
    if not np.all(np.isfinite(steps)) or np.any(steps <= 0):
        raise ContractViolation(f"Finite-difference steps must be strictly positive, got {list(steps)}")

    basis = FiniteDifferenceBasis(model_runner, beta_nom, steps)
    H = np.empty((design.n, beta_nom.shape[0]))
    nominal = np.empty(design.n)
    for i, x in enumerate(design.points):
        H[i], nominal[i] = basis.row(x, index=i)

    logger.info(f"Finite-difference Jacobian: {design.n} points x {beta_nom.shape[0]} parameters")
    return LinearModel(H, basis, beta_nom, nominal)


def sample_prior_process(
    cov: CovarianceSpec,
    noise: NoiseSpec,
    design: Design,
    linmodel: LinearModel,
    beta,
    seed: int
) -> np.ndarray:
    """
    Draw observations y = H beta + z + eps from the statistical model.

    Args:
        cov: Model-error covariance
        noise: Measurement-noise covariance
        design: Design
        linmodel: Linear model providing H
        beta: Parameter vector (shifted coordinates)
        seed: Random seed

    Returns:
        (n,) observations
    """
    rng = np.random.default_rng(seed)
    n = design.n
    factor, _ = cholesky_with_jitter(covariance_matrix(cov, design), 'R_mod')
    z = np.tril(factor[0]) @ rng.standard_normal(n)

    if noise.matrix is None:
        eps = noise.sigma_mes * rng.standard_normal(n)
    else:
        noise_factor, _ = cholesky_with_jitter(noise.matrix, 'R_mes')
        eps = np.tril(noise_factor[0]) @ rng.standard_normal(n)

    return linmodel.H @ np.asarray(beta, dtype=float) + z + eps
