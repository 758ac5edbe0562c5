"""
Stationary correlation families and covariance assembly
Points handed to these functions are already in normalized coordinates
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor
from scipy.spatial.distance import cdist

from exceptions import ContractViolation, DegenerateCovarianceError

logger = logging.getLogger(__name__)

# Correlation lengths live in [LENGTH_MIN, LENGTH_MAX] (normalized-input units)
LENGTH_MIN = 1e-3
LENGTH_MAX = 1e2

# Jitter added to the diagonal when Cholesky fails: 1e-10 * mean(diag), x10 per retry
JITTER_BASE = 1e-10
JITTER_RETRIES = 3

# Placeholder hyper-parameters before estimation
START_SIGMA2 = 1.0
START_LENGTH = 0.3

SQRT6 = math.sqrt(6.0)
SQRT10 = math.sqrt(10.0)


class KernelFamily(str, Enum):
    """The four stationary correlation families"""

    EXPONENTIAL = 'exponential'
    MATERN32 = 'matern32'
    MATERN52 = 'matern52'
    GAUSSIAN = 'gaussian'

    @classmethod
    def from_name(cls, name) -> 'KernelFamily':
        """Resolve a family from a config/CLI name ('matern32', 'Matern32', 'matern-3/2', ...)"""
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace('-', '').replace('_', '').replace('/', '')
        aliases = {
            'exponential': cls.EXPONENTIAL,
            'exp': cls.EXPONENTIAL,
            'matern32': cls.MATERN32,
            'matern52': cls.MATERN52,
            'gaussian': cls.GAUSSIAN,
            'squaredexponential': cls.GAUSSIAN,
        }
        if key not in aliases:
            raise ValueError(f"Unknown kernel family: '{name}' (expected one of {[f.value for f in cls]})")
        return aliases[key]


@dataclass(frozen=True)
class CovarianceSpec:
    """sigma2 * C_theta with one correlation length per active input dimension"""

    family: KernelFamily
    sigma2: float
    lengths: Tuple[float, ...]

    def __post_init__(self):
        sigma2 = float(self.sigma2)
        if not (np.isfinite(sigma2) and sigma2 > 0):
            raise ContractViolation(f"sigma2 must be finite and > 0, got {self.sigma2}")

        lengths = np.asarray(self.lengths, dtype=float).reshape(-1)
        if np.any(np.isnan(lengths)) or np.any(lengths <= 0):
            raise ContractViolation(f"Correlation lengths must be > 0, got {list(lengths)}")

        object.__setattr__(self, 'family', KernelFamily.from_name(self.family))
        object.__setattr__(self, 'sigma2', sigma2)
        object.__setattr__(self, 'lengths', tuple(float(v) for v in np.clip(lengths, LENGTH_MIN, LENGTH_MAX)))

    @property
    def dim(self) -> int:
        return len(self.lengths)

    def with_params(self, sigma2: float, lengths: Sequence[float]) -> 'CovarianceSpec':
        return CovarianceSpec(self.family, sigma2, tuple(lengths))

    def to_dict(self) -> dict:
        return {'family': self.family.value, 'sigma2': self.sigma2, 'lengths': list(self.lengths)}


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Known measurement-noise covariance R_mes"""

    sigma_mes: float = 0.0
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.matrix is None:
            if not (np.isfinite(self.sigma_mes) and self.sigma_mes >= 0):
                raise ContractViolation(f"sigma_mes must be finite and >= 0, got {self.sigma_mes}")
            return

        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ContractViolation(f"Noise matrix must be square, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ContractViolation("Noise matrix has non-finite entries")
        if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-12 * max(1.0, np.abs(matrix).max())):
            raise ContractViolation("Noise matrix must be symmetric")
        # PSD check: matrix + jitter must factor
        scale = max(float(np.mean(np.diag(matrix))), 1.0)
        try:
            cho_factor(matrix + JITTER_BASE * scale * np.eye(matrix.shape[0]), lower=True)
        except LinAlgError as e:
            raise ContractViolation("Noise matrix is not positive semi-definite") from e
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def homoscedastic(cls, sigma_mes: float) -> 'NoiseSpec':
        return cls(sigma_mes=float(sigma_mes))

    @classmethod
    def full_matrix(cls, matrix: np.ndarray) -> 'NoiseSpec':
        return cls(sigma_mes=0.0, matrix=matrix)

    @property
    def kind(self) -> str:
        return 'homoscedastic' if self.matrix is None else 'full_matrix'

    def variances(self, n: int) -> np.ndarray:
        """Diagonal of R_mes"""
        return np.diag(noise_matrix(self, n)).copy()

    def subset(self, rows: np.ndarray) -> 'NoiseSpec':
        """Noise restricted to a subset of observations"""
        if self.matrix is None:
            return self
        rows = np.asarray(rows)
        return NoiseSpec.full_matrix(self.matrix[np.ix_(rows, rows)])

    def to_dict(self) -> dict:
        if self.matrix is None:
            return {'kind': self.kind, 'sigma_mes': self.sigma_mes}
        return {'kind': self.kind, 'matrix': self.matrix.tolist()}


def initial_spec(family, dim: int, sigma2: float = START_SIGMA2) -> CovarianceSpec:
    """Spec used to assemble a model before its hyper-parameters are estimated"""
    return CovarianceSpec(KernelFamily.from_name(family), sigma2, (START_LENGTH,) * dim)


def _as_points(x, dim: int, name: str) -> np.ndarray:
    points = np.atleast_2d(np.asarray(x, dtype=float))
    if points.shape[1] != dim:
        raise ContractViolation(f"{name} has dimension {points.shape[1]}, expected {dim}")
    return points


def correlation_matrix(spec: CovarianceSpec, xa, xb) -> np.ndarray:
    """
    Correlation between two sets of normalized points.

    Args:
        spec: Covariance specification (family and lengths)
        xa: (na, d) points
        xb: (nb, d) points

    Returns:
        (na, nb) matrix of correlations in (0, 1]
    """
    a = _as_points(xa, spec.dim, 'xa')
    b = _as_points(xb, spec.dim, 'xb')
    if spec.dim == 0:
        return np.ones((a.shape[0], b.shape[0]))

    scale = np.asarray(spec.lengths)
    a = a / scale
    b = b / scale

    if spec.family is KernelFamily.EXPONENTIAL:
        return np.exp(-cdist(a, b, 'cityblock'))
    if spec.family is KernelFamily.GAUSSIAN:
        return np.exp(-cdist(a, b, 'sqeuclidean'))

    r = cdist(a, b, 'euclidean')
    if spec.family is KernelFamily.MATERN32:
        s = SQRT6 * r
        return (1.0 + s) * np.exp(-s)
    s = SQRT10 * r
    return (1.0 + s + (10.0 / 3.0) * r ** 2) * np.exp(-s)


def correlation(spec: CovarianceSpec, xa, xb) -> float:
    """Correlation between two normalized points"""
    xa = np.asarray(xa, dtype=float).reshape(-1)
    xb = np.asarray(xb, dtype=float).reshape(-1)
    if xa.shape != xb.shape or xa.shape[0] != spec.dim:
        raise ContractViolation(
            f"Point dimensions {xa.shape[0]} and {xb.shape[0]} do not match kernel dimension {spec.dim}"
        )
    return float(correlation_matrix(spec, xa.reshape(1, -1), xb.reshape(1, -1))[0, 0])


def covariance_matrix(spec: CovarianceSpec, design) -> np.ndarray:
    """
    Model-error covariance R_mod over the design points.

    Args:
        spec: Covariance specification
        design: Design (its normalized active coordinates are used)

    Returns:
        Symmetric (n, n) matrix with sigma2 on the diagonal
    """
    x = design.normalized
    if x.shape[0] == 0:
        raise ContractViolation("Design is empty")
    cov = spec.sigma2 * correlation_matrix(spec, x, x)
    # cdist is symmetric up to round-off; enforce it exactly
    cov = 0.5 * (cov + cov.T)
    np.fill_diagonal(cov, spec.sigma2)
    return cov


def covariance_vector(spec: CovarianceSpec, design, xnew) -> np.ndarray:
    """
    Covariance between the model error at the design points and at new raw points.

    Args:
        spec: Covariance specification
        design: Design providing normalization metadata
        xnew: Raw point (d,) or points (p, d)

    Returns:
        (n,) vector for one point, (n, p) matrix for several
    """
    xnew = np.asarray(xnew, dtype=float)
    single = xnew.ndim == 1
    znew = design.normalize(np.atleast_2d(xnew))
    cov = spec.sigma2 * correlation_matrix(spec, design.normalized, znew)
    return cov[:, 0] if single else cov


def noise_matrix(noise: NoiseSpec, n: int) -> np.ndarray:
    """Measurement-noise covariance R_mes of size n"""
    if noise.matrix is None:
        return noise.sigma_mes ** 2 * np.eye(n)
    if noise.matrix.shape[0] != n:
        raise ContractViolation(f"Noise matrix has size {noise.matrix.shape[0]}, expected {n}")
    return noise.matrix


def cholesky_with_jitter(
    matrix: np.ndarray,
    label: str = 'covariance',
    quiet: bool = False
) -> Tuple[tuple, float]:
    """
    Lower Cholesky factor, adding diagonal jitter when the plain factorization fails.

    Args:
        matrix: Symmetric matrix to factor
        label: Name used in log and error messages
        quiet: Log jitter at DEBUG instead of WARNING (optimizer inner loop)

    Returns:
        Tuple of (cho_factor result, jitter added to the diagonal)
    """
    try:
        return cho_factor(matrix, lower=True), 0.0
    except LinAlgError:
        pass

    mean_diag = float(np.mean(np.diag(matrix)))
    if not (np.isfinite(mean_diag) and mean_diag > 0):
        raise DegenerateCovarianceError(f"Degenerate {label}: mean diagonal is {mean_diag}")

    identity = np.eye(matrix.shape[0])
    for attempt in range(JITTER_RETRIES):
        jitter = JITTER_BASE * mean_diag * 10.0 ** attempt
        try:
            factor = cho_factor(matrix + jitter * identity, lower=True)
            log = logger.debug if quiet else logger.warning
            log(f"Cholesky of {label} needed jitter {jitter:.3e} (attempt {attempt + 1})")
            return factor, jitter
        except LinAlgError:
            continue

    raise DegenerateCovarianceError(
        f"Degenerate {label}: Cholesky failed after {JITTER_RETRIES} jitter attempts"
    )


def log_det_from_cholesky(factor: tuple) -> float:
    """ln|A| from a cho_factor result"""
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
