"""
Shared pytest fixtures
"""

import os
import sys

# Add package directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from gpmodel import Design, LinearModel, Observations, PolynomialBasis, assemble  # noqa: E402
from kernels import CovarianceSpec, KernelFamily, NoiseSpec  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_point_model():
    """n=2, m=1, H=(1,1)^t, y=(1,3); correlation lengths at the clamp minimum so R = sigma2 I"""
    design = Design.from_points(np.array([[0.0], [1.0]]), bounds=[(0.0, 1.0)])
    linmodel = LinearModel.from_basis(PolynomialBasis(0), design)
    cov = CovarianceSpec(KernelFamily.EXPONENTIAL, 1.0, (1e-3,))
    return assemble(design, Observations([1.0, 3.0]), linmodel, cov, NoiseSpec())


@pytest.fixture
def line_data(rng):
    """Smooth 1-D data around a line, with a little noise"""
    x = np.sort(rng.uniform(0.0, 1.0, 12))
    y = 0.5 + 1.5 * x + 0.3 * np.sin(6.0 * x) + 0.01 * rng.standard_normal(12)
    return x, y
