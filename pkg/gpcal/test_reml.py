"""
Tests for the REML objective forms and the multi-start estimator
"""

import math

import numpy as np
import pytest

import reml
from config import OptimizerConfig
from exceptions import (
    ContractViolation,
    EstimationFailedError,
    InsufficientDegreesOfFreedomError,
    NonIdentifiableError,
)
from gpmodel import Design, LinearModel, Observations, PolynomialBasis, assemble, sample_prior_process
from kernels import CovarianceSpec, KernelFamily, NoiseSpec, correlation_matrix
from reml import (
    contrast_matrix,
    estimate_hyperparameters,
    fit,
    reml_objective_contrast,
    reml_objective_harville,
    reml_objective_svd,
)


def random_model(rng, n=12, d=2, family=KernelFamily.MATERN52, noise=0.05):
    design = Design.from_points(rng.uniform(0.0, 1.0, (n, d)))
    linmodel = LinearModel.from_basis(PolynomialBasis(1), design)
    y = np.sin(3.0 * design.points[:, 0]) + design.points[:, 1] ** 2 + 0.1 * rng.standard_normal(n)
    cov = CovarianceSpec(family, 1.0, (0.3,) * d)
    return assemble(design, Observations(y), linmodel, cov, NoiseSpec.homoscedastic(noise))


def grid_candidates(family, d):
    return [
        CovarianceSpec(family, sigma2, (length,) * d)
        for sigma2 in (0.1, 0.3, 1.0, 3.0, 10.0)
        for length in (0.05, 0.1, 0.3, 1.0, 3.0)
    ]


class TestTwoPointCase:
    """R = sigma2 I, H = (1, 1)^t, y = (1, 3): q = ln sigma2 + 2 / sigma2"""

    @pytest.mark.parametrize('sigma2', [0.5, 1.0, 2.0, 7.0])
    def test_closed_form(self, two_point_model, sigma2):
        candidate = CovarianceSpec(KernelFamily.EXPONENTIAL, sigma2, (1e-3,))
        expected = math.log(sigma2) + 2.0 / sigma2
        assert reml_objective_svd(two_point_model, candidate).q == pytest.approx(expected, rel=1e-12)
        assert reml_objective_harville(two_point_model, candidate).q == pytest.approx(expected, rel=1e-12)

    def test_explicit_contrast(self, two_point_model):
        W = np.array([[1.0, -1.0]]) / math.sqrt(2.0)
        candidate = CovarianceSpec(KernelFamily.EXPONENTIAL, 2.0, (1e-3,))
        value = reml_objective_contrast(two_point_model, candidate, W)
        assert value.valid
        assert value.q == pytest.approx(math.log(2.0) + 1.0, rel=1e-12)

    def test_contrast_matrix(self, two_point_model):
        W = contrast_matrix(two_point_model.H)
        assert W.shape == (1, 2)
        np.testing.assert_allclose(W @ W.T, [[1.0]], atol=1e-14)
        np.testing.assert_allclose(W @ two_point_model.H, 0.0, atol=1e-14)

    def test_estimated_variance(self, two_point_model):
        config = OptimizerConfig(n_starts=3, seed=0, estimate_lengths=False)
        estimate = estimate_hyperparameters(two_point_model, config)
        assert estimate.spec.sigma2 == pytest.approx(2.0, rel=1e-3)
        assert estimate.spec.lengths == (1e-3,)
        assert estimate.n_starts == 4

    def test_fit_reassembles(self, two_point_model):
        config = OptimizerConfig(n_starts=2, seed=0, estimate_lengths=False)
        estimate, model = fit(two_point_model, config)
        assert model.cov is estimate.spec
        np.testing.assert_allclose(np.diag(model.R), estimate.spec.sigma2)


class TestObjectiveForms:

    def test_contrast_equals_svd_form(self, rng):
        model = random_model(rng)
        for candidate in grid_candidates(KernelFamily.MATERN52, 2):
            svd = reml_objective_svd(model, candidate).q
            contrast = reml_objective_contrast(model, candidate).q
            assert contrast == pytest.approx(svd, rel=1e-8, abs=1e-8)

    def test_harville_equals_svd_form(self, rng):
        model = random_model(rng, family=KernelFamily.GAUSSIAN)
        for candidate in grid_candidates(KernelFamily.GAUSSIAN, 2):
            svd = reml_objective_svd(model, candidate).q
            harville = reml_objective_harville(model, candidate).q
            assert harville == pytest.approx(svd, rel=1e-8, abs=1e-8)

    def test_contrast_choice_shifts_by_constant(self, rng):
        model = random_model(rng)
        W1 = contrast_matrix(model.H)
        A = rng.standard_normal((W1.shape[0], W1.shape[0])) + 3.0 * np.eye(W1.shape[0])
        W2 = A @ W1
        shift = 2.0 * np.log(abs(np.linalg.det(A)))
        for candidate in grid_candidates(KernelFamily.MATERN52, 2):
            q1 = reml_objective_contrast(model, candidate, W1).q
            q2 = reml_objective_contrast(model, candidate, W2).q
            assert q2 - q1 == pytest.approx(shift, rel=1e-7, abs=1e-7)

    def test_invariant_to_linear_trend(self, rng):
        model = random_model(rng)
        candidate = CovarianceSpec(KernelFamily.MATERN52, 0.7, (0.2, 0.4))
        base = reml_objective_svd(model, candidate).q
        for _ in range(10):
            b = rng.standard_normal(model.m)
            shifted = assemble(
                model.design, Observations(model.y + model.H @ b), model.linmodel, model.cov, model.noise
            )
            assert reml_objective_svd(shifted, candidate).q == pytest.approx(base, rel=1e-8, abs=1e-8)


class TestObjectiveErrors:

    def test_no_degrees_of_freedom(self):
        design = Design.from_points(np.array([[0.0], [1.0]]))
        linmodel = LinearModel.from_basis(PolynomialBasis(1), design)
        model = assemble(design, Observations([1.0, 2.0]), linmodel,
                         CovarianceSpec(KernelFamily.MATERN32, 1.0, (0.5,)), NoiseSpec())
        with pytest.raises(InsufficientDegreesOfFreedomError):
            reml_objective_svd(model, model.cov)
        with pytest.raises(InsufficientDegreesOfFreedomError):
            estimate_hyperparameters(model, OptimizerConfig(n_starts=1))

    @pytest.mark.parametrize('W', [
        np.array([[0.0, 0.0]]),
        np.array([[1.0, 0.0]]),
        np.array([[1.0, -1.0], [-1.0, 1.0]]),
    ])
    def test_invalid_contrasts(self, two_point_model, W):
        with pytest.raises(ContractViolation):
            reml_objective_contrast(two_point_model, two_point_model.cov, W)

    def test_projection_form_needs_full_rank(self):
        design = Design.from_points(np.array([[0.0], [0.5], [1.0]]))
        linmodel = LinearModel(np.ones((3, 2)))
        model = assemble(design, Observations([1.0, 2.0, 4.0]), linmodel,
                         CovarianceSpec(KernelFamily.MATERN32, 1.0, (0.5,)), NoiseSpec())
        with pytest.raises(NonIdentifiableError):
            reml_objective_harville(model, model.cov)

    def test_wrong_candidate_dimension(self, two_point_model):
        with pytest.raises(ContractViolation):
            reml_objective_svd(two_point_model, CovarianceSpec(KernelFamily.EXPONENTIAL, 1.0, (1.0, 1.0)))


class TestEstimator:

    def sampled_model(self, n, length, seed, family=KernelFamily.MATERN32):
        design = Design.from_points(np.linspace(0.0, 1.0, n).reshape(-1, 1))
        linmodel = LinearModel.from_basis(PolynomialBasis(1), design)
        truth = CovarianceSpec(family, 1.0, (length,))
        y = sample_prior_process(truth, NoiseSpec(), design, linmodel, [0.5, -1.0], seed=seed)
        return assemble(design, Observations(y), linmodel, truth, NoiseSpec())

    def test_variance_recovered_with_known_lengths(self):
        model = self.sampled_model(60, 0.03, seed=11)
        estimate = estimate_hyperparameters(model, OptimizerConfig(n_starts=4, seed=0, estimate_lengths=False))
        assert 0.5 <= estimate.spec.sigma2 <= 2.0

    def test_variance_recovered_jointly_with_lengths(self):
        model = self.sampled_model(100, 0.02, seed=11)
        estimate = estimate_hyperparameters(model, OptimizerConfig(n_starts=4, seed=0))
        assert 0.5 <= estimate.spec.sigma2 <= 2.0
        assert estimate.non_identified == ()

    def test_start_variance_uses_gls_residuals(self):
        model = self.sampled_model(20, 0.2, seed=5)
        C = correlation_matrix(CovarianceSpec(KernelFamily.MATERN32, 1.0, (0.3,)),
                               model.design.normalized, model.design.normalized)
        H, y = model.H, model.y
        Ci = np.linalg.inv(C)
        beta = np.linalg.solve(H.T @ Ci @ H, H.T @ Ci @ y)
        residual = y - H @ beta
        assert reml.residual_variance(model) == pytest.approx(residual @ residual / 18, rel=1e-8)

    def test_start_variance_without_active_dimensions(self):
        design = Design.from_points(np.full((4, 1), 0.5))
        linmodel = LinearModel.from_basis(PolynomialBasis(0), design)
        model = assemble(design, Observations([1.0, 2.0, 3.0, 4.0]), linmodel,
                         CovarianceSpec(KernelFamily.MATERN32, 1.0, ()), NoiseSpec.homoscedastic(0.1))
        assert reml.residual_variance(model) == pytest.approx(5.0 / 3.0, rel=1e-12)

    def test_parallel_starts_match_inline(self):
        model = self.sampled_model(20, 0.2, seed=5)
        inline = estimate_hyperparameters(model, OptimizerConfig(n_starts=3, seed=7, n_jobs=1))
        pooled = estimate_hyperparameters(model, OptimizerConfig(n_starts=3, seed=7, n_jobs=2))
        assert pooled.to_dict() == inline.to_dict()

    def test_deterministic(self):
        model = self.sampled_model(20, 0.2, seed=5)
        config = OptimizerConfig(n_starts=3, seed=7)
        first = estimate_hyperparameters(model, config)
        second = estimate_hyperparameters(model, config)
        assert first.to_dict() == second.to_dict()

    def test_best_start_is_minimum(self):
        model = self.sampled_model(20, 0.2, seed=5)
        estimate = estimate_hyperparameters(model, OptimizerConfig(n_starts=3, seed=1))
        assert len(estimate.trace) == 4
        assert [record.index for record in estimate.trace] == [0, 1, 2, 3]
        assert all(estimate.q_min <= record.q for record in estimate.trace if record.valid)
        assert estimate.trace[estimate.best_index].q == estimate.q_min

    def test_first_start_is_residual_variance(self):
        model = self.sampled_model(20, 0.2, seed=5)
        estimate = estimate_hyperparameters(model, OptimizerConfig(n_starts=1, seed=1))
        start = estimate.trace[0].start
        assert start[0] == pytest.approx(reml.residual_variance(model), rel=1e-12)
        assert start[1] == pytest.approx(0.3, rel=1e-12)

    def test_estimate_within_bounds(self):
        model = self.sampled_model(20, 0.2, seed=5)
        estimate = estimate_hyperparameters(model, OptimizerConfig(n_starts=3, seed=1))
        s0 = reml.residual_variance(model)
        assert s0 / reml.SIGMA2_SPAN * (1 - 1e-9) <= estimate.spec.sigma2 <= s0 * reml.SIGMA2_SPAN * (1 + 1e-9)
        assert all(1e-3 <= length <= 1e2 for length in estimate.spec.lengths)

    def test_non_identified_length(self, caplog):
        x = np.linspace(0.0, 1.0, 15)
        points = np.column_stack([x, np.full(15, 2.0)])
        design = Design.from_points(points, labels=('x', 'c'), drop_constant=False)
        linmodel = LinearModel.from_basis(PolynomialBasis(0), design)
        model = assemble(design, Observations(np.sin(4.0 * x)), linmodel,
                         CovarianceSpec(KernelFamily.GAUSSIAN, 1.0, (0.3, 0.3)), NoiseSpec.homoscedastic(0.01))

        with caplog.at_level('WARNING'):
            estimate = estimate_hyperparameters(model, OptimizerConfig(n_starts=3, seed=2))
        assert estimate.non_identified == (1,)
        best = estimate.trace[estimate.best_index]
        assert estimate.spec.lengths[1] == pytest.approx(best.start[2], rel=1e-9)
        assert "'c'" in caplog.text

    def test_all_starts_invalid(self, two_point_model, monkeypatch):
        monkeypatch.setattr(reml, '_svd_q', lambda model, candidate, U: reml.RemlObjectiveValue.invalid())
        with pytest.raises(EstimationFailedError) as info:
            estimate_hyperparameters(two_point_model, OptimizerConfig(n_starts=2, estimate_lengths=False))
        assert len(info.value.trace) == 3
        assert not any(record.valid for record in info.value.trace)
