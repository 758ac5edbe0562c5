"""
End-to-end checks of the calibration pipeline on the built-in problems,
closed-form oracles and synthetic data drawn from the statistical model
"""

import json
import math

import numpy as np
import pytest

from cli import main
from config import OptimizerConfig
from crossval import CvMode, partition, run_cv
from demos import demo_friction, demo_parabola
from gpmodel import Design, LinearModel, Observations, PolynomialBasis, Prior, assemble, sample_prior_process
from infer import Regime, calibrate_bayes, calibrate_gls, predict_batch
from kernels import CovarianceSpec, KernelFamily, NoiseSpec
from reml import contrast_matrix, estimate_hyperparameters, reml_objective_contrast, reml_objective_svd

SQRT6 = math.sqrt(6.0)


def dense_correlation(family, a, b, lengths):
    """Correlation matrix written out element by element"""
    out = np.empty((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            h = (a[i] - b[j]) / lengths
            if family is KernelFamily.EXPONENTIAL:
                out[i, j] = math.exp(-np.sum(np.abs(h)))
            elif family is KernelFamily.GAUSSIAN:
                out[i, j] = math.exp(-np.sum(h ** 2))
            else:
                s = SQRT6 * math.sqrt(np.sum(h ** 2))
                out[i, j] = (1.0 + s) * math.exp(-s)
    return out


class TestParabola:

    def test_no_prior_fidelity(self):
        result = demo_parabola(Regime.NO_PRIOR, grid_size=601)
        model, calib = result.model, result.calibration

        at_points = predict_batch(model, calib, np.array([[0.2], [0.5], [0.8]]))
        for x, pred in zip((0.2, 0.5, 0.8), at_points):
            assert abs(pred.mean - x ** 2) <= 1e-8
            assert pred.std <= 1e-6

        inside = (result.grid >= 0.2) & (result.grid <= 0.8)
        means = np.array([p.mean for p in result.predictions])
        assert np.sqrt(np.mean((means[inside] - result.grid[inside] ** 2) ** 2)) <= 0.01
        assert np.max(np.abs(model.y - model.H @ calib.beta)) > 1e-3

    def test_vague_prior_matches_no_prior(self):
        baseline = demo_parabola(Regime.NO_PRIOR, grid_size=51)
        vague = demo_parabola(Regime.PRIOR, grid_size=51, prior=Prior([0.2, 1.0], 1e8 * np.eye(2)))

        np.testing.assert_allclose(vague.calibration.beta, baseline.calibration.beta, rtol=1e-4)
        np.testing.assert_allclose(vague.calibration.covariance, baseline.calibration.covariance, rtol=1e-4)
        np.testing.assert_allclose([p.mean for p in vague.predictions],
                                   [p.mean for p in baseline.predictions], rtol=1e-4, atol=1e-10)
        np.testing.assert_allclose([p.variance for p in vague.predictions],
                                   [p.variance for p in baseline.predictions], rtol=1e-4, atol=1e-10)


class TestRemlOracles:

    def test_two_contrasts_differ_by_constant(self, rng):
        design = Design.from_points(rng.uniform(0.0, 1.0, (8, 1)))
        linmodel = LinearModel.from_basis(PolynomialBasis(1), design)
        y = np.cos(4.0 * design.points[:, 0]) + 0.05 * rng.standard_normal(8)
        model = assemble(design, Observations(y), linmodel,
                         CovarianceSpec(KernelFamily.MATERN32, 1.0, (0.3,)), NoiseSpec.homoscedastic(0.05))

        W1 = contrast_matrix(model.H)
        W2 = (np.eye(6) + np.triu(rng.uniform(-0.5, 0.5, (6, 6)), 1)) @ W1
        offsets = []
        for sigma in (0.1, 0.3, 1.0, 3.0, 10.0):
            for length in (0.05, 0.1, 0.3, 1.0, 3.0):
                candidate = CovarianceSpec(KernelFamily.MATERN32, sigma ** 2, (length,))
                q_svd = reml_objective_svd(model, candidate).q
                q1 = reml_objective_contrast(model, candidate, W1).q
                q2 = reml_objective_contrast(model, candidate, W2).q
                offsets.append((q1 - q_svd, q2 - q_svd))
        offsets = np.array(offsets)
        assert np.ptp(offsets[:, 0]) <= 1e-8
        assert np.ptp(offsets[:, 1]) <= 1e-8

    def test_two_point_estimate(self, two_point_model):
        estimate = estimate_hyperparameters(two_point_model, OptimizerConfig(n_starts=4, estimate_lengths=False))
        assert estimate.spec.sigma2 == pytest.approx(2.0, abs=1e-3)

    def test_independent_of_trend_coefficients(self, rng):
        design = Design.from_points(rng.uniform(0.0, 1.0, (10, 2)))
        linmodel = LinearModel.from_basis(PolynomialBasis(1), design)
        y = rng.standard_normal(10)
        noise = NoiseSpec.homoscedastic(0.1)
        candidate = CovarianceSpec(KernelFamily.EXPONENTIAL, 0.8, (0.4, 0.2))
        base = reml_objective_svd(assemble(design, Observations(y), linmodel, candidate, noise), candidate).q
        for _ in range(10):
            b = rng.standard_normal(3)
            moved = assemble(design, Observations(y + linmodel.H @ b), linmodel, candidate, noise)
            assert abs(reml_objective_svd(moved, candidate).q - base) <= 1e-8


class TestDenseOracle:

    @pytest.mark.parametrize('instance', range(20))
    def test_matches_explicit_inverses(self, instance):
        rng = np.random.default_rng(1000 + instance)
        n = int(rng.integers(3, 6))
        m = int(rng.integers(1, 3))
        d = int(rng.integers(1, 3))
        family = [KernelFamily.EXPONENTIAL, KernelFamily.GAUSSIAN, KernelFamily.MATERN32][instance % 3]

        X = rng.uniform(0.0, 1.0, (n, d))
        H = rng.standard_normal((n, m))
        y = rng.standard_normal(n)
        sigma2 = float(rng.uniform(0.5, 2.0))
        lengths = rng.uniform(0.1, 0.5, d)
        sigma_mes = 0.1
        x_new = rng.uniform(0.0, 1.0, (1, d))
        h_new = rng.standard_normal(m)
        prior_mean = rng.standard_normal(m)
        Q = np.diag(rng.uniform(0.5, 2.0, m))

        design = Design.from_points(X, bounds=[(0.0, 1.0)] * d)
        spec = CovarianceSpec(family, sigma2, tuple(lengths))
        noise = NoiseSpec.homoscedastic(sigma_mes)
        model = assemble(design, Observations(y), LinearModel(H), spec, noise)
        bayes_model = assemble(design, Observations(y), LinearModel(H), spec, noise, Prior(prior_mean, Q))

        R = sigma2 * dense_correlation(family, X, X, lengths) + sigma_mes ** 2 * np.eye(n)
        r = sigma2 * dense_correlation(family, X, x_new, lengths)[:, 0]
        Ri = np.linalg.inv(R)

        cov_gls = np.linalg.inv(H.T @ Ri @ H)
        beta_gls = cov_gls @ H.T @ Ri @ y
        cov_post = np.linalg.inv(np.linalg.inv(Q) + H.T @ Ri @ H)
        beta_post = prior_mean + cov_post @ H.T @ Ri @ (y - H @ prior_mean)

        for calib, beta, M, used in (
            (calibrate_gls(model), beta_gls, cov_gls, model),
            (calibrate_bayes(bayes_model), beta_post, cov_post, bayes_model),
        ):
            np.testing.assert_allclose(calib.beta, beta, rtol=1e-9, atol=1e-10)
            np.testing.assert_allclose(calib.covariance, M, rtol=1e-9, atol=1e-10)

            mean = h_new @ beta + r @ Ri @ (y - H @ beta)
            u = h_new - H.T @ Ri @ r
            variance = sigma2 - r @ Ri @ r + u @ M @ u
            pred = predict_batch(used, calib, x_new, H_new=h_new.reshape(1, -1))[0]
            assert pred.mean == pytest.approx(mean, rel=1e-9, abs=1e-10)
            assert pred.variance == pytest.approx(variance, rel=1e-9, abs=1e-10)


class TestCrossValidationOnSyntheticData:

    def test_held_out_observation_does_not_leak(self, rng):
        design = Design.from_points(rng.uniform(0.0, 1.0, (20, 2)))
        linmodel = LinearModel.from_basis(PolynomialBasis(1), design)
        noise = NoiseSpec.homoscedastic(0.05)
        y = sample_prior_process(CovarianceSpec(KernelFamily.MATERN52, 0.5, (0.4, 0.4)), noise, design, linmodel,
                                 [1.0, 0.5, -0.5], seed=4)
        folds = partition(design, 5, seed=0)
        config = OptimizerConfig(n_starts=2, max_iters=150, seed=0)

        before = run_cv(design, Observations(y), linmodel, noise, KernelFamily.MATERN52, folds,
                        optimizer_config=config)
        held_out = folds.test_rows(2)[0]
        y_changed = y.copy()
        y_changed[held_out] += 3.0
        after = run_cv(design, Observations(y_changed), linmodel, noise, KernelFamily.MATERN52, folds,
                       optimizer_config=config)

        assert after.per_fold[2].spec.to_dict() == before.per_fold[2].spec.to_dict()
        np.testing.assert_array_equal(after.per_fold[2].calibration.beta, before.per_fold[2].calibration.beta)
        np.testing.assert_array_equal(after.per_fold[2].calibration.covariance,
                                      before.per_fold[2].calibration.covariance)
        position = list(folds.test_rows(2)).index(held_out)
        assert after.per_fold[2].residuals[position] == pytest.approx(before.per_fold[2].residuals[position] - 3.0)

    @pytest.mark.parametrize('family', list(KernelFamily))
    def test_interval_coverage_is_plausible(self, family):
        rng = np.random.default_rng(77)
        design = Design.from_points(rng.uniform(0.0, 1.0, (100, 2)))
        linmodel = LinearModel.from_basis(PolynomialBasis(1), design)
        truth = CovarianceSpec(family, 1.0, (0.3, 0.3))
        noise = NoiseSpec.homoscedastic(0.1)
        y = sample_prior_process(truth, noise, design, linmodel, [1.0, 2.0, -1.0], seed=78)

        report = run_cv(design, Observations(y), linmodel, noise, family, partition(design, 10, seed=0),
                        mode=CvMode.FIXED, hyperparameters=truth)
        assert 0.80 <= report.ic <= 0.98


@pytest.fixture(scope='module')
def friction_result():
    return demo_friction(seed=0, optimizer_config=OptimizerConfig(n_starts=4, seed=0))


class TestFrictionDemo:

    def test_model_error_inference_improves_prediction(self, friction_result):
        report = friction_result.reports[KernelFamily.MATERN32.value]
        assert report.rmse <= 0.5 * report.baseline_rmse

    def test_baseline_above_gp_for_every_kernel(self, friction_result):
        for report in friction_result.reports.values():
            assert report.baseline_rmse > report.rmse

    def test_kernels_agree(self, friction_result):
        rmse = friction_result.comparison['rmse']
        assert len(rmse) == 4
        assert rmse.max() / rmse.min() <= 1.25


class TestDeterminism:

    def test_fit_twice(self, tmp_path, line_data):
        x, y = line_data
        data = tmp_path / 'data.csv'
        data.write_text("x,y\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(x, y)))
        config = tmp_path / 'run.json'
        config.write_text(json.dumps({'optimizer': {'n_starts': 3}, 'noise': {'sigma_mes': 0.01}}))

        outputs = []
        for name in ('first', 'second'):
            out = tmp_path / name
            assert main(['fit', '--config', str(config), '--data', str(data), '--out', str(out), '--seed', '5']) == 0
            outputs.append((out / 'fit.json').read_bytes())
        assert outputs[0] == outputs[1]
