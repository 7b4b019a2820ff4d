import numpy as np
import pytest

from distdesign import _cd
from distdesign.glm import (
    ConvergenceError,
    GlmError,
    LassoConfig,
    fit_lasso_logistic,
    kkt_violation,
    penalized_objective,
    predict_probability,
)


def proximal_gradient_oracle(xs, y, lam, tol=1e-12, max_iter=500_000):
    """Independent minimizer of the same standardized objective: ISTA with the
    logistic Lipschitz step, soft threshold on coefficients only."""
    n, k = xs.shape
    b0 = float(np.log(y.mean() / (1 - y.mean())))
    b = np.zeros(k)
    step = 4.0
    for _ in range(max_iter):
        eta = xs @ b + b0
        p = 1 / (1 + np.exp(-eta))
        g = -xs.T @ (y - p) / n
        g0 = -(y - p).mean()
        b_new = b - step * g
        b_new = np.sign(b_new) * np.maximum(np.abs(b_new) - step * lam, 0.0)
        b0_new = b0 - step * g0
        if max(np.abs(b_new - b).max(), abs(b0_new - b0)) < tol:
            return b0_new, b_new
        b, b0 = b_new, b0_new
    return b0, b


def logistic_data(n, k, beta, intercept, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, k))
    eta = x @ beta + intercept
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return x, y


def test_null_model_at_lambda_max():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((300, 5))
    y = (rng.random(300) < 0.35).astype(float)
    xs = (x - x.mean(0)) / x.std(0)
    lam_max = np.abs(xs.T @ (y - y.mean())).max() / 300
    fit = fit_lasso_logistic(x, y, LassoConfig(lambdas=np.array([lam_max]), cv_folds=0))
    assert np.count_nonzero(fit.coefficients) == 0
    assert abs(fit.intercept - np.log(y.mean() / (1 - y.mean()))) < 1e-8


def test_strong_predictor_selected_noise_zero():
    beta = np.zeros(6)
    beta[0] = 2.0
    x, y = logistic_data(2000, 6, beta, 0.0, seed=0)
    fit = fit_lasso_logistic(x, y, LassoConfig(seed=0))
    assert fit.coefficients[0] > 0
    assert np.count_nonzero(fit.coefficients[1:]) == 0
    sel = fit.selected_index
    lam_next = fit.lambda_path[max(sel - 1, 0)]
    near = fit_lasso_logistic(x, y, LassoConfig(lambdas=np.array([lam_next]), cv_folds=0))
    assert near.coefficients[0] > 0
    assert np.count_nonzero(near.coefficients[1:]) == 0


def test_fixed_lambda_matches_proximal_gradient_oracle():
    beta = np.array([0.8, -0.5])
    x, y = logistic_data(200, 2, beta, -0.7, seed=3)
    lam = 0.04
    fit = fit_lasso_logistic(x, y, LassoConfig(lambdas=np.array([lam]), cv_folds=0))
    xs = (x - x.mean(0)) / np.sqrt(((x - x.mean(0)) ** 2).mean(0))
    b0_o, b_o = proximal_gradient_oracle(xs, y, lam)
    assert abs(fit.std_intercept - b0_o) < 1e-4
    assert np.abs(fit.std_coefficients - b_o).max() < 1e-4


def test_kkt_invariant_at_returned_fits():
    for seed in range(3):
        beta = np.zeros(8)
        beta[:2] = [1.2, -0.8]
        x, y = logistic_data(500, 8, beta, -1.0, seed=seed)
        fit = fit_lasso_logistic(x, y, LassoConfig(seed=seed))
        assert fit.kkt_max_violation <= 1e-6
        assert kkt_violation(fit, x, y) <= 1e-6


def test_labels_must_have_both_classes():
    x = np.random.default_rng(0).standard_normal((20, 2))
    with pytest.raises(GlmError, match="both classes"):
        fit_lasso_logistic(x, np.ones(20))


def test_predict_probability_bounds_and_identities():
    beta = np.zeros(3)
    x, y = logistic_data(200, 3, beta, -1.2, seed=9)
    fit = fit_lasso_logistic(x, y, LassoConfig(cv_folds=0, n_lambda=5))
    probs = predict_probability(fit, x)
    assert ((probs > 0) & (probs < 1)).all()
    with pytest.raises(GlmError, match="width"):
        predict_probability(fit, x[:, :2])


def test_sweep_objective_monotone_nonincreasing():
    rng = np.random.default_rng(12)
    n, k = 150, 7
    x = rng.standard_normal((n, k))
    xs = np.asfortranarray((x - x.mean(0)) / np.sqrt(((x - x.mean(0)) ** 2).mean(0)))
    z = rng.standard_normal(n) * 2
    v = rng.uniform(0.05, 0.25, n)
    objs, _, _ = _cd.wls_lasso_sweep_trace(xs.T, z, v, 0.03, 0.0, np.zeros(k), 30)
    diffs = np.diff(objs)
    assert (diffs <= 1e-12).all()


def test_warm_path_at_least_as_good_as_cold():
    beta = np.zeros(10)
    beta[:3] = [1.0, -0.7, 0.5]
    x, y = logistic_data(400, 10, beta, -0.8, seed=21)
    xs = (x - x.mean(0)) / np.sqrt(((x - x.mean(0)) ** 2).mean(0))
    xsf = np.asfortranarray(xs)
    lam_max = np.abs(xs.T @ (y - y.mean())).max() / 400
    lambdas = np.exp(np.linspace(np.log(lam_max), np.log(lam_max * 1e-3), 30))
    b0_null = float(np.log(y.mean() / (1 - y.mean())))
    zeros = np.zeros(10)
    tight = 1e-18
    b0s, betas, _, _, _, _, n_eff = _cd.logistic_lasso_chunk(
        xsf.T, y, lambdas, lambdas[0], b0_null, zeros, tight, 10**7, 0.0, 1.0, -1.0
    )
    assert n_eff == 30
    for idx in (5, 15, 29):
        lam = lambdas[idx]
        cb0, cb, _, _, _, _, _ = _cd.logistic_lasso_chunk(
            xsf.T, y, np.array([lam]), lam, b0_null, zeros, tight, 10**7, 0.0, 1.0, -1.0
        )
        warm_obj = penalized_objective(xs, y, lam, b0s[idx], betas[idx])
        cold_obj = penalized_objective(xs, y, lam, cb0[0], cb[0])
        assert warm_obj <= cold_obj + 1e-8


def test_cv_deviance_aligned_with_path():
    beta = np.zeros(5)
    beta[0] = 1.5
    x, y = logistic_data(400, 5, beta, -1.0, seed=33)
    fit = fit_lasso_logistic(x, y, LassoConfig(seed=2))
    assert fit.cv_deviance.shape == fit.lambda_path.shape
    assert fit.lambda_ == fit.lambda_path[np.argmin(fit.cv_deviance)]


def test_convergence_error_carries_lambda_and_iterations():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((150, 4))
    y = (rng.random(150) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
    with pytest.raises(ConvergenceError) as err:
        fit_lasso_logistic(x, y, LassoConfig(max_iter=1, cv_folds=0))
    assert err.value.lambda_value > 0
    assert err.value.iterations >= 1


def test_separable_data_still_converges_tightly():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((300, 3))
    y = (x[:, 0] > 0).astype(float)
    fit = fit_lasso_logistic(x, y, LassoConfig(seed=0))
    assert fit.kkt_max_violation <= 1e-6
    assert fit.coefficients[0] > 0
    # the train-deviance stop ends the path before total saturation
    assert fit.lambda_path.size <= 100


def test_constant_column_never_selected():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((300, 4))
    x[:, 2] = 7.0
    eta = 1.5 * x[:, 0] - 1.0
    y = (rng.random(300) < 1 / (1 + np.exp(-eta))).astype(float)
    fit = fit_lasso_logistic(x, y, LassoConfig(seed=5))
    assert fit.coefficients[2] == 0.0
