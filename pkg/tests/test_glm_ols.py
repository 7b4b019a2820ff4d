import numpy as np
import pytest

from distdesign.glm import GlmError, OlsFit, fit_ols, predict_probability


def normal_equations_oracle(x, y):
    design = np.column_stack([np.ones(x.shape[0]), x])
    return np.linalg.solve(design.T @ design, design.T @ y)


def test_exact_linear_relation():
    x = np.array([[-1.0], [0.0], [1.0]])
    fit = fit_ols(x, 2.0 * x[:, 0])
    assert abs(fit.coefficients[0] - 2.0) < 1e-10
    assert abs(fit.intercept) < 1e-10


def test_intercept_is_treated_share_under_centered_orthogonal_block():
    rng = np.random.default_rng(1)
    raw = rng.standard_normal((60, 4))
    q, _ = np.linalg.qr(raw - raw.mean(axis=0))
    w = (rng.random(60) < 0.3).astype(float)
    fit = fit_ols(q, w)
    assert abs(fit.intercept - w.mean()) < 1e-10


def test_matches_normal_equations_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((50, 3))
    y = rng.standard_normal(50)
    fit = fit_ols(x, y)
    oracle = normal_equations_oracle(x, y)
    assert abs(fit.intercept - oracle[0]) < 1e-8
    assert np.abs(fit.coefficients - oracle[1:]).max() < 1e-8


def test_residual_orthogonality_invariant():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((80, 5))
    y = rng.standard_normal(80)
    fit = fit_ols(x, y)
    resid = y - fit.fitted
    centered = x - x.mean(axis=0)
    assert np.abs(centered.T @ resid).max() < 1e-8


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((40, 3))
    y = rng.standard_normal(40)
    fit = fit_ols(x, y)

    def rss(c):
        pred = c[0] + x @ c[1:]
        return ((y - pred) ** 2).sum()

    coef = np.concatenate([[fit.intercept], fit.coefficients])
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        grad = (rss(coef + e) - rss(coef - e)) / (2 * h)
        assert abs(grad) < 1e-6 * max(1.0, rss(coef))


def test_rank_deficiency_flagged_min_norm():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 2))
    x = np.column_stack([x, x[:, 0] + x[:, 1]])
    y = rng.standard_normal(30)
    fit = fit_ols(x, y)
    assert fit.rank_deficient
    assert np.isfinite(fit.coefficients).all()


def test_k_ge_n_rejected():
    with pytest.raises(GlmError, match="more observations"):
        fit_ols(np.eye(3), np.ones(3))


def test_predict_raw_linear():
    fit = OlsFit(intercept=1.0, coefficients=np.array([2.0]), fitted=np.zeros(1))
    out = predict_probability(fit, np.array([[3.0]]))
    assert out[0] == 7.0  # may exit (0, 1): raw linear prediction
