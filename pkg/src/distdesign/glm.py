"""Self-contained numerical layer: OLS, L1-penalized logistic regression with
cross-validated penalty selection, and the Welch two-sample t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _cd


class GlmError(ValueError):
    """Contract violation in a numerical routine."""


class ConvergenceError(RuntimeError):
    """Coordinate descent failed to converge at some penalty value."""

    def __init__(self, lambda_value: float, iterations: int):
        self.lambda_value = lambda_value
        self.iterations = iterations
        super().__init__(
            f"no convergence at lambda={lambda_value:.6g} after {iterations} sweeps"
        )


# ---------------------------------------------------------------------------
# Ordinary least squares


@dataclass(frozen=True)
class OlsFit:
    intercept: float
    coefficients: np.ndarray
    fitted: np.ndarray
    rank_deficient: bool = False


def fit_ols(predictors: np.ndarray, response: np.ndarray) -> OlsFit:
    """Least-squares fit of response on predictors plus an intercept.

    Rank-deficient systems fall back to the minimum-norm solution and are
    flagged; k >= N is rejected outright.
    """
    x = np.asarray(predictors, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if x.ndim != 2:
        raise GlmError("predictors must be a 2-D matrix")
    n, k = x.shape
    if y.shape != (n,):
        raise GlmError("response length must match predictor rows")
    if k >= n:
        raise GlmError(f"need more observations than predictors (k={k}, N={n})")
    design = np.column_stack([np.ones(n), x])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ coef
    return OlsFit(
        intercept=float(coef[0]),
        coefficients=coef[1:].copy(),
        fitted=fitted,
        rank_deficient=rank < k + 1,
    )


# ---------------------------------------------------------------------------
# L1-penalized logistic regression


@dataclass(frozen=True)
class LassoConfig:
    n_lambda: int = 100
    path_ratio: float = 1e-3
    cv_folds: int = 10
    max_iter: int = 100_000
    tol: float = 1e-7
    seed: int = 0
    lambdas: np.ndarray | None = None   # explicit grid overrides n_lambda/path_ratio
    fdev: float = 1e-5                  # early-stop threshold on train deviance change
    devmax: float = 0.999               # saturation guard
    cv_patience: int = 10               # folds stop this many penalties past the CV minimum


@dataclass(frozen=True)
class LassoLogisticFit:
    intercept: float
    coefficients: np.ndarray            # original predictor scale
    lambda_: float
    lambda_path: np.ndarray
    cv_deviance: np.ndarray             # aligned with lambda_path (empty if no CV)
    kkt_max_violation: float
    feature_means: np.ndarray
    feature_scales: np.ndarray
    std_intercept: float
    std_coefficients: np.ndarray        # internally standardized scale
    separation_flag: bool = False
    n_sweeps: int = 0

    @property
    def selected_index(self) -> int:
        return int(np.argmin(np.abs(self.lambda_path - self.lambda_)))


def _standardize_for_path(x: np.ndarray):
    means = x.mean(axis=0)
    scales = np.sqrt(((x - means) ** 2).mean(axis=0))
    safe = np.where(scales == 0.0, 1.0, scales)
    xs = np.asfortranarray((x - means) / safe)
    return xs, means, scales


def _fold_assignments(w: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Stratified fold labels: treated and control dealt round-robin after a
    seeded shuffle, so every fold carries both classes."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5F01D)))
    folds = np.empty(w.shape[0], dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(w == cls)
        if idx.size < n_folds:
            raise GlmError(
                f"class {cls} has {idx.size} observations, too few for {n_folds} folds"
            )
        rng.shuffle(idx)
        folds[idx] = np.arange(idx.shape[0]) % n_folds
    return folds


def _binomial_deviance_matrix(y: np.ndarray, prob: np.ndarray) -> np.ndarray:
    p = np.clip(prob, 1e-10, 1.0 - 1e-10)
    return -2.0 * (y[:, None] * np.log(p) + (1.0 - y[:, None]) * np.log(1.0 - p)).mean(axis=0)


class _PathState:
    """Warm-start state for one chained sequence of path-chunk fits."""

    def __init__(self, xs_fortran: np.ndarray, y: np.ndarray, first_lambda: float):
        self.xt = xs_fortran.T  # C-contiguous view
        self.y = y
        self.b0 = float(math.log(y.mean() / (1.0 - y.mean())))
        self.b = np.zeros(xs_fortran.shape[1])
        self.lam_prev = first_lambda
        self.prev_dev = -1.0

    def fit_chunk(self, seg: np.ndarray, tol, max_iter, fdev, devmax):
        out = _cd.logistic_lasso_chunk(
            self.xt, self.y, seg, self.lam_prev, self.b0, self.b,
            tol, max_iter, fdev, devmax, self.prev_dev,
        )
        b0s, betas, sweeps, status, devs, null_dev, n_eff = out
        if _cd.NO_CONVERGENCE in status[:n_eff]:
            bad = int(np.flatnonzero(status[:n_eff] == _cd.NO_CONVERGENCE)[0])
            raise ConvergenceError(float(seg[bad]), int(sweeps[bad]))
        if n_eff > 0:
            last = n_eff - 1
            self.b0 = float(b0s[last])
            self.b = betas[last].copy()
            self.lam_prev = float(seg[last])
            self.prev_dev = float(devs[last])
        return b0s, betas, sweeps, status, devs, null_dev, n_eff


def fit_lasso_logistic(
    predictors: np.ndarray, labels: np.ndarray, config: LassoConfig | None = None
) -> LassoLogisticFit:
    """Coordinate-descent lasso logistic path with cross-validated penalty choice.

    Predictors are standardized internally for the path; reported coefficients
    are on the original scale. The penalty grid runs log-spaced from the
    smallest all-zero penalty down to path_ratio times it. Full-data and fold
    paths advance down the grid in lockstep and stop cv_patience penalties past
    the running CV-deviance minimum; the returned fit is at the minimizing
    penalty, re-solved until the stationarity conditions hold tightly.
    """
    config = config or LassoConfig()
    x = np.asarray(predictors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise GlmError("predictors must be (N, k) aligned with labels")
    classes = np.unique(y)
    if not np.isin(classes, (0.0, 1.0)).all() or classes.size != 2:
        raise GlmError("labels must contain both classes, coded 0/1")

    n = x.shape[0]
    xs, means, scales = _standardize_for_path(x)

    if config.lambdas is not None:
        lambdas = np.asarray(config.lambdas, dtype=np.float64)
    else:
        lam_max = float(np.abs(xs.T @ (y - y.mean())).max() / n)
        if lam_max <= 0.0:
            lam_max = 1e-3
        lambdas = np.exp(
            np.linspace(math.log(lam_max), math.log(lam_max * config.path_ratio), config.n_lambda)
        )
    n_grid = lambdas.size

    use_cv = bool(config.cv_folds and config.cv_folds > 1 and n_grid > 1)
    folds = []
    if use_cv:
        labels_int = y.astype(np.int8)
        fold_of = _fold_assignments(labels_int, config.cv_folds, config.seed)
        for f in range(config.cv_folds):
            tr = fold_of != f
            xs_tr, m_tr, s_tr = _standardize_for_path(x[tr])
            folds.append(
                (_PathState(xs_tr, y[tr], float(lambdas[0])), x[~tr], y[~tr], m_tr, s_tr)
            )

    full = _PathState(xs, y, float(lambdas[0]))
    b0s_all = np.zeros(n_grid)
    betas_all = np.zeros((n_grid, xs.shape[1]))
    cv_sum = np.zeros(n_grid)
    total_sweeps = 0
    separation = False
    processed = 0
    chunk = max(config.cv_patience, 5) if use_cv else n_grid

    pos = 0
    while pos < n_grid:
        seg = lambdas[pos:pos + chunk]
        b0s, betas, sweeps, status, devs, _, n_eff = full.fit_chunk(
            seg, config.tol, config.max_iter, config.fdev, config.devmax
        )
        total_sweeps += int(sweeps[:n_eff].sum())
        stop_after = None
        if n_eff > 0 and status[n_eff - 1] == _cd.SATURATED:
            separation = True
            n_eff -= 1                      # drop the saturated penalty
            stop_after = pos + n_eff
        elif n_eff < seg.size:
            stop_after = pos + n_eff        # train-deviance early stop
        if n_eff > 0:
            b0s_all[pos:pos + n_eff] = b0s[:n_eff]
            betas_all[pos:pos + n_eff] = betas[:n_eff]
            if use_cv:
                fold_seg = seg[:n_eff]
                for state, x_va, y_va, m_tr, s_tr in folds:
                    fb0, fb, fsw, _, _, _, _ = state.fit_chunk(
                        fold_seg, config.tol, config.max_iter, 0.0, 1.0
                    )
                    total_sweeps += int(fsw.sum())
                    safe = np.where(s_tr == 0.0, 1.0, s_tr)
                    coef_orig = fb / safe[None, :]
                    int_orig = fb0 - coef_orig @ m_tr
                    eta_va = np.clip(x_va @ coef_orig.T + int_orig[None, :], -36.0, 36.0)
                    cv_sum[pos:pos + n_eff] += _binomial_deviance_matrix(
                        y_va, 1.0 / (1.0 + np.exp(-eta_va))
                    )
        processed = pos + n_eff
        if stop_after is not None:
            break
        if use_cv and processed > 0:
            best = int(np.argmin(cv_sum[:processed]))
            if processed - best > config.cv_patience and processed < n_grid:
                break
        pos += chunk

    if processed == 0:
        raise ConvergenceError(float(lambdas[0]), 0)
    lambdas = lambdas[:processed]
    b0s_all = b0s_all[:processed]
    betas_all = betas_all[:processed]
    cv_dev = cv_sum[:processed] / len(folds) if use_cv else np.empty(0)
    sel = int(np.argmin(cv_dev)) if use_cv else processed - 1

    # under (near-)complete separation small penalties admit no tight
    # stationary point; fall back to the smallest penalty that converges
    chosen = None
    for idx in range(sel, max(sel - 25, -1), -1):
        try:
            b0_sel, b_sel, kkt, polish_sweeps = _polish_at(
                xs, y, float(lambdas[idx]),
                float(lambdas[idx - 1]) if idx > 0 else float(lambdas[idx]),
                b0s_all[idx], betas_all[idx], config,
            )
        except ConvergenceError:
            continue
        chosen = idx
        break
    if chosen is None:
        raise ConvergenceError(float(lambdas[sel]), config.max_iter)
    if chosen != sel:
        separation = True
    sel = chosen
    total_sweeps += polish_sweeps

    safe = np.where(scales == 0.0, 1.0, scales)
    coef = b_sel / safe
    intercept = float(b0_sel - coef @ means)
    return LassoLogisticFit(
        intercept=intercept,
        coefficients=coef,
        lambda_=float(lambdas[sel]),
        lambda_path=lambdas.copy(),
        cv_deviance=cv_dev,
        kkt_max_violation=kkt,
        feature_means=means,
        feature_scales=scales,
        std_intercept=float(b0_sel),
        std_coefficients=b_sel,
        separation_flag=separation,
        n_sweeps=total_sweeps,
    )


def _polish_at(xs, y, lam, lam_prev, b0_init, b_init, config: LassoConfig):
    """Re-solve at one penalty with a tightening tolerance until the exact
    stationarity residual is comfortably below 1e-6."""
    lam_arr = np.array([lam])
    xt = xs.T
    tol = 1e-15
    total = 0
    b0, b = float(b0_init), np.asarray(b_init, dtype=np.float64)
    for _ in range(8):
        b0s, betas, sweeps, status, _, _, _ = _cd.logistic_lasso_chunk(
            xt, y, lam_arr, lam_prev, b0, b, tol, config.max_iter, 0.0, 1.0, -1.0
        )
        total += int(sweeps[0])
        if status[0] == _cd.NO_CONVERGENCE:
            raise ConvergenceError(lam, int(sweeps[0]))
        b0, b = float(b0s[0]), betas[0]
        kkt = _kkt_violation(xs, y, lam, b0, b)
        if kkt <= 5e-7:
            return b0, b, kkt, total
        tol /= 100.0
    raise ConvergenceError(lam, total)


def _kkt_violation(xs, y, lam, b0, b) -> float:
    eta = xs @ b + b0
    grad = xs.T @ (y - 1.0 / (1.0 + np.exp(-eta))) / xs.shape[0]
    active = b != 0.0
    worst = 0.0
    if active.any():
        worst = float(np.abs(grad[active] - lam * np.sign(b[active])).max())
    if (~active).any():
        worst = max(worst, float((np.abs(grad[~active]) - lam).max()))
    return max(worst, 0.0)


def kkt_violation(fit: LassoLogisticFit, predictors: np.ndarray, labels: np.ndarray) -> float:
    """Exact stationarity residual of a returned fit on the internal
    standardized scale (0 means every condition holds with equality)."""
    x = np.asarray(predictors, dtype=np.float64)
    safe = np.where(fit.feature_scales == 0.0, 1.0, fit.feature_scales)
    xs = (x - fit.feature_means) / safe
    return _kkt_violation(
        xs, np.asarray(labels, dtype=np.float64), fit.lambda_, fit.std_intercept,
        fit.std_coefficients,
    )


def penalized_objective(xs, y, lam, b0, b) -> float:
    """Penalized average negative log-likelihood on the standardized scale."""
    eta = xs @ b + b0
    ll = y * eta - np.logaddexp(0.0, eta)
    return float(-ll.mean() + lam * np.abs(b).sum())


def predict_probability(fit, predictors: np.ndarray) -> np.ndarray:
    """Predicted scores: probabilities in (0,1) for logistic fits, raw linear
    predictions for least-squares fits."""
    x = np.asarray(predictors, dtype=np.float64)
    if x.ndim != 2:
        raise GlmError("predictors must be 2-D")
    if isinstance(fit, LassoLogisticFit):
        if x.shape[1] != fit.coefficients.shape[0]:
            raise GlmError(
                f"predictor width {x.shape[1]} does not match fit ({fit.coefficients.shape[0]})"
            )
        eta = x @ fit.coefficients + fit.intercept
        return np.clip(1.0 / (1.0 + np.exp(-eta)), 1e-15, 1.0 - 1e-15)
    if isinstance(fit, OlsFit):
        if x.shape[1] != fit.coefficients.shape[0]:
            raise GlmError(
                f"predictor width {x.shape[1]} does not match fit ({fit.coefficients.shape[0]})"
            )
        return x @ fit.coefficients + fit.intercept
    raise GlmError(f"unsupported fit type {type(fit).__name__}")


# ---------------------------------------------------------------------------
# Student-t distribution and the Welch two-sample test


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delt = d * c
        h *= delt
        if abs(delt - 1.0) < eps:
            return h
    raise GlmError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    if a <= 0.0 or b <= 0.0:
        raise GlmError("incomplete beta requires positive shape parameters")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    if df <= 0.0:
        raise GlmError("degrees of freedom must be positive")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5)
    return 1.0 - tail if t > 0.0 else tail


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


def two_sample_t(group_a, group_b) -> TTestResult:
    """Welch unequal-variance t-test with a two-sided p-value."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    na, nb = a.shape[0], b.shape[0]
    if na < 2 or nb < 2:
        raise GlmError("each group needs at least two observations")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va <= 0.0 or vb <= 0.0:
        raise GlmError("each group needs positive variance")
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 * se2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    p = regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5) if t != 0.0 else 1.0
    return TTestResult(t_statistic=float(t), degrees_of_freedom=float(df), p_value=float(min(p, 1.0)))
