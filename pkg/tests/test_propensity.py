import numpy as np
import pytest

from distdesign.data import CovariateBlock, standardize
from distdesign.glm import fit_ols
from distdesign.propensity import (
    OLS,
    FeatureExpansion,
    PropensityError,
    ScoreModelConfig,
    ScoreVector,
    build_expansion,
    estimate_conditional_scores,
    estimate_final_scores,
    expansion_matrix,
    linearize,
    trim_extremes,
)
from distdesign.glm import LassoConfig


def make_block(n=300, k=4, seed=0, designer=1):
    rng = np.random.default_rng(seed)
    x, _, _, _ = standardize(rng.standard_normal((n, k)))
    return CovariateBlock(
        designer_id=designer,
        columns=tuple(range(k)),
        matrix=x,
        column_names=tuple(f"x{i + 1}" for i in range(k)),
        column_kinds=("continuous",) * k,
    ), rng


def test_expansion_count_for_20_columns():
    cfg = ScoreModelConfig()
    exp = build_expansion(20, cfg)
    assert exp.n_features == 20 + 20 + 190


def test_expansion_rejects_foreign_parents():
    with pytest.raises(PropensityError, match="parents"):
        FeatureExpansion(base_columns=(0, 1), interaction_pairs=((0, 5),))


def test_conditional_null_block_scores_near_treated_share():
    # min-CV selection on pure noise can admit small spurious terms on some
    # draws; this seed represents the typical all-zero outcome
    rng = np.random.default_rng(101)
    n = 5000
    x, _, _, _ = standardize(rng.standard_normal((n, 5)))
    block = CovariateBlock(1, tuple(range(5)), x, tuple(f"x{i}" for i in range(5)),
                           ("continuous",) * 5)
    w = (rng.random(n) < 0.3).astype(np.int8)
    sv = estimate_conditional_scores(block, w, ScoreModelConfig(lasso=LassoConfig(seed=4)))
    assert sv.stage == "conditional"
    assert np.abs(sv.values - w.mean()).max() < 0.02


def test_ols_mode_equals_plain_ols_fit():
    block, rng = make_block()
    w = (rng.random(300) < 0.4).astype(np.int8)
    sv = estimate_conditional_scores(block, w, ScoreModelConfig(model_kind=OLS))
    fit = fit_ols(block.matrix, w.astype(float))
    assert np.array_equal(sv.values, fit.fitted)


def test_final_scores_reject_own_and_mislength():
    block, rng = make_block()
    w = (rng.random(300) < 0.4).astype(np.int8)
    w[:2] = [0, 1]
    own = ScoreVector(np.full(300, 0.4), designer_id=1, stage="conditional")
    with pytest.raises(PropensityError, match="own"):
        estimate_final_scores(block, [own], w, ScoreModelConfig(model_kind=OLS))
    short = ScoreVector(np.full(299, 0.4), designer_id=2, stage="conditional")
    with pytest.raises(PropensityError, match="length"):
        estimate_final_scores(block, [short], w, ScoreModelConfig(model_kind=OLS))


def test_final_without_shared_equals_conditional():
    block, rng = make_block(seed=5)
    w = (rng.random(300) < 0.35).astype(np.int8)
    w[:2] = [0, 1]
    cfg = ScoreModelConfig(lasso=LassoConfig(seed=9, n_lambda=30, cv_folds=4))
    a = estimate_conditional_scores(block, w, cfg)
    b = estimate_final_scores(block, [], w, cfg)
    assert np.array_equal(a.values, b.values)


def test_ols_final_recovers_full_data_fit_under_orthogonal_blocks():
    """Centered mutually-orthogonal blocks: the shared-score regression yields
    the same fitted values as a single least-squares fit on all covariates."""
    rng = np.random.default_rng(17)
    n, p, m = 240, 12, 3
    raw = rng.standard_normal((n, p))
    q, _ = np.linalg.qr(raw - raw.mean(axis=0))
    w = (rng.random(n) < 0.4).astype(np.int8)
    w[:2] = [0, 1]
    cols = np.array_split(np.arange(p), m)
    blocks = [
        CovariateBlock(i + 1, tuple(int(c) for c in cs), q[:, cs],
                       tuple(f"x{c}" for c in cs), ("continuous",) * len(cs))
        for i, cs in enumerate(cols)
    ]
    cfg = ScoreModelConfig(model_kind=OLS)
    conditionals = [estimate_conditional_scores(b, w, cfg) for b in blocks]
    full = fit_ols(q, w.astype(float))
    for i, b in enumerate(blocks):
        shared = [c for j, c in enumerate(conditionals) if j != i]
        final = estimate_final_scores(b, shared, w, cfg)
        assert np.abs(final.values - full.fitted).max() < 1e-8


def test_projection_diagnostic_slope_and_r2():
    """Regressing final scores on one designer's conditional scores gives a
    nonnegative slope and R^2 at most 1 (exact in the orthogonal regime)."""
    rng = np.random.default_rng(29)
    n, p, m = 240, 12, 3
    raw = rng.standard_normal((n, p))
    q, _ = np.linalg.qr(raw - raw.mean(axis=0))
    w = (rng.random(n) < 0.4).astype(np.int8)
    w[:2] = [0, 1]
    cols = np.array_split(np.arange(p), m)
    blocks = [
        CovariateBlock(i + 1, tuple(int(c) for c in cs), q[:, cs],
                       tuple(f"x{c}" for c in cs), ("continuous",) * len(cs))
        for i, cs in enumerate(cols)
    ]
    cfg = ScoreModelConfig(model_kind=OLS)
    conditionals = [estimate_conditional_scores(b, w, cfg) for b in blocks]
    final = estimate_final_scores(blocks[0], conditionals[1:], w, cfg)
    cond = conditionals[0].values
    slope = np.cov(final.values, cond)[0, 1] / np.var(cond)
    resid = final.values - final.values.mean() - slope * (cond - cond.mean())
    r2 = 1 - resid.var() / final.values.var()
    assert slope >= 0.0
    assert r2 <= 1.0 + 1e-12


def test_order_equivariance_under_permutation():
    block, rng = make_block(n=400, seed=8)
    w = (rng.random(400) < 0.4).astype(np.int8)
    w[:2] = [0, 1]
    cfg = ScoreModelConfig(model_kind=OLS)
    sv = estimate_conditional_scores(block, w, cfg)
    perm = rng.permutation(400)
    block_p = CovariateBlock(1, block.columns, block.matrix[perm], block.column_names,
                             block.column_kinds)
    sv_p = estimate_conditional_scores(block_p, w[perm], cfg)
    assert np.abs(sv_p.values - sv.values[perm]).max() < 1e-10


def test_trim_full_overlap_retains_all():
    scores = np.array([0.3, 0.4, 0.5, 0.3, 0.45, 0.5])
    w = np.array([1, 1, 1, 0, 0, 0])
    mask = trim_extremes(scores, w)
    assert mask.all()


def test_trim_drops_exactly_the_outlier():
    #           t     t     c     c     c
    scores = np.array([0.5, 0.95, 0.3, 0.55, 0.7])
    w = np.array([1, 1, 0, 0, 0])
    mask = trim_extremes(scores, w)
    assert list(mask) == [True, False, False, True, True]


def test_trim_matches_brute_force_oracle():
    rng = np.random.default_rng(21)
    for _ in range(200):
        n = rng.integers(10, 80)
        scores = rng.random(n)
        w = (rng.random(n) < 0.4).astype(int)
        if w.sum() in (0, n):
            continue
        t = scores[w == 1]
        c = scores[w == 0]
        expect = np.array(
            [
                (c.min() <= s <= c.max()) if wi == 1 else (t.min() <= s <= t.max())
                for s, wi in zip(scores, w)
            ]
        )
        if not (expect & (w == 1)).any() or not (expect & (w == 0)).any():
            continue
        assert np.array_equal(trim_extremes(scores, w), expect)


def test_trim_rule_stable_on_retained_set():
    # the retained set already satisfies the discard rule at the cut points
    rng = np.random.default_rng(2)
    scores = rng.beta(2, 5, 500)
    w = (rng.random(500) < 0.35).astype(int)
    mask = trim_extremes(scores, w)
    lo = max(scores[w == 1].min(), scores[w == 0].min())
    hi = min(scores[w == 1].max(), scores[w == 0].max())
    kept = scores[mask]
    assert ((kept >= lo) & (kept <= hi)).all()
    assert (~mask == ((scores < lo) | (scores > hi))).all()


def test_linearize_values():
    sv = ScoreVector(np.array([0.5, 0.2]), designer_id=1, stage="conditional")
    out = linearize(sv)
    assert out[0] == 0.0
    assert abs(out[1] - np.log(0.25)) < 1e-12


def test_linearize_clamps_ols_scores():
    sv = ScoreVector(np.array([-0.2, 0.5, 1.4]), designer_id=1, stage="conditional",
                     model_kind=OLS)
    out = linearize(sv)
    assert np.isfinite(out).all()
    assert out[0] == np.log(1e-6 / (1 - 1e-6))


def test_linearize_monotone():
    rng = np.random.default_rng(5)
    v = np.sort(rng.random(100) * 0.98 + 0.01)
    out = linearize(ScoreVector(v, designer_id=1, stage="final"))
    assert (np.diff(out) >= 0).all()


def test_shared_scores_enter_logit_transformed():
    block, rng = make_block(n=50, k=2, seed=3)
    shared = ScoreVector(np.linspace(0.1, 0.9, 50), designer_id=2, stage="conditional")
    exp = build_expansion(2, ScoreModelConfig(model_kind=OLS), shared_ids=(2,))
    mat = expansion_matrix(block.matrix, exp, [shared])
    assert mat.shape[1] == 3
    assert np.allclose(mat[:, 2], np.log(shared.values / (1 - shared.values)))
