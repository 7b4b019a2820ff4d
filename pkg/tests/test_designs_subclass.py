import numpy as np
import pytest

from distdesign.designs import (
    DesignError,
    SUBCLASSES,
    SubclassParams,
    _may_split,
    _split_point,
    iterative_subclassification,
)
from distdesign.propensity import ScoreVector, linearize


def scores_of(values):
    return ScoreVector(np.asarray(values), designer_id=1, stage="final")


def test_lower_median_split_point():
    assert _split_point(np.array([1.0, 2.0, 3.0, 4.0])) == 2.0
    assert _split_point(np.array([5.0, 1.0, 3.0])) == 3.0
    assert _split_point(np.array([2.0, 2.0, 2.0, 7.0])) == 2.0


def test_identical_distributions_stay_single():
    rng = np.random.default_rng(0)
    n = 400
    v = rng.uniform(0.2, 0.8, n)
    w = np.zeros(n, dtype=int)
    w[rng.permutation(n)[:150]] = 1
    dv = iterative_subclassification(scores_of(v), w, np.ones(n, dtype=bool))
    assert dv.kind == SUBCLASSES
    assert dv.n_groups == 1


def test_counting_bound_at_n200():
    rng = np.random.default_rng(1)
    n = 200
    v = np.clip(rng.beta(2, 2, n) * 0.9 + 0.05, 0.01, 0.99)
    w = (rng.random(n) < 0.5).astype(int)
    dv = iterative_subclassification(
        scores_of(v), w, np.ones(n, dtype=bool), SubclassParams(min_subclass=50, min_group=30)
    )
    assert dv.n_groups <= 3  # four subclasses of 50 cannot fit in 200


def test_floors_enforced_before_starting():
    v = np.linspace(0.1, 0.9, 30)
    w = np.array([1, 0] * 15)
    with pytest.raises(DesignError, match="floor"):
        iterative_subclassification(scores_of(v), w, np.ones(30, dtype=bool))


def test_split_replay_oracle_large_separated():
    """Every returned subclass satisfies the floors, and replaying the split
    test on each returned subclass yields no further split."""
    rng = np.random.default_rng(7)
    n = 10000
    w = (rng.random(n) < 0.35).astype(int)
    logits = rng.normal(-1.0 + 1.6 * w, 0.8)
    v = 1 / (1 + np.exp(-logits))
    params = SubclassParams()
    mask = np.ones(n, dtype=bool)
    dv = iterative_subclassification(scores_of(v), w, mask, params)
    assert dv.n_groups >= 2
    lv = linearize(v)
    for g in range(1, dv.n_groups + 1):
        sub = np.flatnonzero(dv.assignments == g)
        assert sub.size >= params.min_subclass
        assert (w[sub] == 1).sum() >= params.min_group
        assert (w[sub] == 0).sum() >= params.min_group
        split, _ = _may_split(lv[sub], w[sub], params)
        assert not split


def test_ids_follow_score_order():
    rng = np.random.default_rng(3)
    n = 2000
    w = (rng.random(n) < 0.4).astype(int)
    logits = rng.normal(-0.5 + 1.2 * w, 0.7)
    v = 1 / (1 + np.exp(-logits))
    dv = iterative_subclassification(scores_of(v), w, np.ones(n, dtype=bool))
    if dv.n_groups > 1:
        maxima = [v[dv.assignments == g].max() for g in range(1, dv.n_groups + 1)]
        minima = [v[dv.assignments == g].min() for g in range(1, dv.n_groups + 1)]
        for g in range(dv.n_groups - 1):
            assert maxima[g] <= minima[g + 1] + 1e-12


def test_deterministic_no_rng():
    rng = np.random.default_rng(9)
    n = 1500
    w = (rng.random(n) < 0.3).astype(int)
    logits = rng.normal(-0.8 + 1.0 * w, 0.9)
    v = 1 / (1 + np.exp(-logits))
    a = iterative_subclassification(scores_of(v), w, np.ones(n, dtype=bool))
    b = iterative_subclassification(scores_of(v), w, np.ones(n, dtype=bool))
    assert np.array_equal(a.assignments, b.assignments)
    a.validate(w)
