"""Conditional and final propensity-score estimation, trimming, and the logit
transform used by calipers, split tests, and score sharing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import CovariateBlock
from .glm import LassoConfig, fit_lasso_logistic, fit_ols, predict_probability

log = logging.getLogger(__name__)

LASSO_LOGISTIC = "lasso-logistic"
OLS = "ols"

_CLAMP = 1e-6


class PropensityError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreVector:
    """Length-N estimated (or true) propensity scores with provenance."""

    values: np.ndarray
    designer_id: int | str          # 1-based id, or "all-data" / "oracle"
    stage: str                      # conditional | final | true
    model_kind: str = LASSO_LOGISTIC

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise PropensityError("score values must be a vector")
        if self.stage not in ("conditional", "final", "true"):
            raise PropensityError(f"unknown stage {self.stage!r}")
        if self.model_kind != OLS and not ((v > 0.0) & (v < 1.0)).all():
            raise PropensityError("probability-scale scores must lie strictly in (0, 1)")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureExpansion:
    """Model terms a designer uses: assigned covariates, their squares, their
    pairwise products, and the other designers' shared scores."""

    base_columns: tuple[int, ...]                  # local column offsets
    squared_terms: tuple[int, ...] = ()
    interaction_pairs: tuple[tuple[int, int], ...] = ()
    shared_score_ids: tuple = ()

    def __post_init__(self):
        base = set(self.base_columns)
        for a, b in self.interaction_pairs:
            if a not in base or b not in base:
                raise PropensityError("interaction parents must be base columns")
        if len(set(self.interaction_pairs)) != len(self.interaction_pairs):
            raise PropensityError("duplicate interaction terms")
        if len(set(self.squared_terms)) != len(self.squared_terms):
            raise PropensityError("duplicate squared terms")

    @property
    def n_features(self) -> int:
        return (
            len(self.base_columns)
            + len(self.squared_terms)
            + len(self.interaction_pairs)
            + len(self.shared_score_ids)
        )


@dataclass(frozen=True)
class ScoreModelConfig:
    model_kind: str = LASSO_LOGISTIC
    include_squares: bool | None = None        # default: yes for lasso, no for ols
    include_interactions: bool | None = None
    lasso: LassoConfig = field(default_factory=LassoConfig)

    def wants_squares(self) -> bool:
        if self.include_squares is None:
            return self.model_kind == LASSO_LOGISTIC
        return self.include_squares

    def wants_interactions(self) -> bool:
        if self.include_interactions is None:
            return self.model_kind == LASSO_LOGISTIC
        return self.include_interactions


def build_expansion(n_columns: int, config: ScoreModelConfig, shared_ids=()) -> FeatureExpansion:
    base = tuple(range(n_columns))
    squares = base if config.wants_squares() else ()
    pairs = ()
    if config.wants_interactions():
        pairs = tuple((a, b) for a in range(n_columns) for b in range(a + 1, n_columns))
    return FeatureExpansion(
        base_columns=base,
        squared_terms=squares,
        interaction_pairs=pairs,
        shared_score_ids=tuple(shared_ids),
    )


def expansion_matrix(
    matrix: np.ndarray, expansion: FeatureExpansion, shared: list[ScoreVector] | None = None
) -> np.ndarray:
    """Assemble the design matrix for an expansion. Shared logistic-provenance
    scores enter on the logit scale; least-squares scores enter raw."""
    shared = shared or []
    if len(shared) != len(expansion.shared_score_ids):
        raise PropensityError("shared score count does not match expansion")
    cols = [matrix]
    if expansion.squared_terms:
        idx = np.asarray(expansion.squared_terms, dtype=np.intp)
        cols.append(matrix[:, idx] ** 2)
    if expansion.interaction_pairs:
        pairs = np.asarray(expansion.interaction_pairs, dtype=np.intp)
        cols.append(matrix[:, pairs[:, 0]] * matrix[:, pairs[:, 1]])
    for sv in shared:
        if sv.model_kind == OLS:
            cols.append(sv.values[:, None])
        else:
            cols.append(linearize(sv)[:, None])
    return np.concatenate(cols, axis=1)


def _fit_scores(features: np.ndarray, w: np.ndarray, config: ScoreModelConfig):
    if config.model_kind == OLS:
        fit = fit_ols(features, w.astype(np.float64))
        return fit, np.asarray(fit.fitted)
    if config.model_kind == LASSO_LOGISTIC:
        fit = fit_lasso_logistic(features, w.astype(np.float64), config.lasso)
        return fit, predict_probability(fit, features)
    raise PropensityError(f"unknown model kind {config.model_kind!r}")


def estimate_conditional_scores(
    block: CovariateBlock, w: np.ndarray, config: ScoreModelConfig | None = None
) -> ScoreVector:
    """Propensity scores from one designer's own covariates only (step 2)."""
    config = config or ScoreModelConfig()
    expansion = build_expansion(block.n_columns, config)
    features = expansion_matrix(block.matrix, expansion)
    _, values = _fit_scores(features, w, config)
    return ScoreVector(
        values=values, designer_id=block.designer_id, stage="conditional",
        model_kind=config.model_kind,
    )


def estimate_final_scores(
    block: CovariateBlock,
    shared: list[ScoreVector],
    w: np.ndarray,
    config: ScoreModelConfig | None = None,
) -> ScoreVector:
    """Propensity scores from a designer's covariates plus the other designers'
    shared conditional scores (step 3 input). Shared scores enter as plain
    linear terms; they are never squared or interacted."""
    config = config or ScoreModelConfig()
    n = block.matrix.shape[0]
    for sv in shared:
        if len(sv) != n:
            raise PropensityError(
                f"shared scores from designer {sv.designer_id} have length {len(sv)}, expected {n}"
            )
        if sv.designer_id == block.designer_id:
            raise PropensityError("a designer cannot receive their own shared scores")
        if sv.stage != "conditional":
            raise PropensityError("shared scores must be conditional-stage")
    shared = sorted(shared, key=lambda s: s.designer_id)
    expansion = build_expansion(
        block.n_columns, config, shared_ids=tuple(s.designer_id for s in shared)
    )
    features = expansion_matrix(block.matrix, expansion, shared)
    _, values = _fit_scores(features, w, config)
    return ScoreVector(
        values=values, designer_id=block.designer_id, stage="final",
        model_kind=config.model_kind,
    )


def trim_extremes(scores: ScoreVector | np.ndarray, w: np.ndarray) -> np.ndarray:
    """Eligibility mask dropping, in one simultaneous pass, treated subjects
    whose score lies outside the control group's score range and controls
    whose score lies outside the treated group's range. Equivalently: keep
    subjects inside the intersection of the two groups' score ranges."""
    v = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    w = np.asarray(w)
    t = v[w == 1]
    c = v[w == 0]
    if t.size == 0 or c.size == 0:
        raise PropensityError("both treatment groups must be nonempty")
    lo = max(t.min(), c.min())
    hi = min(t.max(), c.max())
    mask = (v >= lo) & (v <= hi)
    if not (mask & (w == 1)).any() or not (mask & (w == 0)).any():
        raise PropensityError("trimming removed every subject in one treatment group")
    return mask


def linearize(scores: ScoreVector | np.ndarray) -> np.ndarray:
    """Log-odds transform of probability-scale scores. Least-squares scores
    (which may exit the unit interval) are clamped to [1e-6, 1-1e-6] first."""
    v = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    clamped = np.clip(v, _CLAMP, 1.0 - _CLAMP)
    n_clamped = int((clamped != v).sum())
    if n_clamped:
        log.debug("linearize clamped %d score(s) into [%g, %g]", n_clamped, _CLAMP, 1 - _CLAMP)
    return np.log(clamped / (1.0 - clamped))
