"""Designer-side computation, shared verbatim by the in-process and
multi-process transports: score estimation, design construction, and
per-block balance evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .balance import BalanceReport, evaluate_design_block
from .config import EngineConfig
from .data import CovariateBlock, standardize
from .designs import (
    METHOD_CALIPER,
    METHOD_NN,
    METHOD_OPTIMAL,
    METHOD_SUBCLASS,
    DesignVector,
    caliper_match,
    iterative_subclassification,
    nearest_neighbor_match,
    optimal_caliper_match,
)
from .propensity import (
    LASSO_LOGISTIC,
    FeatureExpansion,
    ScoreVector,
    build_expansion,
    estimate_conditional_scores,
    estimate_final_scores,
    expansion_matrix,
    linearize,
    trim_extremes,
)


@dataclass
class DesignerState:
    """One designer's working set: their raw and standardized covariate block,
    the treatment vector, and the run configuration."""

    designer_id: int | str
    columns: tuple[int, ...]
    column_names: tuple[str, ...]
    column_kinds: tuple[str, ...]
    matrix: np.ndarray
    treatment: np.ndarray
    config: EngineConfig
    std_matrix: np.ndarray = None
    conditional: ScoreVector = None
    final: ScoreVector = None

    def __post_init__(self):
        if self.std_matrix is None:
            self.std_matrix, _, _, _ = standardize(self.matrix)

    def model_block(self) -> CovariateBlock:
        return CovariateBlock(
            designer_id=self.designer_id if isinstance(self.designer_id, int) else 0,
            columns=self.columns,
            matrix=self.std_matrix,
            column_names=self.column_names,
            column_kinds=self.column_kinds,
        )

    def eval_block(self) -> CovariateBlock:
        return CovariateBlock(
            designer_id=self.designer_id if isinstance(self.designer_id, int) else 0,
            columns=self.columns,
            matrix=self.matrix,
            column_names=self.column_names,
            column_kinds=self.column_kinds,
        )


def conditional_scores(state: DesignerState) -> ScoreVector:
    config = state.config
    score_config = _score_config(config, state.designer_id, "conditional")
    sv = estimate_conditional_scores(state.model_block(), state.treatment, score_config)
    sv = ScoreVector(sv.values, state.designer_id, "conditional", sv.model_kind)
    state.conditional = sv
    return sv


def final_scores(state: DesignerState, shared: list[ScoreVector]) -> ScoreVector:
    config = state.config
    score_config = _score_config(config, state.designer_id, "final")
    if shared:
        sv = estimate_final_scores(state.model_block(), shared, state.treatment, score_config)
    else:
        sv = estimate_conditional_scores(state.model_block(), state.treatment, score_config)
    sv = ScoreVector(sv.values, state.designer_id, "final", sv.model_kind)
    state.final = sv
    return sv


def _score_config(config: EngineConfig, designer_id, stage: str):
    from .propensity import ScoreModelConfig

    return ScoreModelConfig(
        model_kind=config.model_kind,
        lasso=config.lasso_for(designer_id, stage),
    )


def build_designs(state: DesignerState, scores: ScoreVector) -> list[DesignVector]:
    """Trim to the overlap region, then build one candidate design per
    enabled method."""
    config = state.config
    w = state.treatment
    mask = trim_extremes(scores, w) if config.trim else np.ones(len(scores), dtype=bool)
    logit = linearize(scores)
    out = []
    for method in config.methods:
        if method == METHOD_SUBCLASS:
            dv = iterative_subclassification(scores, w, mask, config.subclass)
        elif method == METHOD_NN:
            dv = nearest_neighbor_match(logit, w, mask)
        elif method == METHOD_CALIPER:
            dv = caliper_match(logit, w, mask, config.caliper_multiplier)
        elif method == METHOD_OPTIMAL:
            dv = optimal_caliper_match(logit, w, mask, config.optimal_inflation)
        else:
            raise ValueError(f"unknown method {method!r}")
        out.append(dv.relabel(state.designer_id))
    return out


def evaluate_designs(
    state: DesignerState, designs: list[DesignVector], terms: list[tuple] | None = None
) -> list[BalanceReport]:
    """Balance of every candidate design over this designer's own columns."""
    block = state.eval_block()
    return [
        evaluate_design_block(
            design, block, state.treatment, extra_terms=terms,
            threshold=state.config.balance_threshold,
        )
        for design in designs
    ]


# ---------------------------------------------------------------------------
# Single-designer (all-data / oracle) paths


def capped_expansion(
    std_matrix: np.ndarray, w: np.ndarray, config: EngineConfig
) -> FeatureExpansion:
    """Full squares plus the pairwise interactions most correlated with the
    treatment, capped so a lone designer's expansion stays tractable."""
    k = std_matrix.shape[1]
    full = build_expansion(k, _score_config(config, "all-data", "conditional"))
    pairs = full.interaction_pairs
    cap = config.interaction_cap
    if cap is None or len(pairs) <= cap:
        return full
    wc = w - w.mean()
    wn = float(np.sqrt((wc ** 2).sum()))
    scores = np.empty(len(pairs))
    chunk = 512
    for start in range(0, len(pairs), chunk):
        sl = pairs[start:start + chunk]
        ab = np.asarray(sl, dtype=np.intp)
        prod = std_matrix[:, ab[:, 0]] * std_matrix[:, ab[:, 1]]
        prod = prod - prod.mean(axis=0)
        norms = np.sqrt((prod ** 2).sum(axis=0))
        norms[norms == 0.0] = 1.0
        scores[start:start + chunk] = np.abs(prod.T @ wc) / (norms * wn)
    order = np.lexsort((np.asarray(pairs)[:, 1], np.asarray(pairs)[:, 0], -scores))
    keep = sorted(pairs[i] for i in order[:cap])
    return FeatureExpansion(
        base_columns=full.base_columns,
        squared_terms=full.squared_terms,
        interaction_pairs=tuple(keep),
        shared_score_ids=(),
    )


def single_designer_scores(state: DesignerState) -> ScoreVector:
    """Scores for a designer holding every covariate at once (the all-data
    baseline), with the interaction budget applied."""
    config = state.config
    expansion = capped_expansion(state.std_matrix, state.treatment, config)
    features = expansion_matrix(state.std_matrix, expansion)
    score_config = _score_config(config, state.designer_id, "conditional")
    if config.model_kind == LASSO_LOGISTIC:
        from .glm import fit_lasso_logistic, predict_probability

        fit = fit_lasso_logistic(
            features, state.treatment.astype(np.float64), score_config.lasso
        )
        values = predict_probability(fit, features)
    else:
        from .glm import fit_ols

        fit = fit_ols(features, state.treatment.astype(np.float64))
        values = np.asarray(fit.fitted)
    sv = ScoreVector(values, state.designer_id, "final", config.model_kind)
    state.final = sv
    return sv
