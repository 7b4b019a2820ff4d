"""Covariate balance measures, distributed per-block evaluation, aggregation
into per-design summaries, and final design selection."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import CATEGORICAL_EXPANDED, BINARY, CovariateBlock
from .designs import MATCHED_PAIRS, SUBCLASSES, DesignVector

DEFAULT_THRESHOLD = 0.2


class BalanceError(ValueError):
    pass


@dataclass(frozen=True)
class BalanceReport:
    """Per-covariate absolute standardized differences for one candidate
    design; may cover only one designer's columns until aggregated."""

    designer_id: int | str          # designer who produced the design
    method: str
    per_covariate: dict             # global column index -> d_j
    evaluated_terms: dict = field(default_factory=dict)   # term name -> d
    n_retained: int = 0
    threshold: float = DEFAULT_THRESHOLD
    baseline: bool = False          # all-data / oracle comparison rows

    @property
    def design_ref(self) -> tuple:
        return (self.designer_id, self.method)

    @property
    def d_max(self) -> float:
        return max(self.per_covariate.values()) if self.per_covariate else 0.0

    @property
    def d_plus(self) -> int:
        return sum(1 for d in self.per_covariate.values() if d > self.threshold)


@dataclass(frozen=True)
class SelectionResult:
    winner: tuple                   # (designer_id, method)
    criterion: str                  # d_max | d_plus
    table: list                     # rows of {designer_id, method, d_max, d_plus, ...}
    threshold: float = DEFAULT_THRESHOLD


def _group_scale_continuous(x: np.ndarray, w: np.ndarray) -> float:
    """Pre-design pooled scale sqrt((var_t + var_c) / 2) over the full sample."""
    vt = x[w == 1].var(ddof=1)
    vc = x[w == 0].var(ddof=1)
    return float(np.sqrt((vt + vc) / 2.0))


def _group_scale_binary(x: np.ndarray, w: np.ndarray) -> float:
    pt = x[w == 1].mean()
    pc = x[w == 0].mean()
    return float(np.sqrt((pt * (1.0 - pt) + pc * (1.0 - pc)) / 2.0))


def _weighted_means(x: np.ndarray, w: np.ndarray, weights: np.ndarray):
    tw = weights * (w == 1)
    cw = weights * (w == 0)
    st, sc = tw.sum(), cw.sum()
    if st <= 0.0 or sc <= 0.0:
        raise BalanceError("a treatment group carries no weight in the comparison set")
    return float((tw * x).sum() / st), float((cw * x).sum() / sc)


def _subclass_means(x: np.ndarray, w: np.ndarray, assignments: np.ndarray):
    """Subclass-size-weighted averages of within-subclass group means."""
    ids = np.unique(assignments[assignments > 0])
    if ids.size == 0:
        raise BalanceError("design retains no subjects")
    n_total = 0
    acc_t = 0.0
    acc_c = 0.0
    for g in ids:
        sel = assignments == g
        n_k = int(sel.sum())
        xt = x[sel & (w == 1)]
        xc = x[sel & (w == 0)]
        if xt.size == 0 or xc.size == 0:
            raise BalanceError(f"subclass {g} is missing a treatment arm")
        acc_t += n_k * xt.mean()
        acc_c += n_k * xc.mean()
        n_total += n_k
    return acc_t / n_total, acc_c / n_total


def std_diff_continuous(x: np.ndarray, w: np.ndarray, weightings: np.ndarray) -> float:
    """Absolute standardized mean difference with the scale fixed on the full
    pre-design sample; group means use the supplied per-unit weights."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w)
    s = _group_scale_continuous(x, w)
    if s == 0.0 or not np.isfinite(s):
        return 0.0                  # constant covariate
    mt, mc = _weighted_means(x, w, np.asarray(weightings, dtype=np.float64))
    return abs(mt - mc) / s


def std_diff_binary(x: np.ndarray, w: np.ndarray, weightings: np.ndarray) -> float:
    """Standardized difference for a binary covariate, scale from the
    pre-design group proportions."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w)
    s = _group_scale_binary(x, w)
    if s == 0.0 or not np.isfinite(s):
        return 0.0                  # both proportions degenerate
    mt, mc = _weighted_means(x, w, np.asarray(weightings, dtype=np.float64))
    return abs(mt - mc) / s


def identity_design(n: int) -> DesignVector:
    """Everyone in one subclass: the pre-design (undesigned) comparison."""
    return DesignVector(
        assignments=np.ones(n, dtype=np.int64), kind=SUBCLASSES,
        designer_id="pre-design", method="none",
    )


def _column_d(x: np.ndarray, w: np.ndarray, kind: str, design: DesignVector) -> float:
    binaryish = kind in (BINARY, CATEGORICAL_EXPANDED)
    s = _group_scale_binary(x, w) if binaryish else _group_scale_continuous(x, w)
    if s == 0.0 or not np.isfinite(s):
        return 0.0
    a = design.assignments
    if design.kind == MATCHED_PAIRS:
        mt, mc = _weighted_means(x, w, (a > 0).astype(np.float64))
    else:
        mt, mc = _subclass_means(x, w, a)
    return float(abs(mt - mc) / s)


def term_column(matrix: np.ndarray, term: tuple, columns: tuple[int, ...]) -> np.ndarray:
    """Materialize a transformed term relative to a block's global column ids."""
    local = {c: i for i, c in enumerate(columns)}
    if term[0] == "square":
        return matrix[:, local[term[1]]] ** 2
    if term[0] == "interaction":
        return matrix[:, local[term[1]]] * matrix[:, local[term[2]]]
    raise BalanceError(f"unknown term type {term[0]!r}")


def term_name(term: tuple, names: dict) -> str:
    if term[0] == "square":
        return f"{names.get(term[1], 'x' + str(term[1]))}^2"
    return f"{names.get(term[1], 'x' + str(term[1]))}*{names.get(term[2], 'x' + str(term[2]))}"


def evaluate_design_block(
    design: DesignVector,
    block: CovariateBlock,
    w: np.ndarray,
    extra_terms: list[tuple] | None = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> BalanceReport:
    """Balance of one candidate design over one designer's columns (plus any
    requested transformed or interaction terms among them)."""
    w = np.asarray(w)
    n = block.matrix.shape[0]
    if design.assignments.shape[0] != n:
        raise BalanceError("design length does not match the data")
    per_covariate = {}
    kinds = block.column_kinds or ("continuous",) * block.n_columns
    for i, col in enumerate(block.columns):
        try:
            per_covariate[col] = _column_d(block.matrix[:, i], w, kinds[i], design)
        except BalanceError as exc:
            raise BalanceError(
                f"design ({design.designer_id}, {design.method}): {exc}"
            ) from None
    names = dict(zip(block.columns, block.column_names or ()))
    terms = {}
    for term in extra_terms or []:
        x = term_column(block.matrix, term, block.columns)
        try:
            terms[term_name(term, names)] = _column_d(x, w, "continuous", design)
        except BalanceError as exc:
            raise BalanceError(
                f"design ({design.designer_id}, {design.method}): {exc}"
            ) from None
    return BalanceReport(
        designer_id=design.designer_id,
        method=design.method,
        per_covariate=per_covariate,
        evaluated_terms=terms,
        n_retained=design.n_retained,
        threshold=threshold,
    )


def merge_partials(partials: list[BalanceReport]) -> list[BalanceReport]:
    """Combine per-block evaluations into one report per candidate design,
    rejecting duplicate or missing (design, block) cells."""
    by_ref: dict[tuple, dict] = {}
    meta: dict[tuple, BalanceReport] = {}
    term_map: dict[tuple, dict] = {}
    for part in partials:
        ref = part.design_ref
        cols = by_ref.setdefault(ref, {})
        dup = set(cols).intersection(part.per_covariate)
        if dup:
            raise BalanceError(f"design {ref} evaluated twice for columns {sorted(dup)}")
        cols.update(part.per_covariate)
        term_map.setdefault(ref, {}).update(part.evaluated_terms)
        meta[ref] = part
    universe = set()
    for cols in by_ref.values():
        universe.update(cols)
    merged = []
    for ref in sorted(by_ref, key=_ref_key):
        missing = universe - set(by_ref[ref])
        if missing:
            raise BalanceError(f"design {ref} missing evaluations for columns {sorted(missing)}")
        part = meta[ref]
        merged.append(
            BalanceReport(
                designer_id=ref[0],
                method=ref[1],
                per_covariate=dict(sorted(by_ref[ref].items())),
                evaluated_terms=term_map[ref],
                n_retained=part.n_retained,
                threshold=part.threshold,
                baseline=part.baseline,
            )
        )
    return merged


def _ref_key(ref: tuple):
    did, method = ref
    return (0, did, method) if isinstance(did, int) else (1, str(did), method)


def aggregate_and_select(
    partials: list[BalanceReport], criterion: str = "d_max"
) -> tuple[SelectionResult, list[BalanceReport]]:
    """Merge per-block evaluations, rank the candidates, and pick the winner.

    Ties break on the other criterion, then larger retained count, then lowest
    designer id. Baseline (all-data / oracle) rows appear in the table but are
    not eligible winners unless every candidate is a baseline."""
    if criterion not in ("d_max", "d_plus"):
        raise BalanceError(f"unknown selection criterion {criterion!r}")
    merged = merge_partials(partials)
    if not merged:
        raise BalanceError("no candidate designs to select from")
    table = [
        {
            "designer_id": r.designer_id,
            "method": r.method,
            "d_max": r.d_max,
            "d_plus": r.d_plus,
            "n_retained": r.n_retained,
            "baseline": r.baseline,
        }
        for r in merged
    ]
    eligible = [r for r in merged if not r.baseline] or merged

    def sort_key(r: BalanceReport):
        primary = (r.d_max, r.d_plus) if criterion == "d_max" else (r.d_plus, r.d_max)
        return (*primary, -r.n_retained, _ref_key(r.design_ref))

    winner = min(eligible, key=sort_key)
    return (
        SelectionResult(
            winner=winner.design_ref,
            criterion=criterion,
            table=table,
            threshold=winner.threshold,
        ),
        merged,
    )


# ---------------------------------------------------------------------------
# Whole-dataset helpers (coordinator / analysis side)


def full_dataset_block(dataset) -> CovariateBlock:
    return CovariateBlock(
        designer_id=0,
        columns=tuple(range(dataset.p)),
        matrix=dataset.covariates,
        column_names=tuple(m.name for m in dataset.covariate_meta),
        column_kinds=tuple(m.kind for m in dataset.covariate_meta),
    )


def pre_design_report(
    dataset, threshold: float = DEFAULT_THRESHOLD, extra_terms: list | None = None
) -> BalanceReport:
    """Balance of the undesigned data over every covariate (identity design)."""
    import dataclasses

    report = evaluate_design_block(
        identity_design(dataset.n_subjects),
        full_dataset_block(dataset),
        dataset.treatment,
        extra_terms=extra_terms,
        threshold=threshold,
    )
    return dataclasses.replace(report, baseline=True)


def evaluate_terms_central(
    dataset, designs, terms: list[tuple], threshold: float = DEFAULT_THRESHOLD
) -> dict:
    """Transformed-term balance for each design, computed on the full dataset.
    Covers terms whose parents span designer blocks and therefore cannot be
    evaluated inside the protocol."""
    if not terms:
        return {(dv.designer_id, dv.method): {} for dv in designs}
    parents = tuple(sorted({c for t in terms for c in t[1:]}))
    idx = np.asarray(parents, dtype=np.intp)
    block = CovariateBlock(
        designer_id=0,
        columns=parents,
        matrix=dataset.covariates[:, idx],
        column_names=tuple(dataset.covariate_meta[c].name for c in parents),
        column_kinds=tuple(dataset.covariate_meta[c].kind for c in parents),
    )
    out = {}
    for dv in designs:
        report = evaluate_design_block(
            dv, block, dataset.treatment, extra_terms=terms, threshold=threshold
        )
        out[(dv.designer_id, dv.method)] = dict(report.evaluated_terms)
    return out


# ---------------------------------------------------------------------------
# Report emission


def write_balance_csv(reports: list[BalanceReport], path, column_names: dict | None = None):
    """One row per covariate (and evaluated term) per design."""
    column_names = column_names or {}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["designer_id", "method", "covariate", "d_value"])
        for r in reports:
            for col, d in r.per_covariate.items():
                writer.writerow(
                    [r.designer_id, r.method, column_names.get(col, f"x{col + 1}"), repr(d)]
                )
            for name, d in r.evaluated_terms.items():
                writer.writerow([r.designer_id, r.method, name, repr(d)])


def reports_to_json_dict(
    selection: SelectionResult,
    reports: list[BalanceReport],
    pre_design: BalanceReport | None = None,
    column_names: dict | None = None,
) -> dict:
    column_names = column_names or {}

    def encode(r: BalanceReport) -> dict:
        return {
            "designer_id": r.designer_id,
            "method": r.method,
            "d_max": r.d_max,
            "d_plus": r.d_plus,
            "n_retained": r.n_retained,
            "baseline": r.baseline,
            "per_covariate": {
                column_names.get(c, f"x{c + 1}"): d for c, d in r.per_covariate.items()
            },
            "terms": dict(r.evaluated_terms),
        }

    out = {
        "criterion": selection.criterion,
        "threshold": selection.threshold,
        "winner": {"designer_id": selection.winner[0], "method": selection.winner[1]},
        "table": selection.table,
        "candidates": [encode(r) for r in reports],
    }
    if pre_design is not None:
        out["pre_design"] = encode(pre_design)
    return out


def write_summary_json(path, selection, reports, pre_design=None, column_names=None):
    payload = reports_to_json_dict(selection, reports, pre_design, column_names)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
