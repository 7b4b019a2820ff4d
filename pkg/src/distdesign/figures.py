"""Matplotlib rendering for the report path: before/after balance trajectories
per designer and the transformed-term panel."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_METHOD_ORDER = ("subclass", "nn", "caliper", "optimal-caliper")


def _designer_order(ids):
    return sorted(
        set(ids),
        key=lambda d: (isinstance(d, str), d if isinstance(d, int) else 0, str(d)),
    )


def _stages(methods):
    known = [m for m in _METHOD_ORDER if m in methods]
    extra = [m for m in methods if m not in _METHOD_ORDER]
    return ["before"] + known + sorted(extra)


def balance_change_figure(balance: dict, path, threshold: float | None = None) -> None:
    """One panel per designer: each line tracks one covariate's absolute
    standardized difference from the undesigned data through every method."""
    pre = balance.get("pre_design", {}).get("per_covariate", {})
    candidates = balance.get("candidates", [])
    designers = _designer_order(c["designer_id"] for c in candidates)
    methods = _stages({c["method"] for c in candidates})
    threshold = threshold if threshold is not None else balance.get("threshold", 0.2)

    ncols = min(len(designers), 4) or 1
    nrows = int(np.ceil(len(designers) / ncols)) or 1
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(3.6 * ncols, 3.0 * nrows), sharey=True, squeeze=False
    )
    for ax in axes.ravel()[len(designers):]:
        ax.set_visible(False)
    for ax, designer in zip(axes.ravel(), designers):
        by_method = {
            c["method"]: c["per_covariate"]
            for c in candidates
            if c["designer_id"] == designer
        }
        covariates = sorted(pre) if pre else sorted(next(iter(by_method.values()), {}))
        xs = np.arange(len(methods))
        for cov in covariates:
            ys = [pre.get(cov, np.nan)]
            ys += [by_method.get(m, {}).get(cov, np.nan) for m in methods[1:]]
            ax.plot(xs, ys, color="steelblue", alpha=0.25, linewidth=0.7)
        ax.axhline(threshold, color="firebrick", linestyle="--", linewidth=1.0)
        ax.set_xticks(xs)
        ax.set_xticklabels(methods, rotation=45, ha="right", fontsize=8)
        ax.set_title(f"designer {designer}", fontsize=10)
        ax.set_ylim(bottom=0)
    axes[0, 0].set_ylabel("|standardized difference|")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def term_balance_figure(balance: dict, path, threshold: float | None = None) -> None:
    """Transformed-term (interaction) balance before and after design, one
    panel per designer, one line per term."""
    pre_terms = balance.get("pre_design", {}).get("terms", {})
    candidates = [c for c in balance.get("candidates", []) if c.get("terms")]
    if not candidates:
        return
    designers = _designer_order(c["designer_id"] for c in candidates)
    methods = _stages({c["method"] for c in candidates})
    threshold = threshold if threshold is not None else balance.get("threshold", 0.2)

    ncols = min(len(designers), 4) or 1
    nrows = int(np.ceil(len(designers) / ncols)) or 1
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(3.6 * ncols, 3.0 * nrows), sharey=True, squeeze=False
    )
    for ax in axes.ravel()[len(designers):]:
        ax.set_visible(False)
    for ax, designer in zip(axes.ravel(), designers):
        by_method = {
            c["method"]: c["terms"] for c in candidates if c["designer_id"] == designer
        }
        terms = sorted(pre_terms) or sorted(next(iter(by_method.values()), {}))
        xs = np.arange(len(methods))
        for term in terms:
            ys = [pre_terms.get(term, np.nan)]
            ys += [by_method.get(m, {}).get(term, np.nan) for m in methods[1:]]
            ax.plot(xs, ys, marker="o", markersize=2.5, linewidth=1.0, label=term)
        ax.axhline(threshold, color="firebrick", linestyle="--", linewidth=1.0)
        ax.set_xticks(xs)
        ax.set_xticklabels(methods, rotation=45, ha="right", fontsize=8)
        ax.set_title(f"designer {designer}", fontsize=10)
        ax.set_ylim(bottom=0)
    axes[0, 0].set_ylabel("|standardized difference|")
    handles, labels = axes[0, 0].get_legend_handles_labels()
    if handles and len(labels) <= 12:
        fig.legend(handles, labels, loc="lower center", ncol=min(len(labels), 5), fontsize=7)
        fig.tight_layout(rect=(0, 0.08, 1, 1))
    else:
        fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
