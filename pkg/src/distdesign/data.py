"""Core domain types, CSV ingestion, standardization, and covariate partitioning."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"
CATEGORICAL = "categorical"
CATEGORICAL_EXPANDED = "categorical-expanded"


class DataError(ValueError):
    """Raised when an input file or a domain-type invariant is violated."""


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str  # continuous | binary | categorical-expanded


@dataclass(frozen=True)
class Dataset:
    """Immutable study data: covariate matrix, treatment vector, column metadata.

    Carries no outcome information by construction; only covariates and the
    treatment indicator ever enter the design pipeline.
    """

    covariates: np.ndarray          # (N, p) float64
    treatment: np.ndarray           # (N,) int8, values {0, 1}
    covariate_meta: tuple[ColumnMeta, ...]

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=np.float64)
        w = np.asarray(self.treatment)
        if x.ndim != 2 or x.shape[1] < 1:
            raise DataError("covariate matrix must be 2-D with at least one column")
        if w.shape != (x.shape[0],):
            raise DataError("treatment length must match covariate rows")
        if not np.isin(w, (0, 1)).all():
            raise DataError("treatment vector must be binary 0/1")
        if w.min() == w.max():
            raise DataError("treatment must contain both treated and control subjects")
        if np.isnan(x).any():
            raise DataError("covariate matrix contains missing values")
        if len(self.covariate_meta) != x.shape[1]:
            raise DataError("covariate_meta length must equal covariate columns")
        object.__setattr__(self, "covariates", _readonly(x))
        object.__setattr__(self, "treatment", _readonly(w.astype(np.int8)))

    @property
    def n_subjects(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def column_names(self) -> list[str]:
        return [m.name for m in self.covariate_meta]


@dataclass(frozen=True)
class PartitionSpec:
    """Assignment of covariate columns (0-based) to designers 1..M.

    Blocks must be disjoint and nonempty; columns left out of every block are
    permitted and recorded as unassigned.
    """

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.blocks:
            raise DataError("partition needs at least one block")
        seen: set[int] = set()
        norm = []
        for b in self.blocks:
            cols = tuple(int(c) for c in b)
            if not cols:
                raise DataError("empty block in partition")
            if len(set(cols)) != len(cols):
                raise DataError("block contains duplicate columns")
            overlap = seen.intersection(cols)
            if overlap:
                raise DataError(f"blocks overlap on columns {sorted(overlap)}")
            seen.update(cols)
            norm.append(cols)
        object.__setattr__(self, "blocks", tuple(norm))

    @property
    def m_designers(self) -> int:
        return len(self.blocks)

    def validate_against(self, dataset: Dataset) -> None:
        p = dataset.p
        for i, b in enumerate(self.blocks):
            if max(b) >= p or min(b) < 0:
                raise DataError(f"block {i + 1} references a column outside 0..{p - 1}")
            # a full-width block is tolerated only in the degenerate one-designer mode
            if self.m_designers > 1 and len(b) >= p:
                raise DataError(f"block {i + 1} must hold fewer than all {p} columns")

    def unassigned(self, p: int) -> tuple[int, ...]:
        used = {c for b in self.blocks for c in b}
        return tuple(c for c in range(p) if c not in used)


@dataclass(frozen=True)
class CovariateBlock:
    """One designer's view: their assigned columns only, plus the treatment."""

    designer_id: int                # 1-based
    columns: tuple[int, ...]
    matrix: np.ndarray              # (N, p_m) float64
    column_names: tuple[str, ...] = ()
    column_kinds: tuple[str, ...] = ()

    def __post_init__(self):
        if self.matrix.shape[1] != len(self.columns):
            raise DataError("block matrix width must equal its column count")
        object.__setattr__(self, "matrix", _readonly(np.asarray(self.matrix, dtype=np.float64)))

    @property
    def n_columns(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class ColumnSchema:
    """Column-kind declarations for CSV ingestion."""

    treatment_column: str = "treatment"
    kinds: dict[str, str] = field(default_factory=dict)  # name -> continuous|binary|categorical

    def kind_of(self, name: str) -> str:
        return self.kinds.get(name, CONTINUOUS)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def load_dataset(path, schema: ColumnSchema | None = None) -> Dataset:
    """Read a comma-separated file with a header row into a Dataset.

    Categorical columns are expanded into one indicator per level (all levels,
    sorted lexicographically), appended after the non-categorical columns in
    input order. Missing values and non-binary treatment entries are rejected
    with their location.
    """
    schema = schema or ColumnSchema()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if schema.treatment_column not in header:
        raise DataError(f"{path}: treatment column {schema.treatment_column!r} not in header")

    w_idx = header.index(schema.treatment_column)
    base_cols = [(i, name) for i, name in enumerate(header) if i != w_idx]

    n = len(rows)
    treatment = np.empty(n, dtype=np.int8)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} fields, expected {len(header)}")
        raw = row[w_idx].strip()
        if raw == "":
            raise DataError(f"{path}: missing treatment value at row {r + 2}")
        if raw not in ("0", "1"):
            raise DataError(
                f"{path}: treatment value {raw!r} at row {r + 2} is not binary 0/1"
            )
        treatment[r] = int(raw)

    numeric_cols: list[tuple[str, str, np.ndarray]] = []   # (name, kind, values)
    categorical_cols: list[tuple[str, list[str]]] = []     # (name, raw values)
    for i, name in base_cols:
        kind = schema.kind_of(name)
        raw_vals = [row[i].strip() for row in rows]
        for r, v in enumerate(raw_vals):
            if v == "":
                raise DataError(f"{path}: missing value at row {r + 2}, column {name!r}")
        if kind == CATEGORICAL:
            categorical_cols.append((name, raw_vals))
            continue
        vals = np.empty(n, dtype=np.float64)
        for r, v in enumerate(raw_vals):
            try:
                vals[r] = float(v)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {v!r} at row {r + 2}, column {name!r}"
                ) from None
        if np.isnan(vals).any():
            r = int(np.flatnonzero(np.isnan(vals))[0])
            raise DataError(f"{path}: missing value at row {r + 2}, column {name!r}")
        if kind == BINARY and not np.isin(vals, (0.0, 1.0)).all():
            r = int(np.flatnonzero(~np.isin(vals, (0.0, 1.0)))[0])
            raise DataError(
                f"{path}: column {name!r} declared binary but row {r + 2} is {vals[r]!r}"
            )
        numeric_cols.append((name, kind, vals))

    columns: list[np.ndarray] = [v for _, _, v in numeric_cols]
    meta: list[ColumnMeta] = [ColumnMeta(name, kind) for name, kind, _ in numeric_cols]
    for name, raw_vals in categorical_cols:
        for level in sorted(set(raw_vals)):
            indicator = np.fromiter(
                (1.0 if v == level else 0.0 for v in raw_vals), dtype=np.float64, count=n
            )
            columns.append(indicator)
            meta.append(ColumnMeta(f"{name}={level}", CATEGORICAL_EXPANDED))

    if not columns:
        raise DataError(f"{path}: no covariate columns")
    x = np.column_stack(columns)
    return Dataset(covariates=x, treatment=treatment, covariate_meta=tuple(meta))


def save_dataset(dataset: Dataset, path, treatment_column: str = "treatment") -> None:
    """Write a Dataset back to CSV; floats use shortest round-trip repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([treatment_column] + dataset.column_names)
        x = dataset.covariates
        w = dataset.treatment
        for i in range(dataset.n_subjects):
            writer.writerow([int(w[i])] + [repr(float(v)) for v in x[i]])


def standardize(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Center each column to mean 0 and scale to sample sd 1.

    Returns (standardized, means, sds, constant_mask). Constant columns are
    centered only: their recorded sd is 0 and they are excluded from scaling.
    """
    x = np.asarray(matrix, dtype=np.float64)
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
    constant = sds == 0.0
    out = x - means
    safe = np.where(constant, 1.0, sds)
    out /= safe
    sds = np.where(constant, 0.0, sds)
    return out, means, sds, constant


def destandardize(matrix: np.ndarray, means: np.ndarray, sds: np.ndarray) -> np.ndarray:
    safe = np.where(sds == 0.0, 1.0, sds)
    return matrix * safe + means


def balanced_partition(p: int, m: int, seed: int | None = None) -> PartitionSpec:
    """Near-equal random split of columns 0..p-1 into m blocks (the first
    p % m blocks take one extra column)."""
    if m < 1 or p < m:
        raise DataError(f"cannot split {p} columns into {m} nonempty blocks")
    cols = np.arange(p)
    if seed is not None:
        np.random.default_rng(np.random.SeedSequence((int(seed), 0xB10C))).shuffle(cols)
    base, extra = divmod(p, m)
    blocks = []
    start = 0
    for b in range(m):
        size = base + (1 if b < extra else 0)
        blocks.append(tuple(sorted(int(c) for c in cols[start:start + size])))
        start += size
    return PartitionSpec(blocks=tuple(blocks))


def partition_covariates(dataset: Dataset, spec: PartitionSpec) -> list[CovariateBlock]:
    """Slice the dataset into per-designer covariate blocks (framework step 1)."""
    spec.validate_against(dataset)
    blocks = []
    for m, cols in enumerate(spec.blocks, start=1):
        idx = np.array(cols, dtype=np.intp)
        blocks.append(
            CovariateBlock(
                designer_id=m,
                columns=cols,
                matrix=dataset.covariates[:, idx],
                column_names=tuple(dataset.covariate_meta[c].name for c in cols),
                column_kinds=tuple(dataset.covariate_meta[c].kind for c in cols),
            )
        )
    return blocks
