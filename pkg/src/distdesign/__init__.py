"""Distributed design of large observational studies.

Covariates are split across designers; each designer estimates conditional
propensity scores from their own block, shares them, builds candidate
matched or subclassified designs in parallel, and the design with the best
covariate balance across all candidates is selected.
"""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    ColumnMeta,
    ColumnSchema,
    CovariateBlock,
    DataError,
    Dataset,
    PartitionSpec,
    load_dataset,
    partition_covariates,
    save_dataset,
    standardize,
)
