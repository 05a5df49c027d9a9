"""Input validation helpers shared by the estimators, engines and CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError


def check_counts(y) -> np.ndarray:
    """Validate a count matrix and return it as a 2-D int64 array.

    Parameters
    ----------
    y : array-like of shape (n_samples, n_categories)
        Non-negative integer counts. At least two categories are required
        and every row must have a positive total.

    Returns
    -------
    y : ndarray of int64
    """
    arr = np.asarray(y)
    if arr.ndim != 2:
        raise InvalidInputError(f"counts must be 2-D, got shape {arr.shape}")
    n, m = arr.shape
    if n < 1:
        raise InvalidInputError("counts must contain at least one row")
    if m < 2:
        raise InvalidInputError("counts need at least two categories")
    if arr.dtype.kind not in "iuf":
        raise InvalidInputError(f"counts must be numeric, got dtype {arr.dtype}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("counts contain non-finite values")
        if not np.all(arr == np.round(arr)):
            raise InvalidInputError("counts must be integers")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise InvalidInputError("counts must be non-negative")
    totals = arr.sum(axis=1)
    bad = np.flatnonzero(totals <= 0)
    if bad.size:
        raise InvalidInputError(f"row {bad[0]} has zero total count")
    return arr


def check_design(x, n_samples: int) -> np.ndarray:
    """Validate a design matrix (intercept already included)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"design matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[0] != n_samples:
        raise InvalidInputError(
            f"design matrix has {arr.shape[0]} rows but counts have {n_samples}"
        )
    if arr.shape[1] < 1:
        raise InvalidInputError("design matrix needs at least one column")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("design matrix contains non-finite values")
    return arr


def build_design(covariates, n_samples: int, add_intercept: bool = True,
                 standardize: bool = False) -> np.ndarray:
    """Assemble the design matrix from raw covariates.

    ``covariates=None`` yields the intercept-only design. Standardization is
    applied to the raw covariate columns before the intercept is prepended
    and uses the sample standard deviation (ddof=1).
    """
    if covariates is None:
        if not add_intercept:
            raise InvalidInputError("no covariates and no intercept: empty design")
        return np.ones((n_samples, 1))
    cov = check_design(covariates, n_samples)
    if standardize:
        sd = cov.std(axis=0, ddof=1) if n_samples > 1 else np.zeros(cov.shape[1])
        if np.any(sd == 0):
            raise InvalidInputError("cannot standardize a constant covariate column")
        cov = (cov - cov.mean(axis=0)) / sd
    if add_intercept:
        cov = np.column_stack([np.ones(n_samples), cov])
    return cov


def check_responsibilities(w, n_samples: int | None = None,
                           n_components: int | None = None,
                           atol: float = 1e-10) -> np.ndarray:
    """Check that ``w`` is a row-stochastic matrix."""
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError("responsibilities must be 2-D")
    if n_samples is not None and arr.shape[0] != n_samples:
        raise InvalidInputError("responsibilities have the wrong number of rows")
    if n_components is not None and arr.shape[1] != n_components:
        raise InvalidInputError(
            f"responsibilities have {arr.shape[1]} columns, expected {n_components}"
        )
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1 + atol):
        raise InvalidInputError("responsibilities must lie in [0, 1]")
    if not np.allclose(arr.sum(axis=1), 1.0, rtol=0, atol=atol):
        raise InvalidInputError("responsibility rows must sum to one")
    return arr


def check_labels(z, n_components: int | None = None) -> np.ndarray:
    """Validate a vector of 0-based component labels."""
    arr = np.asarray(z)
    if arr.ndim != 1:
        raise InvalidInputError("labels must be a 1-D vector")
    if arr.dtype.kind == "f":
        if not np.all(arr == np.round(arr)):
            raise InvalidInputError("labels must be integers")
    elif arr.dtype.kind not in "iu":
        raise InvalidInputError(f"labels must be integers, got dtype {arr.dtype}")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise InvalidInputError("labels must be non-negative")
    if n_components is not None and arr.size and arr.max() >= n_components:
        raise InvalidInputError(f"label {arr.max()} out of range for {n_components} components")
    return arr


def check_random_state(seed) -> np.random.Generator:
    """Turn ``None``, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.RandomState):
        raise InvalidInputError("legacy RandomState is not supported; pass an int or Generator")
    return np.random.default_rng(seed)
