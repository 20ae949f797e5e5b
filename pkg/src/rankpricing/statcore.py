"""
Numerical kernel shared by every estimator in the package.

Ordinary least squares with deterministic dropping of collinear columns,
White heteroskedasticity-consistent covariance (HC0, optionally HC1), the
fixed-effects within transformation, and condition-checked linear solves.
All arithmetic is float64; tolerances are relative to the problem's scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Literal

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import IllConditionedError, InputError, NumericalError

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e8
COLLINEARITY_TOL = 1e-10

CovarianceKind = Literal["hc0", "hc1"]


@dataclass(frozen=True)
class DesignMatrix:
    """Regressor matrix with one label per column."""

    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise InputError(f"design matrix must be 2-D, got shape {values.shape}")
        n, k = values.shape
        if k < 1 or n < k:
            raise InputError(f"design matrix needs n >= k >= 1, got n={n}, k={k}")
        if len(self.labels) != k:
            raise InputError(f"{len(self.labels)} labels for {k} design columns")
        if not np.all(np.isfinite(values)):
            raise InputError("design matrix has non-finite entries")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_columns(cls, columns: dict[str, np.ndarray]) -> DesignMatrix:
        labels = tuple(columns)
        values = np.column_stack([np.asarray(columns[label], dtype=float) for label in labels])
        return cls(values=values, labels=labels)


@dataclass(frozen=True)
class RegressionResult:
    coefficients: np.ndarray
    residuals: np.ndarray
    covariance: np.ndarray
    r_squared: float
    n: int
    k: int
    labels: tuple[str, ...]
    dropped_columns: tuple[str, ...] = ()
    r_squared_undefined: bool = False
    covariance_kind: CovarianceKind = "hc0"
    absorbed: int = 0
    has_intercept: bool = field(default=False)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def coefficient(self, label: str) -> float:
        return float(self.coefficients[self.labels.index(label)])

    def standard_error(self, label: str) -> float:
        return float(self.standard_errors[self.labels.index(label)])


def independent_columns(values: np.ndarray, tol: float = COLLINEARITY_TOL) -> list[int]:
    """
    Indices of a maximal linearly independent set of columns, scanning left to
    right. A column is dropped when it is numerically zero relative to the
    largest column, or when its residual after projection on the columns
    already kept is below `tol` times its own norm.
    """
    norms = np.linalg.norm(values, axis=0)
    scale = norms.max() if norms.size else 0.0
    keep: list[int] = []
    for j, norm in enumerate(norms):
        if norm == 0.0 or norm <= tol * scale:
            continue
        if keep:
            basis = values[:, keep]
            coef, *_ = np.linalg.lstsq(basis, values[:, j], rcond=None)
            remainder = values[:, j] - basis @ coef
            if np.linalg.norm(remainder) <= tol * norm:
                continue
        keep.append(j)
    return keep


def _has_intercept(values: np.ndarray) -> bool:
    return any(np.ptp(col) == 0.0 and col[0] != 0.0 for col in values.T)


def ols_fit(
    X: DesignMatrix,
    y,
    *,
    covariance: CovarianceKind = "hc0",
    absorbed: int = 0,
) -> RegressionResult:
    """
    Least squares of `y` on `X`.

    Collinear columns are dropped leftmost-retained and reported in
    `dropped_columns`. `absorbed` counts fixed effects removed beforehand by
    the within transformation; it enters the covariance degrees-of-freedom
    scaling (HC0: n/(n - absorbed), HC1: n/(n - k - absorbed)).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (X.n,):
        raise InputError(f"response has length {y.size}, design has {X.n} rows")
    if not np.all(np.isfinite(y)):
        raise InputError("response has non-finite entries")
    if X.n <= X.k:
        raise InputError(f"need more observations than columns (n={X.n}, k={X.k})")

    keep = independent_columns(X.values)
    if not keep:
        raise InputError("every design column is zero or collinear")
    dropped = tuple(label for j, label in enumerate(X.labels) if j not in keep)
    if dropped:
        logger.warning("dropped collinear columns: %s", ", ".join(dropped))

    Xr = X.values[:, keep]
    n, k = Xr.shape
    if n - k - absorbed <= 0:
        raise InputError(
            f"no residual degrees of freedom (n={n}, k={k}, absorbed fixed effects={absorbed})"
        )
    coefficients, *_ = np.linalg.lstsq(Xr, y, rcond=None)
    residuals = y - Xr @ coefficients

    cov = white_covariance(Xr, residuals)
    if covariance == "hc1":
        cov = cov * (n / (n - k - absorbed))
    elif covariance == "hc0":
        if absorbed:
            cov = cov * (n / (n - absorbed))
    else:
        raise InputError(f"unknown covariance kind '{covariance}'")

    intercept = _has_intercept(Xr)
    ssr = float(residuals @ residuals)
    tss = float(((y - y.mean()) ** 2).sum()) if intercept else float(y @ y)
    undefined = tss == 0.0 or np.ptp(y) == 0.0
    r_squared = 0.0 if undefined else min(max(1.0 - ssr / tss, 0.0), 1.0)
    if undefined:
        logger.warning("R-squared undefined for a constant response; reported as 0")

    return RegressionResult(
        coefficients=coefficients,
        residuals=residuals,
        covariance=cov,
        r_squared=r_squared,
        n=n,
        k=k,
        labels=tuple(X.labels[j] for j in keep),
        dropped_columns=dropped,
        r_squared_undefined=undefined,
        covariance_kind=covariance,
        absorbed=absorbed,
        has_intercept=intercept,
    )


def white_covariance(X, residuals) -> np.ndarray:
    """HC0: (X'X)^-1 X' diag(e^2) X (X'X)^-1, symmetrized."""
    X = np.asarray(X, dtype=float)
    e = np.asarray(residuals, dtype=float)
    if X.ndim != 2 or e.shape != (X.shape[0],):
        raise InputError(f"residuals of shape {e.shape} do not match design {X.shape}")
    bread = _xtx_inverse(X)
    meat = (X * (e**2)[:, None]).T @ X
    cov = bread @ meat @ bread
    return (cov + cov.T) / 2.0


def classical_covariance(X, residuals, absorbed: int = 0) -> np.ndarray:
    """Homoskedastic s^2 (X'X)^-1 with s^2 = e'e / (n - k - absorbed)."""
    X = np.asarray(X, dtype=float)
    e = np.asarray(residuals, dtype=float)
    n, k = X.shape
    s2 = float(e @ e) / (n - k - absorbed)
    return s2 * _xtx_inverse(X)


def _xtx_inverse(X: np.ndarray) -> np.ndarray:
    xtx = X.T @ X
    condition = float(np.linalg.cond(xtx))
    if not np.isfinite(condition) or condition * np.finfo(float).eps > 1.0:
        raise IllConditionedError("X'X is singular", condition)
    return np.linalg.inv(xtx)


def within_transform(values, entity_ids) -> np.ndarray:
    """
    Demean each value by its entity's mean. Accepts a vector or a 2-D array
    (columns transformed independently). Singleton entities become 0.
    """
    values = np.asarray(values, dtype=float)
    ids = np.asarray(entity_ids)
    if values.shape[0] != ids.shape[0]:
        raise InputError(f"{values.shape[0]} values but {ids.shape[0]} entity ids")
    if values.ndim == 1:
        means = pd.Series(values).groupby(ids, sort=False).transform("mean").to_numpy()
    else:
        means = pd.DataFrame(values).groupby(ids, sort=False).transform("mean").to_numpy()
    return values - means


@dataclass(frozen=True)
class LinearSolution:
    x: np.ndarray
    condition: float


def solve_linear(A, b, *, condition_limit: float = CONDITION_LIMIT) -> LinearSolution:
    """Solve Ax = b, refusing systems whose 2-norm condition exceeds `condition_limit`."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise InputError(f"coefficient matrix must be square, got {A.shape}")
    if b.shape != (A.shape[0],):
        raise InputError(f"right-hand side of shape {b.shape} does not match {A.shape}")

    condition = float(np.linalg.cond(A))
    if not np.isfinite(condition) or condition > condition_limit:
        raise IllConditionedError("linear system is singular or ill-conditioned", condition)
    logger.debug("solving %dx%d system, condition %.3e", *A.shape, condition)

    x = scipy.linalg.solve(A, b)
    residual = float(np.max(np.abs(A @ x - b)))
    bound = 1e-9 * (
        np.linalg.norm(A, np.inf) * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf)
    )
    if residual > bound:
        raise NumericalError(f"solve residual {residual:.3e} exceeds bound {bound:.3e}")
    return LinearSolution(x=x, condition=condition)
