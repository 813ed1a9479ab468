"""Logistic and Poisson GLM fitting by IRLS, with Wald inference.

Non-intercept columns are z-standardized internally for conditioning
(raw covariate scales span several orders of magnitude); coefficients and
covariance are reported back on the original scale.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import (
    AllZeroCountsError,
    ColumnMismatchError,
    DataError,
    NoConvergenceError,
    SeparationError,
    SingularError,
)

INTERCEPT = "intercept"

MAX_ITERATIONS = 100
MAX_HALVINGS = 10
DEVIANCE_RTOL = 1e-8
SCORE_TOL = 1e-6
SEPARATION_COEF_BOUND = 15.0
SEPARATION_DEVIANCE = 1e-8


class Family(enum.Enum):
    Logistic = "logistic"
    Poisson = "poisson"


@dataclass
class DesignMatrix:
    """Named design matrix with a per-column standardization record.

    The intercept column must be present and constant 1. Means and scales
    are those used internally by the fitters (intercept keeps (0, 1), as
    does any zero-variance column so its degeneracy surfaces as a rank
    check rather than a division by zero).
    """

    column_names: tuple[str, ...]
    values: np.ndarray
    means: np.ndarray = field(init=False)
    scales: np.ndarray = field(init=False)

    def __post_init__(self):
        self.column_names = tuple(self.column_names)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise ValueError("values shape does not match column names")
        if len(set(self.column_names)) != len(self.column_names):
            raise ValueError("duplicate column names")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("design matrix contains non-finite entries")
        if INTERCEPT not in self.column_names:
            raise ValueError("design matrix must include an intercept column")
        icol = self.column_names.index(INTERCEPT)
        if not np.all(self.values[:, icol] == 1.0):
            raise ValueError("intercept column must be constant 1")

        means = self.values.mean(axis=0)
        scales = self.values.std(axis=0)
        means[icol] = 0.0
        scales[icol] = 1.0
        scales[scales == 0.0] = 1.0
        self.means = means
        self.scales = scales

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def intercept_index(self) -> int:
        return self.column_names.index(INTERCEPT)

    def standardized(self) -> np.ndarray:
        return (self.values - self.means) / self.scales


@dataclass
class FittedGlm:
    """Fit result on the original covariate scale."""

    family: Family
    column_names: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    deviance: float
    iterations: int
    converged: bool

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.column_names.index(name)])

    def se(self, name: str) -> float:
        i = self.column_names.index(name)
        return math.sqrt(float(self.covariance[i, i]))

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "column_names": list(self.column_names),
            "coefficients": [repr(float(c)) for c in self.coefficients],
            "covariance": [[repr(float(v)) for v in row] for row in self.covariance],
            "deviance": repr(float(self.deviance)),
            "iterations": self.iterations,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FittedGlm":
        return cls(
            family=Family(payload["family"]),
            column_names=tuple(payload["column_names"]),
            coefficients=np.array([float(c) for c in payload["coefficients"]]),
            covariance=np.array([[float(v) for v in row] for row in payload["covariance"]]),
            deviance=float(payload["deviance"]),
            iterations=int(payload["iterations"]),
            converged=bool(payload["converged"]),
        )


@dataclass(frozen=True)
class IrrEstimate:
    """Incidence rate ratio with a Wald confidence interval."""

    irr: float
    ci_low: float
    ci_high: float
    log_se: float
    region: object = None
    n_pairs: int = 0


def log_likelihood(family: Family, X: np.ndarray, y: np.ndarray, beta: np.ndarray,
                   offset: np.ndarray | None = None) -> float:
    """Exact log-likelihood at an arbitrary coefficient vector."""
    eta = X @ beta
    if offset is not None:
        eta = eta + offset
    if family is Family.Logistic:
        # y*eta - log(1 + exp(eta)), stable for large |eta|
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    mu = np.exp(eta)
    return float(np.sum(y * eta - mu - special.gammaln(y + 1.0)))


def score(family: Family, X: np.ndarray, y: np.ndarray, beta: np.ndarray,
          offset: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the log-likelihood: X^T (y - mu) for both families."""
    eta = X @ beta
    if offset is not None:
        eta = eta + offset
    mu = special.expit(eta) if family is Family.Logistic else np.exp(eta)
    return X.T @ (y - mu)


def _deviance(family: Family, y: np.ndarray, eta: np.ndarray) -> float:
    if family is Family.Logistic:
        return float(2.0 * np.sum(np.logaddexp(0.0, eta) - y * eta))
    mu = np.exp(eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = 2.0 * np.sum(special.xlogy(y, y) - special.xlogy(y, mu) - (y - mu))
    return float(dev)


def _solve_spd(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as err:
        raise SingularError("information matrix is rank-deficient") from err
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, y)


def _invert_spd(matrix: np.ndarray) -> np.ndarray:
    return _solve_spd(matrix, np.eye(matrix.shape[0]))


def _irls(family: Family, Xs: np.ndarray, y: np.ndarray, offset: np.ndarray | None):
    """Newton/IRLS in standardized coordinates; returns (beta, info, dev, iters)."""
    n, p = Xs.shape
    beta = np.zeros(p)
    icol_candidates = np.where(np.all(Xs == 1.0, axis=0))[0]
    icol = int(icol_candidates[0]) if icol_candidates.size else 0

    if family is Family.Logistic:
        ybar = float(np.mean(y))
        beta[icol] = math.log(ybar / (1.0 - ybar))
    else:
        denom = float(np.sum(np.exp(offset))) if offset is not None else float(n)
        beta[icol] = math.log(float(np.sum(y)) / denom)

    def linpred(b):
        eta = Xs @ b
        return eta + offset if offset is not None else eta

    dev = _deviance(family, y, linpred(beta))
    converged = False
    iterations = 0
    rel_change = math.inf

    for iterations in range(1, MAX_ITERATIONS + 1):
        eta = linpred(beta)
        mu = special.expit(eta) if family is Family.Logistic else np.exp(eta)
        weights = mu * (1.0 - mu) if family is Family.Logistic else mu
        grad = Xs.T @ (y - mu)
        if rel_change < DEVIANCE_RTOL and float(np.max(np.abs(grad))) < SCORE_TOL:
            converged = True
            break
        info = (Xs * weights[:, None]).T @ Xs
        if not np.all(np.isfinite(info)):
            raise SingularError("information matrix overflowed")
        step = _solve_spd(info, grad)

        # step-halving keeps the deviance non-increasing; the slack scales
        # with the deviance magnitude so sub-ULP Newton steps near the
        # optimum are not rejected by rounding noise
        slack = 1e-12 * (abs(dev) + 1.0)
        new_dev = math.inf
        for halving in range(MAX_HALVINGS + 1):
            candidate = beta + step / (2.0 ** halving)
            with np.errstate(over="ignore"):
                new_dev = _deviance(family, y, linpred(candidate))
            if math.isfinite(new_dev) and new_dev <= dev + slack:
                beta = candidate
                break
        else:
            break  # no step improves; the not-converged path decides below

        if family is Family.Logistic:
            if float(np.max(np.abs(beta))) > SEPARATION_COEF_BOUND:
                raise SeparationError(
                    "standardized coefficient exceeded "
                    f"{SEPARATION_COEF_BOUND}; classes appear separable"
                )

        rel_change = abs(dev - new_dev) / (abs(dev) + 1e-10)
        dev = new_dev

    if not converged:
        if family is Family.Logistic and dev < SEPARATION_DEVIANCE:
            raise SeparationError(
                "deviance vanished before convergence; classes appear separable"
            )
        raise NoConvergenceError(f"IRLS did not converge in {MAX_ITERATIONS} iterations")

    eta = linpred(beta)
    mu = special.expit(eta) if family is Family.Logistic else np.exp(eta)
    weights = mu * (1.0 - mu) if family is Family.Logistic else mu
    info = (Xs * weights[:, None]).T @ Xs
    return beta, info, dev, iterations


def _destandardize(X: DesignMatrix, beta_std: np.ndarray, cov_std: np.ndarray):
    """Map standardized-coordinate estimates back to the original scale."""
    p = X.n_cols
    icol = X.intercept_index()
    A = np.zeros((p, p))
    for j in range(p):
        if j == icol:
            A[icol, icol] = 1.0
        else:
            A[j, j] = 1.0 / X.scales[j]
            A[icol, j] = -X.means[j] / X.scales[j]
    beta = A @ beta_std
    cov = A @ cov_std @ A.T
    cov = (cov + cov.T) / 2.0
    return beta, cov


def _fit(family: Family, X: DesignMatrix, y: np.ndarray, offset: np.ndarray | None) -> FittedGlm:
    Xs = X.standardized()
    beta_std, info, dev, iterations = _irls(family, Xs, y, offset)
    cov_std = _invert_spd(info)
    beta, cov = _destandardize(X, beta_std, cov_std)
    return FittedGlm(
        family=family,
        column_names=X.column_names,
        coefficients=beta,
        covariance=cov,
        deviance=dev,
        iterations=iterations,
        converged=True,
    )


def fit_logistic(X: DesignMatrix, y) -> FittedGlm:
    """Fit a logistic regression by IRLS.

    Parameters
    ----------
    X : DesignMatrix
        Predictors including the intercept column.
    y : array-like of 0/1
        Binary outcome; both classes must be present.

    Returns
    -------
    FittedGlm
        Maximum-likelihood coefficients on the original covariate scale,
        with covariance from the inverse observed information.

    Raises
    ------
    SeparationError, SingularError, NoConvergenceError
    """
    y = np.asarray(y, dtype=float)
    if X.n_rows != y.shape[0]:
        raise ValueError("X and y row counts differ")
    if X.n_rows <= X.n_cols:
        raise SingularError("need more rows than columns")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("y must be binary 0/1")
    if y.min() == y.max():
        raise DataError("y contains a single class")
    return _fit(Family.Logistic, X, y, None)


def fit_poisson(X: DesignMatrix, counts, offset) -> FittedGlm:
    """Fit a Poisson regression with a fixed offset by IRLS.

    Parameters
    ----------
    X : DesignMatrix
        Predictors including the intercept column. Callers fitting an
        exposure-effect model must ensure both exposure classes appear.
    counts : array-like of nonnegative ints
        Event counts.
    offset : array-like
        Log person-years, added to the linear predictor with coefficient 1.

    Raises
    ------
    AllZeroCountsError, SingularError, NoConvergenceError
    """
    counts = np.asarray(counts, dtype=float)
    offset = np.asarray(offset, dtype=float)
    if X.n_rows != counts.shape[0] or X.n_rows != offset.shape[0]:
        raise ValueError("X, counts, and offset row counts differ")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    if not np.all(np.isfinite(offset)):
        raise ValueError("offset must be finite")
    if counts.sum() == 0:
        raise AllZeroCountsError("all counts are zero; likelihood is degenerate")
    return _fit(Family.Poisson, X, counts, offset)


def predict_proba(model: FittedGlm, X: DesignMatrix) -> np.ndarray:
    """Fitted probabilities from a logistic model on new rows."""
    if model.family is not Family.Logistic:
        raise ValueError("predict_proba requires a logistic model")
    if not model.converged:
        raise ValueError("model did not converge")
    if tuple(X.column_names) != tuple(model.column_names):
        raise ColumnMismatchError(
            f"design columns {X.column_names} != model columns {model.column_names}"
        )
    return special.expit(X.values @ model.coefficients)


def irr_with_ci(model: FittedGlm, exposure_column: str, level: float = 0.95,
                region=None, n_pairs: int = 0) -> IrrEstimate:
    """Exponentiated exposure coefficient with a Wald interval.

    The z multiplier is the standard normal quantile (1.959964 at the
    default 0.95 level).
    """
    if model.family is not Family.Poisson:
        raise ValueError("irr_with_ci requires a Poisson model")
    if not model.converged:
        raise ValueError("model did not converge")
    if exposure_column not in model.column_names:
        raise ColumnMismatchError(f"no column named {exposure_column!r} in model")
    beta = model.coef(exposure_column)
    se = model.se(exposure_column)
    z = stats.norm.ppf(0.5 + level / 2.0)
    return IrrEstimate(
        irr=math.exp(beta),
        ci_low=math.exp(beta - z * se),
        ci_high=math.exp(beta + z * se),
        log_se=se,
        region=region,
        n_pairs=n_pairs,
    )
