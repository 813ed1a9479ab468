import math

import numpy as np
import pytest

from conftest import design
from expomatch import glm
from expomatch.errors import (
    AllZeroCountsError,
    ColumnMismatchError,
    DataError,
    SeparationError,
    SingularError,
)

RNG = np.random.default_rng(20240817)


def two_by_two():
    """Binary covariate, event rates 8/10 vs 2/10."""
    x = np.array([1.0] * 10 + [0.0] * 10)
    y = np.array([1] * 8 + [0] * 2 + [1] * 2 + [0] * 8, dtype=float)
    return design({"x": x}), y


def test_logistic_closed_form_2x2():
    X, y = two_by_two()
    fit = glm.fit_logistic(X, y)
    assert fit.converged
    assert fit.coef("x") == pytest.approx(2 * math.log(4), abs=1e-6)
    assert fit.coef("intercept") == pytest.approx(math.log(0.2 / 0.8), abs=1e-6)


def test_logistic_singular_on_constant_column():
    X = design({"c": np.full(12, 3.0)})
    y = np.array([0, 1] * 6, dtype=float)
    with pytest.raises(SingularError):
        glm.fit_logistic(X, y)


def test_logistic_separation_detected():
    x = np.linspace(-2, 2, 40)
    y = (x > 0).astype(float)
    with pytest.raises(SeparationError):
        glm.fit_logistic(design({"x": x}), y)


def test_logistic_single_class_rejected():
    X = design({"x": np.arange(5.0)})
    with pytest.raises(DataError):
        glm.fit_logistic(X, np.ones(5))


def test_logistic_needs_more_rows_than_columns():
    X = design({"x": np.array([0.0, 1.0])})
    with pytest.raises(SingularError):
        glm.fit_logistic(X, np.array([0.0, 1.0]))


def test_poisson_two_group_closed_form():
    X = design({"exposed": np.array([0.0, 1.0])})
    fit = glm.fit_poisson(X, [10, 20], np.log([100.0, 100.0]))
    assert fit.coef("exposed") == pytest.approx(math.log(2), abs=1e-8)
    est = glm.irr_with_ci(fit, "exposed")
    assert est.irr == pytest.approx(2.0, abs=1e-8)


def test_poisson_identical_rates():
    X = design({"exposed": np.array([0.0, 1.0])})
    fit = glm.fit_poisson(X, [15, 15], np.log([100.0, 100.0]))
    assert fit.coef("exposed") == pytest.approx(0.0, abs=1e-10)
    assert glm.irr_with_ci(fit, "exposed").irr == pytest.approx(1.0, abs=1e-10)


def test_poisson_offset_identity():
    X = design({"exposed": np.array([0.0, 1.0, 0.0, 1.0])})
    counts = [10, 20, 12, 18]
    fit1 = glm.fit_poisson(X, counts, np.log([100.0] * 4))
    fit10 = glm.fit_poisson(X, counts, np.log([1000.0] * 4))
    assert fit10.coef("exposed") == pytest.approx(fit1.coef("exposed"), abs=1e-8)
    assert fit10.coef("intercept") - fit1.coef("intercept") == pytest.approx(-math.log(10), abs=1e-8)


def test_poisson_all_zero_counts():
    X = design({"exposed": np.array([0.0, 1.0, 0.0])})
    with pytest.raises(AllZeroCountsError):
        glm.fit_poisson(X, [0, 0, 0], np.zeros(3))


def test_predict_proba_basics():
    X, y = two_by_two()
    fit = glm.fit_logistic(X, y)
    p = glm.predict_proba(fit, X)
    assert p[0] == pytest.approx(0.8, abs=1e-6)   # x = 1
    assert p[-1] == pytest.approx(0.2, abs=1e-6)  # x = 0

    # intercept-only model: all probabilities equal expit(intercept)
    flat = glm.FittedGlm(
        family=glm.Family.Logistic,
        column_names=("intercept", "x"),
        coefficients=np.array([math.log(0.3 / 0.7), 0.0]),
        covariance=np.eye(2),
        deviance=0.0,
        iterations=1,
        converged=True,
    )
    assert glm.predict_proba(flat, X) == pytest.approx(np.full(20, 0.3))


def test_predict_proba_column_mismatch():
    X, y = two_by_two()
    fit = glm.fit_logistic(X, y)
    other = design({"z": np.zeros(20)})
    with pytest.raises(ColumnMismatchError):
        glm.predict_proba(fit, other)


def test_irr_ci_hand_values():
    model = glm.FittedGlm(
        family=glm.Family.Poisson,
        column_names=("intercept", "exposed"),
        coefficients=np.array([0.0, 0.0]),
        covariance=np.array([[1.0, 0.0], [0.0, 0.0001]]),  # SE = 0.01
        deviance=0.0,
        iterations=1,
        converged=True,
    )
    est = glm.irr_with_ci(model, "exposed")
    assert est.irr == pytest.approx(1.0)
    assert round(est.ci_low, 4) == 0.9806
    assert round(est.ci_high, 4) == 1.0198


def test_irr_ci_zero_variance():
    model = glm.FittedGlm(
        family=glm.Family.Poisson,
        column_names=("intercept", "exposed"),
        coefficients=np.array([0.0, math.log(2)]),
        covariance=np.zeros((2, 2)),
        deviance=0.0,
        iterations=1,
        converged=True,
    )
    est = glm.irr_with_ci(model, "exposed")
    assert (est.ci_low, est.irr, est.ci_high) == pytest.approx((2.0, 2.0, 2.0))


def test_irr_ci_unknown_column():
    X = design({"exposed": np.array([0.0, 1.0])})
    fit = glm.fit_poisson(X, [10, 20], np.log([100.0, 100.0]))
    with pytest.raises(ColumnMismatchError):
        glm.irr_with_ci(fit, "nope")


def _random_dataset(family, n, p):
    X = design({f"x{j}": RNG.normal(size=n) for j in range(p)})
    beta = RNG.normal(scale=0.4, size=p + 1)
    eta = X.values @ beta
    if family is glm.Family.Logistic:
        y = (RNG.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
        offset = None
    else:
        offset = np.log(RNG.uniform(50, 500, size=n))
        y = RNG.poisson(np.exp(np.clip(eta, -10, 3) + offset)).astype(float)
    return X, y, offset


def _fd_score(family, X, y, beta, offset, h=1e-5):
    grad = np.zeros_like(beta)
    for j in range(beta.size):
        hj = h * max(1.0, abs(beta[j]))
        up, dn = beta.copy(), beta.copy()
        up[j] += hj
        dn[j] -= hj
        grad[j] = (
            glm.log_likelihood(family, X, y, up, offset)
            - glm.log_likelihood(family, X, y, dn, offset)
        ) / (2 * hj)
    return grad


@pytest.mark.parametrize("family", [glm.Family.Logistic, glm.Family.Poisson])
def test_score_matches_finite_differences_at_random_points(family):
    for _ in range(5):
        X, y, offset = _random_dataset(family, 60, 3)
        beta = RNG.normal(scale=0.3, size=4)
        analytic = glm.score(family, X.values, y, beta, offset)
        fd = _fd_score(family, X.values, y, beta, offset)
        assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-4)


def test_affine_invariance_of_fitted_probabilities():
    X, y, _ = _random_dataset(glm.Family.Logistic, 120, 3)
    fit = glm.fit_logistic(X, y)
    p1 = glm.predict_proba(fit, X)

    scaled_values = X.values.copy()
    scaled_values[:, 1] = 3.5 * scaled_values[:, 1] - 7.0
    scaled_values[:, 2] = -0.2 * scaled_values[:, 2] + 1.0
    Xs = glm.DesignMatrix(X.column_names, scaled_values)
    fit_s = glm.fit_logistic(Xs, y)
    p2 = glm.predict_proba(fit_s, Xs)
    np.testing.assert_allclose(p1, p2, atol=1e-8)


def test_poisson_offset_scaling_property():
    X, y, offset = _random_dataset(glm.Family.Poisson, 120, 3)
    fit1 = glm.fit_poisson(X, y, offset)
    fit2 = glm.fit_poisson(X, y, offset + math.log(3.7))
    for name in X.column_names:
        if name == "intercept":
            assert fit2.coef(name) - fit1.coef(name) == pytest.approx(-math.log(3.7), abs=1e-8)
        else:
            assert fit2.coef(name) == pytest.approx(fit1.coef(name), abs=1e-8)


@pytest.mark.parametrize("family", [glm.Family.Logistic, glm.Family.Poisson])
def test_fit_invariants_on_random_data(family):
    for _ in range(5):
        X, y, offset = _random_dataset(family, 80, 3)
        if family is glm.Family.Logistic:
            fit = glm.fit_logistic(X, y)
        else:
            fit = glm.fit_poisson(X, y, offset)
        # covariance symmetric within 1e-10 with nonnegative diagonal
        assert np.max(np.abs(fit.covariance - fit.covariance.T)) < 1e-10
        assert np.all(np.diag(fit.covariance) >= 0)
        # converged => standardized score below 1e-6
        Xs = X.standardized()
        beta_std = _standardize_coefs(X, fit.coefficients)
        s = glm.score(family, Xs, y, beta_std, offset)
        assert np.max(np.abs(s)) < 1e-6


def _standardize_coefs(X, beta_orig):
    """Map original-scale coefficients into standardized coordinates."""
    icol = X.intercept_index()
    beta_std = beta_orig * X.scales
    beta_std[icol] = beta_orig[icol] + float(np.sum(np.delete(beta_orig * X.means, icol)))
    return beta_std


def test_deviance_nonnegative_and_below_null():
    X, y, offset = _random_dataset(glm.Family.Poisson, 60, 2)
    fit = glm.fit_poisson(X, y, offset)
    assert fit.deviance >= 0
    # null model has no smaller deviance than the covariate-adjusted one
    Xn = glm.DesignMatrix(("intercept",), np.ones((60, 1)))
    fit_null = glm.fit_poisson(Xn, y, offset)
    assert fit.deviance <= fit_null.deviance + 1e-8


def test_fitted_glm_round_trips_through_dict():
    X, y = two_by_two()
    fit = glm.fit_logistic(X, y)
    again = glm.FittedGlm.from_dict(fit.to_dict())
    assert again.family is fit.family
    assert again.column_names == fit.column_names
    np.testing.assert_array_equal(again.coefficients, fit.coefficients)
    np.testing.assert_array_equal(again.covariance, fit.covariance)
