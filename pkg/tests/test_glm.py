"""GLM engine tests against independent oracles.

OLS is checked against a normal-equations solve and logistic regression
against direct likelihood maximization with scipy.optimize, so the two
routes share no code with the SVD/IRLS implementations under test.
"""

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from mrcde import (
    Dataset,
    DimensionMismatch,
    NotConverged,
    RankDeficient,
    SchemaError,
    Separation,
    TermSpec,
    build_design,
    fit_logistic,
    fit_ols,
    predict,
)


def random_problem(rng, n=80, k=4, binary=False):
    design = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
    coef = rng.normal(scale=0.8, size=k)
    eta = design @ coef
    if binary:
        response = (rng.uniform(size=n) < expit(eta)).astype(float)
    else:
        response = eta + rng.normal(size=n)
    return design, response


class TestTermSpec:
    def test_parses_constant_power_abs_and_products(self):
        spec = TermSpec(("1", "x", "x^2", "x^3", "|x|", "a", "x*a", "x*z"))
        assert len(spec) == 8
        assert spec.variables() == {"x", "a", "z"}

    def test_rejects_duplicates_up_to_factor_order(self):
        with pytest.raises(SchemaError):
            TermSpec(("1", "x*a", "a*x"))

    def test_rejects_bad_tokens(self):
        for term in ("x^4", "x**2", "2x", "", "x+a"):
            with pytest.raises(SchemaError):
                TermSpec(("1", term))

    def test_rejects_bare_string(self):
        with pytest.raises(SchemaError):
            TermSpec("x")

    def test_json_round_trip(self):
        spec = TermSpec(("1", "x", "x^2", "a", "x*a"))
        assert TermSpec.from_json(spec.to_json()) == spec


class TestBuildDesign:
    def make_dataset(self):
        return Dataset(
            x=np.array([-3.0, 0.5, 2.0]),
            a=np.array([0, 1, 1]),
            z=np.array([1.0, -1.0, 0.0]),
            m=np.array([1, 0, 1]),
            y=np.array([0.0, 1.0, 2.0]),
        )

    def test_absolute_value_column(self):
        ds = Dataset(
            x=np.array([-3.0]), a=np.array([0]), z=np.array([0.0]),
            m=np.array([0]), y=np.array([0.0]),
        )
        design = build_design(TermSpec(("1", "|x|")), ds)
        assert np.array_equal(design, np.array([[1.0, 3.0]]))

    def test_columns_follow_term_order(self):
        ds = self.make_dataset()
        design = build_design(TermSpec(("1", "x", "x^2", "a", "x*z", "m")), ds)
        expected = np.column_stack([
            np.ones(3), ds.x[:, 0], ds.x[:, 0] ** 2, ds.a, ds.x[:, 0] * ds.z[:, 0], ds.m,
        ])
        assert np.allclose(design, expected)

    def test_scalar_override_replaces_a_column(self):
        ds = self.make_dataset()
        design = build_design(TermSpec(("1", "a", "x*a")), ds, {"a": 1})
        assert np.allclose(design[:, 1], 1.0)
        assert np.allclose(design[:, 2], ds.x[:, 0])

    def test_vector_override(self):
        ds = self.make_dataset()
        zs = np.array([9.0, 8.0, 7.0])
        design = build_design(TermSpec(("1", "z")), ds, {"z": zs})
        assert np.allclose(design[:, 1], zs)

    def test_override_outside_support_rejected(self):
        ds = self.make_dataset()
        with pytest.raises(SchemaError):
            build_design(TermSpec(("1", "a")), ds, {"a": 2})

    def test_wrong_length_vector_override_rejected(self):
        ds = self.make_dataset()
        with pytest.raises(SchemaError):
            build_design(TermSpec(("1", "z")), ds, {"z": np.array([1.0, 2.0])})


class TestOls:
    def test_matches_normal_equations(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            design, response = random_problem(rng)
            fit = fit_ols(design, response)
            oracle = np.linalg.solve(design.T @ design, design.T @ response)
            assert np.max(np.abs(fit.coef - oracle)) < 1e-8

    def test_weights_match_row_replication(self):
        rng = np.random.default_rng(7)
        design, response = random_problem(rng, n=30)
        weights = rng.integers(1, 4, size=30).astype(float)
        rep = np.repeat(np.arange(30), weights.astype(int))
        fit_w = fit_ols(design, response, weights=weights)
        fit_r = fit_ols(design[rep], response[rep])
        assert np.max(np.abs(fit_w.coef - fit_r.coef)) < 1e-8

    def test_zero_weight_rows_are_dropped(self):
        rng = np.random.default_rng(8)
        design, response = random_problem(rng, n=40)
        weights = np.ones(40)
        weights[:10] = 0.0
        fit_w = fit_ols(design, response, weights=weights)
        fit_s = fit_ols(design[10:], response[10:])
        assert np.max(np.abs(fit_w.coef - fit_s.coef)) < 1e-8

    def test_rank_deficiency_raises(self):
        rng = np.random.default_rng(9)
        base = rng.normal(size=(50, 2))
        design = np.column_stack([np.ones(50), base, base[:, 0] + base[:, 1]])
        with pytest.raises(RankDeficient):
            fit_ols(design, rng.normal(size=50))

    def test_more_columns_than_rows_raises(self):
        rng = np.random.default_rng(10)
        with pytest.raises(RankDeficient):
            fit_ols(rng.normal(size=(3, 5)), rng.normal(size=3))

    def test_ridge_matches_closed_form(self):
        rng = np.random.default_rng(11)
        base = rng.normal(size=(50, 2))
        design = np.column_stack([np.ones(50), base, base[:, 0] + base[:, 1]])
        response = rng.normal(size=50)
        ridge = 0.5
        fit = fit_ols(design, response, ridge=ridge)
        k = design.shape[1]
        oracle = np.linalg.solve(design.T @ design + ridge * np.eye(k), design.T @ response)
        assert np.max(np.abs(fit.coef - oracle)) < 1e-8

    def test_predict_is_linear(self):
        rng = np.random.default_rng(12)
        design, response = random_problem(rng)
        fit = fit_ols(design, response)
        assert np.allclose(predict(fit, design), design @ fit.coef)


class TestLogistic:
    def oracle_coef(self, design, response):
        def neg_ll(beta):
            eta = design @ beta
            return float(np.sum(np.logaddexp(0.0, eta) - response * eta))

        start = np.zeros(design.shape[1])
        out = minimize(neg_ll, start, method="BFGS", options={"gtol": 1e-10, "maxiter": 500})
        return out.x

    def test_matches_direct_likelihood_maximization(self):
        rng = np.random.default_rng(321)
        worst = 0.0
        for _ in range(10):
            design, response = random_problem(rng, n=120, k=4, binary=True)
            fit = fit_logistic(design, response)
            assert fit.converged
            oracle = self.oracle_coef(design, response)
            worst = max(worst, float(np.max(np.abs(fit.coef - oracle))))
        assert worst < 1e-4

    def test_intercept_only_recovers_log_odds(self):
        response = np.array([1.0, 1.0, 1.0, 0.0])
        fit = fit_logistic(np.ones((4, 1)), response)
        assert abs(fit.coef[0] - np.log(3.0)) < 1e-8

    def test_saturated_fit_recovers_cell_fractions(self):
        # One binary covariate; fitted probabilities must equal cell fractions.
        g = np.array([0, 0, 0, 1, 1, 1, 1, 1], dtype=float)
        response = np.array([1, 0, 0, 1, 1, 1, 0, 1], dtype=float)
        design = np.column_stack([np.ones(8), g])
        fit = fit_logistic(design, response)
        p = predict(fit, design)
        assert abs(p[0] - 1.0 / 3.0) < 1e-6
        assert abs(p[-1] - 4.0 / 5.0) < 1e-6

    def test_binary_learner_rejects_weights(self):
        from mrcde.nuisance import get_learners

        rng = np.random.default_rng(13)
        design, response = random_problem(rng, n=40, binary=True)
        _, binary = get_learners("glm")
        with pytest.raises(SchemaError):
            binary.fit(design, response, weights=np.ones(40))

    def test_separation_raises(self):
        x = np.linspace(-2.0, 2.0, 40)
        design = np.column_stack([np.ones(40), x])
        response = (x > 0).astype(float)
        with pytest.raises(Separation):
            fit_logistic(design, response)

    def test_iteration_cap_raises_not_converged(self):
        rng = np.random.default_rng(14)
        design, response = random_problem(rng, n=200, binary=True)
        with pytest.raises(NotConverged):
            fit_logistic(design, response, max_iter=1, tol=1e-12)

    def test_non_binary_response_rejected(self):
        with pytest.raises(SchemaError):
            fit_logistic(np.ones((4, 1)), np.array([0.0, 0.5, 1.0, 1.0]))

    def test_predict_dimension_mismatch(self):
        rng = np.random.default_rng(15)
        design, response = random_problem(rng, binary=True)
        fit = fit_logistic(design, response)
        with pytest.raises(DimensionMismatch):
            predict(fit, design[:, :2])
