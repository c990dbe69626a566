# tests/test_optimum_oracle.py

import numpy as np
import pytest

from sampled_lm.models.oracle import SurrogateProblem
from sampled_lm.schemas.config import CriterionKind
from sampled_lm.services.optimum_oracle_service import (
    NonConvergenceError,
    OptimumOracleServiceError,
    optimum_oracle_service,
)
from sampled_lm.services.vocab_corpus_service import tv_distance

CLOSED_FORM_KINDS = [k for k in CriterionKind if k != CriterionKind.ce_nce]
CE_KINDS = [
    CriterionKind.ce, CriterionKind.ce_mcs, CriterionKind.ce_is, CriterionKind.ce_cps
]


def problem(kind, p, D=None, K=10, alpha=1.0, rival_scale=1.0):
    p = np.asarray(p, dtype=np.float64)
    D = np.full(p.size, 1.0 / p.size) if D is None else np.asarray(D, dtype=np.float64)
    return SurrogateProblem(
        kind=kind, p=p, D=D, K=K, alpha=alpha, rival_scale=rival_scale
    )


class TestClosedForm:
    def test_bce_mcs(self):
        # p = 0.5, K D = 1: q = p / (p + K D) = 1/3
        prob = problem(CriterionKind.bce_mcs, [0.5, 0.5], D=[0.01, 0.99], K=100)
        q = optimum_oracle_service.closed_form_optimum(prob)
        assert q[0] == pytest.approx(1.0 / 3.0)

    def test_bce_is_single_class(self):
        q = optimum_oracle_service.closed_form_optimum(
            problem(CriterionKind.bce_is, [1.0])
        )
        np.testing.assert_allclose(q, [0.5])

    def test_bce_cps_with_default_alpha(self):
        p = np.array([0.6, 0.3, 0.1])
        D = np.array([0.2, 0.3, 0.5])
        C, K = 3, 2
        prob = problem(CriterionKind.bce_cps, p, D=D, K=K, alpha=C / K)
        q = optimum_oracle_service.closed_form_optimum(prob)
        np.testing.assert_allclose(q, p / (p + C * D))

    @pytest.mark.parametrize(
        "kind", [CriterionKind.mse, CriterionKind.bce, CriterionKind.bce_nce]
    )
    def test_identity_kinds_return_p(self, kind):
        p = np.array([0.7, 0.2, 0.1])
        np.testing.assert_allclose(
            optimum_oracle_service.closed_form_optimum(problem(kind, p)), p
        )

    def test_mse_with_rival_scale(self):
        p = np.array([0.5, 0.3, 0.2])
        q = optimum_oracle_service.closed_form_optimum(
            problem(CriterionKind.mse, p, rival_scale=0.25)
        )
        np.testing.assert_allclose(q, p / (p + 0.25 * (1.0 - p)))

    def test_ce_mcs_canonical_scores(self):
        p = np.array([0.5, 0.3, 0.2])
        D = np.array([0.25, 0.25, 0.5])
        s = optimum_oracle_service.closed_form_optimum(
            problem(CriterionKind.ce_mcs, p, D=D)
        )
        np.testing.assert_allclose(s, np.log(p / D))

    @pytest.mark.parametrize(
        "kind", [CriterionKind.mse, CriterionKind.bce, CriterionKind.bce_nce]
    )
    def test_corrected_optimum_is_p(self, kind, rng):
        prob = optimum_oracle_service.random_problem(kind, 30, 5, rng)
        s, _ = optimum_oracle_service.closed_form_scores(prob)
        np.testing.assert_allclose(
            optimum_oracle_service.corrected_posterior(prob, s), prob.p, atol=1e-9
        )


class TestSurrogate:
    def test_bce_at_p(self):
        p = np.array([0.6, 0.3, 0.1])
        value = optimum_oracle_service.surrogate_value(problem(CriterionKind.bce, p), p)
        assert value == pytest.approx(np.sum(p * np.log(p) + (1 - p) * np.log(1 - p)))

    def test_mse_at_p(self):
        p = np.array([0.6, 0.3, 0.1])
        value = optimum_oracle_service.surrogate_value(problem(CriterionKind.mse, p), p)
        assert value == pytest.approx(-np.sum(p * (1 - p)))

    def test_ce_at_uniform_scores(self):
        p = np.array([0.6, 0.3, 0.1])
        value = optimum_oracle_service.surrogate_value(
            problem(CriterionKind.ce, p), np.zeros(3)
        )
        assert value == pytest.approx(-np.log(3))

    @pytest.mark.parametrize("kind", CE_KINDS)
    def test_ce_family_shift_invariance(self, kind, rng):
        prob = optimum_oracle_service.random_problem(kind, 8, 4, rng)
        s = rng.normal(size=8)
        a = optimum_oracle_service.surrogate_value(prob, s)
        b = optimum_oracle_service.surrogate_value(prob, s + 3.5)
        assert abs(a - b) < 1e-10

    def test_rejects_outputs_outside_activation_range(self):
        prob = problem(CriterionKind.bce, [0.5, 0.5])
        with pytest.raises(OptimumOracleServiceError, match="sigmoid outputs"):
            optimum_oracle_service.surrogate_value(prob, np.array([0.5, 1.0]))

    @pytest.mark.parametrize("kind", list(CriterionKind))
    def test_gradient_matches_finite_differences(self, kind, rng):
        prob = optimum_oracle_service.random_problem(kind, 6, 3, rng)
        s = rng.normal(size=6)
        grad = optimum_oracle_service.surrogate_gradient(prob, s)
        eps = 1e-6
        for c in range(6):
            e = np.zeros(6)
            e[c] = eps
            numeric = (
                optimum_oracle_service.surrogate_terms(prob, s + e)[0]
                - optimum_oracle_service.surrogate_terms(prob, s - e)[0]
            ) / (2 * eps)
            assert grad[c] == pytest.approx(numeric, abs=1e-6)


class TestNumericOptimum:
    def test_bce_two_classes(self):
        q = optimum_oracle_service.numeric_optimum(
            problem(CriterionKind.bce, [0.8, 0.2], K=0)
        )
        np.testing.assert_allclose(q, [0.8, 0.2], atol=1e-6)

    def test_bce_mcs_two_classes(self):
        prob = problem(CriterionKind.bce_mcs, [0.8, 0.2], D=[0.5, 0.5], K=10)
        q = optimum_oracle_service.numeric_optimum(prob)
        np.testing.assert_allclose(q, [0.8 / 5.8, 0.2 / 5.2], atol=1e-5)
        np.testing.assert_allclose(q, [0.13793, 0.03846], atol=1e-5)

    def test_ce_mcs_corrected_posterior(self):
        rng = np.random.default_rng(17)
        prob = optimum_oracle_service.random_problem(CriterionKind.ce_mcs, 50, 32, rng)
        s, _ = optimum_oracle_service.numeric_scores(prob)
        posterior = optimum_oracle_service.corrected_posterior(prob, s)
        assert tv_distance(posterior, prob.p) < 1e-4

    def test_deterministic(self, rng):
        prob = optimum_oracle_service.random_problem(CriterionKind.ce_is, 20, 4, rng)
        a, _ = optimum_oracle_service.numeric_scores(prob)
        b, _ = optimum_oracle_service.numeric_scores(prob)
        np.testing.assert_array_equal(a, b)

    def test_non_convergence_carries_residual(self, rng):
        prob = optimum_oracle_service.random_problem(CriterionKind.bce_mcs, 10, 5, rng)
        with pytest.raises(NonConvergenceError) as exc_info:
            optimum_oracle_service.numeric_scores(prob, max_iters=1)
        assert exc_info.value.residual > 0
        assert exc_info.value.scores.shape == (10,)
        assert "did not converge" in str(exc_info.value)

    def test_rejects_non_positive_tol(self):
        with pytest.raises(OptimumOracleServiceError, match="tol"):
            optimum_oracle_service.numeric_scores(
                problem(CriterionKind.ce, [0.5, 0.5]), tol=0
            )


class TestCompareOptima:
    @pytest.mark.parametrize("kind", list(CriterionKind))
    def test_uniform_problem(self, kind):
        report = optimum_oracle_service.compare_optima(
            problem(kind, np.full(5, 0.2), K=4)
        )
        assert report.feasible
        assert report.tv_distance < 1e-8

    @pytest.mark.parametrize("kind", CLOSED_FORM_KINDS)
    def test_closed_form_is_the_maximizer(self, kind):
        rng = np.random.default_rng(100 + list(CriterionKind).index(kind))
        for _ in range(20):
            prob = optimum_oracle_service.random_problem(kind, 50, 5, rng)
            report = optimum_oracle_service.compare_optima(prob)
            assert report.tv_distance < 1e-3
            assert report.stationarity_residual < 1e-6
            assert report.value_closed >= report.value_numeric - 1e-6

    def test_ce_nce_infeasible(self):
        prob = problem(CriterionKind.ce_nce, [0.9, 0.1], D=[0.5, 0.5], K=2)
        assert not optimum_oracle_service.is_feasible(prob)
        _, feasible = optimum_oracle_service.closed_form_scores(prob)
        assert not feasible

    def test_ce_nce_feasible(self):
        prob = problem(CriterionKind.ce_nce, [0.55, 0.45], D=[0.5, 0.5], K=2)
        report = optimum_oracle_service.compare_optima(prob)
        assert report.feasible
        assert report.converged
        assert report.numeric_residual < 1e-8
        assert report.tv_distance < 1e-4
        assert report.stationarity_residual < 1e-6
        g = report.q_numeric / (prob.K * prob.D + report.q_numeric)
        assert g[0] - g[1] == pytest.approx(np.log(0.55 / 0.45), abs=1e-6)

    def test_ce_nce_infeasible_reaches_constrained_maximizer(self):
        prob = problem(CriterionKind.ce_nce, [0.9, 0.1], D=[0.5, 0.5], K=2)
        report = optimum_oracle_service.compare_optima(prob)
        assert not report.feasible
        assert report.tv_distance is None
        assert report.converged
        assert report.numeric_residual < 1e-8

    def test_ce_nce_random_problems_converge(self):
        rng = np.random.default_rng(2024)
        for K in (5, 50):
            for _ in range(20):
                prob = optimum_oracle_service.random_problem(
                    CriterionKind.ce_nce, 50, K, rng
                )
                s, residual = optimum_oracle_service.numeric_scores(prob)
                assert residual < 1e-8
                assert optimum_oracle_service.stationarity_residual(
                    prob, s
                ) < 1e-6

    def test_stalled_maximizer_is_reported_not_raised(self, rng):
        prob = optimum_oracle_service.random_problem(CriterionKind.bce_mcs, 10, 5, rng)
        report = optimum_oracle_service.compare_optima(prob, max_iters=1)
        assert not report.converged
        assert report.numeric_residual > 0
        assert report.q_numeric.shape == (10,)


class TestValidation:
    def test_too_many_classes(self):
        with pytest.raises(OptimumOracleServiceError, match="C <= 200"):
            optimum_oracle_service.validate_problem(
                problem(CriterionKind.ce, np.full(201, 1 / 201))
            )

    def test_p_must_sum_to_one(self):
        with pytest.raises(OptimumOracleServiceError, match="sum to 1"):
            optimum_oracle_service.validate_problem(
                problem(CriterionKind.ce, [0.5, 0.4])
            )

    def test_sampled_kind_needs_k(self):
        with pytest.raises(OptimumOracleServiceError, match="K must be at least 1"):
            optimum_oracle_service.validate_problem(
                problem(CriterionKind.ce_mcs, [0.5, 0.5], K=0)
            )

    def test_cps_needs_alpha(self):
        with pytest.raises(OptimumOracleServiceError, match="alpha"):
            optimum_oracle_service.validate_problem(
                problem(CriterionKind.ce_cps, [0.5, 0.5], alpha=0.0)
            )
