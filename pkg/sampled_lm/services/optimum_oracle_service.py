# sampled_lm/services/optimum_oracle_service.py

import logging
from functools import partial
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import expit, log_expit, logit, logsumexp

from sampled_lm.core.config import settings
from sampled_lm.models.oracle import OptimumReport, SurrogateProblem
from sampled_lm.schemas.config import CriterionKind
from sampled_lm.services.correction_service import correction_service
from sampled_lm.services.vocab_corpus_service import tv_distance

logger = logging.getLogger(__name__)

SCORE_BOUND = 60.0
CURVATURE_FLOOR = 1e-12
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 60
MIN_GAIN = 1e-15
# CE-NCE needs exp(g) proportional to p / D with g in (0, 1)
NCE_RATIO_SPREAD = 1.0
NCE_RATIO_EPS = 1e-6
NCE_LO, NCE_HI = NCE_RATIO_EPS, 1.0 - NCE_RATIO_EPS


class OptimumOracleServiceError(Exception):
    """Exception raised for invalid surrogate problems."""

    pass


class NonConvergenceError(OptimumOracleServiceError):
    """The numeric maximizer stopped before reaching the tolerance."""

    def __init__(
        self, residual: float, iterations: int, scores: Optional[np.ndarray] = None
    ):
        self.residual = residual
        self.iterations = iterations
        self.scores = scores
        super().__init__(
            f"numeric optimum did not converge: residual {residual:.3e} "
            f"after {iterations} iterations"
        )


def _projected_residual(
    x: np.ndarray, grad: np.ndarray, lo: float, hi: float
) -> float:
    """Sup-norm of the projected gradient; zero at a box-constrained maximizer."""
    return float(np.max(np.abs(np.clip(x + grad, lo, hi) - x)))


def _armijo_step(
    evaluate: Callable[[np.ndarray], tuple],
    x: np.ndarray,
    value: float,
    grad: np.ndarray,
    direction: np.ndarray,
    lo: float,
    hi: float,
) -> Optional[Tuple[np.ndarray, tuple]]:
    """Backtrack along the projection arc; None when every trial step loses."""
    t = 1.0
    slack = 1e-13 * (1.0 + abs(value))
    for _ in range(MAX_BACKTRACKS):
        candidate = np.clip(x + t * direction, lo, hi)
        terms = evaluate(candidate)
        gain = ARMIJO_C * max(float(grad @ (candidate - x)), 0.0)
        if terms[0] >= value + gain - slack:
            return candidate, terms
        t *= 0.5
    return None


def _bce_weights(problem: SurrogateProblem) -> Tuple[np.ndarray, np.ndarray]:
    """(a, b) of the surrogate sum_c a_c log sigma(x_c) + b_c log sigma(-x_c)."""
    p, D, K = problem.p, problem.D, problem.K
    kind = problem.kind
    if kind == CriterionKind.bce:
        return p, 1.0 - p
    if kind in (CriterionKind.bce_mcs, CriterionKind.bce_nce):
        return p, K * D
    if kind == CriterionKind.bce_is:
        return p, np.ones_like(p)
    return p, problem.alpha * K * D  # bce-cps


def _bce_shift(problem: SurrogateProblem) -> np.ndarray:
    """BCE-NCE is a plain logistic surrogate in x = s - log(K D)."""
    if problem.kind == CriterionKind.bce_nce:
        return np.log(problem.K * problem.D)
    return np.zeros_like(problem.p)


def _ce_log_weight(problem: SurrogateProblem) -> Tuple[np.ndarray, float]:
    """Per-class log weight and constant of the CE-family normalizer."""
    kind, D, K = problem.kind, problem.D, problem.K
    if kind in (CriterionKind.ce, CriterionKind.ce_is):
        return np.zeros_like(D), 0.0
    if kind == CriterionKind.ce_cps:
        return np.log(D), float(np.log(problem.alpha * K))
    return np.log(D), float(np.log(K))  # ce-mcs, ce-nce


class OptimumOracleService:
    """Service comparing closed-form optima with numerically maximized surrogates."""

    def validate_problem(self, problem: SurrogateProblem) -> None:
        p, D = np.asarray(problem.p), np.asarray(problem.D)
        if p.ndim != 1 or p.shape != D.shape:
            raise OptimumOracleServiceError("p and D must be vectors of equal length")
        if problem.C > settings.ORACLE_MAX_CLASSES:
            raise OptimumOracleServiceError(
                f"oracle runs at C <= {settings.ORACLE_MAX_CLASSES}, got {problem.C}"
            )
        if np.any(p <= 0) or np.any(D <= 0):
            raise OptimumOracleServiceError("p and D must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-9 or abs(D.sum() - 1.0) > 1e-9:
            raise OptimumOracleServiceError("p and D must sum to 1")
        if problem.kind.is_sampled and problem.K < 1:
            raise OptimumOracleServiceError("K must be at least 1")
        if problem.kind in (CriterionKind.bce_cps, CriterionKind.ce_cps):
            if not problem.alpha > 0:
                raise OptimumOracleServiceError("alpha must be positive")

    # -- surrogate in s-space -------------------------------------------------

    def surrogate_terms(
        self, problem: SurrogateProblem, s: np.ndarray
    ) -> Tuple[float, np.ndarray, np.ndarray]:
        """Value, gradient and Hessian diagonal of the surrogate at raw scores s."""
        kind, p = problem.kind, problem.p
        s = np.asarray(s, dtype=np.float64)

        if kind == CriterionKind.mse:
            rho = problem.rival_scale
            q = expit(s)
            value = -np.sum(p * (q - 1.0) ** 2 + rho * (1.0 - p) * q * q)
            dq = q * (1.0 - q)
            grad = -2.0 * (p * (q - 1.0) + rho * (1.0 - p) * q) * dq
            # Gauss-Newton curvature
            hess = -2.0 * (p + rho * (1.0 - p)) * dq * dq
            return float(value), grad, hess

        if kind.family == "bce":
            a, b = _bce_weights(problem)
            x = s - _bce_shift(problem)
            q = expit(x)
            value = np.sum(a * log_expit(x) + b * log_expit(-x))
            grad = a - (a + b) * q
            hess = -(a + b) * q * (1.0 - q)
            return float(value), grad, hess

        log_w, const = _ce_log_weight(problem)
        if kind == CriterionKind.ce_nce:
            g = expit(s - np.log(problem.K * problem.D))
            slope = g * (1.0 - g)
            t = g + log_w
            lse = logsumexp(t)
            pi = np.exp(t - lse)
            value = np.sum(p * g) - const - lse
            grad = (p - pi) * slope
            hess = -pi * (1.0 - pi) * slope**2 + (p - pi) * slope * (1.0 - 2.0 * g)
            return float(value), grad, hess

        t = s + log_w
        lse = logsumexp(t)
        pi = np.exp(t - lse)
        value = np.sum(p * s) - const - lse
        return float(value), p - pi, -pi * (1.0 - pi)

    def scores_from_outputs(self, kind: CriterionKind, q: np.ndarray) -> np.ndarray:
        """Invert the activation contract; outputs outside its range are an error."""
        q = np.asarray(q, dtype=np.float64)
        if kind.activation == "sigmoid":
            if np.any(q <= 0) or np.any(q >= 1):
                raise OptimumOracleServiceError("sigmoid outputs must lie in (0, 1)")
            return logit(q)
        if kind.activation == "exp":
            if np.any(q <= 0):
                raise OptimumOracleServiceError("exp outputs must be positive")
            return np.log(q)
        if not np.all(np.isfinite(q)):
            raise OptimumOracleServiceError("scores must be finite")
        return q

    def outputs_from_scores(self, kind: CriterionKind, s: np.ndarray) -> np.ndarray:
        if kind.activation == "sigmoid":
            return expit(s)
        if kind.activation == "exp":
            return np.exp(s)
        return np.asarray(s, dtype=np.float64)

    def surrogate_value(self, problem: SurrogateProblem, q_vector: np.ndarray) -> float:
        """Infinite-sample surrogate at outputs q (raw scores for the CE family)."""
        self.validate_problem(problem)
        s = self.scores_from_outputs(problem.kind, q_vector)
        return self.surrogate_terms(problem, s)[0]

    def surrogate_gradient(
        self, problem: SurrogateProblem, s: np.ndarray
    ) -> np.ndarray:
        """Analytic gradient of the surrogate with respect to raw scores."""
        return self.surrogate_terms(problem, s)[1]

    # -- closed form ----------------------------------------------------------

    def is_feasible(self, problem: SurrogateProblem) -> bool:
        """CE-NCE optimum exists iff max(p/D) / min(p/D) < e; always true otherwise."""
        if problem.kind != CriterionKind.ce_nce:
            return True
        r = np.log(problem.p) - np.log(problem.D)
        return bool(r.max() - r.min() < NCE_RATIO_SPREAD)

    def closed_form_scores(self, problem: SurrogateProblem) -> Tuple[np.ndarray, bool]:
        """Closed-form optimum as raw scores, plus the feasibility flag."""
        kind, p, D, K = problem.kind, problem.p, problem.D, problem.K
        log_p = np.log(p)

        if kind == CriterionKind.mse:
            s = log_p - np.log(problem.rival_scale) - np.log1p(-p)
        elif kind == CriterionKind.bce:
            s = log_p - np.log1p(-p)
        elif kind.family == "bce":
            a, b = _bce_weights(problem)
            # sigma(x) = a / (a + b)
            s = _bce_shift(problem) + log_p - np.log(b)
        elif kind in (CriterionKind.ce, CriterionKind.ce_is):
            s = log_p.copy()
        elif kind in (CriterionKind.ce_mcs, CriterionKind.ce_cps):
            s = log_p - np.log(D)
        else:
            r = log_p - np.log(D)
            g = r - 0.5 * (r.max() + r.min()) + 0.5
            feasible = self.is_feasible(problem)
            if not feasible:
                logger.warning(
                    "ce-nce optimum infeasible: log ratio spread %.3f exceeds 1",
                    r.max() - r.min(),
                )
                g = np.clip(g, NCE_LO, NCE_HI)
            s = np.log(K * D) + logit(g)
            return np.clip(s, -SCORE_BOUND, SCORE_BOUND), feasible
        return np.clip(s, -SCORE_BOUND, SCORE_BOUND), True

    def closed_form_optimum(self, problem: SurrogateProblem) -> np.ndarray:
        """Closed-form optimum: q for sigmoid/exp kinds, canonical scores for CE."""
        self.validate_problem(problem)
        kind, p = problem.kind, problem.p
        if kind in (CriterionKind.bce, CriterionKind.bce_nce) or (
            kind == CriterionKind.mse and problem.rival_scale == 1.0
        ):
            return p.copy()
        if kind.family == "bce":
            a, b = _bce_weights(problem)
            return a / (a + b)
        if kind == CriterionKind.mse:
            rho = problem.rival_scale
            return p / (p + rho * (1.0 - p))
        s, _ = self.closed_form_scores(problem)
        return self.outputs_from_scores(kind, s)

    # -- numeric optimum ------------------------------------------------------

    def _nce_terms(
        self, problem: SurrogateProblem, g: np.ndarray
    ) -> Tuple[float, np.ndarray, np.ndarray]:
        """CE-NCE surrogate in g = sigma(s - log(K D)): value, gradient, softmax."""
        t = g + np.log(problem.D)
        lse = logsumexp(t)
        pi = np.exp(t - lse)
        value = float(np.sum(problem.p * g) - np.log(problem.K) - lse)
        return value, problem.p - pi, pi

    def stationarity_residual(self, problem: SurrogateProblem, s: np.ndarray) -> float:
        """
        First-order optimality measure at raw scores s.

        CE-NCE is measured by the projected gradient in g-space on
        [NCE_LO, NCE_HI], which vanishes at the constrained maximizer of an
        infeasible problem. Every other kind uses the gradient sup-norm.
        """
        s = np.asarray(s, dtype=np.float64)
        if problem.kind == CriterionKind.ce_nce:
            g = expit(s - np.log(problem.K * problem.D))
            _, grad, _ = self._nce_terms(problem, g)
            return _projected_residual(g, grad, NCE_LO, NCE_HI)
        return float(np.max(np.abs(self.surrogate_terms(problem, s)[1])))

    def _score_ascent(
        self, problem: SurrogateProblem, tol: float, max_iters: int
    ) -> Tuple[np.ndarray, float, int, bool]:
        """Diagonally preconditioned projected ascent in s-space from s = 0."""
        evaluate = partial(self.surrogate_terms, problem)
        s = np.zeros(problem.C)
        value, grad, hess = evaluate(s)
        residual = float(np.max(np.abs(grad)))
        # relative to the starting gradient for badly scaled surrogates
        threshold = tol * max(1.0, residual)

        for iteration in range(max_iters):
            direction = grad / np.maximum(np.abs(hess), CURVATURE_FLOOR)
            step = np.clip(s + direction, -SCORE_BOUND, SCORE_BOUND) - s
            negligible = float(grad @ step) <= MIN_GAIN * (1.0 + abs(value))
            if residual < threshold and (np.max(np.abs(step)) < 1e-6 or negligible):
                return s, residual, iteration, True
            accepted = _armijo_step(
                evaluate, s, value, grad, direction, -SCORE_BOUND, SCORE_BOUND
            )
            if accepted is None:
                return s, residual, iteration, residual < threshold
            s, (value, grad, hess) = accepted
            residual = float(np.max(np.abs(grad)))
        return s, residual, max_iters, residual < threshold

    @staticmethod
    def _nce_newton_direction(
        g: np.ndarray, grad: np.ndarray, pi: np.ndarray, residual: float
    ) -> np.ndarray:
        """
        Newton step on the free coordinates, plain gradient on the bound ones.

        The free block of the negated Hessian is diag(pi) - pi pi^T; its
        Sherman-Morrison inverse divides by the softmax mass held at the bounds.
        """
        margin = min(1e-3, residual)
        at_bound = ((g - NCE_LO <= margin) & (grad < 0)) | (
            (NCE_HI - g <= margin) & (grad > 0)
        )
        free = ~at_bound
        direction = grad.copy()
        step = grad[free] / pi[free]
        bound_mass = float(pi[at_bound].sum())
        if bound_mass > 0:
            step = step + float(grad[free].sum()) / bound_mass
        direction[free] = step
        return direction

    def _nce_ascent(
        self, problem: SurrogateProblem, tol: float, max_iters: int
    ) -> Tuple[np.ndarray, float, int, bool]:
        """
        Projected Newton ascent for CE-NCE in g-space.

        The surrogate is concave in g on the box [NCE_LO, NCE_HI], unlike in s
        where its shift-flat valley is curved by the sigmoid. A rejected Newton
        step falls back to the 1/pi scaled projected gradient.
        """
        evaluate = partial(self._nce_terms, problem)
        g = np.full(problem.C, 0.5)
        value, grad, pi = evaluate(g)
        residual = _projected_residual(g, grad, NCE_LO, NCE_HI)

        for iteration in range(max_iters):
            if residual < tol:
                return self._nce_scores(problem, g), residual, iteration, True
            accepted = None
            for direction in (
                self._nce_newton_direction(g, grad, pi, residual),
                grad / pi,
            ):
                accepted = _armijo_step(
                    evaluate, g, value, grad, direction, NCE_LO, NCE_HI
                )
                if accepted is not None:
                    break
            if accepted is None:
                return self._nce_scores(problem, g), residual, iteration, False
            g, (value, grad, pi) = accepted
            residual = _projected_residual(g, grad, NCE_LO, NCE_HI)
        converged = residual < tol
        return self._nce_scores(problem, g), residual, max_iters, converged

    @staticmethod
    def _nce_scores(problem: SurrogateProblem, g: np.ndarray) -> np.ndarray:
        s = np.log(problem.K * problem.D) + logit(g)
        return np.clip(s, -SCORE_BOUND, SCORE_BOUND)

    def _ascend(
        self,
        problem: SurrogateProblem,
        tol: Optional[float],
        max_iters: Optional[int],
    ) -> Tuple[np.ndarray, float, int, bool]:
        tol = settings.ORACLE_TOLERANCE if tol is None else tol
        max_iters = settings.ORACLE_MAX_ITERS if max_iters is None else max_iters
        if tol <= 0:
            raise OptimumOracleServiceError("tol must be positive")
        if problem.kind == CriterionKind.ce_nce:
            return self._nce_ascent(problem, tol, max_iters)
        return self._score_ascent(problem, tol, max_iters)

    def numeric_scores(
        self,
        problem: SurrogateProblem,
        tol: Optional[float] = None,
        max_iters: Optional[int] = None,
    ) -> Tuple[np.ndarray, float]:
        """
        Maximize the surrogate numerically, independent of the closed forms.

        Most kinds use diagonally preconditioned projected ascent in s-space
        with Armijo backtracking, stopping once the gradient sup-norm is below
        ``tol`` (scaled by the starting gradient when that exceeds 1) and the
        next step gains nothing. CE-NCE runs a projected Newton method on
        g = sigma(s - log(K D)) and stops on the projected gradient.

        Returns:
            (scores, residual) with residual as in ``stationarity_residual``

        Raises:
            NonConvergenceError: if the tolerance is not reached
        """
        s, residual, iterations, converged = self._ascend(problem, tol, max_iters)
        if not converged:
            raise NonConvergenceError(residual, iterations, s)
        return s, residual

    def numeric_optimum(
        self,
        problem: SurrogateProblem,
        tol: Optional[float] = None,
        max_iters: Optional[int] = None,
    ) -> np.ndarray:
        """Numerically maximized outputs (raw scores for the CE family)."""
        self.validate_problem(problem)
        s, _ = self.numeric_scores(problem, tol, max_iters)
        return self.outputs_from_scores(problem.kind, s)

    # -- comparison -----------------------------------------------------------

    def corrected_posterior(
        self, problem: SurrogateProblem, s: np.ndarray
    ) -> np.ndarray:
        posterior = correction_service.normalize_log_scores(
            correction_service.log_unnormalized_from_scores(
                problem.kind,
                s,
                np.log(problem.D),
                problem.K,
                problem.alpha,
                problem.rival_scale,
            )
        )
        return posterior.p

    def compare_optima(
        self,
        problem: SurrogateProblem,
        tol: Optional[float] = None,
        max_iters: Optional[int] = None,
    ) -> OptimumReport:
        """
        Closed form versus numeric maximizer, compared on corrected posteriors.

        A maximizer that stops short of ``tol`` is reported with
        ``converged=False`` and its last iterate rather than raised.
        """
        self.validate_problem(problem)
        s_closed, feasible = self.closed_form_scores(problem)
        s_numeric, numeric_residual, iterations, converged = self._ascend(
            problem, tol, max_iters
        )
        if not converged:
            logger.warning(
                "%s numeric optimum stopped at residual %.3e after %d iterations",
                problem.kind.value,
                numeric_residual,
                iterations,
            )

        value_closed = self.surrogate_terms(problem, s_closed)[0]
        value_numeric = self.surrogate_terms(problem, s_numeric)[0]

        tv: Optional[float] = None
        if feasible:
            tv = tv_distance(
                self.corrected_posterior(problem, s_closed),
                self.corrected_posterior(problem, s_numeric),
            )
        return OptimumReport(
            q_closed=self.outputs_from_scores(problem.kind, s_closed),
            q_numeric=self.outputs_from_scores(problem.kind, s_numeric),
            tv_distance=tv,
            stationarity_residual=self.stationarity_residual(problem, s_closed),
            numeric_residual=numeric_residual,
            feasible=feasible,
            value_closed=value_closed,
            value_numeric=value_numeric,
            converged=converged,
        )

    def random_problem(
        self,
        kind: CriterionKind,
        C: int,
        K: int,
        rng: np.random.Generator,
        alpha: Optional[float] = None,
        rival_scale: float = 1.0,
    ) -> SurrogateProblem:
        """Random interior problem: Dirichlet(1) p and D, floored at 1e-4 / C."""
        p = rng.dirichlet(np.ones(C)) + 1e-4 / C
        D = rng.dirichlet(np.ones(C)) + 1e-4 / C
        return SurrogateProblem(
            kind=kind,
            p=p / p.sum(),
            D=D / D.sum(),
            K=K,
            alpha=alpha if alpha is not None else C / K,
            rival_scale=rival_scale,
        )


# Global instance
optimum_oracle_service = OptimumOracleService()
