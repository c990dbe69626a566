# sampled_lm/services/criteria_service.py

import logging
from typing import Tuple, Union

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from sampled_lm.models.criteria import FullScores, LossGrad, ScoreBundle
from sampled_lm.schemas.config import CriterionConfig, CriterionKind

logger = logging.getLogger(__name__)

# CE-NCE ratio g = q / (q + K D) is kept away from {0, 1}
NCE_RATIO_CLAMP = 1e-6


class CriteriaServiceError(Exception):
    """Exception raised when a criterion cannot be evaluated."""

    pass


def activate(kind: CriterionKind, s: np.ndarray) -> np.ndarray:
    """Model output q for raw score s under the kind's activation contract."""
    if kind.activation == "sigmoid":
        return expit(s)
    if kind.activation == "exp":
        return np.exp(s)
    return np.asarray(s, dtype=np.float64)


def nce_ratio(s: np.ndarray, log_kd: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """g = q / (q + K D) with q = exp(s), clamped, and dg/ds (zero where clamped)."""
    g = expit(s - log_kd)
    slope = g * (1.0 - g)
    clamped = (g < NCE_RATIO_CLAMP) | (g > 1.0 - NCE_RATIO_CLAMP)
    g = np.clip(g, NCE_RATIO_CLAMP, 1.0 - NCE_RATIO_CLAMP)
    return g, np.where(clamped, 0.0, slope)


class CriteriaService:
    """Service for criterion values and analytic gradients (all maximized)."""

    def loss_full(
        self,
        kind: CriterionKind,
        scores_all: np.ndarray,
        targets: np.ndarray,
        rival_scale: float = 1.0,
    ) -> LossGrad:
        """
        Evaluate an unsampled criterion over the full vocabulary.

        Args:
            kind: One of MSE, BCE, CE
            scores_all: Raw scores, shape (B, C)
            targets: Target ids, shape (B,)
            rival_scale: MSE weight on the c != c_n terms

        Returns:
            LossGrad: batch-mean value and gradient w.r.t. every score
        """
        if kind.is_sampled:
            raise CriteriaServiceError(f"{kind.value} is a sampled criterion")
        s = np.asarray(scores_all, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise CriteriaServiceError("non-finite scores")
        targets = np.asarray(targets, dtype=np.int64)
        B = targets.size
        rows = np.arange(B)

        if kind == CriterionKind.mse:
            q = expit(s)
            delta = np.zeros_like(q)
            delta[rows, targets] = 1.0
            weight = np.full_like(q, rival_scale)
            weight[rows, targets] = 1.0
            diff = q - delta
            per_position = -np.sum(weight * diff * diff, axis=1)
            grad = -2.0 * weight * diff * q * (1.0 - q)
        elif kind == CriterionKind.bce:
            log_neg = log_expit(-s)
            per_position = (
                log_neg.sum(axis=1)
                - log_neg[rows, targets]
                + log_expit(s[rows, targets])
            )
            grad = -expit(s)
            grad[rows, targets] = expit(-s[rows, targets])
        else:
            lse = logsumexp(s, axis=1)
            per_position = s[rows, targets] - lse
            grad = -np.exp(s - lse[:, None])
            grad[rows, targets] += 1.0

        grad /= B
        return LossGrad(
            value=float(per_position.mean()),
            d_s_target=grad[rows, targets].copy(),
            d_s_samples=grad,
        )

    def loss_sampled(self, config: CriterionConfig, bundle: ScoreBundle) -> LossGrad:
        """
        Evaluate a sampled criterion on target scores and batch-shared samples.

        Sums run over the K samples only; the target enters through its own
        term unless ``include_target_in_samples`` adds it to a CE normalizer.
        """
        kind = config.kind
        if not kind.is_sampled:
            raise CriteriaServiceError(f"{kind.value} is not a sampled criterion")
        K = bundle.K
        if K < 1:
            raise CriteriaServiceError("K must be at least 1 for sampled criteria")
        if config.K is not None and config.K != K:
            raise CriteriaServiceError(
                f"Bundle holds {K} samples but the criterion expects K={config.K}"
            )
        s_n = np.asarray(bundle.s_target, dtype=np.float64)
        S = np.asarray(bundle.s_samples, dtype=np.float64)
        if not (np.all(np.isfinite(s_n)) and np.all(np.isfinite(S))):
            raise CriteriaServiceError("non-finite scores")
        if kind.sampling in ("is", "nce"):
            if not (
                np.all(np.isfinite(bundle.sample_noise_logp))
                and np.all(np.isfinite(bundle.target_noise_logp))
            ):
                raise CriteriaServiceError(
                    "noise probability D(c) = 0 for a scored class"
                )

        log_k = np.log(K)
        log_kd_n = log_k + np.asarray(bundle.target_noise_logp, dtype=np.float64)
        log_kd_k = log_k + np.asarray(bundle.sample_noise_logp, dtype=np.float64)
        alpha = config.alpha if config.alpha is not None else 1.0

        if kind.family == "bce":
            per_position, d_n, d_k = self._bce_sampled(
                kind, s_n, S, log_kd_n, log_kd_k, alpha
            )
        else:
            per_position, d_n, d_k = self._ce_sampled(
                kind,
                s_n,
                S,
                log_kd_n,
                log_kd_k,
                alpha,
                config.include_target_in_samples,
            )

        B = s_n.size
        return LossGrad(
            value=float(per_position.mean()), d_s_target=d_n / B, d_s_samples=d_k / B
        )

    def _bce_sampled(self, kind, s_n, S, log_kd_n, log_kd_k, alpha):
        if kind == CriterionKind.bce_nce:
            u_n = s_n - log_kd_n
            U = S - log_kd_k[None, :]
            per_position = log_expit(u_n) + log_expit(-U).sum(axis=1)
            return per_position, expit(-u_n), -expit(U)

        if kind == CriterionKind.bce_mcs:
            weight = np.ones(S.shape[1])
        elif kind == CriterionKind.bce_is:
            weight = np.exp(-log_kd_k)
        else:
            weight = np.full(S.shape[1], alpha)
        per_position = log_expit(s_n) + (log_expit(-S) * weight[None, :]).sum(axis=1)
        return per_position, expit(-s_n), -expit(S) * weight[None, :]

    def _ce_sampled(self, kind, s_n, S, log_kd_n, log_kd_k, alpha, include_target):
        log_scale = 0.0
        if kind == CriterionKind.ce_nce:
            numerator, d_numerator = nce_ratio(s_n, log_kd_n)
            T, dT = nce_ratio(S, log_kd_k[None, :])
            t_n, dt_n = numerator, d_numerator
        else:
            numerator, d_numerator = s_n, np.ones_like(s_n)
            T, dT = S, np.ones_like(S)
            t_n, dt_n = s_n, np.ones_like(s_n)
            if kind == CriterionKind.ce_is:
                T = S - log_kd_k[None, :]
                t_n = s_n - log_kd_n
            elif kind == CriterionKind.ce_cps:
                log_scale = np.log(alpha)

        if include_target:
            terms = np.concatenate((t_n[:, None], T), axis=1)
        else:
            terms = T
        lse = logsumexp(terms, axis=1)
        weights = np.exp(terms - lse[:, None])

        per_position = numerator - log_scale - lse
        if include_target:
            d_n = d_numerator - weights[:, 0] * dt_n
            d_k = -weights[:, 1:] * dT
        else:
            d_n = d_numerator
            d_k = -weights * dT
        return per_position, d_n, d_k

    def evaluate(
        self, config: CriterionConfig, scores: Union[ScoreBundle, FullScores]
    ) -> LossGrad:
        """Dispatch to the full or sampled evaluation."""
        if isinstance(scores, FullScores):
            return self.loss_full(
                config.kind, scores.scores_all, scores.targets, config.rival_scale
            )
        return self.loss_sampled(config, scores)

    def grad_check(
        self,
        config: CriterionConfig,
        bundle: Union[ScoreBundle, FullScores],
        epsilon: float = 1e-5,
    ) -> float:
        """
        Compare analytic gradients with central finite differences.

        Returns:
            float: max over coordinates of |analytic - numeric| / max(1, |analytic|)
        """
        if not 1e-7 <= epsilon <= 1e-3:
            raise CriteriaServiceError("epsilon must lie in [1e-7, 1e-3]")
        analytic = self.evaluate(config, bundle)

        if isinstance(bundle, FullScores):
            blocks = {"scores_all": (bundle.scores_all, analytic.d_s_samples)}
        else:
            blocks = {
                "s_target": (bundle.s_target, analytic.d_s_target),
                "s_samples": (bundle.s_samples, analytic.d_s_samples),
            }

        worst = 0.0
        for name, (values, grad) in blocks.items():
            base = np.asarray(values, dtype=np.float64)
            for index in np.ndindex(base.shape):
                plus, minus = base.copy(), base.copy()
                plus[index] += epsilon
                minus[index] -= epsilon
                f_plus = self.evaluate(config, _replace(bundle, name, plus)).value
                f_minus = self.evaluate(config, _replace(bundle, name, minus)).value
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                err = abs(grad[index] - numeric) / max(1.0, abs(grad[index]))
                worst = max(worst, err)
        return worst


def _replace(bundle, name: str, values: np.ndarray):
    if isinstance(bundle, FullScores):
        return FullScores(scores_all=values, targets=bundle.targets)
    fields = {
        "s_target": bundle.s_target,
        "s_samples": bundle.s_samples,
        "target_noise_logp": bundle.target_noise_logp,
        "sample_noise_logp": bundle.sample_noise_logp,
    }
    fields[name] = values
    return ScoreBundle(**fields)


# Global instance
criteria_service = CriteriaService()
