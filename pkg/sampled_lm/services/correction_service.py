"""Correction from raw model outputs to class posteriors."""

from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from sampled_lm.models.lm import ModelParams
from sampled_lm.models.oracle import PosteriorEstimate
from sampled_lm.schemas.config import CriterionKind
from sampled_lm.services.model_service import model_service

logger = logging.getLogger(__name__)

SATURATION_CLAMP = 1e-12

_RATIO_KINDS = (
    CriterionKind.mse,
    CriterionKind.bce_mcs,
    CriterionKind.bce_is,
    CriterionKind.bce_cps,
)
_NEEDS_NOISE = (
    CriterionKind.bce_mcs,
    CriterionKind.bce_cps,
    CriterionKind.ce_mcs,
    CriterionKind.ce_cps,
    CriterionKind.ce_nce,
)


class CorrectionServiceError(Exception):
    """Exception raised when outputs cannot be corrected."""

    pass


class SaturatedOutputError(CorrectionServiceError):
    """A sigmoid output reached 0 or 1 where the correction needs q / (1 - q)."""

    pass


def _log_k(K: Optional[int]) -> float:
    if K is None or K < 1:
        raise CorrectionServiceError("K is required to correct sampled criteria")
    return float(np.log(K))


def _log_alpha(alpha: Optional[float]) -> float:
    if alpha is None or alpha <= 0:
        raise CorrectionServiceError("alpha is required to correct CPS criteria")
    return float(np.log(alpha))


class CorrectionService:
    """Service mapping criterion outputs to unnormalized scores u and posteriors."""

    def _noise_offset(
        self,
        kind: CriterionKind,
        log_D: Optional[np.ndarray],
        K: Optional[int],
        alpha: Optional[float],
    ) -> np.ndarray:
        """Additive log term of the ratio / weighted-softmax corrections."""
        if kind in _NEEDS_NOISE and log_D is None:
            raise CorrectionServiceError(f"{kind.value} correction needs the noise pmf")
        if kind == CriterionKind.bce_mcs:
            return _log_k(K) + log_D
        if kind == CriterionKind.bce_cps:
            return _log_alpha(alpha) + _log_k(K) + log_D
        if kind in (CriterionKind.ce_mcs, CriterionKind.ce_cps, CriterionKind.ce_nce):
            return np.asarray(log_D, dtype=np.float64)
        return np.zeros(1)

    def log_unnormalized_scores(
        self,
        kind: CriterionKind,
        outputs: np.ndarray,
        log_D: Optional[np.ndarray] = None,
        K: Optional[int] = None,
        alpha: Optional[float] = None,
        rival_scale: float = 1.0,
    ) -> np.ndarray:
        """
        log u for activated outputs (q for sigmoid/exp kinds, s for the CE family).

        Sigmoid outputs are clamped into [1e-12, 1 - 1e-12]; ``log_D`` broadcasts
        against the trailing class axis of ``outputs``.
        """
        x = np.asarray(outputs, dtype=np.float64)
        offset = self._noise_offset(kind, log_D, K, alpha)

        if kind.activation == "identity":
            return offset + x

        if kind.activation == "sigmoid":
            q = np.clip(x, SATURATION_CLAMP, 1.0 - SATURATION_CLAMP)
        else:
            if np.any(x <= 0):
                raise CorrectionServiceError("exp outputs must be positive")
            q = x
        log_q = np.log(q)

        if kind == CriterionKind.ce_nce:
            return offset + expit(log_q - _log_k(K) - log_D)
        if kind == CriterionKind.mse:
            if rival_scale == 1.0:
                return log_q
            log_rho = np.log(rival_scale)
            return log_rho + log_q - np.log1p(-q + rival_scale * q)
        if kind in _RATIO_KINDS:
            return offset + log_q - np.log1p(-q)
        return log_q

    def log_unnormalized_from_scores(
        self,
        kind: CriterionKind,
        scores: np.ndarray,
        log_D: Optional[np.ndarray] = None,
        K: Optional[int] = None,
        alpha: Optional[float] = None,
        rival_scale: float = 1.0,
    ) -> np.ndarray:
        """log u computed directly from raw scores, exact where sigmoid saturates."""
        s = np.asarray(scores, dtype=np.float64)
        offset = self._noise_offset(kind, log_D, K, alpha)

        if kind.family == "ce" and kind != CriterionKind.ce_nce:
            return offset + s
        if kind == CriterionKind.ce_nce:
            return offset + expit(s - _log_k(K) - log_D)
        if kind == CriterionKind.mse:
            log_rho = np.log(rival_scale)
            # log(rho q / (1 - q + rho q)) with q = sigmoid(s)
            return log_rho + log_expit(s) - np.logaddexp(
                log_expit(-s), log_rho + log_expit(s)
            )
        if kind in _RATIO_KINDS:
            # log(q / (1 - q)) = s
            return offset + s
        if kind == CriterionKind.bce:
            return log_expit(s)
        return s  # bce-nce: log q = s

    def unnormalized_score(
        self,
        kind: CriterionKind,
        output: float,
        class_id: int,
        D: Optional[np.ndarray] = None,
        K: Optional[int] = None,
        alpha: Optional[float] = None,
        rival_scale: float = 1.0,
    ) -> float:
        """
        Positive unnormalized score u of one class.

        Raises:
            SaturatedOutputError: q outside (0, 1) in a q / (1 - q) correction
        """
        ratio_form = kind in _RATIO_KINDS and not (
            kind == CriterionKind.mse and rival_scale == 1.0
        )
        if kind.activation == "sigmoid" and not 0.0 < output < 1.0:
            if ratio_form:
                raise SaturatedOutputError("saturated output")
            if not 0.0 < output <= 1.0:
                raise CorrectionServiceError("sigmoid output outside (0, 1]")
        log_D = None
        if D is not None:
            d = float(np.asarray(D, dtype=np.float64)[class_id])
            if d <= 0:
                raise CorrectionServiceError(
                    f"noise probability of class {class_id} is 0"
                )
            log_D = np.array([np.log(d)])
        log_u = self.log_unnormalized_scores(
            kind, np.array([output]), log_D, K, alpha, rival_scale
        )
        return float(np.exp(log_u[0]))

    def normalize_log_scores(self, log_u: np.ndarray) -> PosteriorEstimate:
        """Normalize log u over the last axis with a max-shift."""
        if not np.all(np.isfinite(log_u)):
            raise CorrectionServiceError("non-finite unnormalized score")
        log_z = logsumexp(log_u, axis=-1, keepdims=True)
        p = np.exp(log_u - log_z)
        return PosteriorEstimate(u=np.exp(log_u), logZ=np.squeeze(log_z, -1), p=p)

    def normalized_posterior(
        self,
        kind: CriterionKind,
        outputs: np.ndarray,
        log_D: Optional[np.ndarray] = None,
        K: Optional[int] = None,
        alpha: Optional[float] = None,
        rival_scale: float = 1.0,
    ) -> PosteriorEstimate:
        """Full-vocabulary posterior from activated outputs, one vector or B x C."""
        log_u = self.log_unnormalized_scores(
            kind, outputs, log_D, K, alpha, rival_scale
        )
        return self.normalize_log_scores(log_u)

    def log_z_moments(self, log_z: np.ndarray) -> Tuple[float, float]:
        """Mean and variance of per-context log normalizers."""
        log_z = np.asarray(log_z, dtype=np.float64).ravel()
        if log_z.size < 2:
            raise CorrectionServiceError("self-normalization needs at least 2 contexts")
        return float(log_z.mean()), float(log_z.var())

    def self_norm_stats(
        self,
        kind: CriterionKind,
        params: ModelParams,
        contexts: np.ndarray,
        log_D: Optional[np.ndarray] = None,
        K: Optional[int] = None,
        alpha: Optional[float] = None,
        rival_scale: float = 1.0,
    ) -> Tuple[float, float]:
        """Mean and variance of log Z over contexts, enumerating the vocabulary."""
        if len(contexts) < 2:
            raise CorrectionServiceError("self-normalization needs at least 2 contexts")
        scores = model_service.forward_all(params, contexts)
        log_u = self.log_unnormalized_from_scores(
            kind, scores, log_D, K, alpha, rival_scale
        )
        return self.log_z_moments(logsumexp(log_u, axis=-1))

    def score_targets(
        self,
        kind: CriterionKind,
        params: ModelParams,
        contexts: np.ndarray,
        targets: np.ndarray,
        log_D: Optional[np.ndarray] = None,
        K: Optional[int] = None,
        alpha: Optional[float] = None,
        rival_scale: float = 1.0,
        chunk_size: int = 1024,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Corrected scores of observed targets, enumerating the vocabulary in chunks.

        Returns:
            (log p, log u, log Z) per position
        """
        n = len(targets)
        log_p, log_u_target, log_z = np.empty(n), np.empty(n), np.empty(n)
        for start in range(0, n, chunk_size):
            stop = min(start + chunk_size, n)
            scores = model_service.forward_all(params, contexts[start:stop])
            log_u = self.log_unnormalized_from_scores(
                kind, scores, log_D, K, alpha, rival_scale
            )
            if not np.all(np.isfinite(log_u)):
                raise CorrectionServiceError("non-finite unnormalized score")
            rows = np.arange(stop - start)
            chunk_z = logsumexp(log_u, axis=1)
            log_u_target[start:stop] = log_u[rows, targets[start:stop]]
            log_z[start:stop] = chunk_z
            log_p[start:stop] = log_u_target[start:stop] - chunk_z
        return log_p, log_u_target, log_z


# Global instance
correction_service = CorrectionService()
