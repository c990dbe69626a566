"""Model service dispatching to the registered score-model variants."""

from __future__ import annotations

import logging
from typing import Dict, List, Optional

import numpy as np

from sampled_lm.models.lm import ModelParams, ParamGrads
from sampled_lm.schemas.config import ModelConfig, ModelVariant

from .lm.base import ModelServiceError, ScoreModel
from .lm.feedforward import FeedforwardModel
from .lm.tabular import TabularModel

logger = logging.getLogger(__name__)

__all__ = ["ModelService", "ModelServiceError", "model_service"]


class ModelService:
    """Service for initializing, scoring with and differentiating score models."""

    def __init__(self):
        self._models: Dict[ModelVariant, ScoreModel] = {
            ModelVariant.feedforward: FeedforwardModel(),
            ModelVariant.tabular: TabularModel(),
        }

    def get_available_variants(self) -> List[str]:
        return [variant.value for variant in self._models]

    def _model(self, params_or_config) -> ScoreModel:
        config = getattr(params_or_config, "config", params_or_config)
        try:
            return self._models[ModelVariant(config.variant)]
        except (ValueError, KeyError):
            raise ModelServiceError(f"Unknown model variant: {config.variant}")

    def _check_contexts(self, params: ModelParams, contexts: np.ndarray) -> np.ndarray:
        contexts = np.asarray(contexts, dtype=np.int64)
        if contexts.ndim != 2 or contexts.shape[1] != params.config.order:
            raise ModelServiceError(
                f"contexts must have shape (B, {params.config.order}), "
                f"got {contexts.shape}"
            )
        self._check_ids(params, contexts)
        return contexts

    def _check_ids(self, params: ModelParams, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= params.num_classes):
            raise ModelServiceError(
                f"class id out of range [0, {params.num_classes})"
            )
        return ids

    def init_params(self, config: ModelConfig, num_classes: int) -> ModelParams:
        """Deterministic initialization; output biases start at -log C."""
        if num_classes < 1:
            raise ModelServiceError("num_classes must be positive")
        params = self._model(config).init_params(config, num_classes)
        logger.info(
            "Initialized %s model: C=%d, %d parameters",
            config.variant.value,
            num_classes,
            params.parameter_count(),
        )
        return params

    def forward_subset(
        self, params: ModelParams, contexts: np.ndarray, class_ids: np.ndarray
    ) -> np.ndarray:
        contexts = self._check_contexts(params, contexts)
        class_ids = self._check_ids(params, class_ids)
        return self._model(params).forward_subset(params, contexts, class_ids)

    def forward_all(self, params: ModelParams, contexts: np.ndarray) -> np.ndarray:
        contexts = self._check_contexts(params, contexts)
        return self._model(params).forward_all(params, contexts)

    def forward_targets(
        self, params: ModelParams, contexts: np.ndarray, targets: np.ndarray
    ) -> np.ndarray:
        contexts = self._check_contexts(params, contexts)
        targets = self._check_ids(params, targets)
        if targets.shape != (contexts.shape[0],):
            raise ModelServiceError("one target per context row is required")
        return self._model(params).forward_targets(params, contexts, targets)

    def backward(
        self,
        params: ModelParams,
        contexts: np.ndarray,
        class_ids: np.ndarray,
        d_scores: np.ndarray,
        target_ids: Optional[np.ndarray] = None,
        d_targets: Optional[np.ndarray] = None,
    ) -> ParamGrads:
        """
        Exact gradients of sum(d_scores * forward_subset) (+ the per-row target
        term) with respect to every parameter block.

        Embedding and output rows are returned as sparse row blocks; repeated
        ids accumulate additively.
        """
        contexts = self._check_contexts(params, contexts)
        class_ids = self._check_ids(params, class_ids)
        d_scores = np.asarray(d_scores, dtype=np.float64)
        if d_scores.shape != (contexts.shape[0], class_ids.size):
            raise ModelServiceError(
                f"d_scores shape {d_scores.shape} does not match "
                f"({contexts.shape[0]}, {class_ids.size})"
            )
        if (target_ids is None) != (d_targets is None):
            raise ModelServiceError("target_ids and d_targets go together")
        if target_ids is not None:
            target_ids = self._check_ids(params, target_ids)
            d_targets = np.asarray(d_targets, dtype=np.float64)
        return self._model(params).backward(
            params, contexts, class_ids, d_scores, target_ids, d_targets
        )


# Global instance
model_service = ModelService()
