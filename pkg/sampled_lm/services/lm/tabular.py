"""Tabular score model: one free score per (context, class)."""

from __future__ import annotations

from typing import Optional

import numpy as np

from sampled_lm.models.lm import ModelParams, ParamGrads
from sampled_lm.schemas.config import ModelConfig, ModelVariant

from .base import ModelServiceError, ScoreModel, aggregate_rows

MAX_TABLE_ENTRIES = 10**7


class TabularModel(ScoreModel):
    variant = ModelVariant.tabular

    def init_params(self, config: ModelConfig, num_classes: int) -> ModelParams:
        entries = num_classes ** (config.order + 1)
        if entries > MAX_TABLE_ENTRIES:
            raise ModelServiceError(
                f"tabular model needs {entries} entries, limit is {MAX_TABLE_ENTRIES}"
            )
        rng = np.random.default_rng(config.seed)
        shape = (num_classes**config.order, num_classes)
        a = config.init_scale
        noise = rng.uniform(-a, a, size=shape) if a > 0 else np.zeros(shape)
        return ModelParams(
            config=config,
            num_classes=num_classes,
            arrays={"table": noise - np.log(num_classes)},
        )

    def context_rows(self, params: ModelParams, contexts: np.ndarray) -> np.ndarray:
        """Mixed-radix row ids; the most recent context word is least significant."""
        C = params.num_classes
        radix = C ** np.arange(contexts.shape[1] - 1, -1, -1, dtype=np.int64)
        return contexts.astype(np.int64) @ radix

    def forward_subset(self, params, contexts, class_ids):
        rows = self.context_rows(params, contexts)
        return params["table"][rows[:, None], np.asarray(class_ids)[None, :]]

    def forward_all(self, params, contexts):
        return params["table"][self.context_rows(params, contexts)]

    def forward_targets(self, params, contexts, targets):
        return params["table"][self.context_rows(params, contexts), targets]

    def backward(
        self,
        params: ModelParams,
        contexts: np.ndarray,
        class_ids: np.ndarray,
        d_scores: np.ndarray,
        target_ids: Optional[np.ndarray] = None,
        d_targets: Optional[np.ndarray] = None,
    ) -> ParamGrads:
        rows = self.context_rows(params, contexts)
        unique, inverse = np.unique(rows, return_inverse=True)
        inverse = inverse.ravel()
        values = np.zeros((unique.size, params.num_classes))
        np.add.at(values, (inverse[:, None], np.asarray(class_ids)[None, :]), d_scores)
        if target_ids is not None:
            np.add.at(values, (inverse, target_ids), d_targets)
        return ParamGrads({"table": aggregate_rows(unique, values)})
