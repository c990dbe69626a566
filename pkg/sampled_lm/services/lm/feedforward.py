"""Feedforward n-gram score model: embedding -> tanh hidden layer -> output rows."""

from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from sampled_lm.models.lm import ModelParams, ParamGrads
from sampled_lm.schemas.config import ModelConfig, ModelVariant

from .base import ScoreModel, aggregate_rows

logger = logging.getLogger(__name__)


class FeedforwardModel(ScoreModel):
    variant = ModelVariant.feedforward

    def init_params(self, config: ModelConfig, num_classes: int) -> ModelParams:
        rng = np.random.default_rng(config.seed)
        a = config.init_scale
        d_in = config.order * config.d_emb

        def uniform(*shape: int) -> np.ndarray:
            return rng.uniform(-a, a, size=shape) if a > 0 else np.zeros(shape)

        arrays = {
            "embedding": uniform(num_classes, config.d_emb),
            "hidden_weights": uniform(d_in, config.d_h),
            "hidden_bias": uniform(config.d_h),
            "output_weights": uniform(num_classes, config.d_h),
            "output_bias": np.full(num_classes, -np.log(num_classes)),
        }
        return ModelParams(config=config, num_classes=num_classes, arrays=arrays)

    def hidden(
        self, params: ModelParams, contexts: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Concatenated context embeddings x and hidden activations h."""
        x = params["embedding"][contexts].reshape(contexts.shape[0], -1)
        h = np.tanh(x @ params["hidden_weights"] + params["hidden_bias"])
        return x, h

    def forward_subset(self, params, contexts, class_ids):
        _, h = self.hidden(params, contexts)
        weights = params["output_weights"][class_ids]
        return h @ weights.T + params["output_bias"][class_ids]

    def forward_all(self, params, contexts):
        _, h = self.hidden(params, contexts)
        return h @ params["output_weights"].T + params["output_bias"]

    def forward_targets(self, params, contexts, targets):
        _, h = self.hidden(params, contexts)
        rows = params["output_weights"][targets]
        return np.einsum("bd,bd->b", h, rows) + params["output_bias"][targets]

    def backward(
        self,
        params: ModelParams,
        contexts: np.ndarray,
        class_ids: np.ndarray,
        d_scores: np.ndarray,
        target_ids: Optional[np.ndarray] = None,
        d_targets: Optional[np.ndarray] = None,
    ) -> ParamGrads:
        x, h = self.hidden(params, contexts)
        W_out = params["output_weights"]

        d_h = d_scores @ W_out[class_ids]
        out_ids = [class_ids]
        out_rows = [d_scores.T @ h]
        out_bias = [d_scores.sum(axis=0)]
        if target_ids is not None:
            d_h += d_targets[:, None] * W_out[target_ids]
            out_ids.append(target_ids)
            out_rows.append(d_targets[:, None] * h)
            out_bias.append(d_targets)
        out_ids_all = np.concatenate(out_ids)

        d_pre = d_h * (1.0 - h * h)
        d_x = d_pre @ params["hidden_weights"].T
        d_emb = params.config.d_emb

        return ParamGrads(
            {
                "embedding": aggregate_rows(contexts.ravel(), d_x.reshape(-1, d_emb)),
                "hidden_weights": x.T @ d_pre,
                "hidden_bias": d_pre.sum(axis=0),
                "output_weights": aggregate_rows(out_ids_all, np.vstack(out_rows)),
                "output_bias": aggregate_rows(out_ids_all, np.concatenate(out_bias)),
            }
        )
