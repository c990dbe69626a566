"""Base classes and contracts for score models."""

from __future__ import annotations

import abc
from typing import Optional

import numpy as np
from scipy import sparse

from sampled_lm.models.lm import ModelParams, ParamGrads, SparseRows
from sampled_lm.schemas.config import ModelConfig, ModelVariant


class ModelServiceError(Exception):
    """Exception raised for invalid model inputs or configurations."""

    pass


def aggregate_rows(indices: np.ndarray, values: np.ndarray) -> SparseRows:
    """Sum gradient rows that share an index; result rows are sorted and unique."""
    indices = np.asarray(indices, dtype=np.int64).ravel()
    unique, inverse = np.unique(indices, return_inverse=True)
    if unique.size == indices.size:
        order = np.argsort(indices, kind="stable")
        return SparseRows(indices[order], values[order])
    one_hot = sparse.csr_matrix(
        (np.ones(indices.size), (inverse.ravel(), np.arange(indices.size))),
        shape=(unique.size, indices.size),
    )
    flat = values.reshape(indices.size, -1)
    summed = np.asarray(one_hot @ flat).reshape((unique.size,) + values.shape[1:])
    return SparseRows(unique, summed)


class ScoreModel(abc.ABC):
    """Abstract base class for score functions s(x, c) over class ids."""

    variant: ModelVariant

    @abc.abstractmethod
    def init_params(self, config: ModelConfig, num_classes: int) -> ModelParams:
        """Deterministic initial parameters for *config* and vocabulary size."""

    @abc.abstractmethod
    def forward_subset(
        self, params: ModelParams, contexts: np.ndarray, class_ids: np.ndarray
    ) -> np.ndarray:
        """Scores (B, len(class_ids)) for one class subset shared by all rows."""

    @abc.abstractmethod
    def forward_all(self, params: ModelParams, contexts: np.ndarray) -> np.ndarray:
        """Scores (B, C) over the full vocabulary."""

    @abc.abstractmethod
    def forward_targets(
        self, params: ModelParams, contexts: np.ndarray, targets: np.ndarray
    ) -> np.ndarray:
        """Score (B,) of one class per row."""

    @abc.abstractmethod
    def backward(
        self,
        params: ModelParams,
        contexts: np.ndarray,
        class_ids: np.ndarray,
        d_scores: np.ndarray,
        target_ids: Optional[np.ndarray] = None,
        d_targets: Optional[np.ndarray] = None,
    ) -> ParamGrads:
        """Gradients of sum(d_scores * scores) + sum(d_targets * target scores)."""

    def __repr__(self) -> str:  # noqa: D401
        return f"<{self.__class__.__name__} variant={self.variant.value!r}>"
