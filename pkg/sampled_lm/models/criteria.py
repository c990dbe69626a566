"""Score bundles and criterion results."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoreBundle:
    """Raw scores of the targets and of the batch-shared noise samples."""

    s_target: np.ndarray  # (B,)
    s_samples: np.ndarray  # (B, K)
    target_noise_logp: np.ndarray  # (B,) log D(c_n)
    sample_noise_logp: np.ndarray  # (K,) log D(c~_k)

    @property
    def batch_size(self) -> int:
        return int(self.s_target.shape[0])

    @property
    def K(self) -> int:  # noqa: N802
        return int(self.s_samples.shape[1])


@dataclass(frozen=True)
class FullScores:
    """Raw scores over the whole vocabulary for the unsampled criteria."""

    scores_all: np.ndarray  # (B, C)
    targets: np.ndarray  # (B,)

    @property
    def batch_size(self) -> int:
        return int(self.targets.shape[0])


@dataclass(frozen=True)
class LossGrad:
    """Batch-averaged criterion value F (maximized) and its gradients.

    For unsampled criteria ``d_s_samples`` is the (B, C) gradient over every
    score and ``d_s_target`` repeats its target column.
    """

    value: float
    d_s_target: np.ndarray
    d_s_samples: np.ndarray
