"""Surrogate problems, optimum reports and posterior estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from sampled_lm.schemas.config import CriterionKind


@dataclass(frozen=True)
class SurrogateProblem:
    """Infinite-sample surrogate of one criterion at a single context."""

    kind: CriterionKind
    p: np.ndarray
    D: np.ndarray
    K: int
    alpha: float
    rival_scale: float = 1.0

    @property
    def C(self) -> int:  # noqa: N802
        return int(self.p.size)


@dataclass(frozen=True)
class OptimumReport:
    q_closed: np.ndarray
    q_numeric: np.ndarray
    tv_distance: Optional[float]  # None when the closed form is infeasible
    stationarity_residual: float
    numeric_residual: float
    feasible: bool
    value_closed: float
    value_numeric: float
    converged: bool = True


@dataclass(frozen=True)
class PosteriorEstimate:
    u: np.ndarray  # unnormalized scores, > 0
    logZ: Optional[np.ndarray] = None  # noqa: N815
    p: Optional[np.ndarray] = None
