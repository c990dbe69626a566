"""Noise distributions and the samples drawn from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseDistribution:
    """Strictly positive pmf D over class ids."""

    pmf: np.ndarray
    kind: str
    log_pmf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "log_pmf", np.log(self.pmf))

    @property
    def C(self) -> int:  # noqa: N802
        return int(self.pmf.size)

    def log_prob(self, ids: np.ndarray) -> np.ndarray:
        return self.log_pmf[ids]


@dataclass(frozen=True)
class AliasTable:
    """Walker/Vose alias table; column c keeps c w.p. prob[c], else alias[c]."""

    prob: np.ndarray
    alias: np.ndarray

    @property
    def C(self) -> int:  # noqa: N802
        return int(self.prob.size)

    def implied_pmf(self) -> np.ndarray:
        """pmf reconstructed from the table."""
        pmf = self.prob.astype(np.float64).copy()
        np.add.at(pmf, self.alias, 1.0 - self.prob)
        return pmf / self.C


@dataclass(frozen=True)
class SampleSet:
    """K i.i.d. noise ids shared by every position of a batch."""

    ids: np.ndarray

    @property
    def K(self) -> int:  # noqa: N802
        return int(self.ids.size)
