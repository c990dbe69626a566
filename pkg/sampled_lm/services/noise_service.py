# sampled_lm/services/noise_service.py

import logging
from typing import Optional, Sequence

import numpy as np

from sampled_lm.models.corpus import Corpus
from sampled_lm.models.noise import AliasTable, NoiseDistribution, SampleSet
from sampled_lm.schemas.config import NoiseKind
from sampled_lm.services.vocab_corpus_service import unigram_counts

logger = logging.getLogger(__name__)

PMF_TOL = 1e-12


class NoiseServiceError(Exception):
    """Exception raised when noise distribution operations fail."""

    pass


class NoiseService:
    """Service for noise distributions D and batch-shared sampling."""

    def log_uniform(self, C: int) -> NoiseDistribution:
        """
        Log-uniform (Zipf-like) pmf over rank-ordered ids.

        pmf[c] = (ln(c+2) - ln(c+1)) / ln(C+1), which telescopes to one.
        """
        if C < 1:
            raise NoiseServiceError("log_uniform needs at least one class")
        ranks = np.arange(C, dtype=np.float64)
        pmf = np.log1p(1.0 / (ranks + 1.0)) / np.log(C + 1.0)
        return self._make(pmf / pmf.sum(), NoiseKind.log_uniform)

    def uniform(self, C: int) -> NoiseDistribution:
        if C < 1:
            raise NoiseServiceError("uniform needs at least one class")
        return self._make(np.full(C, 1.0 / C), NoiseKind.uniform)

    def smoothed_unigram(
        self, corpus: Corpus, smoothing: float = 1.0
    ) -> NoiseDistribution:
        """Add-delta smoothed unigram over corpus targets."""
        return self.smoothed_unigram_from_counts(unigram_counts(corpus), smoothing)

    def smoothed_unigram_from_counts(
        self, counts: Sequence[float], smoothing: float = 1.0
    ) -> NoiseDistribution:
        """pmf[c] = (count(c) + delta) / (N + delta * C)."""
        if smoothing <= 0:
            raise NoiseServiceError("smoothing must be positive")
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0 or np.any(counts < 0):
            raise NoiseServiceError("counts must be a non-empty non-negative vector")
        pmf = (counts + smoothing) / (counts.sum() + smoothing * counts.size)
        return self._make(pmf, NoiseKind.smoothed_unigram)

    def from_config(
        self,
        kind: NoiseKind,
        C: int,
        corpus: Optional[Corpus] = None,
        smoothing: float = 1.0,
    ) -> NoiseDistribution:
        if kind == NoiseKind.log_uniform:
            return self.log_uniform(C)
        if kind == NoiseKind.uniform:
            return self.uniform(C)
        if corpus is None:
            raise NoiseServiceError("smoothed_unigram noise needs a corpus")
        return self.smoothed_unigram(corpus, smoothing)

    def from_pmf(self, pmf: Sequence[float], kind: NoiseKind) -> NoiseDistribution:
        """Rebuild a stored distribution (e.g. from a checkpoint header)."""
        return self._make(np.asarray(pmf, dtype=np.float64), kind)

    def build_alias(self, dist: NoiseDistribution) -> AliasTable:
        """Vose alias table; reconstructs the pmf up to rounding."""
        C = dist.C
        scaled = dist.pmf * C
        prob = np.ones(C)
        alias = np.arange(C, dtype=np.int64)

        small = [i for i in range(C) if scaled[i] < 1.0]
        large = [i for i in range(C) if scaled[i] >= 1.0]
        while small and large:
            lo = small.pop()
            hi = large.pop()
            prob[lo] = scaled[lo]
            alias[lo] = hi
            scaled[hi] = (scaled[hi] + scaled[lo]) - 1.0
            if scaled[hi] < 1.0:
                small.append(hi)
            else:
                large.append(hi)

        # Leftovers are within rounding of 1
        for i in large + small:
            prob[i] = 1.0
            alias[i] = i

        return AliasTable(prob=prob, alias=alias)

    def draw_shared(
        self, table: AliasTable, K: int, rng: np.random.Generator
    ) -> SampleSet:
        """Draw K i.i.d. ids (with replacement); advances ``rng``."""
        if K < 1:
            raise NoiseServiceError("K must be at least 1")
        columns = rng.integers(0, table.C, size=K)
        keep = rng.random(K) < table.prob[columns]
        return SampleSet(ids=np.where(keep, columns, table.alias[columns]))

    def _make(self, pmf: np.ndarray, kind: NoiseKind) -> NoiseDistribution:
        if np.any(pmf <= 0) or abs(pmf.sum() - 1.0) > PMF_TOL:
            logger.error(f"Rejected {kind.value} pmf (sum={pmf.sum():.15f})")
            raise NoiseServiceError("Noise pmf must be strictly positive and sum to 1")
        return NoiseDistribution(pmf=pmf, kind=kind.value)


# Global instance
noise_service = NoiseService()
