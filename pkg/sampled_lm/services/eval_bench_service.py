"""Perplexity, KL-to-truth and step-time benchmarking."""

from __future__ import annotations

import logging
import os
import platform
import time
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy
from scipy.special import rel_entr

from sampled_lm.models.corpus import Corpus, GroundTruth, TrainingBatch
from sampled_lm.models.lm import ModelParams
from sampled_lm.schemas.config import (
    CriterionConfig,
    CriterionKind,
    ModelConfig,
    NormalizationMode,
)
from sampled_lm.schemas.reports import BenchEntry, BenchReport, EvalReport
from sampled_lm.services.correction_service import correction_service
from sampled_lm.services.model_service import model_service
from sampled_lm.services.noise_service import noise_service
from sampled_lm.services.trainer_service import trainer_service
from sampled_lm.services.vocab_corpus_service import vocab_corpus_service

logger = logging.getLogger(__name__)

SPEEDUP_WARN_PCT = 30.0
MIN_BENCH_ITERS = 10
MIN_BENCH_WARMUP = 3


class EvalBenchServiceError(Exception):
    """Exception raised for invalid evaluation or benchmark requests."""

    pass


def machine_descriptor() -> str:
    threads = os.environ.get("OMP_NUM_THREADS", "unset")
    return (
        f"{platform.platform()}; {platform.processor() or platform.machine()}; "
        f"python {platform.python_version()}; numpy {np.__version__}; "
        f"scipy {scipy.__version__}; OMP_NUM_THREADS={threads}"
    )


class EvalBenchService:
    """Service for evaluating trained models and timing training steps."""

    def perplexity(
        self,
        params: ModelParams,
        corpus: Corpus,
        criterion: CriterionConfig,
        log_D: Optional[np.ndarray] = None,
        normalization: NormalizationMode = NormalizationMode.full,
    ) -> Dict[str, float]:
        """
        PPL from the corrected, fully normalized posterior; with
        ``normalization=none`` the pseudo-PPL exp(-mean log u) is added.
        """
        contexts, targets = vocab_corpus_service.positions(corpus, params.config.order)
        if targets.size == 0:
            raise EvalBenchServiceError("corpus has no positions")
        log_p, log_u, log_z = correction_service.score_targets(
            criterion.kind,
            params,
            contexts,
            targets,
            log_D,
            criterion.K,
            criterion.alpha,
            criterion.rival_scale,
        )
        if not np.all(np.isfinite(log_p)):
            raise EvalBenchServiceError("zero-probability event")
        result = {
            "positions": float(targets.size),
            "ppl_normalized": float(np.exp(-log_p.mean())),
            "logz_mean": float(log_z.mean()),
            "logz_var": float(log_z.var()),
        }
        if normalization == NormalizationMode.none:
            result["ppl_unnormalized"] = float(np.exp(-log_u.mean()))
        return result

    def kl_to_truth(
        self,
        params: ModelParams,
        criterion: CriterionConfig,
        truth: GroundTruth,
        log_D: Optional[np.ndarray] = None,
        bos_id: Optional[int] = None,
    ) -> float:
        """Mean over truth contexts of KL(p_true || corrected model posterior)."""
        keys = truth.contexts()
        if not keys:
            raise EvalBenchServiceError("ground truth has no contexts")
        order = params.config.order
        contexts = np.array([self._model_context(key, order, bos_id) for key in keys])
        p_true = np.vstack([truth.table[key] for key in keys])

        scores = model_service.forward_all(params, contexts)
        log_u = correction_service.log_unnormalized_from_scores(
            criterion.kind,
            scores,
            log_D,
            criterion.K,
            criterion.alpha,
            criterion.rival_scale,
        )
        p_model = correction_service.normalize_log_scores(log_u).p
        return float(rel_entr(p_true, p_model).sum(axis=1).mean())

    @staticmethod
    def _model_context(key: Tuple[int, ...], order: int, bos_id: Optional[int]):
        if len(key) >= order:
            return list(key[len(key) - order :])
        if bos_id is None:
            raise EvalBenchServiceError(
                "model order exceeds truth order; bos id needed"
            )
        return [bos_id] * (order - len(key)) + list(key)

    def evaluate(
        self,
        params: ModelParams,
        corpus: Corpus,
        criterion: CriterionConfig,
        log_D: Optional[np.ndarray] = None,
        normalization: NormalizationMode = NormalizationMode.full,
        truth: Optional[GroundTruth] = None,
        config: Optional[Dict[str, Any]] = None,
    ) -> EvalReport:
        stats = self.perplexity(params, corpus, criterion, log_D, normalization)
        kl = None
        if truth is not None:
            kl = self.kl_to_truth(params, criterion, truth, log_D, corpus.vocab.bos_id)
        report = EvalReport(
            criterion=criterion.kind.value,
            positions=int(stats["positions"]),
            ppl_normalized=stats["ppl_normalized"],
            ppl_unnormalized=stats.get("ppl_unnormalized"),
            kl_to_truth=kl,
            logz_mean=stats["logz_mean"],
            logz_var=stats["logz_var"],
            config=config or {},
        )
        logger.info(
            "Evaluated %s on %d positions: PPL=%.4f",
            report.criterion,
            report.positions,
            report.ppl_normalized,
        )
        return report

    def speedup_by_family(
        self, times: Sequence[Tuple[CriterionConfig, float]]
    ) -> List[BenchEntry]:
        """Speedup of each sampled criterion over its family's full baseline."""
        full = {c.kind.family: t for c, t in times if not c.kind.is_sampled}
        fallback = next(((c.kind, t) for c, t in times if not c.kind.is_sampled), None)
        entries = []
        for criterion, seconds in times:
            kind = criterion.kind
            baseline: Optional[Tuple[CriterionKind, float]] = None
            if kind.is_sampled:
                if kind.family in full:
                    baseline = (CriterionKind(kind.family), full[kind.family])
                else:
                    baseline = fallback
            speedup = None
            if baseline is not None:
                speedup = 100.0 * (1.0 - seconds / baseline[1])
            entries.append(
                BenchEntry(
                    criterion=kind.value,
                    sampling=kind.sampling,
                    step_time_s=seconds,
                    baseline=baseline[0].value if baseline else None,
                    speedup_pct=speedup,
                )
            )
        return entries

    def bench_step(
        self,
        criteria: Sequence[CriterionConfig],
        model: ModelConfig,
        num_classes: int,
        batch_size: int,
        warmup: int = MIN_BENCH_WARMUP,
        iters: int = MIN_BENCH_ITERS,
        seed: int = 0,
        lr: float = 1e-3,
        clip_norm: float = 1.0,
        config: Optional[Dict[str, Any]] = None,
    ) -> BenchReport:
        """
        Mean wall time of complete training steps (sampling, forward, criterion,
        backward, clipping, update) per criterion, warmup excluded.
        """
        if iters < MIN_BENCH_ITERS or warmup < MIN_BENCH_WARMUP:
            raise EvalBenchServiceError(
                f"bench needs iters >= {MIN_BENCH_ITERS} "
                f"and warmup >= {MIN_BENCH_WARMUP}"
            )
        if not criteria:
            raise EvalBenchServiceError("no criteria to benchmark")
        data_rng = np.random.default_rng(seed)
        batch = TrainingBatch(
            contexts=data_rng.integers(0, num_classes, size=(batch_size, model.order)),
            targets=data_rng.integers(0, num_classes, size=batch_size),
        )
        noise = noise_service.log_uniform(num_classes)
        table = noise_service.build_alias(noise)
        initial = model_service.init_params(model, num_classes)

        times = []
        for criterion in criteria:
            if criterion.kind.is_sampled:
                criterion = criterion.resolved(num_classes)
            params = initial.copy()
            rng = np.random.default_rng(seed)
            for _ in range(warmup):
                trainer_service.train_step(
                    criterion, params, batch, lr, clip_norm, noise, table, rng
                )
            start = time.perf_counter()
            for _ in range(iters):
                trainer_service.train_step(
                    criterion, params, batch, lr, clip_norm, noise, table, rng
                )
            seconds = (time.perf_counter() - start) / iters
            logger.info("%s: %.2f ms/batch", criterion.kind.value, 1000.0 * seconds)
            times.append((criterion, seconds))

        entries = self.speedup_by_family(times)
        for entry in entries:
            if entry.speedup_pct is not None and entry.speedup_pct < SPEEDUP_WARN_PCT:
                logger.warning(
                    "%s speedup %.1f%% vs %s is below %.0f%%",
                    entry.criterion,
                    entry.speedup_pct,
                    entry.baseline,
                    SPEEDUP_WARN_PCT,
                )
        return BenchReport(
            entries=entries,
            machine=machine_descriptor(),
            seed=seed,
            config=config or {},
        )


# Global instance
eval_bench_service = EvalBenchService()
