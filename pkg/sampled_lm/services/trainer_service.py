# sampled_lm/services/trainer_service.py

import logging
import time
from typing import Callable, Optional, Tuple

import numpy as np

from sampled_lm.models.corpus import Corpus, TrainingBatch
from sampled_lm.models.criteria import FullScores, LossGrad, ScoreBundle
from sampled_lm.models.lm import (
    ModelParams,
    ParamGrads,
    SparseRows,
    TrainLog,
    TrainState,
)
from sampled_lm.models.noise import AliasTable, NoiseDistribution, SampleSet
from sampled_lm.schemas.config import CriterionConfig, TrainConfig
from sampled_lm.schemas.reports import TrainEpochRecord
from sampled_lm.services.correction_service import correction_service
from sampled_lm.services.criteria_service import criteria_service
from sampled_lm.services.model_service import model_service
from sampled_lm.services.noise_service import noise_service
from sampled_lm.services.vocab_corpus_service import vocab_corpus_service

logger = logging.getLogger(__name__)

ADAPTIVE_LR = 0.1

EpochCallback = Callable[[ModelParams, TrainLog, TrainState], None]


class TrainerServiceError(Exception):
    """Exception raised when a training step fails."""

    pass


class TrainingDivergedError(TrainerServiceError):
    """Non-finite criterion value or update; carries where training stopped."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"divergence at epoch {epoch}, batch {batch}")


def epoch_seeds(seed: int, epoch: int) -> Tuple[int, np.random.Generator]:
    """Shuffle seed and noise generator of one epoch, independent of earlier epochs."""
    shuffle_seq, noise_seq = np.random.SeedSequence([seed, epoch]).spawn(2)
    return int(shuffle_seq.generate_state(1)[0]), np.random.default_rng(noise_seq)


class TrainerService:
    """Service for SGD training of score models under any criterion."""

    def clip_global_norm(self, grads: ParamGrads, max_norm: float) -> ParamGrads:
        """
        Rescale so the global L2 norm is at most ``max_norm``.

        Raises:
            TrainerServiceError: on a non-positive bound or a non-finite norm
        """
        if max_norm <= 0:
            raise TrainerServiceError("max_norm must be positive")
        norm = grads.global_norm()
        if not np.isfinite(norm):
            logger.error(f"Non-finite gradient norm {norm}")
            raise TrainerServiceError("divergence")
        if norm > max_norm:
            return grads.scaled(max_norm / norm)
        return grads

    def sgd_step(
        self, params: ModelParams, grads: ParamGrads, lr: float
    ) -> ModelParams:
        """params <- params + lr * grads, in place (ascent on the criterion)."""
        updates = {}
        for name, block in grads.items():
            values = block.values if isinstance(block, SparseRows) else block
            update = lr * values
            if not np.all(np.isfinite(update)):
                logger.error(f"Non-finite update for parameter block {name}")
                raise TrainerServiceError("divergence")
            updates[name] = (block, update)

        for name, (block, update) in updates.items():
            if isinstance(block, SparseRows):
                params.arrays[name][block.indices] += update
            else:
                params.arrays[name] += update
        return params

    def batch_objective(
        self,
        criterion: CriterionConfig,
        params: ModelParams,
        batch: TrainingBatch,
        noise: Optional[NoiseDistribution] = None,
        samples: Optional[SampleSet] = None,
    ) -> Tuple[LossGrad, ParamGrads]:
        """Criterion value of one batch and its gradients w.r.t. the parameters."""
        if not criterion.kind.is_sampled:
            scores_all = model_service.forward_all(params, batch.contexts)
            result = criteria_service.loss_full(
                criterion.kind, scores_all, batch.targets, criterion.rival_scale
            )
            grads = model_service.backward(
                params,
                batch.contexts,
                np.arange(params.num_classes),
                result.d_s_samples,
            )
            return result, grads

        if noise is None or samples is None:
            raise TrainerServiceError("sampled criteria need noise and a sample set")
        bundle = ScoreBundle(
            s_target=model_service.forward_targets(
                params, batch.contexts, batch.targets
            ),
            s_samples=model_service.forward_subset(params, batch.contexts, samples.ids),
            target_noise_logp=noise.log_prob(batch.targets),
            sample_noise_logp=noise.log_prob(samples.ids),
        )
        result = criteria_service.loss_sampled(criterion, bundle)
        grads = model_service.backward(
            params,
            batch.contexts,
            samples.ids,
            result.d_s_samples,
            target_ids=batch.targets,
            d_targets=result.d_s_target,
        )
        return result, grads

    def train_step(
        self,
        criterion: CriterionConfig,
        params: ModelParams,
        batch: TrainingBatch,
        lr: float,
        clip_norm: float,
        noise: Optional[NoiseDistribution] = None,
        table: Optional[AliasTable] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[float, float]:
        """
        One SGD step: draw a shared sample set, score, differentiate, clip, update.

        Returns:
            (criterion value, global gradient norm before clipping)
        """
        samples = None
        if criterion.kind.is_sampled:
            if table is None or rng is None:
                raise TrainerServiceError(
                    "sampled criteria need an alias table and rng"
                )
            samples = noise_service.draw_shared(table, criterion.K, rng)
        result, grads = self.batch_objective(criterion, params, batch, noise, samples)
        if not np.isfinite(result.value):
            raise TrainerServiceError("divergence")
        norm = grads.global_norm()
        self.sgd_step(params, self.clip_global_norm(grads, clip_norm), lr)
        return result.value, norm

    def validation_stats(
        self,
        criterion: CriterionConfig,
        params: ModelParams,
        validation: Corpus,
        log_D: np.ndarray,
    ) -> Tuple[float, float, float]:
        """Corrected, fully normalized PPL plus log Z mean and variance."""
        contexts, targets = vocab_corpus_service.positions(
            validation, params.config.order
        )
        log_p, _, log_z = correction_service.score_targets(
            criterion.kind,
            params,
            contexts,
            targets,
            log_D,
            criterion.K,
            criterion.alpha,
            criterion.rival_scale,
        )
        ppl = float(np.exp(-log_p.mean()))
        if log_z.size < 2:
            return ppl, float(log_z.mean()), 0.0
        mean, var = correction_service.log_z_moments(log_z)
        return ppl, mean, var

    def train(
        self,
        config: TrainConfig,
        corpus: Corpus,
        validation: Corpus,
        params: Optional[ModelParams] = None,
        state: Optional[TrainState] = None,
        on_epoch: Optional[EpochCallback] = None,
    ) -> Tuple[ModelParams, TrainLog]:
        """
        Train for ``config.epochs`` epochs (resuming from ``state`` if given).

        Raises:
            TrainingDivergedError: on a non-finite value or update
        """
        if validation.N == 0:
            raise TrainerServiceError("validation corpus has no positions")
        C = corpus.vocab.C
        criterion = config.criterion
        if criterion.kind.is_sampled:
            criterion = criterion.resolved(C)
            logger.info(
                "Criterion %s: K=%d, alpha=%.6g",
                criterion.kind.value,
                criterion.K,
                criterion.alpha,
            )

        noise = noise_service.from_config(
            config.noise.kind, C, corpus, config.noise.smoothing
        )
        table = noise_service.build_alias(noise)
        if params is None:
            params = model_service.init_params(config.model, C)
        state = state or TrainState(lr=config.lr)
        log = TrainLog()

        for epoch in range(state.next_epoch, config.epochs):
            shuffle_seed, rng = epoch_seeds(config.seed, epoch)
            values, step_times, max_norm = [], [], 0.0
            batches = vocab_corpus_service.batch_iter(
                corpus, config.model.order, config.batch_size, shuffle_seed
            )
            for batch_index, batch in enumerate(batches):
                start = time.perf_counter()
                try:
                    value, norm = self.train_step(
                        criterion,
                        params,
                        batch,
                        state.lr,
                        config.clip_norm,
                        noise,
                        table,
                        rng,
                    )
                except TrainerServiceError:
                    logger.error(
                        f"Training diverged at epoch {epoch}, batch {batch_index}"
                    )
                    raise TrainingDivergedError(epoch, batch_index)
                step_times.append(time.perf_counter() - start)
                values.append(value)
                max_norm = max(max_norm, norm)

            ppl, logz_mean, logz_var = self.validation_stats(
                criterion, params, validation, noise.log_pmf
            )
            record = TrainEpochRecord(
                epoch=epoch,
                criterion=criterion.kind.value,
                mean_value=float(np.mean(values)),
                validation_ppl=ppl,
                seconds_per_batch=float(np.mean(step_times)),
                logz_mean=logz_mean,
                logz_var=logz_var,
                lr=state.lr,
                batches=len(values),
                max_grad_norm=max_norm,
            )
            log.append(record)
            logger.info(
                "Epoch %d: F=%.6f, validation PPL=%.4f, %.2f ms/batch",
                epoch,
                record.mean_value,
                ppl,
                1000.0 * record.seconds_per_batch,
            )

            previous = state.last_validation_ppl
            rose = previous is not None and ppl > previous
            if config.adaptive_lr and rose and state.lr > ADAPTIVE_LR:
                logger.warning(
                    "Validation PPL rose from %.4f to %.4f; lowering lr from %g to %g",
                    previous,
                    ppl,
                    state.lr,
                    ADAPTIVE_LR,
                )
                state.lr = ADAPTIVE_LR
            state.last_validation_ppl = ppl
            state.next_epoch = epoch + 1
            if on_epoch is not None:
                on_epoch(params, log, state)

        return params, log

    def grad_check(
        self,
        criterion: CriterionConfig,
        params: ModelParams,
        batch: TrainingBatch,
        noise: Optional[NoiseDistribution] = None,
        samples: Optional[SampleSet] = None,
        epsilon: float = 1e-5,
        coords_per_block: int = 6,
        seed: int = 0,
    ) -> float:
        """
        End-to-end check of criterion-through-model gradients by central differences.

        Returns:
            float: max |analytic - numeric| / max(1, |analytic|) over the checked
            coordinates
        """
        _, grads = self.batch_objective(criterion, params, batch, noise, samples)
        rng = np.random.default_rng(seed)
        worst = 0.0
        for name, block in grads.items():
            shape = params[name].shape
            dense = grads.dense(name, shape)
            if isinstance(block, SparseRows):
                rows = rng.choice(block.indices, size=coords_per_block)
                rest = [rng.integers(0, n, size=coords_per_block) for n in shape[1:]]
                coords = list(zip(rows, *rest))
            else:
                coords = [
                    tuple(rng.integers(0, n) for n in shape)
                    for _ in range(coords_per_block)
                ]
            for index in coords:
                original = params.arrays[name][index]
                params.arrays[name][index] = original + epsilon
                f_plus = self.batch_objective(
                    criterion, params, batch, noise, samples
                )[0].value
                params.arrays[name][index] = original - epsilon
                f_minus = self.batch_objective(
                    criterion, params, batch, noise, samples
                )[0].value
                params.arrays[name][index] = original
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                analytic = dense[index]
                worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic)))
        return worst


# Global instance
trainer_service = TrainerService()
