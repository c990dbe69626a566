# tests/test_trainer.py

import logging
from unittest.mock import patch

import numpy as np
import pytest

from sampled_lm.models.corpus import MarkovSpec
from sampled_lm.models.lm import ParamGrads, SparseRows, TrainState
from sampled_lm.schemas.config import (
    CriterionConfig,
    CriterionKind,
    ModelConfig,
    NoiseConfig,
    TrainConfig,
)
from sampled_lm.services.correction_service import correction_service
from sampled_lm.services.criteria_service import criteria_service
from sampled_lm.services.model_service import model_service
from sampled_lm.services.noise_service import noise_service
from sampled_lm.services.trainer_service import (
    TrainerServiceError,
    TrainingDivergedError,
    epoch_seeds,
    trainer_service,
)
from sampled_lm.services.vocab_corpus_service import vocab_corpus_service


def small_config(kind="ce-mcs", epochs=2, **overrides):
    criterion = CriterionConfig(
        kind=kind, K=4 if CriterionKind(kind).is_sampled else None
    )
    values = dict(
        criterion=criterion,
        model=ModelConfig(
            variant="feedforward", order=2, d_emb=4, d_h=6, init_scale=0.1, seed=1
        ),
        lr=0.5,
        epochs=epochs,
        batch_size=32,
        seed=11,
    )
    values.update(overrides)
    return TrainConfig(**values)


class TestSgd:
    def test_clip_global_norm(self):
        grads = ParamGrads({"a": np.array([3.0, 4.0])})
        clipped = trainer_service.clip_global_norm(grads, 1.0)
        np.testing.assert_allclose(clipped.blocks["a"], [0.6, 0.8])
        assert trainer_service.clip_global_norm(grads, 10.0) is grads

    def test_clip_rejects_non_positive_norm(self):
        with pytest.raises(TrainerServiceError):
            trainer_service.clip_global_norm(ParamGrads({"a": np.ones(2)}), 0.0)

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_clip_raises_divergence_on_non_finite_norm(self, bad):
        grads = ParamGrads({"a": np.array([1.0, bad])})
        with pytest.raises(TrainerServiceError, match="divergence"):
            trainer_service.clip_global_norm(grads, 1.0)

    def test_zero_lr_leaves_params_unchanged(self, small_ff_params, small_batch):
        before = small_ff_params.copy()
        _, grads = trainer_service.batch_objective(
            CriterionConfig(kind="ce"), small_ff_params, small_batch
        )
        trainer_service.sgd_step(small_ff_params, grads, 0.0)
        for name in before.arrays:
            np.testing.assert_array_equal(small_ff_params[name], before[name])

    def test_sparse_rows_update_only_touched_rows(self, small_ff_params):
        before = small_ff_params["embedding"].copy()
        grads = ParamGrads({"embedding": SparseRows(np.array([2]), np.ones((1, 4)))})
        trainer_service.sgd_step(small_ff_params, grads, 0.5)
        np.testing.assert_allclose(small_ff_params["embedding"][2], before[2] + 0.5)
        np.testing.assert_array_equal(small_ff_params["embedding"][3], before[3])

    def test_non_finite_update(self, small_ff_params):
        before = small_ff_params.copy()
        grads = ParamGrads(
            {
                "hidden_bias": np.ones(6),
                "output_bias": np.full(12, np.nan),
            }
        )
        with pytest.raises(TrainerServiceError, match="divergence"):
            trainer_service.sgd_step(small_ff_params, grads, 1.0)
        # nothing is applied when any block is non-finite
        np.testing.assert_array_equal(
            small_ff_params["hidden_bias"], before["hidden_bias"]
        )

    def test_small_step_increases_criterion(self, small_ff_params, small_batch):
        criterion = CriterionConfig(kind="ce")
        before, _ = trainer_service.batch_objective(
            criterion, small_ff_params, small_batch
        )
        trainer_service.train_step(criterion, small_ff_params, small_batch, 0.01, 1e6)
        after, _ = trainer_service.batch_objective(
            criterion, small_ff_params, small_batch
        )
        assert after.value > before.value

    def test_sampled_step_needs_table(self, small_ff_params, small_batch):
        with pytest.raises(TrainerServiceError, match="alias table"):
            trainer_service.train_step(
                CriterionConfig(kind="ce-mcs", K=2),
                small_ff_params,
                small_batch,
                0.1,
                1.0,
            )


class TestEpochSeeds:
    def test_epochs_are_independent_of_history(self):
        seed_a, rng_a = epoch_seeds(5, 3)
        seed_b, rng_b = epoch_seeds(5, 3)
        assert seed_a == seed_b
        np.testing.assert_array_equal(rng_a.random(4), rng_b.random(4))
        assert epoch_seeds(5, 4)[0] != seed_a


class TestTrain:
    def test_same_seed_identical_params(self, synthetic):
        corpus, _ = synthetic
        config = small_config()
        a, log_a = trainer_service.train(config, corpus, corpus)
        b, log_b = trainer_service.train(config, corpus, corpus)
        for name in a.arrays:
            np.testing.assert_array_equal(a[name], b[name])
        means_a = [r.mean_value for r in log_a.records]
        assert means_a == [r.mean_value for r in log_b.records]

    def test_resume_is_bit_identical(self, synthetic):
        corpus, _ = synthetic
        straight, _ = trainer_service.train(small_config(epochs=3), corpus, corpus)

        saved = {}

        def keep_epoch_one(params, log, state):
            if state.next_epoch == 1:
                saved["params"] = params.copy()
                saved["state"] = TrainState(**vars(state))

        trainer_service.train(
            small_config(epochs=3), corpus, corpus, on_epoch=keep_epoch_one
        )
        resumed, log = trainer_service.train(
            small_config(epochs=3),
            corpus,
            corpus,
            params=saved["params"],
            state=saved["state"],
        )
        assert [r.epoch for r in log.records] == [1, 2]
        for name in straight.arrays:
            np.testing.assert_array_equal(resumed[name], straight[name])

    def test_log_records(self, synthetic):
        corpus, _ = synthetic
        calls = []
        _, log = trainer_service.train(
            small_config(kind="bce-nce"),
            corpus,
            corpus,
            on_epoch=lambda params, log, state: calls.append(state.next_epoch),
        )
        assert calls == [1, 2]
        assert len(log) == 2
        record = log.records[0]
        assert record.criterion == "bce-nce"
        assert record.batches == int(np.ceil(corpus.N / 32))
        assert record.validation_ppl > 1.0
        assert record.seconds_per_batch > 0

    def test_divergence_reports_position(self, synthetic):
        corpus, _ = synthetic
        with patch.object(
            trainer_service, "train_step", side_effect=TrainerServiceError("divergence")
        ):
            with pytest.raises(TrainingDivergedError) as exc_info:
                trainer_service.train(small_config(), corpus, corpus)
        assert exc_info.value.epoch == 0
        assert exc_info.value.batch == 0
        assert str(exc_info.value) == "divergence at epoch 0, batch 0"

    def test_adaptive_lr(self, synthetic, caplog):
        corpus, _ = synthetic
        stats = [(10.0, 0.0, 0.0), (12.0, 0.0, 0.0), (11.0, 0.0, 0.0)]
        with patch.object(trainer_service, "validation_stats", side_effect=stats):
            with caplog.at_level(logging.WARNING, logger="sampled_lm"):
                _, log = trainer_service.train(small_config(epochs=3), corpus, corpus)
        assert [r.lr for r in log.records] == [0.5, 0.5, 0.1]
        assert "Validation PPL rose" in caplog.text

    def test_adaptive_lr_disabled(self, synthetic):
        corpus, _ = synthetic
        stats = [(10.0, 0.0, 0.0), (12.0, 0.0, 0.0), (11.0, 0.0, 0.0)]
        config = small_config(epochs=3, adaptive_lr=False)
        with patch.object(trainer_service, "validation_stats", side_effect=stats):
            _, log = trainer_service.train(config, corpus, corpus)
        assert [r.lr for r in log.records] == [0.5, 0.5, 0.5]

    def test_tabular_full_ce_reaches_empirical_ppl(self, toy_corpus):
        config = TrainConfig(
            criterion=CriterionConfig(kind="ce"),
            model=ModelConfig(variant="tabular", order=1, init_scale=0.0),
            lr=8.0,
            clip_norm=1e6,
            epochs=2000,
            batch_size=16,
            adaptive_lr=False,
        )
        _, log = trainer_service.train(config, toy_corpus, toy_corpus)

        contexts, targets = vocab_corpus_service.positions(toy_corpus, 1)
        table = vocab_corpus_service.empirical_posteriors(toy_corpus, 1)
        log_p = [np.log(table[tuple(c)][t]) for c, t in zip(contexts, targets)]
        empirical_ppl = float(np.exp(-np.mean(log_p)))
        assert log.records[-1].validation_ppl == pytest.approx(empirical_ppl, rel=0.01)


def peaked_chain_corpus():
    """Each word is followed by its ring successor 90% of the time."""
    C = 8
    spec = MarkovSpec(
        order=1,
        transition=0.9 * np.roll(np.eye(C), 1, axis=1) + 0.1 / C,
        initial=np.full(C, 1.0 / C),
        stop_prob=0.05,
    )
    corpus, _ = vocab_corpus_service.generate_synthetic(spec, 4000, seed=31)
    return corpus


def train_tabular(kind, corpus):
    """Coarse then fine SGD on a tabular bigram model with uniform noise."""
    criterion = CriterionConfig(
        kind=kind, K=8 if CriterionKind(kind).is_sampled else None
    )
    shared = dict(
        criterion=criterion,
        model=ModelConfig(variant="tabular", order=1, init_scale=0.0),
        noise=NoiseConfig(kind="uniform"),
        clip_norm=1e6,
        batch_size=64,
        adaptive_lr=False,
    )
    params, _ = trainer_service.train(
        TrainConfig(lr=2.0, epochs=40, seed=3, **shared), corpus, corpus
    )
    return trainer_service.train(
        TrainConfig(lr=0.2, epochs=40, seed=4, **shared),
        corpus,
        corpus,
        params=params,
    )


def mean_abs_log_z(kind, params, corpus, noise):
    criterion = CriterionConfig(kind=kind, K=8).resolved(corpus.vocab.C)
    contexts, targets = vocab_corpus_service.positions(corpus, 1)
    _, _, log_z = correction_service.score_targets(
        criterion.kind,
        params,
        contexts,
        targets,
        noise.log_pmf,
        criterion.K,
        criterion.alpha,
    )
    return float(np.mean(np.abs(log_z)))


@pytest.fixture(scope="module")
def peaked_corpus():
    return peaked_chain_corpus()


@pytest.fixture(scope="module")
def full_ce_ppl(peaked_corpus):
    _, log = train_tabular("ce", peaked_corpus)
    return log.records[-1].validation_ppl


class TestSampledCriteriaOnTabularModel:
    @pytest.mark.parametrize("kind", ["ce-mcs", "ce-is", "bce-mcs", "bce-nce"])
    def test_corrected_ppl_matches_full_ce(self, kind, peaked_corpus, full_ce_ppl):
        _, log = train_tabular(kind, peaked_corpus)
        assert log.records[-1].validation_ppl == pytest.approx(full_ce_ppl, rel=0.05)

    def test_nce_self_normalizes_better_than_mcs(self, peaked_corpus):
        C = peaked_corpus.vocab.C
        training_noise = noise_service.uniform(C)
        mismatched = noise_service.log_uniform(C)
        nce_params, _ = train_tabular("bce-nce", peaked_corpus)
        mcs_params, _ = train_tabular("bce-mcs", peaked_corpus)

        nce_gap = mean_abs_log_z("bce-nce", nce_params, peaked_corpus, mismatched)
        mcs_gap = mean_abs_log_z("bce-mcs", mcs_params, peaked_corpus, mismatched)
        assert nce_gap < mcs_gap
        # bce-nce outputs do not depend on the correction noise
        assert nce_gap == pytest.approx(
            mean_abs_log_z("bce-nce", nce_params, peaked_corpus, training_noise)
        )
        matched = mean_abs_log_z(
            "bce-mcs", mcs_params, peaked_corpus, training_noise
        )
        assert matched < mcs_gap


class TestEndToEndGradCheck:
    @pytest.mark.parametrize(
        "kind", ["ce", "mse", "ce-mcs", "ce-is", "bce-cps", "bce-nce", "ce-nce"]
    )
    def test_model_gradients(self, kind, small_ff_params, small_batch):
        criterion = CriterionConfig(
            kind=kind, K=3 if CriterionKind(kind).is_sampled else None
        )
        noise, samples = None, None
        if criterion.kind.is_sampled:
            criterion = criterion.resolved(12)
            noise = noise_service.log_uniform(12)
            samples = noise_service.draw_shared(
                noise_service.build_alias(noise), 3, np.random.default_rng(0)
            )
        error = trainer_service.grad_check(
            criterion, small_ff_params, small_batch, noise, samples
        )
        assert error < 1e-4

    def test_full_gradient_matches_criterion(self, small_ff_params, small_batch):
        criterion = CriterionConfig(kind="ce")
        result, _ = trainer_service.batch_objective(
            criterion, small_ff_params, small_batch
        )
        scores = model_service.forward_all(small_ff_params, small_batch.contexts)
        direct = criteria_service.loss_full(criterion.kind, scores, small_batch.targets)
        assert result.value == pytest.approx(direct.value)
