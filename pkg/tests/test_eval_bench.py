# tests/test_eval_bench.py

import numpy as np
import pytest

from sampled_lm.models.corpus import Corpus
from sampled_lm.schemas.config import CriterionConfig, ModelConfig, NormalizationMode
from sampled_lm.services.eval_bench_service import (
    EvalBenchServiceError,
    eval_bench_service,
    machine_descriptor,
)
from sampled_lm.services.model_service import model_service
from sampled_lm.services.vocab_corpus_service import vocab_corpus_service

CE = CriterionConfig(kind="ce")
BENCH_MODEL = ModelConfig(variant="feedforward", order=2, d_emb=32, d_h=128)


def flat_tabular(num_classes, order=1):
    config = ModelConfig(variant="tabular", order=order, init_scale=0.0)
    return model_service.init_params(config, num_classes)


def truth_model(truth, vocab):
    """Tabular model whose corrected posterior is the ground truth."""
    params = flat_tabular(vocab.C)
    for key in truth.contexts():
        params.arrays["table"][key[0]] = np.log(truth.table[key] + 1e-300)
    return params


class TestPerplexity:
    def test_uniform_model(self, toy_corpus):
        params = flat_tabular(toy_corpus.vocab.C)
        stats = eval_bench_service.perplexity(params, toy_corpus, CE)
        assert stats["ppl_normalized"] == pytest.approx(toy_corpus.vocab.C)
        assert stats["positions"] == toy_corpus.N
        assert stats["logz_mean"] == pytest.approx(0.0, abs=1e-12)
        assert "ppl_unnormalized" not in stats

    def test_confident_correct_model(self):
        lines = ["a b"]
        vocab = vocab_corpus_service.build_vocab(lines, max_size=10)
        corpus = vocab_corpus_service.load_corpus(lines, vocab)
        params = flat_tabular(vocab.C)
        table = params.arrays["table"]
        for context, target in [("<s>", "a"), ("a", "b"), ("b", "</s>")]:
            table[vocab.id_of[context], vocab.id_of[target]] = 50.0
        stats = eval_bench_service.perplexity(params, corpus, CE)
        assert stats["ppl_normalized"] == pytest.approx(1.0, abs=1e-12)

    def test_order_of_sequences_does_not_matter(self, synthetic, small_ff_config):
        corpus, _ = synthetic
        params = model_service.init_params(small_ff_config, corpus.vocab.C)
        shuffled = Corpus(
            sequences=tuple(reversed(corpus.sequences)), vocab=corpus.vocab
        )
        a = eval_bench_service.perplexity(params, corpus, CE)
        b = eval_bench_service.perplexity(params, shuffled, CE)
        assert a["ppl_normalized"] == pytest.approx(b["ppl_normalized"], rel=1e-12)

    def test_unnormalized_mode(self, toy_corpus):
        params = flat_tabular(toy_corpus.vocab.C)
        params.arrays["table"] += 1.0
        stats = eval_bench_service.perplexity(
            params, toy_corpus, CE, normalization=NormalizationMode.none
        )
        # log u = 1 - log C everywhere: pseudo-PPL = C / e, normalized PPL = C
        assert stats["ppl_unnormalized"] == pytest.approx(toy_corpus.vocab.C / np.e)
        assert stats["ppl_normalized"] == pytest.approx(toy_corpus.vocab.C)
        assert stats["logz_mean"] == pytest.approx(1.0)


class TestKlToTruth:
    def test_truth_model_has_zero_kl(self, synthetic):
        corpus, truth = synthetic
        params = truth_model(truth, corpus.vocab)
        kl = eval_bench_service.kl_to_truth(
            params, CE, truth, bos_id=corpus.vocab.bos_id
        )
        assert kl == pytest.approx(0.0, abs=1e-9)

    def test_uniform_model_has_positive_kl(self, synthetic):
        corpus, truth = synthetic
        params = flat_tabular(corpus.vocab.C)
        assert eval_bench_service.kl_to_truth(params, CE, truth) > 0.01

    def test_longer_model_context_is_padded(self, synthetic):
        corpus, truth = synthetic
        params = model_service.init_params(
            ModelConfig(variant="feedforward", order=3, d_emb=2, d_h=2), corpus.vocab.C
        )
        with pytest.raises(EvalBenchServiceError, match="bos id"):
            eval_bench_service.kl_to_truth(params, CE, truth)
        kl = eval_bench_service.kl_to_truth(
            params, CE, truth, bos_id=corpus.vocab.bos_id
        )
        assert kl > 0

    def test_evaluate_report(self, synthetic):
        corpus, truth = synthetic
        params = truth_model(truth, corpus.vocab)
        report = eval_bench_service.evaluate(params, corpus, CE, truth=truth)
        assert report.criterion == "ce"
        assert report.positions == corpus.N
        assert report.kl_to_truth == pytest.approx(0.0, abs=1e-9)
        assert report.ppl_unnormalized is None


class TestBench:
    def test_speedup_by_family(self):
        times = [
            (CriterionConfig(kind="ce"), 1.0),
            (CriterionConfig(kind="ce-mcs"), 0.4),
            (CriterionConfig(kind="bce-nce"), 0.5),
        ]
        entries = eval_bench_service.speedup_by_family(times)
        assert entries[0].speedup_pct is None
        assert entries[1].baseline == "ce"
        assert entries[1].speedup_pct == pytest.approx(60.0)
        # no full bce run: falls back to the first full criterion
        assert entries[2].baseline == "ce"
        assert entries[2].speedup_pct == pytest.approx(50.0)

    def test_bench_step_smoke(self):
        report = eval_bench_service.bench_step(
            [CriterionConfig(kind="ce"), CriterionConfig(kind="ce-mcs", K=8)],
            ModelConfig(variant="feedforward", order=2, d_emb=4, d_h=8),
            num_classes=50,
            batch_size=4,
        )
        assert [e.criterion for e in report.entries] == ["ce", "ce-mcs"]
        assert all(e.step_time_s > 0 for e in report.entries)
        assert report.entry("ce-mcs").baseline == "ce"
        assert "numpy" in report.machine

    def test_bench_requires_enough_iterations(self):
        with pytest.raises(EvalBenchServiceError, match="iters"):
            eval_bench_service.bench_step(
                [CriterionConfig(kind="ce")], ModelConfig(), 10, 2, iters=5
            )

    def test_machine_descriptor(self):
        assert "OMP_NUM_THREADS" in machine_descriptor()

    @pytest.mark.slow
    def test_sampled_softmax_is_faster_at_large_vocabulary(self):
        report = eval_bench_service.bench_step(
            [CriterionConfig(kind="ce"), CriterionConfig(kind="ce-mcs", K=8192)],
            BENCH_MODEL,
            num_classes=50_000,
            batch_size=64,
        )
        assert report.entry("ce-mcs").speedup_pct > 10.0

    @pytest.mark.slow
    def test_speedup_grows_with_vocabulary(self):
        def speedup(num_classes):
            report = eval_bench_service.bench_step(
                [CE, CriterionConfig(kind="ce-mcs", K=8192)],
                BENCH_MODEL,
                num_classes=num_classes,
                batch_size=64,
            )
            return report.entry("ce-mcs").speedup_pct

        assert speedup(50_000) > speedup(10_000)

    @pytest.mark.slow
    def test_sampled_step_time_is_flat_in_vocabulary(self):
        def step_time(num_classes):
            report = eval_bench_service.bench_step(
                [CriterionConfig(kind="ce-mcs", K=8192)],
                BENCH_MODEL,
                num_classes=num_classes,
                batch_size=64,
            )
            return report.entry("ce-mcs").step_time_s

        assert step_time(50_000) <= 1.2 * step_time(10_000)
