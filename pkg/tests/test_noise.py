# tests/test_noise.py

import numpy as np
import pytest
from scipy.stats import chisquare

from sampled_lm.schemas.config import NoiseKind
from sampled_lm.services.noise_service import NoiseServiceError, noise_service
from sampled_lm.services.vocab_corpus_service import unigram_counts


class TestDistributions:
    def test_log_uniform_small(self):
        dist = noise_service.log_uniform(4)
        expected = np.log([2.0, 1.5, 4.0 / 3.0, 1.25]) / np.log(5.0)
        np.testing.assert_allclose(dist.pmf, expected, rtol=1e-12)
        assert dist.kind == "log_uniform"

    def test_log_uniform_is_decreasing_and_normalized(self):
        dist = noise_service.log_uniform(1000)
        assert dist.pmf.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(dist.pmf) < 0)

    def test_smoothed_unigram_from_counts(self):
        dist = noise_service.smoothed_unigram_from_counts([3, 1, 0], smoothing=1.0)
        np.testing.assert_allclose(dist.pmf, np.array([4.0, 2.0, 1.0]) / 7.0)

    def test_smoothed_unigram_from_corpus(self, toy_corpus):
        dist = noise_service.smoothed_unigram(toy_corpus, smoothing=0.5)
        counts = unigram_counts(toy_corpus)
        # <s> is never a target, so only smoothing mass remains
        bos = toy_corpus.vocab.bos_id
        assert counts[bos] == 0
        assert dist.pmf[bos] == pytest.approx(0.5 / (counts.sum() + 0.5 * dist.C))

    def test_uniform(self):
        np.testing.assert_allclose(noise_service.uniform(5).pmf, np.full(5, 0.2))

    def test_log_prob(self):
        dist = noise_service.log_uniform(10)
        np.testing.assert_allclose(
            dist.log_prob(np.array([0, 9])), np.log(dist.pmf[[0, 9]])
        )

    def test_from_config_needs_corpus_for_unigram(self):
        with pytest.raises(NoiseServiceError, match="needs a corpus"):
            noise_service.from_config(NoiseKind.smoothed_unigram, 10)

    def test_from_pmf_round_trip(self):
        dist = noise_service.log_uniform(7)
        rebuilt = noise_service.from_pmf(dist.pmf.tolist(), NoiseKind.log_uniform)
        np.testing.assert_array_equal(rebuilt.pmf, dist.pmf)

    @pytest.mark.parametrize(
        "pmf",
        [[0.5, 0.5, 0.0], [0.6, 0.6], [-0.1, 1.1]],
    )
    def test_rejects_invalid_pmf(self, pmf):
        with pytest.raises(NoiseServiceError):
            noise_service.from_pmf(pmf, NoiseKind.uniform)

    def test_rejects_bad_smoothing(self):
        with pytest.raises(NoiseServiceError):
            noise_service.smoothed_unigram_from_counts([1, 2], smoothing=0.0)


class TestAlias:
    @pytest.mark.parametrize("C", [1, 2, 17, 1000])
    def test_table_reconstructs_pmf(self, C):
        dist = noise_service.log_uniform(C)
        table = noise_service.build_alias(dist)
        np.testing.assert_allclose(table.implied_pmf(), dist.pmf, atol=1e-12)

    def test_skewed_pmf(self):
        pmf = np.array([0.97, 0.01, 0.01, 0.005, 0.005])
        table = noise_service.build_alias(
            noise_service.from_pmf(pmf, NoiseKind.uniform)
        )
        np.testing.assert_allclose(table.implied_pmf(), pmf, atol=1e-12)

    def test_random_pmfs_reconstruct(self):
        rng = np.random.default_rng(64)
        for _ in range(100):
            C = int(rng.integers(1, 65))
            pmf = rng.dirichlet(np.full(C, rng.uniform(0.2, 2.0))) + 1e-9
            pmf /= pmf.sum()
            table = noise_service.build_alias(
                noise_service.from_pmf(pmf, NoiseKind.uniform)
            )
            np.testing.assert_allclose(table.implied_pmf(), pmf, rtol=0, atol=1e-12)

    def test_draw_frequencies(self):
        # Chi-square goodness of fit on 10^6 draws
        dist = noise_service.log_uniform(100)
        table = noise_service.build_alias(dist)
        samples = noise_service.draw_shared(table, 1_000_000, np.random.default_rng(42))
        observed = np.bincount(samples.ids, minlength=100)
        _, p_value = chisquare(observed, dist.pmf * samples.K)
        assert p_value > 0.001

    def test_draw_shared_is_seeded(self):
        table = noise_service.build_alias(noise_service.log_uniform(50))
        a = noise_service.draw_shared(table, 32, np.random.default_rng(3))
        b = noise_service.draw_shared(table, 32, np.random.default_rng(3))
        np.testing.assert_array_equal(a.ids, b.ids)
        assert a.K == 32
        assert a.ids.min() >= 0 and a.ids.max() < 50

    def test_draw_requires_positive_k(self):
        table = noise_service.build_alias(noise_service.uniform(3))
        with pytest.raises(NoiseServiceError, match="K must be at least 1"):
            noise_service.draw_shared(table, 0, np.random.default_rng(0))
