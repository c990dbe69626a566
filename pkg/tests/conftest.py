from pathlib import Path

import numpy as np
import pytest

from sampled_lm.models.corpus import TrainingBatch
from sampled_lm.schemas.config import ModelConfig
from sampled_lm.services.model_service import model_service
from sampled_lm.services.vocab_corpus_service import vocab_corpus_service
from sampled_lm.storage import corpus_files


@pytest.fixture
def rng():
    """Seeded generator for reproducible random inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def toy_lines():
    return [
        "the cat sat",
        "the dog sat",
        "a cat ran",
        "the cat ran",
    ]


@pytest.fixture
def toy_vocab(toy_lines):
    return vocab_corpus_service.build_vocab(toy_lines, max_size=100)


@pytest.fixture
def toy_corpus(toy_lines, toy_vocab):
    return vocab_corpus_service.load_corpus(toy_lines, toy_vocab)


@pytest.fixture
def markov_spec():
    """Small bigram chain with line ends."""
    return vocab_corpus_service.random_markov_spec(C=6, order=1, seed=3, stop_prob=0.1)


@pytest.fixture
def synthetic(markov_spec):
    """(corpus, ground truth) sampled from the small chain."""
    return vocab_corpus_service.generate_synthetic(markov_spec, n_tokens=4000, seed=5)


@pytest.fixture
def small_ff_config():
    return ModelConfig(
        variant="feedforward", order=2, d_emb=4, d_h=6, init_scale=0.5, seed=7
    )


@pytest.fixture
def small_ff_params(small_ff_config):
    return model_service.init_params(small_ff_config, 12)


@pytest.fixture
def small_batch(rng):
    return TrainingBatch(
        contexts=rng.integers(0, 12, size=(5, 2)),
        targets=rng.integers(0, 12, size=5),
    )


@pytest.fixture
def data_dir(tmp_path: Path, synthetic):
    """Synthetic train/valid/vocab/truth files as written by `generate`."""
    corpus, truth = synthetic
    corpus_files.write_corpus(tmp_path / "train.txt", corpus)
    corpus_files.write_corpus(tmp_path / "valid.txt", corpus)
    corpus_files.write_vocab(tmp_path / "vocab.txt", corpus.vocab)
    corpus_files.write_truth(tmp_path / "truth.json", truth, corpus.vocab)
    return tmp_path
