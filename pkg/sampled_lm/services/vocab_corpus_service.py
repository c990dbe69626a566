# sampled_lm/services/vocab_corpus_service.py

import logging
from collections import Counter
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from sampled_lm.models.corpus import (
    BOS,
    EOS,
    RESERVED_TOKENS,
    UNK,
    Corpus,
    GroundTruth,
    MarkovSpec,
    TrainingBatch,
    Vocabulary,
)

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
MAX_TRUTH_STATES = 5000
# </s> mass of the ground truth when the chain itself never stops
STOP_FLOOR = 1e-12


class VocabCorpusServiceError(Exception):
    """Exception raised when vocabulary or corpus operations fail."""

    pass


class VocabCorpusService:
    """Service for vocabularies, corpora, synthetic data and batching."""

    def build_vocab(
        self, text_lines: Iterable[str], max_size: int, min_count: int = 1
    ) -> Vocabulary:
        """
        Build a rank-ordered vocabulary from whitespace-tokenized lines.

        Args:
            text_lines: Raw text, one sequence per line
            max_size: Maximum vocabulary size including reserved tokens
            min_count: Minimum count for a regular token to be kept

        Returns:
            Vocabulary: ids sorted by descending count, ties lexicographic
        """
        if max_size < len(RESERVED_TOKENS):
            raise VocabCorpusServiceError(
                f"max_size must be at least {len(RESERVED_TOKENS)}"
            )

        counts: Counter = Counter()
        num_lines = 0
        for line in text_lines:
            words = line.split()
            if not words:
                continue
            num_lines += 1
            counts.update(words)

        if num_lines == 0:
            raise VocabCorpusServiceError("empty corpus")

        for tok in RESERVED_TOKENS:
            counts.pop(tok, None)

        ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        budget = max_size - len(RESERVED_TOKENS)
        kept = [(w, c) for w, c in ranked if c >= min_count][:budget]
        kept_words = {w for w, _ in kept}
        oov = sum(c for w, c in counts.items() if w not in kept_words)

        vocab = self.vocab_from_counts(
            dict(kept) | {BOS: num_lines, EOS: num_lines, UNK: oov}
        )
        logger.info(
            f"Built vocabulary of {vocab.C} tokens from {num_lines} lines "
            f"({oov} out-of-vocabulary occurrences)"
        )
        return vocab

    def vocab_from_counts(self, counts: Dict[str, int]) -> Vocabulary:
        """Rank-order explicit counts; reserved tokens are added with count 0."""
        merged = {tok: 0 for tok in RESERVED_TOKENS}
        merged.update(counts)
        ranked = sorted(merged.items(), key=lambda item: (-item[1], item[0]))
        return Vocabulary(
            tokens=tuple(w for w, _ in ranked), counts=tuple(int(c) for _, c in ranked)
        )

    def load_corpus(self, text_lines: Iterable[str], vocab: Vocabulary) -> Corpus:
        """Encode lines through ``vocab`` and wrap each in <s> ... </s>."""
        bos, eos = vocab.bos_id, vocab.eos_id
        sequences = []
        for line in text_lines:
            words = line.split()
            if not words:
                continue
            ids = [bos] + vocab.encode(words) + [eos]
            sequences.append(np.asarray(ids, dtype=np.int64))
        if not sequences:
            raise VocabCorpusServiceError("empty corpus")
        return Corpus(sequences=tuple(sequences), vocab=vocab)

    def validate_spec(self, spec: MarkovSpec) -> None:
        """Raise unless ``spec`` describes a proper Markov chain."""
        C = spec.C
        if spec.order < 1:
            raise VocabCorpusServiceError("Markov order must be positive")
        if spec.transition.shape != (C**spec.order, C):
            raise VocabCorpusServiceError(
                f"Transition matrix must have shape {(C**spec.order, C)}, "
                f"got {spec.transition.shape}"
            )
        if not 0.0 <= spec.stop_prob < 1.0:
            raise VocabCorpusServiceError("stop_prob must lie in [0, 1)")
        matrices = (("transition", spec.transition), ("initial", spec.initial))
        for name, matrix in matrices:
            if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
                raise VocabCorpusServiceError(
                    f"{name} has negative or non-finite entries"
                )
            sums = np.atleast_2d(matrix).sum(axis=1)
            if np.max(np.abs(sums - 1.0)) > STOCHASTIC_TOL:
                raise VocabCorpusServiceError(f"{name} rows are not stochastic")

    def random_markov_spec(
        self,
        C: int,
        order: int,
        seed: int,
        stop_prob: float = 0.0,
        concentration: float = 0.5,
    ) -> MarkovSpec:
        """
        Draw a random chain whose rows scatter around a Zipf base measure.

        Args:
            C: Number of chain states (words)
            order: History length of the chain
            seed: Seed for the row draws
            stop_prob: Per-word probability of ending the sequence
            concentration: Dirichlet concentration per unit of base mass times C

        Returns:
            MarkovSpec: strictly positive, row-stochastic chain
        """
        if C < 1 or order < 1:
            raise VocabCorpusServiceError("C and order must be positive")
        rng = np.random.default_rng(seed)
        base = 1.0 / np.arange(1, C + 1)
        base /= base.sum()
        rows = rng.dirichlet(concentration * C * base, size=C**order)
        # Keep every entry strictly positive so oracle-style checks stay interior
        rows = np.maximum(rows, 1e-12)
        rows /= rows.sum(axis=1, keepdims=True)
        initial = rng.dirichlet(concentration * C * base)
        initial = np.maximum(initial, 1e-12)
        initial /= initial.sum()
        return MarkovSpec(
            order=order, transition=rows, initial=initial, stop_prob=stop_prob
        )

    def generate_synthetic(
        self, spec: MarkovSpec, n_tokens: int, seed: int
    ) -> Tuple[Corpus, GroundTruth]:
        """
        Sample a corpus from ``spec`` together with its exact posteriors.

        Chain state i is written as token ``w{i}``. Histories shorter than the
        chain order are left-padded with state 0.

        Returns:
            Tuple of the corpus (vocabulary rank-ordered by the drawn counts)
            and the ground truth over vocabulary ids
        """
        self.validate_spec(spec)
        if n_tokens < 1:
            raise VocabCorpusServiceError("n_tokens must be at least 1")

        rng = np.random.default_rng(seed)
        C, order = spec.C, spec.order
        num_hist = C**order
        cdf_rows = np.cumsum(spec.transition, axis=1)
        cdf_initial = np.cumsum(spec.initial)
        # One uniform per emitted word and one per stop decision
        u_word = rng.random(n_tokens)
        u_stop = rng.random(n_tokens)

        state_sequences: List[List[int]] = []
        emitted = 0
        while emitted < n_tokens:
            draw = int(np.searchsorted(cdf_initial, u_word[emitted], side="right"))
            state = min(draw, C - 1)
            sequence = [state]
            hist = state  # padded history (0, ..., 0, state)
            emitted += 1
            while emitted < n_tokens:
                if u_stop[emitted] < spec.stop_prob:
                    break
                draw = int(
                    np.searchsorted(cdf_rows[hist], u_word[emitted], side="right")
                )
                state = min(draw, C - 1)
                sequence.append(state)
                hist = (hist * C + state) % num_hist
                emitted += 1
            state_sequences.append(sequence)

        counts = np.bincount(
            np.concatenate([np.asarray(s) for s in state_sequences]), minlength=C
        )
        vocab = self.vocab_from_counts(
            {f"w{i}": int(counts[i]) for i in range(C)}
            | {BOS: len(state_sequences), EOS: len(state_sequences)}
        )
        state_to_id = np.asarray(
            [vocab.id_of[f"w{i}"] for i in range(C)], dtype=np.int64
        )
        bos, eos = vocab.bos_id, vocab.eos_id
        sequences = tuple(
            np.concatenate(([bos], state_to_id[np.asarray(s)], [eos])).astype(np.int64)
            for s in state_sequences
        )
        corpus = Corpus(sequences=sequences, vocab=vocab)
        truth = self.ground_truth(spec, vocab)
        logger.info(
            f"Generated {emitted} tokens in {len(sequences)} sequences "
            f"(C={C}, order={order}, seed={seed})"
        )
        return corpus, truth

    def ground_truth(self, spec: MarkovSpec, vocab: Vocabulary) -> GroundTruth:
        """Exact posterior for every reachable length-``order`` context."""
        C, order = spec.C, spec.order
        if C**order + order * C > 10**7:
            raise VocabCorpusServiceError("Ground-truth table too large")
        state_to_id = np.asarray(
            [vocab.id_of[f"w{i}"] for i in range(C)], dtype=np.int64
        )
        bos, eos = vocab.bos_id, vocab.eos_id

        stop = max(spec.stop_prob, STOP_FLOOR)

        def row_over_vocab(probs: np.ndarray, can_stop: bool) -> np.ndarray:
            out = np.zeros(vocab.C)
            scale = 1.0 - stop if can_stop else 1.0
            out[state_to_id] = scale * probs
            if can_stop:
                out[eos] = stop
            return out

        table: Dict[Tuple[int, ...], np.ndarray] = {
            (bos,) * order: row_over_vocab(spec.initial, can_stop=False)
        }
        for n_real in range(1, order + 1):
            n_pad = order - n_real
            for flat in range(C**n_real):
                if n_real > 1:
                    states = np.unravel_index(flat, (C,) * n_real)
                else:
                    states = (flat,)
                states = [int(s) for s in states]
                history = [0] * n_pad + states
                key = (bos,) * n_pad + tuple(int(state_to_id[s]) for s in states)
                probs = spec.transition[spec.history_index(history)]
                table[key] = row_over_vocab(probs, can_stop=True)
        return GroundTruth(order=order, num_classes=vocab.C, table=table)

    def entropy_rate(self, spec: MarkovSpec) -> float:
        """
        Mean per-prediction entropy (nats) of the generator in steady state.

        Sequences restart after </s>; the chain is extended with a start state
        so that restarts and </s> predictions are accounted for exactly.
        """
        self.validate_spec(spec)
        C, order = spec.C, spec.order
        num_hist = C**order
        if num_hist + 1 > MAX_TRUTH_STATES:
            raise VocabCorpusServiceError(
                f"Entropy rate needs {num_hist + 1} states, limit is {MAX_TRUTH_STATES}"
            )

        start = num_hist
        P = np.zeros((num_hist + 1, num_hist + 1))
        H = np.zeros(num_hist + 1)
        stop = spec.stop_prob

        # From the start state the first word is drawn from the initial pmf;
        # its history is padded with state 0, i.e. index = state.
        P[start, np.arange(C)] += spec.initial
        H[start] = _entropy(spec.initial)

        hists = np.arange(num_hist)[:, None]
        successors = (hists * C + np.arange(C)[None, :]) % num_hist
        np.add.at(
            P,
            (np.broadcast_to(hists, successors.shape), successors),
            (1.0 - stop) * spec.transition,
        )
        P[:num_hist, start] += stop
        for hist in range(num_hist):
            row = spec.transition[hist]
            H[hist] = _entropy(np.concatenate(((1.0 - stop) * row, [stop])))

        # Stationary distribution: left eigenvector for eigenvalue 1
        A = P.T - np.eye(num_hist + 1)
        A[-1, :] = 1.0
        b = np.zeros(num_hist + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        return float(pi @ H)

    def positions(self, corpus: Corpus, order: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Flatten the corpus into (contexts, targets).

        Returns:
            contexts of shape (N, order) left-padded with <s>, and the N targets
        """
        if order < 1:
            raise VocabCorpusServiceError("context order must be at least 1")
        bos = corpus.vocab.bos_id
        contexts = []
        targets = []
        for seq in corpus.sequences:
            padded = np.concatenate((np.full(order - 1, bos, dtype=np.int64), seq))
            length = seq.size - 1
            window = np.lib.stride_tricks.sliding_window_view(padded, order)[:length]
            contexts.append(window)
            targets.append(seq[1:])
        return np.concatenate(contexts).astype(np.int64), np.concatenate(targets)

    def batch_iter(
        self, corpus: Corpus, order: int, batch_size: int, seed: int
    ) -> Iterator[TrainingBatch]:
        """Yield one shuffled epoch of batches; the last batch may be partial."""
        if batch_size < 1:
            raise VocabCorpusServiceError("batch_size must be at least 1")
        contexts, targets = self.positions(corpus, order)
        perm = np.random.default_rng(seed).permutation(targets.size)
        for start in range(0, perm.size, batch_size):
            idx = perm[start : start + batch_size]
            yield TrainingBatch(contexts=contexts[idx], targets=targets[idx])

    def empirical_posterior(
        self, corpus: Corpus, context: Sequence[int]
    ) -> np.ndarray:
        """Relative successor frequencies of ``context`` in ``corpus``."""
        context = np.asarray(context, dtype=np.int64)
        contexts, targets = self.positions(corpus, max(int(context.size), 1))
        mask = np.all(contexts == context, axis=1)
        if not mask.any():
            raise VocabCorpusServiceError("unseen context")
        counts = np.bincount(targets[mask], minlength=corpus.vocab.C).astype(np.float64)
        return counts / counts.sum()

    def empirical_posteriors(
        self, corpus: Corpus, order: int
    ) -> Dict[Tuple[int, ...], np.ndarray]:
        """Empirical posterior of every context seen in the corpus."""
        contexts, targets = self.positions(corpus, order)
        unique, inverse = np.unique(contexts, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        counts = np.zeros((unique.shape[0], corpus.vocab.C))
        np.add.at(counts, (inverse, targets), 1.0)
        counts /= counts.sum(axis=1, keepdims=True)
        return {tuple(int(c) for c in row): counts[i] for i, row in enumerate(unique)}


def _entropy(probs: np.ndarray) -> float:
    nz = probs[probs > 0]
    return float(-np.sum(nz * np.log(nz)))


def unigram_counts(corpus: Corpus) -> np.ndarray:
    """Target counts per vocabulary id (<s> is never a target)."""
    targets = np.concatenate([seq[1:] for seq in corpus.sequences])
    return np.bincount(targets, minlength=corpus.vocab.C)


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return float(0.5 * np.sum(np.abs(np.asarray(p) - np.asarray(q))))


# Global instance
vocab_corpus_service = VocabCorpusService()
