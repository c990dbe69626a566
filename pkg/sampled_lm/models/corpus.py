"""Domain models for vocabularies, corpora and synthetic ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
RESERVED_TOKENS = (BOS, EOS, UNK)


@dataclass(frozen=True)
class Vocabulary:
    """Rank-ordered token <-> id map; id 0 is the most frequent token."""

    tokens: Tuple[str, ...]
    counts: Tuple[int, ...]
    id_of: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.counts):
            raise ValueError("tokens and counts must have equal length")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("Vocabulary tokens must be unique")
        missing = [tok for tok in RESERVED_TOKENS if tok not in self.tokens]
        if missing:
            raise ValueError(f"Reserved tokens missing from vocabulary: {missing}")
        if any(c < 0 for c in self.counts):
            raise ValueError("Token counts must be non-negative")
        object.__setattr__(
            self, "id_of", {tok: i for i, tok in enumerate(self.tokens)}
        )

    @property
    def C(self) -> int:  # noqa: N802
        return len(self.tokens)

    @property
    def bos_id(self) -> int:
        return self.id_of[BOS]

    @property
    def eos_id(self) -> int:
        return self.id_of[EOS]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    def encode(self, words: Sequence[str]) -> List[int]:
        """Map tokens to ids; out-of-vocabulary tokens become <unk>."""
        unk = self.unk_id
        return [self.id_of.get(w, unk) for w in words]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class Corpus:
    """Token-id sequences, each wrapped in <s> ... </s>."""

    sequences: Tuple[np.ndarray, ...]
    vocab: Vocabulary

    def __post_init__(self):
        bos, eos, size = self.vocab.bos_id, self.vocab.eos_id, self.vocab.C
        for seq in self.sequences:
            if seq.size < 2 or seq[0] != bos or seq[-1] != eos:
                raise ValueError("Every sequence must start with <s> and end with </s>")
            if seq.min() < 0 or seq.max() >= size:
                raise ValueError("Token id out of vocabulary range")

    @property
    def N(self) -> int:  # noqa: N802
        """Predicted positions: sequence lengths without the leading <s>."""
        return int(sum(seq.size - 1 for seq in self.sequences))


@dataclass(frozen=True)
class MarkovSpec:
    """Ground-truth generator over C chain states.

    ``transition`` has one row per history of ``order`` states (mixed radix,
    most recent state least significant). After every emitted word the
    sequence ends with probability ``stop_prob``.
    """

    order: int
    transition: np.ndarray
    initial: np.ndarray
    stop_prob: float = 0.0

    @property
    def C(self) -> int:  # noqa: N802
        return int(self.initial.size)

    def history_index(self, history: Sequence[int]) -> int:
        """Row of ``transition`` for a history of exactly ``order`` states."""
        index = 0
        for state in history:
            index = index * self.C + int(state)
        return index


@dataclass(frozen=True)
class GroundTruth:
    """Exact next-token posterior over vocabulary ids for every context."""

    order: int
    num_classes: int
    table: Dict[Tuple[int, ...], np.ndarray]

    def posterior(self, context: Sequence[int]) -> np.ndarray:
        if len(context) < self.order:
            raise KeyError(
                f"Context of length {len(context)} shorter than chain order "
                f"{self.order}"
            )
        key = tuple(int(c) for c in context[len(context) - self.order :])
        return self.table[key]

    def contexts(self) -> List[Tuple[int, ...]]:
        return list(self.table.keys())


@dataclass(frozen=True)
class TrainingBatch:
    contexts: np.ndarray  # (B, m) history ids, left-padded with <s>
    targets: np.ndarray  # (B,)

    def __post_init__(self):
        if self.contexts.shape[0] != self.targets.shape[0]:
            raise ValueError("contexts and targets must have equal length")

    @property
    def batch_size(self) -> int:
        return int(self.targets.shape[0])
