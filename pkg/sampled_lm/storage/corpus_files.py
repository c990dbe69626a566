# sampled_lm/storage/corpus_files.py

import json
import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from sampled_lm.models.corpus import Corpus, GroundTruth, MarkovSpec, Vocabulary
from sampled_lm.services.vocab_corpus_service import (
    VocabCorpusServiceError,
    vocab_corpus_service,
)

from .exceptions import StorageError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_lines(path: PathLike, what: str) -> List[str]:
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"{what} not found: {path}")
    with path.open("r", encoding="utf-8") as handle:
        return handle.read().splitlines()


def _write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write {path}: {str(e)}")
        raise StorageError(f"cannot write {path}: {e}") from e
    return path


def write_corpus(path: PathLike, corpus: Corpus) -> Path:
    """One sequence per line, without the <s> / </s> markers."""
    decode = corpus.vocab.decode
    lines = [" ".join(decode(seq[1:-1])) for seq in corpus.sequences]
    return _write_text(path, "\n".join(lines) + "\n")


def read_corpus(path: PathLike, vocab: Vocabulary) -> Corpus:
    lines = _read_lines(path, "corpus")
    try:
        return vocab_corpus_service.load_corpus(lines, vocab)
    except VocabCorpusServiceError as e:
        raise StorageError(f"{path}: {e}") from e


def read_corpus_text(path: PathLike) -> List[str]:
    return _read_lines(path, "corpus")


def write_vocab(path: PathLike, vocab: Vocabulary) -> Path:
    """``token<TAB>count`` per line; the line number is the id."""
    lines = [f"{tok}\t{int(cnt)}" for tok, cnt in zip(vocab.tokens, vocab.counts)]
    return _write_text(path, "\n".join(lines) + "\n")


def read_vocab(path: PathLike) -> Vocabulary:
    tokens, counts = [], []
    for number, line in enumerate(_read_lines(path, "vocabulary"), start=1):
        if not line.strip():
            continue
        token, _, count = line.partition("\t")
        try:
            counts.append(int(count) if count else 0)
        except ValueError:
            raise StorageError(f"{path}:{number}: bad count {count!r}")
        tokens.append(token.strip())
    try:
        return Vocabulary(tokens=tuple(tokens), counts=tuple(counts))
    except ValueError as e:
        raise StorageError(f"{path}: {e}") from e


def write_truth(path: PathLike, truth: GroundTruth, vocab: Vocabulary) -> Path:
    table = {
        " ".join(vocab.decode(np.asarray(key))): [float(x) for x in probs]
        for key, probs in truth.table.items()
    }
    payload = {"order": truth.order, "num_classes": truth.num_classes, "table": table}
    return _write_text(path, json.dumps(payload))


def read_truth(path: PathLike, vocab: Vocabulary) -> GroundTruth:
    try:
        payload = json.loads("\n".join(_read_lines(path, "ground truth")))
        table = {
            tuple(int(i) for i in vocab.encode(key.split(" "))): np.asarray(probs)
            for key, probs in payload["table"].items()
        }
        return GroundTruth(
            order=int(payload["order"]), num_classes=vocab.C, table=table
        )
    except (KeyError, ValueError, TypeError) as e:
        raise StorageError(f"{path}: malformed ground truth ({e})") from e


def write_spec(path: PathLike, spec: MarkovSpec) -> Path:
    payload = {
        "order": spec.order,
        "stop_prob": spec.stop_prob,
        "initial": spec.initial.tolist(),
        "transition": spec.transition.tolist(),
    }
    return _write_text(path, json.dumps(payload))


def read_spec(path: PathLike) -> MarkovSpec:
    try:
        payload = json.loads("\n".join(_read_lines(path, "Markov spec")))
        return MarkovSpec(
            order=int(payload["order"]),
            transition=np.asarray(payload["transition"], dtype=np.float64),
            initial=np.asarray(payload["initial"], dtype=np.float64),
            stop_prob=float(payload.get("stop_prob", 0.0)),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise StorageError(f"{path}: malformed Markov spec ({e})") from e
