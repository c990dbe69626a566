# sampled_lm/cli/commands_train.py

import argparse
import logging
from pathlib import Path

from sampled_lm.models.lm import ModelParams, TrainLog, TrainState
from sampled_lm.schemas.reports import TrainReport
from sampled_lm.services.noise_service import noise_service
from sampled_lm.services.trainer_service import trainer_service
from sampled_lm.services.vocab_corpus_service import vocab_corpus_service
from sampled_lm.storage import checkpoint, corpus_files, reports

from .common import UsageError, add_config_args, output_dir, resolve_config

logger = logging.getLogger(__name__)

MAX_VOCAB = 10**6


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train a score model with SGD")
    add_config_args(parser)
    parser.add_argument(
        "--resume", action="store_true", help="continue from --checkpoint if present"
    )
    parser.set_defaults(handler=run)


def load_training_data(config):
    """Vocabulary, training corpus and validation corpus named by the config."""
    if not config.corpus:
        raise UsageError("--corpus is required")
    if not config.validation:
        raise UsageError("--validation is required")
    if config.vocab:
        vocab = corpus_files.read_vocab(config.vocab)
    else:
        lines = corpus_files.read_corpus_text(config.corpus)
        vocab = vocab_corpus_service.build_vocab(lines, MAX_VOCAB)
    corpus = corpus_files.read_corpus(config.corpus, vocab)
    validation = corpus_files.read_corpus(config.validation, vocab)
    return vocab, corpus, validation


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    vocab, corpus, validation = load_training_data(config)
    out = output_dir(config)
    ckpt_path = Path(config.checkpoint) if config.checkpoint else out / "model.ckpt"
    log_path = out / "train_log.jsonl"

    train_config = config.train_config()
    criterion = train_config.criterion
    if criterion.kind.is_sampled:
        criterion = criterion.resolved(vocab.C)
    noise = noise_service.from_config(
        config.noise.kind, vocab.C, corpus, config.noise.smoothing
    )

    params, state = None, None
    if args.resume and ckpt_path.is_file():
        params, state, _ = checkpoint.load_checkpoint(ckpt_path)
        logger.info("Resuming from %s at epoch %d", ckpt_path, state.next_epoch)
    elif log_path.exists():
        log_path.unlink()

    resolved = config.model_dump(mode="json")
    extra = {
        "criterion": criterion.model_dump(mode="json"),
        "noise_kind": noise.kind,
        "noise_pmf": noise.pmf.tolist(),
        "experiment": resolved,
    }

    def on_epoch(current: ModelParams, log: TrainLog, current_state: TrainState):
        reports.append_train_log(log_path, log.records[-1])
        checkpoint.save_checkpoint(ckpt_path, current, current_state, extra)

    params, log = trainer_service.train(
        train_config, corpus, validation, params=params, state=state, on_epoch=on_epoch
    )
    records = reports.read_train_log(log_path) if log_path.exists() else log.records
    reports.write_json_report(
        out / "train.json",
        TrainReport(records=records, checkpoint=str(ckpt_path), config=resolved),
    )
    if log.records:
        last = log.records[-1]
        print(
            f"{last.criterion}: epoch {last.epoch} validation PPL "
            f"{last.validation_ppl:.4f}, {1000.0 * last.seconds_per_batch:.2f} ms/batch"
        )
    print(f"checkpoint: {ckpt_path}")
    return 0
