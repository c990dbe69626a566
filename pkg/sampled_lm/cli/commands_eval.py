# sampled_lm/cli/commands_eval.py

import argparse
import logging
from pathlib import Path
from typing import Any, Dict

from sampled_lm.models.corpus import Corpus, Vocabulary
from sampled_lm.models.noise import NoiseDistribution
from sampled_lm.schemas.config import (
    CorrectionNoise,
    CriterionConfig,
    ExperimentConfig,
    NoiseKind,
)
from sampled_lm.services.eval_bench_service import eval_bench_service
from sampled_lm.services.noise_service import noise_service
from sampled_lm.storage import checkpoint, corpus_files, reports

from .common import (
    UsageError,
    add_assert_arg,
    add_config_args,
    check_asserts,
    output_dir,
    parse_asserts,
    resolve_config,
)

logger = logging.getLogger(__name__)

METRICS = ("ppl", "pseudo_ppl", "kl")


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="perplexity and KL of a checkpoint")
    add_config_args(parser)
    add_assert_arg(parser, METRICS)
    parser.set_defaults(handler=run)


def correction_noise(
    config: ExperimentConfig, extra: Dict[str, Any], vocab: Vocabulary
) -> NoiseDistribution:
    """
    Rebuild the noise distribution D used by the correction.

    Smoothed-unigram correction is taken from the checkpoint when training used
    it, else recounted over the training targets of ``--corpus``.

    Raises:
        UsageError: if the distribution cannot be reconstructed
    """
    stored_kind = NoiseKind(extra["noise_kind"]) if "noise_kind" in extra else None
    if config.eval.noise_for_correction == CorrectionNoise.smoothed_unigram:
        if stored_kind == NoiseKind.smoothed_unigram and "noise_pmf" in extra:
            return _stored_noise(extra, vocab.C)
        return noise_service.smoothed_unigram(
            _training_corpus(config, vocab), config.noise.smoothing
        )
    if "noise_pmf" in extra:
        return _stored_noise(extra, vocab.C)
    if config.noise.kind == NoiseKind.smoothed_unigram:
        return noise_service.smoothed_unigram(
            _training_corpus(config, vocab), config.noise.smoothing
        )
    return noise_service.from_config(config.noise.kind, vocab.C)


def _stored_noise(extra: Dict[str, Any], C: int) -> NoiseDistribution:
    pmf = extra["noise_pmf"]
    if len(pmf) != C:
        raise UsageError(f"checkpoint noise covers {len(pmf)} tokens, expected {C}")
    return noise_service.from_pmf(pmf, NoiseKind(extra["noise_kind"]))


def _training_corpus(config: ExperimentConfig, vocab: Vocabulary) -> Corpus:
    if not config.corpus:
        raise UsageError(
            "smoothed-unigram correction noise needs the training --corpus "
            "or a checkpoint trained with that noise"
        )
    return corpus_files.read_corpus(config.corpus, vocab)


def run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    thresholds = parse_asserts(args.asserts, METRICS)
    out = output_dir(config)
    ckpt_path = Path(config.checkpoint) if config.checkpoint else out / "model.ckpt"
    if not config.vocab:
        raise UsageError("--vocab is required")
    eval_path = config.validation or config.corpus
    if not eval_path:
        raise UsageError("--validation or --corpus is required")

    params, _, extra = checkpoint.load_checkpoint(ckpt_path)
    vocab = corpus_files.read_vocab(config.vocab)
    if vocab.C != params.num_classes:
        raise UsageError(
            f"vocabulary has {vocab.C} tokens but the checkpoint expects "
            f"{params.num_classes}"
        )
    corpus = corpus_files.read_corpus(eval_path, vocab)
    truth = corpus_files.read_truth(config.truth, vocab) if config.truth else None

    if "criterion" in extra:
        criterion = CriterionConfig(**extra["criterion"])
    else:
        criterion = config.criterion_config().resolved(vocab.C)

    noise = correction_noise(config, extra, vocab)

    report = eval_bench_service.evaluate(
        params,
        corpus,
        criterion,
        noise.log_pmf,
        config.eval.normalization,
        truth,
        config=config.model_dump(mode="json"),
    )
    reports.write_json_report(out / "eval.json", report)
    reports.write_tsv(out / "eval.tsv", reports.eval_rows([report]))

    line = f"{report.criterion}: PPL {report.ppl_normalized:.4f}"
    if report.ppl_unnormalized is not None:
        line += f", pseudo-PPL {report.ppl_unnormalized:.4f}"
    if report.kl_to_truth is not None:
        line += f", KL {report.kl_to_truth:.6f}"
    print(line)

    check_asserts(
        {
            "ppl": report.ppl_normalized,
            "pseudo_ppl": report.ppl_unnormalized,
            "kl": report.kl_to_truth,
        },
        thresholds,
    )
    return 0
