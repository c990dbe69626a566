# sampled_lm/cli/commands_generate.py

import argparse
import logging
from pathlib import Path

from sampled_lm.services.vocab_corpus_service import (
    MAX_TRUTH_STATES,
    vocab_corpus_service,
)
from sampled_lm.storage import corpus_files

from .common import UsageError

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "generate", help="sample a synthetic corpus with its exact posteriors"
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument(
        "--random-spec",
        nargs=3,
        type=int,
        metavar=("C", "ORDER", "SEED"),
        help="random Markov chain over C words",
    )
    source.add_argument("--spec", help="Markov spec JSON file")
    parser.add_argument("--tokens", type=int, required=True, help="training tokens")
    parser.add_argument(
        "--validation-tokens",
        type=int,
        help="validation tokens (default: a tenth of --tokens)",
    )
    parser.add_argument("--stop-prob", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0, help="corpus sampling seed")
    parser.add_argument("--output-dir", default="data")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    if args.tokens < 1:
        raise UsageError("--tokens must be positive")
    n_valid = args.validation_tokens or max(1, args.tokens // 10)
    if n_valid < 1:
        raise UsageError("--validation-tokens must be positive")
    if not 0.0 <= args.stop_prob < 1.0:
        raise UsageError("--stop-prob must lie in [0, 1)")

    if args.spec:
        spec = corpus_files.read_spec(args.spec)
    else:
        C, order, spec_seed = args.random_spec
        spec = vocab_corpus_service.random_markov_spec(
            C, order, spec_seed, stop_prob=args.stop_prob
        )

    corpus, truth = vocab_corpus_service.generate_synthetic(
        spec, args.tokens, args.seed
    )
    validation, _ = vocab_corpus_service.generate_synthetic(
        spec, n_valid, args.seed + 1
    )

    out = Path(args.output_dir)
    corpus_files.write_corpus(out / "train.txt", corpus)
    corpus_files.write_corpus(out / "valid.txt", validation)
    corpus_files.write_vocab(out / "vocab.txt", corpus.vocab)
    corpus_files.write_truth(out / "truth.json", truth, corpus.vocab)
    corpus_files.write_spec(out / "spec.json", spec)

    summary = (
        f"generated {corpus.N} train / {validation.N} validation positions, "
        f"C={corpus.vocab.C} (incl. reserved), order={spec.order}"
    )
    if spec.C**spec.order + 1 <= MAX_TRUTH_STATES:
        rate = vocab_corpus_service.entropy_rate(spec)
        summary += f", entropy rate {rate:.4f} nats"
    print(summary)
    print(f"files written to {out}")
    return 0
