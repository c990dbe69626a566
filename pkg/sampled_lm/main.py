# sampled_lm/main.py

import os

from sampled_lm.core.config import settings

# Pin BLAS threads before numpy is imported
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, str(settings.NUM_THREADS))

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from typing import List, Optional  # noqa: E402

from pydantic import ValidationError  # noqa: E402

from sampled_lm import __version__  # noqa: E402
from sampled_lm.cli import (  # noqa: E402
    commands_bench,
    commands_eval,
    commands_generate,
    commands_grad_check,
    commands_oracle,
    commands_train,
)
from sampled_lm.cli.common import AssertionFailedError, UsageError  # noqa: E402
from sampled_lm.core.log_config import configure_logging  # noqa: E402
from sampled_lm.services.noise_service import NoiseServiceError  # noqa: E402
from sampled_lm.services.vocab_corpus_service import (  # noqa: E402
    VocabCorpusServiceError,
)
from sampled_lm.storage import StorageError  # noqa: E402

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_ASSERT = 3

_USAGE_ERRORS = (
    UsageError,
    StorageError,
    VocabCorpusServiceError,
    NoiseServiceError,
    ValidationError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="Sampling-based training criteria for large-vocabulary LMs",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="overrides LOG_LEVEL",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    commands_generate.register(subparsers)
    commands_train.register(subparsers)
    commands_eval.register(subparsers)
    commands_oracle.register(subparsers)
    commands_bench.register(subparsers)
    commands_grad_check.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except AssertionFailedError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ASSERT
    except _USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
