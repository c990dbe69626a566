"""Shared argument handling for the subcommands."""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from pydantic import ValidationError

from sampled_lm.core.config import settings
from sampled_lm.schemas.config import (
    CorrectionNoise,
    CriterionKind,
    ExperimentConfig,
    ModelVariant,
    NoiseKind,
    NormalizationMode,
)

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Invalid invocation or configuration; exit code 2."""

    pass


class AssertionFailedError(Exception):
    """An ``--assert`` threshold was not met; exit code 3."""

    def __init__(self, failures: List[str]):
        self.failures = failures
        super().__init__("assertion failed: " + "; ".join(failures))


# flag dest -> (config key, nested section or None)
_OVERRIDES = {
    "criterion": ("criterion", None),
    "K": ("K", None),
    "alpha": ("alpha", None),
    "include_target_in_samples": ("include_target_in_samples", None),
    "rival_scale": ("rival_scale", None),
    "noise": ("kind", "noise"),
    "smoothing": ("smoothing", "noise"),
    "lr": ("lr", None),
    "clip_norm": ("clip_norm", None),
    "epochs": ("epochs", None),
    "batch_size": ("batch_size", None),
    "seed": ("seed", None),
    "adaptive_lr": ("adaptive_lr", None),
    "variant": ("variant", "model"),
    "order": ("order", "model"),
    "d_emb": ("d_emb", "model"),
    "d_h": ("d_h", "model"),
    "init_scale": ("init_scale", "model"),
    "model_seed": ("seed", "model"),
    "normalization": ("normalization", "eval"),
    "noise_for_correction": ("noise_for_correction", "eval"),
    "corpus": ("corpus", None),
    "validation": ("validation", None),
    "vocab": ("vocab", None),
    "truth": ("truth", None),
    "checkpoint": ("checkpoint", None),
    "output_dir": ("output_dir", None),
}


def add_config_args(parser: argparse.ArgumentParser, *, data: bool = True) -> None:
    """Experiment flags; every flag overrides the matching JSON config key."""
    parser.add_argument("--config", help="JSON experiment config")
    group = parser.add_argument_group("criterion")
    group.add_argument("--criterion", choices=[k.value for k in CriterionKind])
    group.add_argument("--K", type=int, help="noise samples per batch")
    group.add_argument("--alpha", type=float, help="CPS factor (default C/K)")
    group.add_argument(
        "--include-target-in-samples",
        dest="include_target_in_samples",
        action="store_const",
        const=True,
    )
    group.add_argument("--rival-scale", dest="rival_scale", type=float)
    group.add_argument("--noise", choices=[k.value for k in NoiseKind])
    group.add_argument("--smoothing", type=float)

    group = parser.add_argument_group("training")
    group.add_argument("--lr", type=float)
    group.add_argument("--clip-norm", dest="clip_norm", type=float)
    group.add_argument("--epochs", type=int)
    group.add_argument("--batch-size", dest="batch_size", type=int)
    group.add_argument("--seed", type=int)
    group.add_argument(
        "--no-adaptive-lr", dest="adaptive_lr", action="store_const", const=False
    )

    group = parser.add_argument_group("model")
    group.add_argument("--variant", choices=[v.value for v in ModelVariant])
    group.add_argument("--order", type=int)
    group.add_argument("--d-emb", dest="d_emb", type=int)
    group.add_argument("--d-h", dest="d_h", type=int)
    group.add_argument("--init-scale", dest="init_scale", type=float)
    group.add_argument("--model-seed", dest="model_seed", type=int)

    group = parser.add_argument_group("evaluation")
    group.add_argument("--normalization", choices=[m.value for m in NormalizationMode])
    group.add_argument(
        "--noise-for-correction",
        dest="noise_for_correction",
        choices=[m.value for m in CorrectionNoise],
    )

    if data:
        group = parser.add_argument_group("data")
        group.add_argument("--corpus")
        group.add_argument("--validation")
        group.add_argument("--vocab")
        group.add_argument("--truth")
        group.add_argument("--checkpoint")
    parser.add_argument("--output-dir", dest="output_dir")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """JSON file first, then flags (flags win), validated once."""
    raw: Dict[str, Any] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise UsageError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(raw, dict):
            raise UsageError(f"{path}: config must be a JSON object")

    for dest, (key, section) in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if section is None:
            raw[key] = value
        else:
            raw.setdefault(section, {})
            raw[section][key] = value

    try:
        return ExperimentConfig(**raw)
    except ValidationError as e:
        raise UsageError(f"invalid config: {e}") from e


def add_assert_arg(parser: argparse.ArgumentParser, metrics: Iterable[str]) -> None:
    parser.add_argument(
        "--assert",
        dest="asserts",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help=f"threshold to enforce (exit 3 on failure); keys: {', '.join(metrics)}",
    )


def parse_asserts(values: Iterable[str], allowed: Iterable[str]) -> Dict[str, float]:
    allowed = set(allowed)
    thresholds = {}
    for item in values:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in allowed:
            raise UsageError(
                f"bad --assert {item!r}; expected one of {sorted(allowed)}"
            )
        try:
            thresholds[key] = float(value)
        except ValueError:
            raise UsageError(f"bad --assert value {value!r}")
    return thresholds


def check_asserts(
    metrics: Dict[str, Optional[float]],
    thresholds: Dict[str, float],
    lower_bounds: Iterable[str] = (),
) -> bool:
    """
    Compare metrics with thresholds; metrics are upper-bounded unless listed in
    ``lower_bounds``.

    Raises:
        AssertionFailedError: listing every failed threshold
    """
    lower = set(lower_bounds)
    failures = []
    for key, threshold in thresholds.items():
        value = metrics.get(key)
        if value is None:
            failures.append(f"{key} unavailable")
        elif key in lower and not value >= threshold:
            failures.append(f"{key}={value:.6g} < {threshold:.6g}")
        elif key not in lower and not value <= threshold:
            failures.append(f"{key}={value:.6g} > {threshold:.6g}")
    if failures:
        raise AssertionFailedError(failures)
    return True


def output_dir(config: ExperimentConfig) -> Path:
    path = Path(config.output_dir or settings.OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path
