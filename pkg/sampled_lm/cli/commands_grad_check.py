# sampled_lm/cli/commands_grad_check.py

import argparse
import logging
from pathlib import Path

import numpy as np

from sampled_lm.core.config import settings
from sampled_lm.models.corpus import TrainingBatch
from sampled_lm.models.criteria import FullScores, ScoreBundle
from sampled_lm.schemas.config import CriterionConfig, CriterionKind, ModelConfig
from sampled_lm.schemas.reports import GradCheckEntry, GradCheckReport
from sampled_lm.services.criteria_service import criteria_service
from sampled_lm.services.model_service import model_service
from sampled_lm.services.noise_service import noise_service
from sampled_lm.services.trainer_service import trainer_service
from sampled_lm.storage import reports

from .common import UsageError, add_assert_arg, check_asserts, parse_asserts

logger = logging.getLogger(__name__)

METRICS = ("rel",)


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "grad-check", help="analytic gradients versus central differences"
    )
    parser.add_argument("--C", type=int, default=20)
    parser.add_argument("--K", type=int, default=8)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--trials", type=int, default=50)
    parser.add_argument("--model-trials", type=int, default=3)
    parser.add_argument("--epsilon", type=float, default=1e-5)
    parser.add_argument(
        "--kinds",
        nargs="+",
        choices=[k.value for k in CriterionKind],
        default=[k.value for k in CriterionKind],
    )
    parser.add_argument("--include-target-in-samples", action="store_true")
    parser.add_argument("--no-model", dest="model", action="store_false")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output-dir", default=settings.OUTPUT_DIR)
    add_assert_arg(parser, METRICS)
    parser.set_defaults(handler=run)


def random_scores(
    criterion: CriterionConfig, C: int, B: int, rng: np.random.Generator
):
    """Random scores, noise pmf and samples for one criterion check."""
    if not criterion.kind.is_sampled:
        return FullScores(
            scores_all=rng.normal(0.0, 2.0, size=(B, C)),
            targets=rng.integers(0, C, size=B),
        )
    counts = rng.gamma(1.0, 10.0, size=C)
    noise = noise_service.smoothed_unigram_from_counts(counts, 0.5)
    table = noise_service.build_alias(noise)
    samples = noise_service.draw_shared(table, criterion.K, rng)
    targets = rng.integers(0, C, size=B)
    return ScoreBundle(
        s_target=rng.normal(0.0, 2.0, size=B),
        s_samples=rng.normal(0.0, 2.0, size=(B, criterion.K)),
        target_noise_logp=noise.log_prob(targets),
        sample_noise_logp=noise.log_prob(samples.ids),
    )


def model_check(criterion, args, rng) -> float:
    model = ModelConfig(variant="feedforward", order=2, d_emb=4, d_h=5, init_scale=0.5)
    model = model.model_copy(update={"seed": int(rng.integers(2**31))})
    params = model_service.init_params(model, args.C)
    batch = TrainingBatch(
        contexts=rng.integers(0, args.C, size=(args.batch_size, model.order)),
        targets=rng.integers(0, args.C, size=args.batch_size),
    )
    noise, samples = None, None
    if criterion.kind.is_sampled:
        noise = noise_service.log_uniform(args.C)
        samples = noise_service.draw_shared(
            noise_service.build_alias(noise), criterion.K, rng
        )
    return trainer_service.grad_check(
        criterion,
        params,
        batch,
        noise,
        samples,
        epsilon=args.epsilon,
        seed=int(rng.integers(2**31)),
    )


def run(args: argparse.Namespace) -> int:
    thresholds = parse_asserts(args.asserts, METRICS)
    if min(args.C, args.K, args.batch_size, args.trials) < 1:
        raise UsageError("--C, --K, --batch-size and --trials must be positive")
    rng = np.random.default_rng(args.seed)
    entries = []
    for value in args.kinds:
        kind = CriterionKind(value)
        criterion = CriterionConfig(
            kind=kind,
            K=args.K if kind.is_sampled else None,
            alpha=args.C / args.K,
            include_target_in_samples=args.include_target_in_samples,
        )
        worst = max(
            criteria_service.grad_check(
                criterion,
                random_scores(criterion, args.C, args.batch_size, rng),
                args.epsilon,
            )
            for _ in range(args.trials)
        )
        entries.append(
            GradCheckEntry(target=kind.value, trials=args.trials, max_rel_error=worst)
        )
        if args.model:
            worst = max(
                model_check(criterion, args, rng) for _ in range(args.model_trials)
            )
            entries.append(
                GradCheckEntry(
                    target=f"model:{kind.value}",
                    trials=args.model_trials,
                    max_rel_error=worst,
                )
            )

    for entry in entries:
        print(f"{entry.target:14s} max rel error {entry.max_rel_error:.3e}")
    report = GradCheckReport(
        entries=entries,
        config={
            "C": args.C,
            "K": args.K,
            "batch_size": args.batch_size,
            "trials": args.trials,
            "epsilon": args.epsilon,
            "kinds": args.kinds,
            "seed": args.seed,
        },
    )
    metrics = {"rel": max(e.max_rel_error for e in entries)}
    if thresholds:
        report.passed = all(metrics[k] <= v for k, v in thresholds.items())
    reports.write_json_report(Path(args.output_dir) / "grad_check.json", report)
    check_asserts(metrics, thresholds)
    return 0
