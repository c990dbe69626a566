# sampled_lm/cli/commands_bench.py

import argparse
import logging
from pathlib import Path

from sampled_lm.core.config import settings
from sampled_lm.schemas.config import CriterionConfig, CriterionKind, ModelConfig
from sampled_lm.services.eval_bench_service import eval_bench_service
from sampled_lm.storage import reports

from .common import UsageError, add_assert_arg, check_asserts, parse_asserts

logger = logging.getLogger(__name__)

METRICS = ("speedup",)


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="time one training step per criterion")
    parser.add_argument("--C", type=int, default=50_000, help="vocabulary size")
    parser.add_argument("--K", type=int, default=8192)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument(
        "--criteria",
        nargs="+",
        choices=[k.value for k in CriterionKind],
        default=["ce", "ce-mcs"],
    )
    parser.add_argument("--order", type=int, default=2)
    parser.add_argument("--d-emb", type=int, default=64)
    parser.add_argument("--d-h", type=int, default=256)
    parser.add_argument("--warmup", type=int, default=3)
    parser.add_argument("--iters", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output-dir", default=settings.OUTPUT_DIR)
    add_assert_arg(parser, METRICS)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    thresholds = parse_asserts(args.asserts, METRICS)
    if args.C < 2 or args.K < 1 or args.batch_size < 1:
        raise UsageError("--C, --K and --batch-size must be positive")
    if args.iters < 10 or args.warmup < 3:
        raise UsageError("--iters must be at least 10 and --warmup at least 3")
    model = ModelConfig(
        variant="feedforward",
        order=args.order,
        d_emb=args.d_emb,
        d_h=args.d_h,
        seed=args.seed,
    )
    criteria = [CriterionConfig(kind=CriterionKind(c), K=args.K) for c in args.criteria]
    config = {
        "C": args.C,
        "K": args.K,
        "batch_size": args.batch_size,
        "criteria": args.criteria,
        "model": model.model_dump(mode="json"),
        "warmup": args.warmup,
        "iters": args.iters,
    }
    report = eval_bench_service.bench_step(
        criteria,
        model,
        args.C,
        args.batch_size,
        warmup=args.warmup,
        iters=args.iters,
        seed=args.seed,
        config=config,
    )

    out = Path(args.output_dir)
    reports.write_json_report(out / "bench.json", report)
    reports.write_tsv(out / "bench.tsv", reports.bench_rows(report))

    for entry in report.entries:
        line = f"{entry.criterion:8s} {1000.0 * entry.step_time_s:10.2f} ms/batch"
        if entry.speedup_pct is not None:
            line += f"  speedup {entry.speedup_pct:.1f}% vs {entry.baseline}"
        print(line)
    print(report.machine)

    speedups = [e.speedup_pct for e in report.entries if e.speedup_pct is not None]
    check_asserts(
        {"speedup": min(speedups) if speedups else None},
        thresholds,
        lower_bounds=("speedup",),
    )
    return 0
