# sampled_lm/storage/reports.py

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Union

from pydantic import BaseModel

from sampled_lm.schemas.config import CriterionKind
from sampled_lm.schemas.reports import BenchReport, EvalReport, TrainEpochRecord

from .exceptions import StorageError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TSV_COLUMNS = ["criterion", "sampling", "ms_per_batch", "ppl", "pseudo_ppl", "kl"]


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


def write_json_report(path: PathLike, report: BaseModel) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise StorageError(f"cannot write report {path}: {e}") from e
    logger.info("Report written to %s", path)
    return path


def append_train_log(path: PathLike, record: TrainEpochRecord) -> None:
    """One JSON object per line, one line per epoch."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as handle:
            handle.write(record.model_dump_json() + "\n")
    except OSError as e:
        raise StorageError(f"cannot append to {path}: {e}") from e


def read_train_log(path: PathLike) -> List[TrainEpochRecord]:
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"train log not found: {path}")
    with path.open("r", encoding="utf-8") as handle:
        return [
            TrainEpochRecord(**json.loads(line)) for line in handle if line.strip()
        ]


def eval_rows(reports: Iterable[EvalReport]) -> List[List[str]]:
    return [
        [
            r.criterion,
            CriterionKind(r.criterion).sampling,
            "",
            _fmt(r.ppl_normalized),
            _fmt(r.ppl_unnormalized),
            _fmt(r.kl_to_truth),
        ]
        for r in reports
    ]


def bench_rows(report: BenchReport) -> List[List[str]]:
    """Step times in milliseconds per batch."""
    return [
        [e.criterion, e.sampling, _fmt(1000.0 * e.step_time_s), "", "", ""]
        for e in report.entries
    ]


def write_tsv(path: PathLike, rows: Iterable[List[str]]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
            writer.writerow(TSV_COLUMNS)
            writer.writerows(rows)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e
    return path
