# sampled_lm/schemas/reports.py

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class TrainEpochRecord(BaseModel):
    """Schema for one JSON-lines record of the training log"""

    epoch: int = Field(..., ge=0)
    criterion: str
    mean_value: float = Field(..., description="Mean criterion value F (maximized)")
    validation_ppl: float
    seconds_per_batch: float
    logz_mean: float
    logz_var: float
    lr: float
    batches: int
    max_grad_norm: float = Field(..., description="Largest pre-clip global norm")


class EvalReport(BaseModel):
    """Schema for perplexity / KL evaluation results"""

    criterion: str
    positions: int
    ppl_normalized: float
    ppl_unnormalized: Optional[float] = Field(
        None, description="Pseudo-PPL from log u without a normalizer"
    )
    kl_to_truth: Optional[float] = None
    logz_mean: float
    logz_var: float
    config: Dict[str, Any] = Field(default_factory=dict)


class BenchEntry(BaseModel):
    criterion: str
    sampling: str
    step_time_s: float = Field(..., gt=0.0)
    baseline: Optional[str] = None
    speedup_pct: Optional[float] = Field(
        None, description="Relative speedup vs the full baseline, percent"
    )


class BenchReport(BaseModel):
    """Schema for step-time benchmark results"""

    entries: List[BenchEntry]
    machine: str
    seed: int
    config: Dict[str, Any] = Field(default_factory=dict)

    def entry(self, criterion: str) -> BenchEntry:
        for item in self.entries:
            if item.criterion == criterion:
                return item
        raise KeyError(criterion)


class OracleKindResult(BaseModel):
    kind: str
    K: int
    trials: int
    max_tv: Optional[float] = Field(
        None, description="Largest TV over feasible trials"
    )
    max_residual: float = Field(..., description="Stationarity at the closed form")
    max_numeric_residual: float = Field(
        ..., description="Stationarity at the numeric maximizer, projected for ce-nce"
    )
    unconverged: int = Field(0, description="Trials whose maximizer stopped early")
    infeasible: int = 0
    infeasible_flags_correct: bool = True


class OracleReport(BaseModel):
    """Schema for the oracle-check JSON report"""

    results: List[OracleKindResult]
    passed: Optional[bool] = None
    config: Dict[str, Any] = Field(default_factory=dict)


class GradCheckEntry(BaseModel):
    target: str = Field(..., description="Criterion name or model:<criterion>")
    trials: int
    max_rel_error: float


class GradCheckReport(BaseModel):
    entries: List[GradCheckEntry]
    passed: Optional[bool] = None
    config: Dict[str, Any] = Field(default_factory=dict)


class TrainReport(BaseModel):
    """Schema for the end-of-training summary"""

    records: List[TrainEpochRecord]
    checkpoint: str
    config: Dict[str, Any] = Field(default_factory=dict)
