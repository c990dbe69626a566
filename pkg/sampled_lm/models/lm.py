"""Score-model parameters and gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from sampled_lm.schemas.config import ModelConfig
from sampled_lm.schemas.reports import TrainEpochRecord


@dataclass
class ModelParams:
    """Named parameter arrays plus the config that shaped them.

    Feedforward blocks: ``embedding`` (C, d_emb), ``hidden_weights``
    (m*d_emb, d_h), ``hidden_bias`` (d_h,), ``output_weights`` (C, d_h, one
    row per class), ``output_bias`` (C,). Tabular: ``table`` (C**m, C).
    """

    config: ModelConfig
    num_classes: int
    arrays: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            num_classes=self.num_classes,
            arrays={k: v.copy() for k, v in self.arrays.items()},
        )


@dataclass(frozen=True)
class SparseRows:
    """Gradient rows for a subset of a block's leading index."""

    indices: np.ndarray  # unique, sorted
    values: np.ndarray  # (len(indices), ...)


GradBlock = Union[np.ndarray, SparseRows]


@dataclass
class ParamGrads:
    blocks: Dict[str, GradBlock]

    def items(self) -> Iterator[Tuple[str, GradBlock]]:
        return iter(self.blocks.items())

    def global_norm(self) -> float:
        total = 0.0
        for block in self.blocks.values():
            values = block.values if isinstance(block, SparseRows) else block
            total += float(np.sum(values * values))
        return float(np.sqrt(total))

    def scaled(self, factor: float) -> "ParamGrads":
        out: Dict[str, GradBlock] = {}
        for name, block in self.blocks.items():
            if isinstance(block, SparseRows):
                out[name] = SparseRows(block.indices, block.values * factor)
            else:
                out[name] = block * factor
        return ParamGrads(out)

    def dense(self, name: str, shape: Tuple[int, ...]) -> np.ndarray:
        """Materialize one block as a dense array (tests, gradient checks)."""
        block = self.blocks[name]
        if isinstance(block, SparseRows):
            full = np.zeros(shape)
            full[block.indices] = block.values
            return full
        return block


@dataclass
class TrainState:
    """Trainer position persisted with checkpoints for bit-identical resume."""

    next_epoch: int = 0
    lr: float = 1.0
    last_validation_ppl: Optional[float] = None


@dataclass
class TrainLog:
    records: List[TrainEpochRecord] = field(default_factory=list)

    def append(self, record: TrainEpochRecord) -> None:
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ValueError(
                f"epoch {record.epoch} does not follow {self.records[-1].epoch}"
            )
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)
