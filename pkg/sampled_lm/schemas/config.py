# sampled_lm/schemas/config.py

import enum
import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from sampled_lm.core.config import settings


class CriterionKind(str, enum.Enum):
    mse = "mse"
    bce = "bce"
    ce = "ce"
    bce_mcs = "bce-mcs"
    bce_is = "bce-is"
    bce_cps = "bce-cps"
    bce_nce = "bce-nce"
    ce_mcs = "ce-mcs"
    ce_is = "ce-is"
    ce_cps = "ce-cps"
    ce_nce = "ce-nce"

    @property
    def family(self) -> str:
        """Unsampled criterion this kind approximates: mse, bce or ce."""
        return self.value.split("-")[0]

    @property
    def sampling(self) -> str:
        """Sampling method name, '-' for the full criteria."""
        parts = self.value.split("-")
        return parts[1] if len(parts) > 1 else "-"

    @property
    def is_sampled(self) -> bool:
        return self.sampling != "-"

    @property
    def activation(self) -> str:
        """Activation contract: sigmoid, exp or identity on the raw score."""
        if self in (CriterionKind.bce_nce, CriterionKind.ce_nce):
            return "exp"
        if self.family in ("mse", "bce"):
            return "sigmoid"
        return "identity"


class NoiseKind(str, enum.Enum):
    log_uniform = "log_uniform"
    smoothed_unigram = "smoothed_unigram"
    uniform = "uniform"


class ModelVariant(str, enum.Enum):
    tabular = "tabular"
    feedforward = "feedforward"


class NormalizationMode(str, enum.Enum):
    full = "full"
    none = "none"


class CorrectionNoise(str, enum.Enum):
    train_noise = "train_noise"
    smoothed_unigram = "smoothed_unigram"


class CriterionConfig(BaseModel):
    """Schema for a training criterion and its sampling parameters"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: CriterionKind
    K: Optional[int] = Field(None, ge=1, description="Noise samples per batch")
    alpha: Optional[float] = Field(
        None, gt=0.0, description="CPS compensation factor, defaults to C/K"
    )
    include_target_in_samples: bool = False
    rival_scale: float = Field(
        1.0, gt=0.0, description="MSE down-scaling of rival-class penalties"
    )

    def resolved(self, num_classes: int) -> "CriterionConfig":
        """Fill in K and alpha defaults once the vocabulary size is known."""
        k = self.K or settings.DEFAULT_NUM_SAMPLES
        alpha = self.alpha if self.alpha is not None else num_classes / k
        return self.model_copy(update={"K": k, "alpha": alpha})


class NoiseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: NoiseKind = NoiseKind.log_uniform
    smoothing: float = Field(settings.DEFAULT_SMOOTHING, gt=0.0)


class ModelConfig(BaseModel):
    """Schema for score-model hyperparameters"""

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    variant: ModelVariant = ModelVariant.feedforward
    order: int = Field(2, ge=1, description="Context length m")
    d_emb: int = Field(64, ge=1)
    d_h: int = Field(256, ge=1)
    init_scale: float = Field(0.1, ge=0.0)
    seed: int = 0


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    normalization: NormalizationMode = NormalizationMode.full
    noise_for_correction: CorrectionNoise = CorrectionNoise.train_noise


class TrainConfig(BaseModel):
    """Schema for a complete SGD training run"""

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    criterion: CriterionConfig
    model: ModelConfig = Field(default_factory=ModelConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    lr: float = Field(settings.DEFAULT_LEARNING_RATE, gt=0.0)
    clip_norm: float = Field(settings.DEFAULT_CLIP_NORM, gt=0.0)
    epochs: int = Field(1, ge=1)
    batch_size: int = Field(settings.DEFAULT_BATCH_SIZE, ge=1)
    seed: int = settings.DEFAULT_SEED
    adaptive_lr: bool = True


class ExperimentConfig(BaseModel):
    """Schema for the JSON experiment file; flat keys, unknown keys rejected"""

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    criterion: CriterionKind = CriterionKind.ce
    K: Optional[int] = Field(None, ge=1)
    alpha: Optional[float] = Field(None, gt=0.0)
    include_target_in_samples: bool = False
    rival_scale: float = Field(1.0, gt=0.0)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    lr: float = Field(settings.DEFAULT_LEARNING_RATE, gt=0.0)
    clip_norm: float = Field(settings.DEFAULT_CLIP_NORM, gt=0.0)
    epochs: int = Field(1, ge=1)
    batch_size: int = Field(settings.DEFAULT_BATCH_SIZE, ge=1)
    seed: int = settings.DEFAULT_SEED
    adaptive_lr: bool = True
    model: ModelConfig = Field(default_factory=ModelConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    # Data paths
    corpus: Optional[str] = None
    validation: Optional[str] = None
    vocab: Optional[str] = None
    truth: Optional[str] = None
    checkpoint: Optional[str] = None
    output_dir: str = settings.OUTPUT_DIR

    @model_validator(mode="after")
    def check_alpha_finite(self):
        if self.alpha is not None and not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        return self

    def criterion_config(self) -> CriterionConfig:
        return CriterionConfig(
            kind=self.criterion,
            K=self.K,
            alpha=self.alpha,
            include_target_in_samples=self.include_target_in_samples,
            rival_scale=self.rival_scale,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            criterion=self.criterion_config(),
            model=self.model,
            noise=self.noise,
            eval=self.eval,
            lr=self.lr,
            clip_norm=self.clip_norm,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            adaptive_lr=self.adaptive_lr,
        )
