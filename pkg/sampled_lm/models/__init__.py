from .corpus import (
    BOS,
    EOS,
    RESERVED_TOKENS,
    UNK,
    Corpus,
    GroundTruth,
    MarkovSpec,
    TrainingBatch,
    Vocabulary,
)
from .criteria import FullScores, LossGrad, ScoreBundle
from .lm import ModelParams, ParamGrads, SparseRows, TrainLog, TrainState
from .noise import AliasTable, NoiseDistribution, SampleSet
from .oracle import OptimumReport, PosteriorEstimate, SurrogateProblem
