from .config_models import (
    DatasetConfig,
    ExperimentConfig,
    ModelConfig,
    PenaltyKind,
    PenaltySpec,
    Stage,
    StagePlan,
    StagesConfig,
    load_experiment_config,
)
from .report_models import CompressionState, EpochMetrics, StageReport, TradeoffRow

__all__ = [
    "CompressionState",
    "DatasetConfig",
    "EpochMetrics",
    "ExperimentConfig",
    "ModelConfig",
    "PenaltyKind",
    "PenaltySpec",
    "Stage",
    "StagePlan",
    "StageReport",
    "StagesConfig",
    "TradeoffRow",
    "load_experiment_config",
]
