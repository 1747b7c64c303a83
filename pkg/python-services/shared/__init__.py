"""Shared configuration, models and errors for the KG-NSF toolkit"""

__version__ = "0.1.0"

from .models import (
    ModelKind,
    LossKind,
    TrainingObjective,
    DatasetStats,
    LossConfig,
    SDBNConfig,
    TrainConfig,
    TrainRecord,
    RankResult,
    MetricsReport,
    RunManifest,
    ValidationResult,
)

from .validators import (
    validate_knowledge_graph,
    get_validation_summary,
)

__all__ = [
    "__version__",
    # Models
    "ModelKind",
    "LossKind",
    "TrainingObjective",
    "DatasetStats",
    "LossConfig",
    "SDBNConfig",
    "TrainConfig",
    "TrainRecord",
    "RankResult",
    "MetricsReport",
    "RunManifest",
    "ValidationResult",
    # Validators
    "validate_knowledge_graph",
    "get_validation_summary",
]
