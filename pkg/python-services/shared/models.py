"""
Shared Pydantic data models for the toolkit.
Configuration objects, per-epoch records and evaluation reports share these definitions.
"""

from enum import Enum
from datetime import datetime, timezone
from typing import Optional, List, Dict

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ModelKind(str, Enum):
    """Score-function kind; fixes the g1/g2 decomposition and the pairwise norm"""

    TRANSE_L1 = "transe-l1"
    TRANSE_L2 = "transe-l2"
    DISTMULT = "distmult"

    @property
    def family(self) -> str:
        return "distmult" if self is ModelKind.DISTMULT else "transe"

    @property
    def norm_order(self) -> Optional[int]:
        if self is ModelKind.TRANSE_L1:
            return 1
        if self is ModelKind.TRANSE_L2:
            return 2
        return None

    @property
    def tag(self) -> int:
        """Stable one-byte tag used in checkpoint headers"""
        return {ModelKind.TRANSE_L1: 1, ModelKind.TRANSE_L2: 2, ModelKind.DISTMULT: 3}[self]

    @classmethod
    def from_tag(cls, tag: int) -> "ModelKind":
        for kind in cls:
            if kind.tag == tag:
                return kind
        raise ValueError(f"Unknown model kind tag: {tag}")


class LossKind(str, Enum):
    BT = "bt"
    HSIC = "hsic"


class TrainingObjective(str, Enum):
    NSF = "nsf"
    NEGATIVE_SAMPLING = "negative_sampling"


class DatasetStats(BaseModel):
    """Dataset statistics (entity, relation and split counts)"""

    n_entities: int = Field(..., ge=0)
    n_relations: int = Field(..., ge=0)
    n_train: int = Field(..., ge=0)
    n_valid: int = Field(..., ge=0)
    n_test: int = Field(..., ge=0)

    def as_tuple(self):
        return (self.n_entities, self.n_relations, self.n_train, self.n_valid, self.n_test)


class LossConfig(BaseModel):
    """Cross-correlation loss configuration"""

    # None resolves to 1/d once the embedding dimension is known
    lambda_: Optional[float] = Field(default=None, gt=0.0, alias="lambda")
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    kind: LossKind = LossKind.BT
    extended_terms: bool = False

    model_config = ConfigDict(populate_by_name=True)

    def resolved_lambda(self, d: int) -> float:
        return self.lambda_ if self.lambda_ is not None else 1.0 / d


class SDBNConfig(BaseModel):
    """Shuffled decorrelated batch normalization settings"""

    group_size: int = Field(default=5, ge=1)


class TrainConfig(BaseModel):
    """Training-loop configuration"""

    lr: float = Field(..., gt=0.0)
    batch_size: int = Field(..., ge=2)
    max_epochs: int = Field(default=200, ge=1)
    patience: int = Field(default=5, ge=1)
    seed: int = 0
    eval_every: int = Field(default=1, ge=1)
    objective: TrainingObjective = TrainingObjective.NSF
    loss: LossConfig = Field(default_factory=LossConfig)
    sdbn: Optional[SDBNConfig] = None
    # Decomposition family used to build the training loss; None means the model's own
    loss_from: Optional[str] = None
    n_negatives: int = Field(default=1, ge=1)
    margin: float = Field(default=1.0, gt=0.0)
    neg_filter: str = Field(default="all", pattern="^(train|all)$")
    normalize_entities: bool = False
    # Half-width of the uniform init; None picks 1/d for NSF and 6/sqrt(d) otherwise
    init_bound: Optional[float] = Field(default=None, gt=0.0)

    def resolved_init_bound(self, d: int) -> float:
        if self.init_bound is not None:
            return self.init_bound
        if self.objective is TrainingObjective.NSF:
            return 1.0 / d
        return 6.0 / d ** 0.5

    @field_validator("loss_from")
    @classmethod
    def validate_loss_from(cls, v):
        if v is not None and v not in ("transe", "distmult"):
            raise ValueError("loss_from must be 'transe' or 'distmult'")
        return v


class TrainRecord(BaseModel):
    """One per-epoch metrics record (a line of metrics.jsonl)"""

    epoch: int = Field(..., ge=1)
    train_loss: float
    val_mrr_filtered: Optional[float] = None
    wall_seconds: float = Field(..., ge=0.0)


class RankResult(BaseModel):
    rank_head: int = Field(..., ge=1)
    rank_tail: int = Field(..., ge=1)
    filtered: bool


class MetricsReport(BaseModel):
    """Aggregate link-prediction metrics over one split"""

    mr: float = Field(..., ge=1.0)
    mrr: float = Field(..., gt=0.0, le=1.0)
    hits: Dict[int, float]
    n_triples: int = Field(..., ge=1)
    filtered: bool
    mrr_head: float = Field(..., gt=0.0, le=1.0)
    mrr_tail: float = Field(..., gt=0.0, le=1.0)

    @field_validator("hits")
    @classmethod
    def validate_hits(cls, v):
        previous = 0.0
        for k in sorted(v):
            if not (0.0 <= v[k] <= 1.0):
                raise ValueError(f"hits@{k} must be in [0, 1], got {v[k]}")
            if v[k] < previous:
                raise ValueError("hits@k must be non-decreasing in k")
            previous = v[k]
        return v

    def to_report_dict(self) -> dict:
        """Flat dictionary written to eval_<split>_<raw|filt>.json"""
        return {
            "mr": self.mr,
            "mrr": self.mrr,
            "hits1": self.hits[1],
            "hits3": self.hits[3],
            "hits10": self.hits[10],
            "n_triples": self.n_triples,
        }

    def summary_line(self) -> str:
        return f"MRR={self.mrr:.4f} H@1={self.hits[1]:.4f} H@10={self.hits[10]:.4f} MR={self.mr:.2f}"


class RunManifest(BaseModel):
    """Self-describing record of one training run; written before training starts"""

    model_config = ConfigDict(frozen=True)

    config: Dict
    seed: int
    dataset_paths: Dict[str, str]
    code_version: str
    started_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


class ValidationResult(BaseModel):
    """Knowledge-graph validation result"""

    is_valid: bool
    errors: List[str]
    warnings: List[str]

    @model_validator(mode="after")
    def check_consistency(self):
        if self.is_valid and self.errors:
            raise ValueError("A valid result cannot carry errors")
        return self
