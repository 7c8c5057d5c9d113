from pydantic import BaseModel, Field, ConfigDict
from typing import List, Optional, Dict, Any
from datetime import datetime, UTC
from enum import Enum


class RunStatus(str, Enum):
    COMPLETED = "completed"
    FAILED = "failed"


class Metrics(BaseModel):
    accuracy: float
    macro_f1: float
    per_class_accuracy: List[float]
    # rows = true class, columns = predicted class
    confusion_matrix: List[List[int]]
    ordinal_mae: float
    evaluated: int


class EpochLoss(BaseModel):
    epoch: int
    loss: float
    cross_entropy: float
    ordinal: float
    tau: Optional[float] = None


class SelectionSummary(BaseModel):
    """Fraction of nodes choosing each neighbourhood type, per layer."""
    type_names: List[str]
    per_layer: List[Dict[str, float]] = Field(default_factory=list)


class RunRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    run_id: str
    model: str
    config: Dict[str, Any]
    config_hash: str
    seed: int
    status: RunStatus = RunStatus.COMPLETED
    loss_curve: List[EpochLoss] = Field(default_factory=list)
    metrics: Optional[Metrics] = None
    selection: Optional[SelectionSummary] = None
    labeled: int = 0
    unlabeled: int = 0
    wall_clock_seconds: float = 0.0
    created_at: datetime = Field(default_factory=lambda: datetime.now(UTC))
    error_message: Optional[str] = None


class GradCheckResult(BaseModel):
    name: str
    max_relative_error: float
    coordinates_checked: int
    tolerance: float
    passed: bool
    worst_parameter: Optional[str] = None


class GradCheckReport(BaseModel):
    results: List[GradCheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)
