from pydantic import BaseModel, Field, ConfigDict, field_validator
from typing import FrozenSet, Tuple
from enum import IntEnum

NUM_CLASSES = 6


class OrdinalLabel(IntEnum):
    """LIAR veracity classes sorted from least to most accurate."""
    PANTS_FIRE = 0
    FALSE = 1
    BARELY_TRUE = 2
    HALF_TRUE = 3
    MOSTLY_TRUE = 4
    TRUE = 5

    @property
    def label_name(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def names(cls) -> Tuple[str, ...]:
        return tuple(label.label_name for label in cls)


class CreditHistory(BaseModel):
    """Per-speaker counts of earlier rulings as shipped with each LIAR row."""
    model_config = ConfigDict(frozen=True)

    barely_true: int = Field(default=0, ge=0)
    false: int = Field(default=0, ge=0)
    half_true: int = Field(default=0, ge=0)
    mostly_true: int = Field(default=0, ge=0)
    pants_on_fire: int = Field(default=0, ge=0)

    def as_tuple(self) -> Tuple[int, int, int, int, int]:
        return (self.barely_true, self.false, self.half_true, self.mostly_true, self.pants_on_fire)


class NewsRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    statement: str
    label: OrdinalLabel
    speaker: str = ""
    subject: FrozenSet[str] = Field(default_factory=frozenset)
    job_title: str = ""
    state: str = ""
    party: str = ""
    context: str = ""
    credit_history: CreditHistory = Field(default_factory=CreditHistory)

    @field_validator("statement")
    @classmethod
    def _statement_not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("statement must be non-empty")
        return value
