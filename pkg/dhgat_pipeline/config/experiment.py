"""Experiment configuration: sectioned TOML (or the JSON echo) validated by pydantic."""
import hashlib
import json
import re
import tomllib
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..utils.errors import ConfigurationError

ATTRIBUTE_RELATIONS = ("speaker", "context", "subject", "party", "job-title", "state")
KNN_PATTERN = re.compile(r"^knn-(\d+)$")
# party/state values induce near-cliques of thousands of nodes
DEFAULT_MAX_DEGREE = {"party": 100, "state": 100}

ModelKind = Literal["dhgat", "gatv2", "gcn"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


def validate_relation_name(name: str) -> str:
    name = name.strip().lower()
    match = KNN_PATTERN.match(name)
    if match:
        if int(match.group(1)) < 1:
            raise ValueError(f"knn relation needs k >= 1, got {name!r}")
        return name
    if name not in ATTRIBUTE_RELATIONS:
        raise ValueError(
            f"unknown relation {name!r}; expected one of {', '.join(ATTRIBUTE_RELATIONS)} or knn-<k>"
        )
    return name


class RelationOptions(_Section):
    name: str
    max_degree: Optional[int] = Field(default=None, ge=1)

    @field_validator("name")
    @classmethod
    def _known_relation(cls, value: str) -> str:
        return validate_relation_name(value)

    @model_validator(mode="after")
    def _default_cap(self) -> "RelationOptions":
        if self.max_degree is None and self.name in DEFAULT_MAX_DEGREE and "max_degree" not in self.model_fields_set:
            self.max_degree = DEFAULT_MAX_DEGREE[self.name]
        return self

    @property
    def knn_k(self) -> Optional[int]:
        match = KNN_PATTERN.match(self.name)
        return int(match.group(1)) if match else None


class DataConfig(_Section):
    paths: List[str] = Field(default_factory=lambda: ["data/liar"])


class EmbeddingConfig(_Section):
    source: Literal["file", "word_vectors", "fallback"] = "fallback"
    path: Optional[str] = None
    dim: int = Field(default=300, ge=8)
    seed: int = 0

    @model_validator(mode="after")
    def _path_for_file_sources(self) -> "EmbeddingConfig":
        if self.source != "fallback" and not self.path:
            raise ValueError(f"embedding source {self.source!r} needs a path")
        return self


class GraphConfig(_Section):
    relations: List[RelationOptions] = Field(
        default_factory=lambda: [RelationOptions(name="speaker"), RelationOptions(name="context")]
    )
    seed: int = 0

    @field_validator("relations")
    @classmethod
    def _non_empty_unique(cls, value: List[RelationOptions]) -> List[RelationOptions]:
        if not value:
            raise ValueError("relation list must be non-empty")
        names = [r.name for r in value]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate relation names in {names}")
        return value

    @property
    def relation_names(self) -> List[str]:
        return [r.name for r in self.relations]


class TrainConfig(_Section):
    model: ModelKind = "dhgat"
    hidden: List[int] = Field(default_factory=lambda: [256, 128])
    heads: int = Field(default=4, ge=1)
    mlp_hidden: List[int] = Field(default_factory=list)
    lattice: Literal["full", "restricted"] = "full"
    # relation names for the decision network's neighbourhood; None means the full union
    decision_type: Optional[List[str]] = None
    force_selection: Optional[List[str]] = None
    straight_through: bool = True

    lr: float = Field(default=0.001, gt=0)
    weight_decay: float = Field(default=5e-4, ge=0)
    dropout: float = Field(default=0.5, ge=0, lt=1)
    epochs: int = Field(default=200, ge=1)
    lambda1: float = Field(default=1.0, ge=0)
    lambda2: float = Field(default=0.25, ge=0)
    tau: float = Field(default=1.0, gt=0)
    anneal_tau: bool = False
    tau_min: float = Field(default=0.1, gt=0)
    seed: int = 0
    log_every: int = Field(default=20, ge=1)
    trace_epochs: List[int] = Field(default_factory=list)

    @field_validator("hidden")
    @classmethod
    def _at_least_one_layer(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("hidden must list at least one layer width (L >= 1)")
        if any(width < 1 for width in value):
            raise ValueError("layer widths must be positive")
        return value

    @model_validator(mode="after")
    def _check_combinations(self) -> "TrainConfig":
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise ValueError("lambda1 and lambda2 cannot both be 0")
        for width in self.hidden[:-1]:
            if width % self.heads:
                raise ValueError(f"hidden width {width} is not divisible by heads={self.heads}")
        if self.anneal_tau and self.tau_min > self.tau:
            raise ValueError("tau_min must not exceed tau")
        return self

    @property
    def num_layers(self) -> int:
        return len(self.hidden)


class SplitSpec(_Section):
    labeled_fraction: float = Field(default=0.3, gt=0, lt=1)
    stratified: bool = True
    seed: int = 0


class SweepConfig(_Section):
    relation_sets: List[List[str]] = Field(default_factory=list)
    lambda_values: List[float] = Field(default_factory=list)
    fractions: List[float] = Field(default_factory=list)
    models: List[ModelKind] = Field(default_factory=list)
    repeats: int = Field(default=10, ge=1)

    @field_validator("relation_sets")
    @classmethod
    def _known_relations(cls, value: List[List[str]]) -> List[List[str]]:
        return [[validate_relation_name(name) for name in subset] for subset in value]

    @field_validator("fractions")
    @classmethod
    def _open_interval(cls, value: List[float]) -> List[float]:
        for fraction in value:
            if not 0 < fraction < 1:
                raise ValueError(f"labeled fraction {fraction} outside (0, 1)")
        return value

    @property
    def lambda_grid(self) -> List[Tuple[float, float]]:
        return [(a, b) for a in self.lambda_values for b in self.lambda_values if not (a == 0 and b == 0)]

    @property
    def is_empty(self) -> bool:
        return not (self.relation_sets or self.lambda_values or self.fractions or self.models)


class OutputConfig(_Section):
    directory: Optional[str] = None


class ExperimentConfig(_Section):
    data: DataConfig = Field(default_factory=DataConfig)
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    graph: GraphConfig = Field(default_factory=GraphConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    split: SplitSpec = Field(default_factory=SplitSpec)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()

    def check_paths(self) -> None:
        """Referenced input files must exist when a pipeline starts."""
        for index, raw in enumerate(self.data.paths):
            if not Path(raw).exists():
                raise ConfigurationError(f"file not found: {raw}", key=f"data.paths.{index}")
        if self.embedding.source != "fallback" and not Path(self.embedding.path).exists():
            raise ConfigurationError(f"file not found: {self.embedding.path}", key="embedding.path")


def _dotted(loc: tuple) -> str:
    return ".".join(str(part) for part in loc)


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigurationError(first["msg"], key=_dotted(first["loc"]) or "<root>") from exc


def load_experiment_config(path: Optional[Union[str, Path]]) -> ExperimentConfig:
    """Read a TOML config (or a JSON config echo); None yields all defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}", key="--config")
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}", key="--config") from exc
    return parse_experiment_config(raw)
