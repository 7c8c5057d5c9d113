from dataclasses import dataclass
from typing import List

import numpy as np

from ..config.experiment import ExperimentConfig, RelationOptions
from ..models.news import NewsRecord
from ..utils.logging import logger
from .embedding_service import EmbeddingService
from .hetero_graph import HeteroGraph, build_hetero_graph
from .liar_ingest import label_distribution, parse_liar_corpus


@dataclass
class PipelineInputs:
    records: List[NewsRecord]
    X: np.ndarray
    graph: HeteroGraph

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([int(r.label) for r in self.records], dtype=np.int64)


def required_relations(config: ExperimentConfig) -> List[RelationOptions]:
    """Configured relations plus any extra ones a sweep's edge-type subsets name."""
    relations = list(config.graph.relations)
    known = {r.name for r in relations}
    for subset in config.sweep.relation_sets:
        for name in subset:
            if name not in known:
                relations.append(RelationOptions(name=name))
                known.add(name)
    return relations


def prepare_inputs(config: ExperimentConfig, include_sweep_relations: bool = False) -> PipelineInputs:
    config.check_paths()
    records = parse_liar_corpus(config.data.paths)
    distribution = {label.label_name: count for label, count in label_distribution(records).items()}
    logger.info(f"Label distribution: {distribution}")

    X = EmbeddingService(config.embedding).load(records)
    relations = required_relations(config) if include_sweep_relations else config.graph.relations
    graph = build_hetero_graph(records, X, relations, seed=config.graph.seed)
    return PipelineInputs(records=records, X=X, graph=graph)
