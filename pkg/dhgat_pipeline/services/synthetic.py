"""Planted-structure toy graphs where the class signal travels through one relation only."""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..utils.errors import ConfigurationError
from .hetero_graph import HeteroGraph


@dataclass(frozen=True)
class PlantedGraph:
    graph: HeteroGraph
    X: np.ndarray
    labels: np.ndarray
    # name of the relation joining same-class nodes
    signal_relation: str


def _sample_partners(rng: np.random.Generator, node: int, pool: np.ndarray, degree: int) -> np.ndarray:
    pool = pool[pool != node]
    if len(pool) <= degree:
        return pool
    return rng.choice(pool, size=degree, replace=False)


def make_planted_graph(
    n: int = 200,
    num_classes: int = 4,
    dim: int = 16,
    signal_degree: int = 6,
    noise_degree: int = 6,
    feature_signal: float = 1.0,
    feature_noise: float = 1.0,
    relation_names: Tuple[str, str] = ("speaker", "context"),
    seed: int = 0,
) -> PlantedGraph:
    """Two relations over n nodes: the first joins same-class nodes, the second joins uniformly random pairs.

    Features are a class centroid (norm feature_signal) plus isotropic Gaussian noise,
    so a single node is only weakly separable and neighbours through the first relation
    carry the rest of the signal.
    """
    if not 2 <= num_classes <= 6:
        raise ConfigurationError(f"num_classes must be in 2..6, got {num_classes}", key="num_classes")
    if n < 2 * num_classes:
        raise ConfigurationError(f"need at least two nodes per class, got n={n}", key="n")

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)

    centroids = rng.normal(size=(num_classes, dim))
    centroids *= feature_signal / np.linalg.norm(centroids, axis=1, keepdims=True)
    X = centroids[labels] + feature_noise * rng.normal(size=(n, dim))

    everyone = np.arange(n)
    by_class = [np.flatnonzero(labels == c) for c in range(num_classes)]
    signal_edges, noise_edges = [], []
    for node in range(n):
        for partner in _sample_partners(rng, node, by_class[labels[node]], signal_degree):
            signal_edges.append((node, partner))
        for partner in _sample_partners(rng, node, everyone, noise_degree):
            noise_edges.append((node, partner))

    signal_name, noise_name = relation_names
    graph = HeteroGraph.from_edges(n, {
        signal_name: np.asarray(signal_edges, dtype=np.int64),
        noise_name: np.asarray(noise_edges, dtype=np.int64),
    })
    return PlantedGraph(graph=graph, X=X, labels=labels.astype(np.int64), signal_relation=signal_name)
